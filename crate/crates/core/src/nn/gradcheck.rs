//! Central finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::sequence::FeatureSequence;

use super::model::{init_params, Architecture, ModelParams};
use super::seq2seq::{decode_target, encode, skipgram_gradient, skipgram_loss, ExampleRef, ObjectiveConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index where the maximum occurred.
    pub worst_index: usize,
    pub worst_location: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compare `analytic` to central differences of the loss at the listed
/// parameter indices (all parameters when `indices` is `None`).
pub fn compare_gradient(
    params: &ModelParams<f64>,
    ex: &ExampleRef<'_, f64>,
    cfg: &ObjectiveConfig,
    epsilon: f64,
    analytic: &[f64],
    indices: Option<&[usize]>,
) -> Result<GradCheckReport> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.clone();
    let mut worst = (0.0f64, indices.first().copied().unwrap_or(0));
    for &j in indices {
        let original = probe.flat()[j];
        probe.flat_mut()[j] = original + epsilon;
        let plus = skipgram_loss(&probe, ex, cfg)?.total;
        probe.flat_mut()[j] = original - epsilon;
        let minus = skipgram_loss(&probe, ex, cfg)?.total;
        probe.flat_mut()[j] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(numeric, analytic[j]);
        if err > worst.0 {
            worst = (err, j);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        worst_location: params.architecture().describe_index(worst.1),
        checked: indices.len(),
    })
}

/// Check [`skipgram_gradient`] against central differences over every parameter.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    ex: &ExampleRef<'_, f64>,
    cfg: &ObjectiveConfig,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let analytic = skipgram_gradient(params, ex, cfg)?;
    compare_gradient(params, ex, cfg, epsilon, analytic.grad.flat(), None)
}

/// A seeded tiny problem: model, center segment, and context targets.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub params: ModelParams<f64>,
    pub center: FeatureSequence<f64>,
    pub targets: Vec<FeatureSequence<f64>>,
}

impl TinyInstance {
    pub fn example(&self) -> ExampleRef<'_, f64> {
        ExampleRef {
            center: &self.center,
            targets: self.targets.iter().collect(),
        }
    }
}

/// Standard deviation of the noise added to the model's own decoded output
/// when building [`tiny_instance`] targets.
pub const TARGET_NOISE: f64 = 1e-3;

fn tiny_parts(seed: u64) -> (ModelParams<f64>, FeatureSequence<f64>, Vec<usize>, ChaCha8Rng) {
    let arch = Architecture {
        feature_dim: 3,
        hidden: 6,
        encoder_layers: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(arch, rng.random()).expect("valid architecture");
    let t = rng.random_range(1..=4);
    let data = (0..t * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let center = FeatureSequence::new(data, 3).expect("finite");
    let n_targets = rng.random_range(1..=4);
    let lengths = (0..n_targets).map(|_| rng.random_range(1..=4)).collect();
    (params, center, lengths, rng)
}

/// Encoder 2×6, decoder 6, d = 3, segment lengths 1..=4, and 1..=2k targets
/// (k = 2). Each target is the model's free-running reconstruction plus
/// Gaussian noise of scale [`TARGET_NOISE`].
///
/// Near-fit targets keep every gradient entry resolvable by a 64-bit central
/// difference at ε = 1e-5: the loss is quadratic in the residual while the
/// gradient is linear, so `|g| / L` stays large. Against unrelated targets a
/// few entries per instance sit below `ulp(L) / ε` and the comparison
/// measures round-off rather than the gradient (see [`tiny_instance_unrelated`]).
pub fn tiny_instance(seed: u64) -> TinyInstance {
    let (params, center, lengths, mut rng) = tiny_parts(seed);
    let noise = Normal::new(0.0, TARGET_NOISE).expect("valid scale");
    let z = encode(&params, &center).expect("shapes match");
    let targets = lengths
        .into_iter()
        .map(|t| {
            let shape = FeatureSequence::new(vec![0.0; t * 3], 3).expect("finite");
            let y = decode_target(&params, &z, &shape, false).expect("shapes match");
            let data = y.frames.iter().map(|v| v + noise.sample(&mut rng)).collect();
            FeatureSequence::new(data, 3).expect("finite")
        })
        .collect();
    TinyInstance {
        params,
        center,
        targets,
    }
}

/// Same shapes as [`tiny_instance`] with targets drawn from U(-2, 2).
pub fn tiny_instance_unrelated(seed: u64) -> TinyInstance {
    let (params, center, lengths, mut rng) = tiny_parts(seed);
    let targets = lengths
        .into_iter()
        .map(|t| {
            let data = (0..t * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            FeatureSequence::new(data, 3).expect("finite")
        })
        .collect();
    TinyInstance {
        params,
        center,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seq2seq::LossNormalization;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let inst = tiny_instance(3);
        let cfg = ObjectiveConfig::default();
        let zeros = vec![0.0; inst.params.len()];
        let report = compare_gradient(&inst.params, &inst.example(), &cfg, 1e-5, &zeros, None).unwrap();
        assert!(report.max_relative_error > 0.5, "{report:?}");
        assert!(!report.passes(1e-6));
    }

    #[test]
    fn analytic_gradient_passes_in_every_objective_mode() {
        for seed in 0..4 {
            let inst = tiny_instance(seed);
            for normalization in [LossNormalization::PerFrame, LossNormalization::RawSum] {
                for teacher_forcing in [true, false] {
                    let cfg = ObjectiveConfig { normalization, teacher_forcing };
                    let r = finite_difference_check(&inst.params, &inst.example(), &cfg, 1e-5).unwrap();
                    assert!(r.passes(1e-6), "seed {seed} {cfg:?}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn unrelated_targets_agree_where_resolvable() {
        // Round-off in L(θ ± ε) is about ulp(L) / ε; compare only entries well above it.
        for seed in 0..4 {
            let inst = tiny_instance_unrelated(seed);
            let cfg = ObjectiveConfig::default();
            let g = skipgram_gradient(&inst.params, &inst.example(), &cfg).unwrap();
            let big: Vec<usize> = (0..g.grad.len()).filter(|&j| g.grad.flat()[j].abs() > 1e-4).collect();
            assert!(big.len() > 100);
            let r = compare_gradient(&inst.params, &inst.example(), &cfg, 1e-5, g.grad.flat(), Some(&big)).unwrap();
            assert!(r.passes(1e-6), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn targets_are_near_the_reconstruction() {
        let inst = tiny_instance(5);
        let loss = skipgram_loss(&inst.params, &inst.example(), &ObjectiveConfig {
            teacher_forcing: false,
            ..Default::default()
        })
        .unwrap();
        assert!(loss.total < 1e-4 * inst.targets.len() as f64, "{loss:?}");
    }
}
