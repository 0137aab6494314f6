//! Encoder/decoder forward passes, the skip-gram reconstruction loss, and its
//! exact gradient by backpropagation through time.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sequence::FeatureSequence;

use super::lstm::{
    accumulate_weight_grads, forward_step, gate_deltas, matvec_acc, matvec_t_acc, outer_acc, propagate,
    StepCache,
};
use super::model::ModelParams;

/// Fixed-length representation of a segment: the top encoder layer's final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding<T> {
    pub z: Vec<T>,
}

/// Decoder output frames, `T′ × d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSequence<T> {
    pub frames: Vec<T>,
    pub dim: usize,
}

impl<T: Real> DecodedSequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

/// How each target's squared error is scaled before summing over targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNormalization {
    /// Divide by `T′·d` (mean over frames and coefficients).
    #[default]
    PerFrame,
    /// Plain `Σ‖x − y‖²`.
    RawSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectiveConfig {
    pub normalization: LossNormalization,
    /// Feed ground-truth frames to the decoder from step 2 on; otherwise its own predictions.
    pub teacher_forcing: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            normalization: LossNormalization::PerFrame,
            teacher_forcing: true,
        }
    }
}

/// A center segment and its context targets, already normalized.
#[derive(Debug, Clone)]
pub struct ExampleRef<'a, T> {
    pub center: &'a FeatureSequence<T>,
    pub targets: Vec<&'a FeatureSequence<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_target: Vec<f64>,
}

fn check_input<T: Real>(params: &ModelParams<T>, x: &FeatureSequence<T>, what: &str) -> Result<()> {
    let d = params.architecture().feature_dim;
    if x.dim() != d {
        return Err(Error::Contract(format!(
            "{what} has feature dimension {}, model expects {d}",
            x.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::Contract(format!("{what} has no frames")));
    }
    Ok(())
}

/// `caches[layer][t]` for one encoder pass.
struct EncoderTrace<T> {
    caches: Vec<Vec<StepCache<T>>>,
}

impl<T: Real> EncoderTrace<T> {
    fn top_h(&self) -> &[T] {
        &self.caches.last().and_then(|c| c.last()).expect("non-empty trace").h
    }
}

fn encoder_forward<T: Real>(params: &ModelParams<T>, x: &FeatureSequence<T>) -> EncoderTrace<T> {
    let arch = params.architecture();
    let h = arch.hidden;
    let layers: Vec<_> = (0..arch.encoder_layers).map(|l| params.encoder_layer(l)).collect();
    let mut caches: Vec<Vec<StepCache<T>>> = (0..layers.len())
        .map(|_| Vec::with_capacity(x.len()))
        .collect();
    let zero = vec![T::zero(); h];
    for t in 0..x.len() {
        for (l, layer) in layers.iter().enumerate() {
            let step = {
                let input: &[T] = if l == 0 { x.frame(t) } else { &caches[l - 1][t].h };
                let (hp, cp) = match caches[l].last() {
                    Some(prev) => (&prev.h[..], &prev.c[..]),
                    None => (&zero[..], &zero[..]),
                };
                forward_step(layer, input, hp, cp)
            };
            caches[l].push(step);
        }
    }
    EncoderTrace { caches }
}

/// Run the encoder over every frame from zero initial states.
pub fn encode<T: Real>(params: &ModelParams<T>, x: &FeatureSequence<T>) -> Result<SegmentEmbedding<T>> {
    check_input(params, x, "input segment")?;
    let trace = encoder_forward(params, x);
    Ok(SegmentEmbedding {
        z: trace.top_h().to_vec(),
    })
}

struct DecoderTrace<T> {
    caches: Vec<StepCache<T>>,
    outputs: Vec<Vec<T>>,
}

fn decoder_forward<T: Real>(
    params: &ModelParams<T>,
    z: &[T],
    target: &FeatureSequence<T>,
    teacher_forcing: bool,
) -> DecoderTrace<T> {
    let arch = params.architecture();
    let d = arch.feature_dim;
    let layer = params.decoder();
    let (pw, pb) = params.projection();
    let mut caches: Vec<StepCache<T>> = Vec::with_capacity(target.len());
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(target.len());
    let zero_frame = vec![T::zero(); d];
    let zero_c = vec![T::zero(); arch.hidden];
    for t in 0..target.len() {
        let input: &[T] = match t {
            0 => &zero_frame,
            _ if teacher_forcing => target.frame(t - 1),
            _ => &outputs[t - 1],
        };
        let (hp, cp) = match caches.last() {
            Some(prev) => (&prev.h[..], &prev.c[..]),
            None => (z, &zero_c[..]),
        };
        let step = forward_step(&layer, input, hp, cp);
        let mut y = pb.to_vec();
        matvec_acc(pw, &step.h, &mut y);
        caches.push(step);
        outputs.push(y);
    }
    DecoderTrace { caches, outputs }
}

/// Decode one target's worth of frames from `z` (decoder `h₀ = z`, `c₀ = 0`,
/// first input the zero frame), running exactly `target.len()` steps.
pub fn decode_target<T: Real>(
    params: &ModelParams<T>,
    z: &SegmentEmbedding<T>,
    target: &FeatureSequence<T>,
    teacher_forcing: bool,
) -> Result<DecodedSequence<T>> {
    if z.z.len() != params.architecture().hidden {
        return Err(Error::Contract(format!(
            "embedding has {} dims, decoder hidden size is {}",
            z.z.len(),
            params.architecture().hidden
        )));
    }
    check_input(params, target, "decoder target")?;
    let trace = decoder_forward(params, &z.z, target, teacher_forcing);
    Ok(DecodedSequence {
        frames: trace.outputs.concat(),
        dim: target.dim(),
    })
}

fn target_scale<T: Real>(cfg: &ObjectiveConfig, target: &FeatureSequence<T>) -> T {
    match cfg.normalization {
        LossNormalization::PerFrame => T::one() / T::of((target.len() * target.dim()) as f64),
        LossNormalization::RawSum => T::one(),
    }
}

fn squared_error<T: Real>(outputs: &[Vec<T>], target: &FeatureSequence<T>) -> T {
    let mut acc = T::zero();
    for (y, x) in outputs.iter().zip(target.frames()) {
        for (a, b) in y.iter().zip(x) {
            acc += (*a - *b) * (*a - *b);
        }
    }
    acc
}

fn check_example<T: Real>(params: &ModelParams<T>, ex: &ExampleRef<'_, T>) -> Result<()> {
    check_input(params, ex.center, "center segment")?;
    if ex.targets.is_empty() {
        return Err(Error::Contract("example has no targets".into()));
    }
    for t in &ex.targets {
        check_input(params, t, "context target")?;
    }
    Ok(())
}

/// Reconstruction loss of every context target from the center's embedding.
pub fn skipgram_loss<T: Real>(
    params: &ModelParams<T>,
    ex: &ExampleRef<'_, T>,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    check_example(params, ex)?;
    let enc = encoder_forward(params, ex.center);
    let z = enc.top_h();
    let per_target: Vec<f64> = ex
        .targets
        .iter()
        .map(|target| {
            let dec = decoder_forward(params, z, target, cfg.teacher_forcing);
            (target_scale(cfg, target) * squared_error(&dec.outputs, target)).as_f64()
        })
        .collect();
    Ok(LossBreakdown {
        total: per_target.iter().sum(),
        per_target,
    })
}

/// Loss together with its gradient in the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub loss: f64,
    pub grad: ModelParams<T>,
}

/// Exact gradient of [`skipgram_loss`] with respect to every parameter.
pub fn skipgram_gradient<T: Real>(
    params: &ModelParams<T>,
    ex: &ExampleRef<'_, T>,
    cfg: &ObjectiveConfig,
) -> Result<Gradient<T>> {
    let arch = params.architecture();
    let mut grad = ModelParams::<T>::zeros(arch)?;
    let loss = accumulate_gradient(params, ex, cfg, &mut grad)?;
    if let Some(i) = grad.flat().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at {}",
            arch.describe_index(i)
        )));
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    Ok(Gradient { loss, grad })
}

/// Add the gradient of one example's loss into `grad` and return the loss.
/// No finiteness check is made; callers inspect the accumulated buffer.
pub fn accumulate_gradient<T: Real>(
    params: &ModelParams<T>,
    ex: &ExampleRef<'_, T>,
    cfg: &ObjectiveConfig,
    grad: &mut ModelParams<T>,
) -> Result<f64> {
    check_example(params, ex)?;
    let arch = params.architecture();
    if grad.architecture() != arch {
        return Err(Error::Contract("gradient buffer has a different architecture".into()));
    }
    let (h, d) = (arch.hidden, arch.feature_dim);
    let two = T::of(2.0);
    let mut loss = 0.0;
    let enc = encoder_forward(params, ex.center);
    let z = enc.top_h().to_vec();
    let mut dz = vec![T::zero(); h];
    {
        let views = grad.grad_views();
        let (mut enc_grads, mut dec_grad, proj_w_grad, proj_b_grad) =
            (views.encoder, views.decoder, views.proj_weight, views.proj_bias);
        let decoder = params.decoder();
        let (pw, _) = params.projection();

        for target in &ex.targets {
            let dec = decoder_forward(params, &z, target, cfg.teacher_forcing);
            let scale = target_scale(cfg, target);
            loss += (scale * squared_error(&dec.outputs, target)).as_f64();

            let n = target.len();
            // dL/dy_t, extended below by feedback paths when free-running.
            let mut dy: Vec<Vec<T>> = dec
                .outputs
                .iter()
                .zip(target.frames())
                .map(|(y, x)| y.iter().zip(x).map(|(a, b)| two * scale * (*a - *b)).collect())
                .collect();
            let mut dh_next = vec![T::zero(); h];
            let mut dc_next = vec![T::zero(); h];
            let mut deltas: Vec<Vec<T>> = Vec::with_capacity(n);
            for t in (0..n).rev() {
                let cache = &dec.caches[t];
                outer_acc(proj_w_grad, &dy[t], &cache.h);
                for (g, v) in proj_b_grad.iter_mut().zip(&dy[t]) {
                    *g += *v;
                }
                let mut dh = dh_next;
                matvec_t_acc(pw, &dy[t], &mut dh);
                let mut dx = vec![T::zero(); d];
                let mut dh_prev = vec![T::zero(); h];
                let mut dc_prev = vec![T::zero(); h];
                let da = gate_deltas(cache, &dh, &dc_next, &mut dc_prev);
                propagate(&decoder, &da, &mut dx, &mut dh_prev);
                deltas.push(da);
                if t > 0 && !cfg.teacher_forcing {
                    for (a, b) in dy[t - 1].iter_mut().zip(&dx) {
                        *a += *b;
                    }
                }
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            let steps: Vec<(&[T], &StepCache<T>)> = deltas
                .iter()
                .zip(dec.caches.iter().rev())
                .map(|(da, c)| (&da[..], c))
                .collect();
            accumulate_weight_grads(&mut dec_grad, &steps);
            // h₀ = z; c₀ is a constant.
            for (a, b) in dz.iter_mut().zip(&dh_next) {
                *a += *b;
            }
        }

        let layers = arch.encoder_layers;
        let steps = ex.center.len();
        let mut dh_carry = vec![vec![T::zero(); h]; layers];
        let mut dc_carry = vec![vec![T::zero(); h]; layers];
        let mut deltas: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(steps); layers];
        for t in (0..steps).rev() {
            let mut from_above: Option<Vec<T>> = None;
            for l in (0..layers).rev() {
                let layer = params.encoder_layer(l);
                let cache = &enc.caches[l][t];
                let mut dh = std::mem::replace(&mut dh_carry[l], vec![T::zero(); h]);
                if let Some(above) = from_above.take() {
                    dh.iter_mut().zip(&above).for_each(|(a, b)| *a += *b);
                } else if t == steps - 1 {
                    dh.iter_mut().zip(&dz).for_each(|(a, b)| *a += *b);
                }
                let dc = std::mem::replace(&mut dc_carry[l], vec![T::zero(); h]);
                let da = gate_deltas(cache, &dh, &dc, &mut dc_carry[l]);
                // The bottom layer's input gradient is never used.
                let mut dx = vec![T::zero(); if l > 0 { layer.input_size } else { 0 }];
                if l > 0 {
                    propagate(&layer, &da, &mut dx, &mut dh_carry[l]);
                } else {
                    matvec_t_acc(layer.w_recurrent, &da, &mut dh_carry[l]);
                }
                deltas[l].push(da);
                from_above = Some(dx);
            }
        }
        for (l, grad_l) in enc_grads.iter_mut().enumerate() {
            let steps: Vec<(&[T], &StepCache<T>)> = deltas[l]
                .iter()
                .zip(enc.caches[l].iter().rev())
                .map(|(da, c)| (&da[..], c))
                .collect();
            accumulate_weight_grads(grad_l, &steps);
        }
    }

    Ok(loss)
}

#[cfg(test)]
// Oracles index frames and units the way the equations are written.
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::nn::model::{init_params, Architecture};
    use crate::nn::lstm::{lstm_cell_step, HiddenState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence<f64> {
        FeatureSequence::new((0..t * d).map(|_| rng.random_range(-1.5..1.5)).collect(), d).unwrap()
    }

    fn random_model(seed: u64, arch: Architecture) -> ModelParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(arch).unwrap();
        p.flat_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        p
    }

    const SMALL: Architecture = Architecture {
        feature_dim: 3,
        hidden: 8,
        encoder_layers: 2,
    };

    /// Step-by-step encoder built only from the public cell step.
    fn oracle_encode(p: &ModelParams<f64>, x: &FeatureSequence<f64>) -> Vec<f64> {
        let arch = p.architecture();
        let mut states = vec![HiddenState::zeros(arch.hidden); arch.encoder_layers];
        for frame in x.frames() {
            let mut input = frame.to_vec();
            for (l, state) in states.iter_mut().enumerate() {
                *state = lstm_cell_step(&p.encoder_layer(l), &input, state).unwrap();
                input = state.h.clone();
            }
        }
        states.last().unwrap().h.clone()
    }

    fn oracle_decode(p: &ModelParams<f64>, z: &[f64], target: &FeatureSequence<f64>, tf: bool) -> Vec<Vec<f64>> {
        let (w, b) = p.projection();
        let d = target.dim();
        let mut state = HiddenState { h: z.to_vec(), c: vec![0.0; z.len()] };
        let mut out: Vec<Vec<f64>> = Vec::new();
        for t in 0..target.len() {
            let input = if t == 0 {
                vec![0.0; d]
            } else if tf {
                target.frame(t - 1).to_vec()
            } else {
                out[t - 1].clone()
            };
            state = lstm_cell_step(&p.decoder(), &input, &state).unwrap();
            let y = (0..d)
                .map(|r| b[r] + (0..z.len()).map(|c| w[r * z.len() + c] * state.h[c]).sum::<f64>())
                .collect();
            out.push(y);
        }
        out
    }

    #[test]
    fn zero_model_encodes_to_zero_and_decodes_bias() {
        let p = ModelParams::<f64>::zeros(SMALL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_seq(&mut rng, 5, 3);
        let z = encode(&p, &x).unwrap();
        assert!(z.z.iter().all(|&v| v == 0.0));
        let y = decode_target(&p, &z, &x, true).unwrap();
        assert_eq!(y.len(), 5);
        assert!(y.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_matches_step_oracle() {
        let p = random_model(3, SMALL);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in [1, 5] {
            let x = random_seq(&mut rng, t, 3);
            let z = encode(&p, &x).unwrap();
            for (a, b) in z.z.iter().zip(oracle_encode(&p, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_matches_step_oracle() {
        let p = random_model(9, SMALL);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = SegmentEmbedding { z: (0..8).map(|_| rng.random_range(-0.9..0.9)).collect() };
        let target = random_seq(&mut rng, 4, 3);
        for tf in [true, false] {
            let got = decode_target(&p, &z, &target, tf).unwrap();
            let want = oracle_decode(&p, &z.z, &target, tf);
            for t in 0..4 {
                for (a, b) in got.frame(t).iter().zip(&want[t]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let one = random_seq(&mut rng, 1, 3);
        assert_eq!(
            decode_target(&p, &z, &one, true).unwrap(),
            decode_target(&p, &z, &one, false).unwrap()
        );
    }

    #[test]
    fn loss_recomposes_from_encode_and_decode() {
        let p = random_model(21, SMALL);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let center = random_seq(&mut rng, 3, 3);
        let targets: Vec<_> = [2, 4, 1].iter().map(|&t| random_seq(&mut rng, t, 3)).collect();
        let ex = ExampleRef { center: &center, targets: targets.iter().collect() };
        for normalization in [LossNormalization::PerFrame, LossNormalization::RawSum] {
            let cfg = ObjectiveConfig { normalization, teacher_forcing: true };
            let got = skipgram_loss(&p, &ex, &cfg).unwrap();
            let z = oracle_encode(&p, &center);
            let mut total = 0.0;
            for (i, tgt) in targets.iter().enumerate() {
                let y = oracle_decode(&p, &z, tgt, true);
                let mut se = 0.0;
                for t in 0..tgt.len() {
                    for k in 0..3 {
                        se += (y[t][k] - tgt.frame(t)[k]).powi(2);
                    }
                }
                if normalization == LossNormalization::PerFrame {
                    se /= (tgt.len() * 3) as f64;
                }
                assert!((got.per_target[i] - se).abs() < 1e-12);
                total += se;
            }
            assert!((got.total - total).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_loss_is_mean_square_of_targets() {
        let p = ModelParams::<f64>::zeros(SMALL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = random_seq(&mut rng, 2, 3);
        let targets: Vec<_> = [3, 2].iter().map(|&t| random_seq(&mut rng, t, 3)).collect();
        let ex = ExampleRef { center: &center, targets: targets.iter().collect() };
        let loss = skipgram_loss(&p, &ex, &ObjectiveConfig::default()).unwrap();
        let want: f64 = targets
            .iter()
            .map(|t| t.as_slice().iter().map(|v| v * v).sum::<f64>() / t.as_slice().len() as f64)
            .sum();
        assert!((loss.total - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        // A zero model predicts all-zero frames, so all-zero targets are a minimum.
        let p = ModelParams::<f64>::zeros(SMALL).unwrap();
        let center = FeatureSequence::new(vec![0.3; 6], 3).unwrap();
        let target = FeatureSequence::new(vec![0.0; 9], 3).unwrap();
        let ex = ExampleRef { center: &center, targets: vec![&target, &target] };
        let g = skipgram_gradient(&p, &ex, &ObjectiveConfig::default()).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grad.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_target_doubles_its_contribution() {
        let p = init_params::<f64>(SMALL, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let center = random_seq(&mut rng, 3, 3);
        let tgt = random_seq(&mut rng, 2, 3);
        let cfg = ObjectiveConfig::default();
        let single = skipgram_gradient(&p, &ExampleRef { center: &center, targets: vec![&tgt] }, &cfg).unwrap();
        let double = skipgram_gradient(&p, &ExampleRef { center: &center, targets: vec![&tgt, &tgt] }, &cfg).unwrap();
        for (a, b) in single.grad.flat().iter().zip(double.grad.flat()) {
            assert!((2.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
        assert!((2.0 * single.loss - double.loss).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatches_are_contract_violations() {
        let p = init_params::<f64>(SMALL, 1).unwrap();
        let wrong = FeatureSequence::new(vec![0.0; 8], 4).unwrap();
        assert!(matches!(encode(&p, &wrong), Err(Error::Contract(_))));
        let z = SegmentEmbedding { z: vec![0.0; 7] };
        let ok = FeatureSequence::new(vec![0.0; 3], 3).unwrap();
        assert!(matches!(decode_target(&p, &z, &ok, true), Err(Error::Contract(_))));
    }
}
