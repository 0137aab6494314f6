//! Plain SGD over skip-gram examples: length-bucketed batches, mean batch
//! gradient, optional global-norm clipping, fixed learning rate.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{NormalizationStats, SkipGramExample};
use crate::error::{Error, Result};
use crate::nn::lstm::{forward_step, matvec_acc};
use crate::nn::{
    accumulate_gradient, init_params, skipgram_loss, Architecture, ExampleRef, LossNormalization, ModelParams,
    ObjectiveConfig,
};
use crate::parallel::{self, Execution};
use crate::real::{Precision, Real};
use crate::sequence::FeatureSequence;

/// Examples per partial gradient sum. Partials are reduced in order, so the
/// batch gradient does not depend on how many threads ran.
const GRADIENT_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Skip-gram window.
    pub k: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub precision: Precision,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub objective: ObjectiveConfig,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            k: 5,
            batch_size: 32,
            grad_clip_norm: Some(5.0),
            seed: 0,
            precision: Precision::F32,
            hidden: 300,
            encoder_layers: 3,
            objective: ObjectiveConfig::default(),
            execution: Execution::best_available(),
        }
    }
}

impl TrainConfig {
    /// No clipping and the raw squared-error sum.
    pub fn faithful(mut self) -> Self {
        self.grad_clip_norm = None;
        self.objective.normalization = LossNormalization::RawSum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("window k must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }

    pub fn architecture(&self, feature_dim: usize) -> Architecture {
        Architecture {
            feature_dim,
            hidden: self.hidden,
            encoder_layers: self.encoder_layers,
        }
    }

    /// Flat `key = value` rendering; [`TrainConfig::set`] parses each line back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("epochs", self.epochs.to_string()),
            ("k", self.k.to_string()),
            ("batch_size", self.batch_size.to_string()),
            (
                "grad_clip_norm",
                self.grad_clip_norm
                    .map_or_else(|| "none".to_string(), |c| format!("{c:?}")),
            ),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("hidden", self.hidden.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            (
                "loss",
                match self.objective.normalization {
                    LossNormalization::PerFrame => "per-frame",
                    LossNormalization::RawSum => "raw-sum",
                }
                .to_string(),
            ),
            ("teacher_forcing", self.objective.teacher_forcing.to_string()),
        ]
    }

    /// Apply one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "grad_clip_norm" => {
                self.grad_clip_norm = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "precision" => self.precision = value.parse().map_err(Error::Config)?,
            "hidden" => self.hidden = num(key, value)?,
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "loss" => {
                self.objective.normalization = match value {
                    "per-frame" => LossNormalization::PerFrame,
                    "raw-sum" => LossNormalization::RawSum,
                    v => return Err(Error::Config(format!("unknown loss `{v}`"))),
                }
            }
            "teacher_forcing" => self.objective.teacher_forcing = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }
}

/// Normalized segments (indexed by segment id) and the examples over them.
#[derive(Debug, Clone)]
pub struct TrainingData<T> {
    pub sequences: Vec<FeatureSequence<T>>,
    pub examples: Vec<SkipGramExample>,
}

impl<T: Real> TrainingData<T> {
    pub fn example(&self, i: usize) -> ExampleRef<'_, T> {
        let ex = &self.examples[i];
        ExampleRef {
            center: &self.sequences[ex.center],
            targets: ex.targets.iter().map(|t| &self.sequences[t.segment]).collect(),
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.dim())
    }

    fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::InsufficientData("no skip-gram examples to train on".into()));
        }
        let n = self.sequences.len();
        for ex in &self.examples {
            if ex.center >= n || ex.targets.iter().any(|t| t.segment >= n) {
                return Err(Error::Contract("example refers to a missing segment".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub normalization: NormalizationStats,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean loss of the last completed epoch.
    pub running_loss: f64,
    pub rng: ChaCha8Rng,
    pub config: TrainConfig,
}

impl<T: Real> TrainState<T> {
    /// Fresh parameters from `config.seed`.
    pub fn initial(config: TrainConfig, feature_dim: usize, normalization: NormalizationStats) -> Result<Self> {
        config.validate()?;
        if normalization.dim() != feature_dim {
            return Err(Error::Contract(format!(
                "normalization has {} dims, features have {feature_dim}",
                normalization.dim()
            )));
        }
        let params = init_params(config.architecture(feature_dim), config.seed)?;
        Ok(Self {
            params,
            normalization,
            epoch: 0,
            running_loss: f64::NAN,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
            config,
        })
    }

    /// Explicit precision conversion of the parameters.
    pub fn cast<U: Real>(&self) -> TrainState<U> {
        if T::PRECISION != U::PRECISION {
            log::info!(
                "converting {} parameters from {} to {}",
                self.params.len(),
                T::PRECISION,
                U::PRECISION
            );
        }
        let mut config = self.config.clone();
        config.precision = U::PRECISION;
        TrainState {
            params: self.params.cast(),
            normalization: self.normalization.clone(),
            epoch: self.epoch,
            running_loss: self.running_loss,
            rng: self.rng.clone(),
            config,
        }
    }
}

/// Per-epoch summary passed to the training observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

impl EpochReport {
    /// `epoch<TAB>mean_loss<TAB>wall_seconds`
    pub fn log_line(&self) -> String {
        format!("{}\t{:.9}\t{:.3}", self.epoch, self.mean_loss, self.wall_seconds)
    }
}

/// Training stopped on a numerical failure; `last_good` is the state at the
/// end of the last fully completed epoch.
#[derive(Debug)]
pub struct TrainAbort<T> {
    pub error: Error,
    pub last_good: Box<TrainState<T>>,
}

/// Shuffle with `rng` (if given), bucket by center length, cut into batches of
/// at most `batch_size`, then shuffle the batch order.
pub fn plan_batches(
    center_lengths: &[usize],
    batch_size: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..center_lengths.len()).collect();
    let mut rng = rng;
    if let Some(r) = rng.as_deref_mut() {
        order.shuffle(r);
    }
    order.sort_by_key(|&i| center_lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if let Some(r) = rng {
        batches.shuffle(r);
    }
    batches
}

/// Global L2 norm.
pub fn l2_norm<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Rescale `grad` so its norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Summed loss and summed gradient of a batch of examples.
pub fn batch_gradient<T: Real>(
    params: &ModelParams<T>,
    data: &TrainingData<T>,
    batch: &[usize],
    objective: &ObjectiveConfig,
    exec: Execution,
) -> Result<(f64, ModelParams<T>)> {
    let chunks: Vec<&[usize]> = batch.chunks(GRADIENT_CHUNK).collect();
    let partials = parallel::map(exec, &chunks, |chunk| -> Result<(f64, ModelParams<T>)> {
        let mut grad = ModelParams::zeros(params.architecture())?;
        let mut loss = 0.0;
        for &i in chunk.iter() {
            loss += accumulate_gradient(params, &data.example(i), objective, &mut grad)?;
        }
        Ok((loss, grad))
    });
    let mut total = ModelParams::zeros(params.architecture())?;
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total
            .flat_mut()
            .iter_mut()
            .zip(g.flat())
            .for_each(|(a, b)| *a += *b);
    }
    Ok((loss, total))
}

/// Mean per-example loss over the whole data set.
pub fn mean_loss<T: Real>(
    params: &ModelParams<T>,
    data: &TrainingData<T>,
    objective: &ObjectiveConfig,
    exec: Execution,
) -> Result<f64> {
    let losses = parallel::map_range(exec, data.examples.len(), |i| {
        skipgram_loss(params, &data.example(i), objective).map(|l| l.total)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.examples.len().max(1) as f64)
}

/// One SGD step on `batch`: mean gradient, optional clipping, `θ ← θ − lr·g`.
/// Returns the summed batch loss measured before the update.
pub fn sgd_step<T: Real>(
    params: &mut ModelParams<T>,
    data: &TrainingData<T>,
    batch: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    let (loss, mut grad) = batch_gradient(params, data, batch, &config.objective, config.execution)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite batch loss {loss}")));
    }
    let inv = T::of(1.0 / batch.len() as f64);
    grad.flat_mut().iter_mut().for_each(|g| *g *= inv);
    if let Some(i) = grad.flat().iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at {}",
            params.architecture().describe_index(i)
        )));
    }
    if let Some(max_norm) = config.grad_clip_norm {
        clip_global_norm(grad.flat_mut(), max_norm);
    }
    let lr = T::of(config.learning_rate);
    params
        .flat_mut()
        .iter_mut()
        .zip(grad.flat())
        .for_each(|(p, g)| *p -= lr * *g);
    if let Some(i) = params.flat().iter().position(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!(
            "update overflowed at {}",
            params.architecture().describe_index(i)
        )));
    }
    Ok(loss)
}

/// Run epochs `state.epoch + 1 ..= config.epochs`. `on_epoch` sees every
/// completed epoch (for logging and checkpointing) and may abort with an error.
pub fn train_from<T: Real, F>(
    data: &TrainingData<T>,
    mut state: TrainState<T>,
    mut on_epoch: F,
) -> std::result::Result<TrainState<T>, TrainAbort<T>>
where
    F: FnMut(&EpochReport, &TrainState<T>) -> Result<()>,
{
    let abort = |error: Error, last: &TrainState<T>| TrainAbort {
        error,
        last_good: Box::new(last.clone()),
    };
    if let Err(e) = state.config.validate().and_then(|_| data.validate()) {
        return Err(abort(e, &state));
    }
    if data.feature_dim() != Some(state.params.architecture().feature_dim) {
        return Err(abort(
            Error::Contract("training data and model disagree on feature dimension".into()),
            &state,
        ));
    }
    let lengths: Vec<usize> = data
        .examples
        .iter()
        .map(|e| data.sequences[e.center].len())
        .collect();
    let config = state.config.clone();

    while state.epoch < config.epochs {
        let started = Instant::now();
        let mut next = state.clone();
        let batches = plan_batches(&lengths, config.batch_size, Some(&mut next.rng));
        let mut total = 0.0;
        for batch in &batches {
            match sgd_step(&mut next.params, data, batch, &config) {
                Ok(loss) => total += loss,
                Err(e) => return Err(abort(e, &state)),
            }
        }
        next.epoch += 1;
        next.running_loss = total / data.examples.len() as f64;
        let report = EpochReport {
            epoch: next.epoch,
            mean_loss: next.running_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        state = next;
        if let Err(e) = on_epoch(&report, &state) {
            return Err(abort(e, &state));
        }
    }
    Ok(state)
}

/// Train from freshly initialized parameters.
pub fn train<T: Real>(
    data: &TrainingData<T>,
    config: TrainConfig,
    normalization: NormalizationStats,
) -> std::result::Result<TrainState<T>, TrainAbort<T>> {
    let dim = data.feature_dim().unwrap_or(normalization.dim());
    let state = match TrainState::initial(config, dim, normalization.clone()) {
        Ok(s) => s,
        Err(error) => {
            let fallback = TrainState {
                params: ModelParams::zeros(Architecture {
                    feature_dim: dim.max(1),
                    hidden: 1,
                    encoder_layers: 1,
                })
                .expect("positive sizes"),
                normalization,
                epoch: 0,
                running_loss: f64::NAN,
                rng: ChaCha8Rng::seed_from_u64(0),
                config: TrainConfig::default(),
            };
            return Err(TrainAbort {
                error,
                last_good: Box::new(fallback),
            });
        }
    };
    train_from(data, state, |_, _| Ok(()))
}

/// Zero-padded batch of examples with validity masks.
///
/// Centers are `B × T_max × d`; targets are `B × S_max × T′_max × d` where
/// `S_max` is the largest target count in the batch. A mask entry is 1 exactly
/// for frames inside the true length.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<T> {
    pub example_ids: Vec<usize>,
    pub dim: usize,
    pub center_max: usize,
    pub centers: Vec<T>,
    pub center_mask: Vec<T>,
    pub center_lengths: Vec<usize>,
    pub target_slots: usize,
    pub target_max: usize,
    pub targets: Vec<T>,
    pub target_mask: Vec<T>,
    /// `target_lengths[b][s]`, 0 for unused slots.
    pub target_lengths: Vec<Vec<usize>>,
}

impl<T: Real> PaddedBatch<T> {
    pub fn from_examples(data: &TrainingData<T>, ids: &[usize]) -> Result<Self> {
        let dim = data
            .feature_dim()
            .ok_or_else(|| Error::InsufficientData("no sequences".into()))?;
        let exs: Vec<ExampleRef<'_, T>> = ids.iter().map(|&i| data.example(i)).collect();
        let center_max = exs.iter().map(|e| e.center.len()).max().unwrap_or(0);
        let target_slots = exs.iter().map(|e| e.targets.len()).max().unwrap_or(0);
        let target_max = exs
            .iter()
            .flat_map(|e| e.targets.iter().map(|t| t.len()))
            .max()
            .unwrap_or(0);
        let b = exs.len();
        let mut centers = vec![T::zero(); b * center_max * dim];
        let mut center_mask = vec![T::zero(); b * center_max];
        let mut targets = vec![T::zero(); b * target_slots * target_max * dim];
        let mut target_mask = vec![T::zero(); b * target_slots * target_max];
        let mut target_lengths = vec![vec![0; target_slots]; b];
        for (bi, ex) in exs.iter().enumerate() {
            let base = bi * center_max;
            centers[base * dim..(base + ex.center.len()) * dim].copy_from_slice(ex.center.as_slice());
            center_mask[base..base + ex.center.len()].fill(T::one());
            for (s, tgt) in ex.targets.iter().enumerate() {
                let base = (bi * target_slots + s) * target_max;
                targets[base * dim..(base + tgt.len()) * dim].copy_from_slice(tgt.as_slice());
                target_mask[base..base + tgt.len()].fill(T::one());
                target_lengths[bi][s] = tgt.len();
            }
        }
        Ok(Self {
            example_ids: ids.to_vec(),
            dim,
            center_max,
            centers,
            center_mask,
            center_lengths: exs.iter().map(|e| e.center.len()).collect(),
            target_slots,
            target_max,
            targets,
            target_mask,
            target_lengths,
        })
    }

    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }

    /// Number of zero-filled center and target frames.
    pub fn padding_frames(&self) -> usize {
        let masked = |m: &[T]| m.iter().filter(|v| v.is_zero()).count();
        let used_slots: usize = self.target_lengths.iter().flatten().filter(|&&l| l > 0).count();
        let unused_slot_frames = (self.len() * self.target_slots - used_slots) * self.target_max;
        masked(&self.center_mask) + masked(&self.target_mask) - unused_slot_frames
    }

    /// Summed loss over the batch, computed on the padded tensors: encoder
    /// state is held through masked steps and masked decoder frames
    /// contribute zero.
    pub fn masked_loss(&self, params: &ModelParams<T>, objective: &ObjectiveConfig) -> Result<f64> {
        let arch = params.architecture();
        if arch.feature_dim != self.dim {
            return Err(Error::Contract("batch and model disagree on feature dimension".into()));
        }
        let (h, d) = (arch.hidden, self.dim);
        let zero_h = vec![T::zero(); h];
        let layers: Vec<_> = (0..arch.encoder_layers).map(|l| params.encoder_layer(l)).collect();
        let decoder = params.decoder();
        let (pw, pb) = params.projection();
        let mut total = 0.0;

        for b in 0..self.len() {
            let mut hs = vec![zero_h.clone(); layers.len()];
            let mut cs = vec![zero_h.clone(); layers.len()];
            for t in 0..self.center_max {
                let m = self.center_mask[b * self.center_max + t];
                let off = (b * self.center_max + t) * d;
                let mut input = self.centers[off..off + d].to_vec();
                for (l, layer) in layers.iter().enumerate() {
                    let step = forward_step(layer, &input, &hs[l], &cs[l]);
                    for j in 0..h {
                        hs[l][j] = m * step.h[j] + (T::one() - m) * hs[l][j];
                        cs[l][j] = m * step.c[j] + (T::one() - m) * cs[l][j];
                    }
                    input = hs[l].clone();
                }
            }
            let z = hs.last().expect("at least one layer").clone();

            for s in 0..self.target_slots {
                let len = self.target_lengths[b][s];
                if len == 0 {
                    continue;
                }
                let scale = match objective.normalization {
                    LossNormalization::PerFrame => T::one() / T::of((len * d) as f64),
                    LossNormalization::RawSum => T::one(),
                };
                let base = (b * self.target_slots + s) * self.target_max;
                let mut hd = z.clone();
                let mut cd = zero_h.clone();
                let mut prev_y = vec![T::zero(); d];
                let mut se = T::zero();
                for t in 0..self.target_max {
                    let input: Vec<T> = if t == 0 {
                        vec![T::zero(); d]
                    } else if objective.teacher_forcing {
                        self.targets[(base + t - 1) * d..(base + t) * d].to_vec()
                    } else {
                        prev_y.clone()
                    };
                    let step = forward_step(&decoder, &input, &hd, &cd);
                    let mut y = pb.to_vec();
                    matvec_acc(pw, &step.h, &mut y);
                    let m = self.target_mask[base + t];
                    let x = &self.targets[(base + t) * d..(base + t + 1) * d];
                    for (a, b) in y.iter().zip(x) {
                        se += m * (*a - *b) * (*a - *b);
                    }
                    hd = step.h;
                    cd = step.c;
                    prev_y = y;
                }
                total += (scale * se).as_f64();
            }
        }
        Ok(total)
    }

    /// Recover example `b` without padding.
    pub fn unpad(&self, b: usize) -> Result<(FeatureSequence<T>, Vec<FeatureSequence<T>>)> {
        let d = self.dim;
        let off = b * self.center_max * d;
        let center = FeatureSequence::new(self.centers[off..off + self.center_lengths[b] * d].to_vec(), d)?;
        let targets = self.target_lengths[b]
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(s, &l)| {
                let off = (b * self.target_slots + s) * self.target_max * d;
                FeatureSequence::new(self.targets[off..off + l * d].to_vec(), d)
            })
            .collect::<Result<_>>()?;
        Ok((center, targets))
    }
}

/// Partition all examples into length-bucketed padded batches (no shuffling).
pub fn batch_examples<T: Real>(data: &TrainingData<T>, batch_size: usize) -> Result<Vec<PaddedBatch<T>>> {
    let lengths: Vec<usize> = data
        .examples
        .iter()
        .map(|e| data.sequences[e.center].len())
        .collect();
    plan_batches(&lengths, batch_size, None)
        .iter()
        .map(|ids| PaddedBatch::from_examples(data, ids))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_skipgram_examples, ContextTarget};
    use crate::nn::skipgram_gradient;
    use rand::Rng;

    fn random_data(seed: u64, utterances: &[usize], d: usize) -> TrainingData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = utterances.iter().sum();
        let sequences = (0..total)
            .map(|_| {
                let t = rng.random_range(1..6);
                FeatureSequence::new((0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(), d).unwrap()
            })
            .collect();
        let mut start = 0;
        let spans: Vec<_> = utterances
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect();
        TrainingData {
            sequences,
            examples: build_skipgram_examples(&spans, 2).unwrap().examples,
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            hidden: 5,
            encoder_layers: 2,
            batch_size: 3,
            epochs: 2,
            precision: Precision::F64,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn partition_sizes() {
        let batches = plan_batches(&[3, 1, 4, 1, 5], 2, None);
        let mut sizes: Vec<_> = batches.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, [1, 2, 2]);
        let mut all: Vec<_> = batches.concat();
        all.sort();
        assert_eq!(all, [0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shuffled = plan_batches(&[2; 50], 7, Some(&mut rng));
        let mut all: Vec<_> = shuffled.concat();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn equal_lengths_need_no_padding() {
        let seq = FeatureSequence::new(vec![0.5; 6], 2).unwrap();
        let data = TrainingData {
            sequences: vec![seq.clone(), seq.clone(), seq],
            examples: vec![
                SkipGramExample { center: 0, targets: vec![ContextTarget { offset: 1, segment: 1 }] },
                SkipGramExample { center: 1, targets: vec![ContextTarget { offset: 1, segment: 2 }] },
            ],
        };
        let batches = batch_examples(&data, 2).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].padding_frames(), 0);
    }

    #[test]
    fn masked_batch_loss_equals_unbatched_sum() {
        let data = random_data(1, &[4, 3, 1, 5], 3);
        let params = init_params::<f64>(tiny_config().architecture(3), 2).unwrap();
        for objective in [
            ObjectiveConfig::default(),
            ObjectiveConfig { normalization: LossNormalization::RawSum, teacher_forcing: false },
        ] {
            for batch in batch_examples(&data, 4).unwrap() {
                let masked = batch.masked_loss(&params, &objective).unwrap();
                let direct: f64 = batch
                    .example_ids
                    .iter()
                    .map(|&i| crate::nn::skipgram_loss(&params, &data.example(i), &objective).unwrap().total)
                    .sum();
                assert!((masked - direct).abs() < 1e-12, "{masked} vs {direct}");
                for b in 0..batch.len() {
                    let (c, t) = batch.unpad(b).unwrap();
                    let ex = data.example(batch.example_ids[b]);
                    assert_eq!(&c, ex.center);
                    assert_eq!(t.iter().collect::<Vec<_>>(), ex.targets);
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = random_data(3, &[5, 4], 3);
        let cfg = TrainConfig { learning_rate: 0.0, ..tiny_config() };
        let start = TrainState::<f64>::initial(cfg.clone(), 3, NormalizationStats::identity(3)).unwrap();
        let end = train(&data, cfg, NormalizationStats::identity(3)).unwrap();
        assert_eq!(start.params.flat(), end.params.flat());
        assert_eq!(end.epoch, 2);
    }

    #[test]
    fn single_example_update_is_exact() {
        let data = random_data(4, &[2], 3);
        let cfg = TrainConfig { learning_rate: 0.01, grad_clip_norm: None, ..tiny_config() };
        let mut params = init_params::<f64>(cfg.architecture(3), 9).unwrap();
        let before = params.clone();
        let g = skipgram_gradient(&before, &data.example(0), &cfg.objective).unwrap();
        sgd_step(&mut params, &data, &[0], &cfg).unwrap();
        for ((a, b), gi) in params.flat().iter().zip(before.flat()).zip(g.grad.flat()) {
            assert!((a - (b - 0.01 * gi)).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction() {
        let mut g = vec![3.0, -4.0, 12.0];
        let orig = g.clone();
        let norm = clip_global_norm(&mut g, 5.0);
        assert!((norm - 13.0).abs() < 1e-12);
        assert!(l2_norm(&g) <= 5.0 + 1e-9);
        let dot: f64 = g.iter().zip(&orig).map(|(a, b)| a * b).sum();
        assert!((dot / (l2_norm(&g) * l2_norm(&orig)) - 1.0).abs() < 1e-12);
        let mut small = vec![0.1, 0.2];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small, [0.1, 0.2]);
    }

    #[test]
    fn same_seed_same_log_across_execution_modes() {
        let data = random_data(5, &[6, 4, 3], 3);
        let run = |exec: Execution| {
            let cfg = TrainConfig { execution: exec, learning_rate: 0.1, ..tiny_config() };
            let mut log = Vec::new();
            let state = TrainState::<f64>::initial(cfg, 3, NormalizationStats::identity(3)).unwrap();
            let end = train_from(&data, state, |r, _| {
                log.push(r.mean_loss);
                Ok(())
            })
            .unwrap();
            (log, end.params.into_flat())
        };
        let (a, pa) = run(Execution::Sequential);
        let (b, pb) = run(Execution::best_available());
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn non_finite_loss_aborts_with_last_good_state() {
        let mut data = random_data(6, &[3], 3);
        let cfg = TrainConfig { learning_rate: 1e300, grad_clip_norm: None, epochs: 5, ..tiny_config() };
        // Enormous features push the first update to overflow.
        let huge: Vec<f64> = data.sequences[0].as_slice().iter().map(|v| v * 1e150).collect();
        data.sequences[0] = FeatureSequence::new(huge, 3).unwrap();
        match train(&data, cfg, NormalizationStats::identity(3)) {
            Err(abort) => {
                assert!(matches!(abort.error, Error::Numerical(_)), "{:?}", abort.error);
                assert!(abort.last_good.params.flat().iter().all(|v| v.is_finite()));
            }
            Ok(_) => panic!("training should have aborted"),
        }
    }

    #[test]
    fn config_round_trips_through_pairs() {
        let cfg = TrainConfig { grad_clip_norm: None, learning_rate: 0.125, ..TrainConfig::default() }.faithful();
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("momentum", "0.9").is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn overfits_a_single_example() {
        let mut data = random_data(4, &[3], 3);
        // With several targets the shared first decoder step has a nonzero floor.
        data.examples.truncate(1);
        data.examples[0].targets.truncate(1);
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 500,
            batch_size: 1,
            ..tiny_config()
        };
        let state = TrainState::<f64>::initial(config, 3, NormalizationStats::identity(3)).unwrap();
        let objective = state.config.objective;
        let before = mean_loss(&state.params, &data, &objective, Execution::Sequential).unwrap();
        let state = train_from(&data, state, |_, _| Ok(())).map_err(|a| a.error).unwrap();
        let after = mean_loss(&state.params, &data, &objective, Execution::Sequential).unwrap();
        assert!(after <= 0.1 * before, "{before} -> {after}");
    }
}
