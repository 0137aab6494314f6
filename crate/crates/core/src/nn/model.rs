//! Parameter storage for the stacked-LSTM encoder, LSTM decoder and output
//! projection, kept in one flat buffer so every scalar has a stable index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

use super::lstm::{LstmLayer, LstmLayerGrad};

/// Network sizes. Every encoder layer and the decoder share `hidden`, which
/// is also the embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
}

impl Architecture {
    /// Three 300-unit encoder layers and a 300-unit decoder over 13-dim MFCCs.
    pub const DEFAULT: Architecture = Architecture {
        feature_dim: 13,
        hidden: 300,
        encoder_layers: 3,
    };

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.encoder_layers == 0 {
            return Err(Error::Config(format!(
                "architecture needs positive sizes, got {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_len(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden + 1)
    }

    fn encoder_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.feature_dim
        } else {
            self.hidden
        }
    }

    fn encoder_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| Self::layer_len(self.encoder_input(l), self.hidden))
            .sum()
    }

    fn decoder_offset(&self) -> usize {
        self.encoder_offset(self.encoder_layers)
    }

    fn projection_offset(&self) -> usize {
        self.decoder_offset() + Self::layer_len(self.feature_dim, self.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.projection_offset() + self.feature_dim * self.hidden + self.feature_dim
    }

    /// Human-readable location of flat parameter `index`.
    pub fn describe_index(&self, index: usize) -> String {
        let describe_layer = |name: String, local: usize, input: usize| {
            let h = self.hidden;
            let wi = 4 * h * input;
            let wr = 4 * h * h;
            if local < wi {
                format!("{name}.w_input[{}, {}]", local / input, local % input)
            } else if local < wi + wr {
                let l = local - wi;
                format!("{name}.w_recurrent[{}, {}]", l / h, l % h)
            } else {
                format!("{name}.bias[{}]", local - wi - wr)
            }
        };
        for l in 0..self.encoder_layers {
            let start = self.encoder_offset(l);
            let end = self.encoder_offset(l + 1);
            if (start..end).contains(&index) {
                return describe_layer(format!("encoder[{l}]"), index - start, self.encoder_input(l));
            }
        }
        if index < self.projection_offset() {
            return describe_layer("decoder".into(), index - self.decoder_offset(), self.feature_dim);
        }
        let local = index - self.projection_offset();
        let w = self.feature_dim * self.hidden;
        if local < w {
            format!("projection.weight[{}, {}]", local / self.hidden, local % self.hidden)
        } else if local < w + self.feature_dim {
            format!("projection.bias[{}]", local - w)
        } else {
            format!("<out of range {index}>")
        }
    }
}

/// All trainable parameters in one flat vector.
///
/// Layout: encoder layers bottom to top, then the decoder, each as
/// `[w_input (4h×in), w_recurrent (4h×h), bias (4h)]`, then the projection
/// weight (`d×h`) and bias (`d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Architecture,
    flat: Vec<T>,
}

fn split_layer<T>(buf: &[T], input: usize, hidden: usize) -> (&[T], &[T], &[T]) {
    let (wi, rest) = buf.split_at(4 * hidden * input);
    let (wr, rest) = rest.split_at(4 * hidden * hidden);
    (wi, wr, &rest[..4 * hidden])
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            flat: vec![T::zero(); arch.param_count()],
        })
    }

    /// Rebuild from a flat vector produced by [`ModelParams::flat`].
    pub fn from_flat(arch: Architecture, flat: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(Error::Contract(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, flat })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn flat(&self) -> &[T] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            flat: self.flat.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn layer_at(&self, offset: usize, input: usize) -> LstmLayer<'_, T> {
        let h = self.arch.hidden;
        let (w_input, w_recurrent, bias) = split_layer(&self.flat[offset..], input, h);
        LstmLayer {
            w_input,
            w_recurrent,
            bias,
            input_size: input,
            hidden_size: h,
        }
    }

    pub fn encoder_layer(&self, layer: usize) -> LstmLayer<'_, T> {
        self.layer_at(self.arch.encoder_offset(layer), self.arch.encoder_input(layer))
    }

    pub fn decoder(&self) -> LstmLayer<'_, T> {
        self.layer_at(self.arch.decoder_offset(), self.arch.feature_dim)
    }

    /// Output projection `(weight d×h, bias d)`.
    pub fn projection(&self) -> (&[T], &[T]) {
        let off = self.arch.projection_offset();
        let w = self.arch.feature_dim * self.arch.hidden;
        let (weight, bias) = self.flat[off..].split_at(w);
        (weight, bias)
    }

    /// Mutable views of every block, in layout order.
    pub(crate) fn grad_views(&mut self) -> GradViews<'_, T> {
        let arch = self.arch;
        let h = arch.hidden;
        let mut rest: &mut [T] = &mut self.flat;
        let mut take = |n: usize| {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(n);
            rest = tail;
            head
        };
        let mut layer = |input: usize| LstmLayerGrad {
            w_input: take(4 * h * input),
            w_recurrent: take(4 * h * h),
            bias: take(4 * h),
        };
        let encoder = (0..arch.encoder_layers)
            .map(|l| layer(arch.encoder_input(l)))
            .collect();
        let decoder = layer(arch.feature_dim);
        let proj_weight = take(arch.feature_dim * h);
        let proj_bias = take(arch.feature_dim);
        GradViews {
            encoder,
            decoder,
            proj_weight,
            proj_bias,
        }
    }

    /// Index range of the forget-gate bias of encoder layer `layer`
    /// (`None` selects the decoder).
    pub fn forget_bias_range(&self, layer: Option<usize>) -> std::ops::Range<usize> {
        let h = self.arch.hidden;
        let (offset, input) = match layer {
            Some(l) => (self.arch.encoder_offset(l), self.arch.encoder_input(l)),
            None => (self.arch.decoder_offset(), self.arch.feature_dim),
        };
        let bias = offset + 4 * h * (input + h);
        bias + h..bias + 2 * h
    }

    /// Index ranges of every weight matrix with its fan-in (column count).
    pub fn weight_blocks(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        let h = self.arch.hidden;
        let mut out = Vec::new();
        let mut push_layer = |offset: usize, input: usize| {
            out.push((offset..offset + 4 * h * input, input));
            let wr = offset + 4 * h * input;
            out.push((wr..wr + 4 * h * h, h));
        };
        for l in 0..self.arch.encoder_layers {
            push_layer(self.arch.encoder_offset(l), self.arch.encoder_input(l));
        }
        push_layer(self.arch.decoder_offset(), self.arch.feature_dim);
        let p = self.arch.projection_offset();
        out.push((p..p + self.arch.feature_dim * h, h));
        out
    }
}

pub(crate) struct GradViews<'a, T> {
    pub encoder: Vec<LstmLayerGrad<'a, T>>,
    pub decoder: LstmLayerGrad<'a, T>,
    pub proj_weight: &'a mut [T],
    pub proj_bias: &'a mut [T],
}

/// Seeded initialization: every weight matrix `~ U(-r, r)` with
/// `r = 1/√fan_in`; biases zero except forget gates, which start at 1.
pub fn init_params<T: Real>(arch: Architecture, seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (range, fan_in) in params.weight_blocks() {
        let r = 1.0 / (fan_in as f64).sqrt();
        for v in &mut params.flat[range] {
            *v = T::of(rng.random_range(-r..r));
        }
    }
    let forget: Vec<_> = (0..arch.encoder_layers)
        .map(Some)
        .chain(std::iter::once(None))
        .map(|l| params.forget_bias_range(l))
        .collect();
    for range in forget {
        params.flat[range].iter_mut().for_each(|v| *v = T::one());
    }
    Ok(params)
}
