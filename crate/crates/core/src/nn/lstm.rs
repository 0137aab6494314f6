//! A single LSTM layer: forward step with a reverse-mode cache, and its backward step.
//!
//! Gate order inside every `4h` block is input, forget, cell candidate, output.

use crate::error::{Error, Result};
use crate::real::Real;

/// Borrowed weights of one LSTM layer, row-major.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer<'a, T> {
    /// `4h × input_size`
    pub w_input: &'a [T],
    /// `4h × h`
    pub w_recurrent: &'a [T],
    /// `4h`
    pub bias: &'a [T],
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Owned weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams<T> {
    pub w_input: Vec<T>,
    pub w_recurrent: Vec<T>,
    pub bias: Vec<T>,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl<T: Real> LstmLayerParams<T> {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            w_input: vec![T::zero(); g * input_size],
            w_recurrent: vec![T::zero(); g * hidden_size],
            bias: vec![T::zero(); g],
            input_size,
            hidden_size,
        }
    }

    pub fn view(&self) -> LstmLayer<'_, T> {
        LstmLayer {
            w_input: &self.w_input,
            w_recurrent: &self.w_recurrent,
            bias: &self.bias,
            input_size: self.input_size,
            hidden_size: self.hidden_size,
        }
    }
}

impl<'a, T: Real> LstmLayer<'a, T> {
    pub fn check_shapes(&self) -> Result<()> {
        let g = 4 * self.hidden_size;
        if self.w_input.len() != g * self.input_size
            || self.w_recurrent.len() != g * self.hidden_size
            || self.bias.len() != g
        {
            return Err(Error::Contract(format!(
                "LSTM layer buffers ({}, {}, {}) do not match input {} / hidden {}",
                self.w_input.len(),
                self.w_recurrent.len(),
                self.bias.len(),
                self.input_size,
                self.hidden_size
            )));
        }
        Ok(())
    }
}

/// Mutable gradient buffers laid out like [`LstmLayer`].
#[derive(Debug)]
pub struct LstmLayerGrad<'a, T> {
    pub w_input: &'a mut [T],
    pub w_recurrent: &'a mut [T],
    pub bias: &'a mut [T],
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> HiddenState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[i, f, g, o]`, each of length h.
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out[r] += Σ_c m[r·cols + c] · v[c]`
#[inline]
pub(crate) fn matvec_acc<T: Real>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += dot(row, v);
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (a_main, a_tail) = a.split_at(a.len() - a.len() % LANES);
    let (b_main, b_tail) = b.split_at(a_main.len());
    for (x, y) in a_main.chunks_exact(LANES).zip(b_main.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut sum = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (x, y) in a_tail.iter().zip(b_tail) {
        sum += *x * *y;
    }
    sum
}

/// `out[c] += Σ_r m[r·cols + c] · v[r]`
#[inline]
pub(crate) fn matvec_t_acc<T: Real>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = out.len();
    for (row, &s) in m.chunks_exact(cols).zip(v) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += *a * s;
        }
    }
}

/// `m[r·cols + c] += u[r] · v[c]`
#[inline]
pub(crate) fn outer_acc<T: Real>(m: &mut [T], u: &[T], v: &[T]) {
    let cols = v.len();
    for (row, &s) in m.chunks_exact_mut(cols).zip(u) {
        for (a, b) in row.iter_mut().zip(v) {
            *a += s * *b;
        }
    }
}

pub(crate) fn forward_step<T: Real>(
    layer: &LstmLayer<'_, T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> StepCache<T> {
    let h = layer.hidden_size;
    let mut pre = layer.bias.to_vec();
    matvec_acc(layer.w_input, x, &mut pre);
    matvec_acc(layer.w_recurrent, h_prev, &mut pre);

    let mut gates = pre;
    for (j, v) in gates.iter_mut().enumerate() {
        *v = if (2 * h..3 * h).contains(&j) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let mut c = vec![T::zero(); h];
    let mut tanh_c = vec![T::zero(); h];
    let mut h_out = vec![T::zero(); h];
    for j in 0..h {
        let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h_out[j] = o * tanh_c[j];
    }
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h: h_out,
    }
}

/// Reverse one step. `dh`/`dc` are the loss gradients w.r.t. this step's
/// outputs; weight gradients accumulate into `grad`, and the gradients
/// w.r.t. the step inputs are added into `dx`, `dh_prev`, `dc_prev`.
#[cfg(test)]
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_step<T: Real>(
    layer: &LstmLayer<'_, T>,
    cache: &StepCache<T>,
    dh: &[T],
    dc: &[T],
    grad: &mut LstmLayerGrad<'_, T>,
    dx: &mut [T],
    dh_prev: &mut [T],
    dc_prev: &mut [T],
) {
    let da = gate_deltas(cache, dh, dc, dc_prev);
    propagate(layer, &da, dx, dh_prev);
    accumulate_weight_grads(grad, &[(&da, cache)]);
}

/// Gradient at the gate pre-activations for one step, given `dL/dh` and
/// `dL/dc` there. Adds the cell-state carry into `dc_prev`.
pub(crate) fn gate_deltas<T: Real>(cache: &StepCache<T>, dh: &[T], dc: &[T], dc_prev: &mut [T]) -> Vec<T> {
    let h = dh.len();
    let one = T::one();
    let mut da = vec![T::zero(); 4 * h];
    for j in 0..h {
        let (i, f, g, o) = (
            cache.gates[j],
            cache.gates[h + j],
            cache.gates[2 * h + j],
            cache.gates[3 * h + j],
        );
        let tc = cache.tanh_c[j];
        let d_o = dh[j] * tc;
        let d_c = dc[j] + dh[j] * o * (one - tc * tc);
        let d_i = d_c * g;
        let d_g = d_c * i;
        let d_f = d_c * cache.c_prev[j];
        dc_prev[j] += d_c * f;
        da[j] = d_i * i * (one - i);
        da[h + j] = d_f * f * (one - f);
        da[2 * h + j] = d_g * (one - g * g);
        da[3 * h + j] = d_o * o * (one - o);
    }
    da
}

/// `dx += W_inᵀ·da`, `dh_prev += W_recᵀ·da`.
pub(crate) fn propagate<T: Real>(layer: &LstmLayer<'_, T>, da: &[T], dx: &mut [T], dh_prev: &mut [T]) {
    matvec_t_acc(layer.w_input, da, dx);
    matvec_t_acc(layer.w_recurrent, da, dh_prev);
}

/// Add `Σ_s da_s ⊗ [x_s, h_prev_s]` and `Σ_s da_s` into the layer gradient,
/// steps applied in slice order. One pass over the gradient rows serves all
/// steps, so each row stays in cache.
pub(crate) fn accumulate_weight_grads<T: Real>(grad: &mut LstmLayerGrad<'_, T>, steps: &[(&[T], &StepCache<T>)]) {
    let Some((first, cache)) = steps.first() else {
        return;
    };
    let (rows, n_in, n_h) = (first.len(), cache.x.len(), cache.h_prev.len());
    for r in 0..rows {
        let w_in = &mut grad.w_input[r * n_in..(r + 1) * n_in];
        let w_rec = &mut grad.w_recurrent[r * n_h..(r + 1) * n_h];
        for (da, cache) in steps {
            let s = da[r];
            for (a, b) in w_in.iter_mut().zip(&cache.x) {
                *a += s * *b;
            }
            for (a, b) in w_rec.iter_mut().zip(&cache.h_prev) {
                *a += s * *b;
            }
            grad.bias[r] += s;
        }
    }
}

/// One LSTM time step:
/// `i,f,o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_step<T: Real>(
    layer: &LstmLayer<'_, T>,
    x: &[T],
    prev: &HiddenState<T>,
) -> Result<HiddenState<T>> {
    layer.check_shapes()?;
    if x.len() != layer.input_size
        || prev.h.len() != layer.hidden_size
        || prev.c.len() != layer.hidden_size
    {
        return Err(Error::Contract(format!(
            "cell step got x[{}], h[{}], c[{}] for a {}→{} layer",
            x.len(),
            prev.h.len(),
            prev.c.len(),
            layer.input_size,
            layer.hidden_size
        )));
    }
    let cache = forward_step(layer, x, &prev.h, &prev.c);
    Ok(HiddenState {
        h: cache.h,
        c: cache.c,
    })
}
