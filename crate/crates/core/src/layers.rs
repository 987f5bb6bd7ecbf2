//! Parameterized building blocks: linear maps, norms, convolutions,
//! feed-forward blocks and multi-head attention.

use crate::error::{dim_err, Error, Result};
use crate::flops;
use crate::ops;
use crate::tensor::{Element, Tensor};
use crate::weights::{Init, ParamSource};

#[derive(Clone, Debug)]
pub struct Linear {
    /// `[in, out]`, applied as `x @ weight`.
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

impl Linear {
    pub fn build(src: &mut impl ParamSource, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: src.param(&format!("{name}.weight"), &[d_in, d_out], Init::Xavier { fan_in: d_in, fan_out: d_out })?,
            bias: src.param(&format!("{name}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Ok(Self { weight: Tensor::eye(d)?, bias: Tensor::zeros([d])? })
    }

    pub fn zero(d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self { weight: Tensor::zeros([d_in, d_out])?, bias: Tensor::zeros([d_out])? })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::linear(x, &self.weight, Some(&self.bias))
    }

    pub fn zero_out(&mut self) {
        self.weight.map_inplace(|_| 0.0);
        self.bias.map_inplace(|_| 0.0);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor<f32>,
    pub beta: Tensor<f32>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: src.param(&format!("{name}.gamma"), &[d], Init::Ones)?,
            beta: src.param(&format!("{name}.beta"), &[d], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `[c_out, c_in, k, k]`.
    pub kernel: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn build(
        src: &mut impl ParamSource,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        let init = Init::Xavier { fan_in: c_in * k * k, fan_out: c_out * k * k };
        Ok(Self {
            kernel: src.param(&format!("{name}.weight"), &[c_out, c_in, k, k], init)?,
            bias: src.param(&format!("{name}.bias"), &[c_out], Init::Zeros)?,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut y = ops::conv2d(x, &self.kernel, self.stride, self.padding)?;
        ops::add_channel_bias(&mut y, &self.bias)?;
        Ok(y)
    }

    pub fn zero_out(&mut self) {
        self.kernel.map_inplace(|_| 0.0);
        self.bias.map_inplace(|_| 0.0);
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::build(src, &format!("{name}.fc1"), d, hidden)?,
            fc2: Linear::build(src, &format!("{name}.fc2"), hidden, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = ops::gelu_tensor(&self.fc1.forward(x)?);
        self.fc2.forward(&h)
    }
}

/// Dense boolean attention mask, `true` = query may attend to key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return dim_err(format!("mask {rows}x{cols} with {} entries", allowed.len()));
        }
        Ok(Self { rows, cols, allowed })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, allowed }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl AttentionParams {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::build(src, &format!("{name}.q"), d, d)?,
            k: Linear::build(src, &format!("{name}.k"), d, d)?,
            v: Linear::build(src, &format!("{name}.v"), d, d)?,
            o: Linear::build(src, &format!("{name}.o"), d, d)?,
            heads,
        })
    }

    /// All four projections set to the identity.
    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::identity(d)?,
            k: Linear::identity(d)?,
            v: Linear::identity(d)?,
            o: Linear::identity(d)?,
            heads,
        })
    }
}

/// Copies the columns of head `h` out of a `[n, d]` buffer.
fn head_slice<T: Element>(x: &[T], n: usize, d: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dh);
    for r in 0..n {
        out.extend_from_slice(&x[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

/// Scaled dot-product attention on already-projected `[n, d]` inputs, split
/// into `heads` heads of width `d / heads`. Records the score and
/// weighted-sum FLOPs.
pub fn scaled_dot_product<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&AttnMask>,
    heads: usize,
) -> Result<Tensor<T>> {
    let [nq, d] = q.dims2()?;
    let [nk, dk] = k.dims2()?;
    if dk != d || v.shape() != k.shape() {
        return dim_err(format!(
            "attention: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    if let Some(m) = mask {
        if m.rows() != nq || m.cols() != nk {
            return dim_err(format!("mask {}x{} for {nq} queries and {nk} keys", m.rows(), m.cols()));
        }
        if let Some(i) = (0..nq).find(|&i| !m.row(i).iter().any(|&a| a)) {
            return Err(Error::Contract(format!("query row {i} is fully masked")));
        }
    }
    let dh = d / heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); nq * d];
    let mut scores = vec![T::zero(); nq * nk];
    for h in 0..heads {
        let qh = head_slice(q.data(), nq, d, h, dh);
        let kh = head_slice(k.data(), nk, d, h, dh);
        let vh = head_slice(v.data(), nk, d, h, dh);
        ops::gemm_bt(&qh, &kh, &mut scores, nq, dh, nk);
        for (i, row) in scores.chunks_exact_mut(nk).enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s = match mask {
                    Some(m) if !m.get(i, j) => T::neg_infinity(),
                    _ => *s * scale,
                };
            }
            ops::softmax_inplace(row);
        }
        let mut oh = vec![T::zero(); nq * dh];
        ops::gemm_acc(&scores, &vh, &mut oh, nq, nk, dh);
        for r in 0..nq {
            out[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&oh[r * dh..(r + 1) * dh]);
        }
    }
    flops::record(flops::attention_flops(nq, nk, d));
    Ok(Tensor::from_parts(vec![nq, d], out))
}

/// Multi-head attention: project, attend per head, concatenate, project out.
pub fn multi_head_attention(
    q: &Tensor<f32>,
    k: &Tensor<f32>,
    v: &Tensor<f32>,
    mask: Option<&AttnMask>,
    params: &AttentionParams,
) -> Result<Tensor<f32>> {
    if k.shape() != v.shape() {
        return dim_err(format!("attention keys {:?} and values {:?} differ", k.shape(), v.shape()));
    }
    let d = q.last_dim();
    if d % params.heads != 0 {
        return Err(Error::Config(format!("{} heads do not divide width {d}", params.heads)));
    }
    // Validate the mask before spending work on projections.
    if let Some(m) = mask {
        if let Some(i) = (0..m.rows()).find(|&i| !m.row(i).iter().any(|&a| a)) {
            return Err(Error::Contract(format!("query row {i} is fully masked")));
        }
    }
    let qp = params.q.forward(q)?;
    let kp = params.k.forward(k)?;
    let vp = params.v.forward(v)?;
    let attended = scaled_dot_product(&qp, &kp, &vp, mask, params.heads)?;
    params.o.forward(&attended)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Initializer;

    fn random_params(d: usize, heads: usize, seed: u64) -> AttentionParams {
        let mut init = Initializer::new(seed, String::new());
        AttentionParams::build(&mut init, "attn", d, heads).unwrap()
    }

    fn random_tokens(n: usize, d: usize, salt: f32) -> Tensor<f32> {
        Tensor::from_fn([n, d], |i| ((i as f32 + salt) * 0.731).sin()).unwrap()
    }

    #[test]
    fn single_token_identity_projections_returns_input() {
        let p = AttentionParams::identity(8, 2).unwrap();
        let x = random_tokens(1, 8, 0.3);
        let y = multi_head_attention(&x, &x, &x, None, &p).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn key_value_permutation_invariance() {
        let p = random_params(16, 4, 1);
        let q = random_tokens(5, 16, 0.0);
        let kv = random_tokens(7, 16, 3.0);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let kv_p = kv.select_rows(&perm).unwrap();
        let a = multi_head_attention(&q, &kv, &kv, None, &p).unwrap();
        let b = multi_head_attention(&q, &kv_p, &kv_p, None, &p).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn query_permutation_equivariance() {
        let p = random_params(16, 4, 2);
        let q = random_tokens(6, 16, 1.0);
        let kv = random_tokens(4, 16, 2.0);
        let perm = [5, 2, 0, 4, 1, 3];
        let a = multi_head_attention(&q, &kv, &kv, None, &p).unwrap().select_rows(&perm).unwrap();
        let b = multi_head_attention(&q.select_rows(&perm).unwrap(), &kv, &kv, None, &p).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn self_only_mask_yields_projected_values() {
        let p = random_params(8, 2, 3);
        let x = random_tokens(4, 8, 0.5);
        let mask = AttnMask::from_fn(4, 4, |i, j| i == j);
        let y = multi_head_attention(&x, &x, &x, Some(&mask), &p).unwrap();
        let want = p.o.forward(&p.v.forward(&x).unwrap()).unwrap();
        assert!(y.max_abs_diff(&want).unwrap() < 1e-6);
    }

    #[test]
    fn fully_masked_row_is_a_contract_error() {
        let p = AttentionParams::identity(4, 1).unwrap();
        let x = random_tokens(2, 4, 0.0);
        let mask = AttnMask::from_fn(2, 2, |i, _| i == 0);
        assert!(matches!(multi_head_attention(&x, &x, &x, Some(&mask), &p), Err(Error::Contract(_))));
    }

    #[test]
    fn attention_flops_closed_form() {
        let p = random_params(16, 4, 4);
        let q = random_tokens(3, 16, 0.0);
        let kv = random_tokens(5, 16, 1.0);
        let (_, c) = flops::count(|| multi_head_attention(&q, &kv, &kv, None, &p).unwrap());
        let projections = flops::matmul_flops(3, 16, 16) * 2 + flops::matmul_flops(5, 16, 16) * 2;
        assert_eq!(c.total(), projections + flops::attention_flops(3, 5, 16));
    }
}
