//! Patch-based classifier: patch extraction, token embedding, a stack of
//! residual blocks (layer norm → attention → layer norm → MLP), and a linear
//! head. The attention block is selected by the architecture: a shared
//! orthogonal transform per token, squared-overlap attention, a
//! two-excitation grid transform, or a dense softmax baseline.

use std::ops::Range;

use qvt_core::attention::{
    compound_backward, compound_forward, ortho_attention_backward,
    ortho_attention_forward_cached, patchwise_backward, patchwise_forward, OrthoAttentionCache,
    PatchSet,
};
use qvt_core::mat::{dot, Mat};
use qvt_core::ortho::OrthoLayer;

use crate::config::{ArchKind, NetworkConfig};
use crate::data::IMAGE_SIDE;
use crate::error::{ModelError, Result};
use crate::params::{AttnParams, LayerParams, ParamLayout};

pub const LN_EPS: f64 = 1e-5;

/// Gaussian error linear unit in its tanh form.
pub fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LnCache {
    x_hat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, LnCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Mat::zeros(n, d);
    let mut x_hat = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            x_hat[(i, j)] = h;
            out[(i, j)] = gamma[j] * h + beta[j];
        }
    }
    (out, LnCache { x_hat, inv_std })
}

/// Returns the input gradient and accumulates scale/shift gradients.
fn layer_norm_backward(
    cache: &LnCache,
    gamma: &[f64],
    d_out: &Mat,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Mat {
    let (n, d) = (cache.x_hat.rows(), cache.x_hat.cols());
    let mut d_x = Mat::zeros(n, d);
    for i in 0..n {
        let x_hat = cache.x_hat.row(i);
        let dout = d_out.row(i);
        let mut d_h = vec![0.0; d];
        for j in 0..d {
            d_gamma[j] += dout[j] * x_hat[j];
            d_beta[j] += dout[j];
            d_h[j] = dout[j] * gamma[j];
        }
        let mean_dh = d_h.iter().sum::<f64>() / d as f64;
        let mean_dh_xhat = dot(&d_h, x_hat) / d as f64;
        for j in 0..d {
            d_x[(i, j)] = cache.inv_std[i] * (d_h[j] - mean_dh - x_hat[j] * mean_dh_xhat);
        }
    }
    d_x
}

enum AttnCache {
    /// Per-token transform; backward recomputes everything from the input.
    Shared,
    Paired(Box<OrthoAttentionCache>),
    /// Linear in the grid; backward recomputes from the input.
    Grid,
    Dense { a_norm: Mat, xv: Mat },
}

struct LayerCache {
    ln1: LnCache,
    t1: Mat,
    attn: AttnCache,
    ln2: LnCache,
    t3: Mat,
    h_pre: Mat,
    h_act: Mat,
}

pub struct ForwardCache {
    patches: Mat,
    layers: Vec<LayerCache>,
    final_tokens: Mat,
    pub readout: Vec<f64>,
}

pub struct Network {
    pub config: NetworkConfig,
    pub layout: ParamLayout,
}

fn slice<'a>(params: &'a [f64], r: &Range<usize>) -> &'a [f64] {
    &params[r.clone()]
}

fn mat_from(params: &[f64], r: &Range<usize>, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, params[r.clone()].to_vec())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    out
}

fn accumulate(grads: &mut [f64], r: &Range<usize>, values: &[f64]) {
    for (g, v) in grads[r.clone()].iter_mut().zip(values) {
        *g += v;
    }
}

fn add_outer(block: &mut [f64], rows: &[f64], cols: &[f64]) {
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            block[i * cols.len() + j] += ri * cj;
        }
    }
}

fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Network> {
        let layout = ParamLayout::new(&config)?;
        Ok(Network { config, layout })
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.init_params(&self.config, seed)
    }

    /// Split a row-major H×W×C image into token rows: one row per grid patch,
    /// or a single whole-image row when no patching is configured.
    pub fn patchify(&self, image: &[f64]) -> Result<Mat> {
        let c = self.config.channels;
        let expected = IMAGE_SIDE * IMAGE_SIDE * c;
        if image.len() != expected {
            return Err(ModelError::Format(format!(
                "image has {} values, expected {expected}",
                image.len()
            )));
        }
        if self.config.arch == ArchKind::OrthoFnn {
            return Ok(Mat::from_vec(1, expected, image.to_vec()));
        }
        let grid = self.config.patch_grid;
        let side = IMAGE_SIDE / grid;
        let mut patches = Mat::zeros(grid * grid, side * side * c);
        for p in 0..grid * grid {
            let (r, col) = (p / grid, p % grid);
            for y in 0..side {
                for x in 0..side {
                    for ch in 0..c {
                        let src = ((r * side + y) * IMAGE_SIDE + col * side + x) * c + ch;
                        patches[(p, (y * side + x) * c + ch)] = image[src];
                    }
                }
            }
        }
        Ok(patches)
    }

    fn embed(&self, params: &[f64], patches: &Mat) -> Mat {
        let d = self.config.dim;
        let tc = self.config.tokens_with_class();
        let offset = tc - patches.rows();
        let w = mat_from(params, &self.layout.embed_w, d, self.config.patch_len());
        let b = slice(params, &self.layout.embed_b);
        let mut tokens = Mat::zeros(tc, d);
        if let Some(class) = &self.layout.class_token {
            tokens.row_mut(0).copy_from_slice(slice(params, class));
        }
        for t in 0..patches.rows() {
            let embedded = w.matvec(patches.row(t));
            let row = tokens.row_mut(offset + t);
            for j in 0..d {
                row[j] = embedded[j] + b[j];
            }
        }
        let pos = slice(params, &self.layout.positional);
        for t in 0..tc {
            let row = tokens.row_mut(t);
            let p = if self.config.per_token_positional { &pos[t * d..(t + 1) * d] } else { pos };
            for j in 0..d {
                row[j] += p[j];
            }
        }
        tokens
    }

    fn ortho(&self, params: &[f64], r: &Range<usize>, wires: usize) -> Result<OrthoLayer> {
        Ok(OrthoLayer::new(self.config.layout, wires, params[r.clone()].to_vec(), false)?)
    }

    fn attention_forward(
        &self,
        params: &[f64],
        lp: &LayerParams,
        t1: &Mat,
    ) -> Result<(Mat, AttnCache)> {
        let d = self.config.dim;
        match &lp.attn {
            AttnParams::Shared { v } => {
                let layer = self.ortho(params, v, d)?;
                let out = patchwise_forward(&layer, &PatchSet::from_rows(t1))?;
                Ok((out, AttnCache::Shared))
            }
            AttnParams::Paired { v, w } => {
                let vl = self.ortho(params, v, d)?;
                let wl = self.ortho(params, w, d)?;
                let (out, cache) = ortho_attention_forward_cached(
                    &vl,
                    Some(&wl),
                    &PatchSet::from_rows(t1),
                    self.config.attention_norm,
                    self.config.attention_axis,
                )?;
                Ok((out, AttnCache::Paired(Box::new(cache))))
            }
            AttnParams::Grid { v } => {
                let layer = self.ortho(params, v, self.config.tokens() + d)?;
                let out = compound_forward(&layer, t1)?;
                Ok((out.y, AttnCache::Grid))
            }
            AttnParams::Dense { v, w } => {
                let vm = mat_from(params, v, d, d);
                let wm = mat_from(params, w, d, d);
                let s = t1.matmul(&wm).matmul(&t1.transpose());
                let a_norm = softmax_rows(&s);
                let xv = t1.matmul(&vm.transpose());
                let out = a_norm.matmul(&xv);
                Ok((out, AttnCache::Dense { a_norm, xv }))
            }
        }
    }

    fn attention_backward(
        &self,
        params: &[f64],
        lp: &LayerParams,
        t1: &Mat,
        cache: &AttnCache,
        cotangent: &Mat,
        grads: &mut [f64],
    ) -> Result<Mat> {
        let d = self.config.dim;
        match (&lp.attn, cache) {
            (AttnParams::Shared { v }, AttnCache::Shared) => {
                let layer = self.ortho(params, v, d)?;
                let (d_angles, d_rows) =
                    patchwise_backward(&layer, &PatchSet::from_rows(t1), cotangent)?;
                accumulate(grads, v, &d_angles);
                Ok(d_rows)
            }
            (AttnParams::Paired { v, w }, AttnCache::Paired(cache)) => {
                let vl = self.ortho(params, v, d)?;
                let wl = self.ortho(params, w, d)?;
                let out = ortho_attention_backward(
                    &vl,
                    Some(&wl),
                    &PatchSet::from_rows(t1),
                    cache,
                    cotangent,
                )?;
                accumulate(grads, v, &out.d_v_angles);
                accumulate(grads, w, &out.d_w_angles);
                Ok(out.d_rows)
            }
            (AttnParams::Grid { v }, AttnCache::Grid) => {
                let layer = self.ortho(params, v, self.config.tokens() + d)?;
                let (d_angles, d_rows) = compound_backward(&layer, t1, cotangent)?;
                accumulate(grads, v, &d_angles);
                Ok(d_rows)
            }
            (AttnParams::Dense { v, w }, AttnCache::Dense { a_norm, xv }) => {
                let vm = mat_from(params, v, d, d);
                let wm = mat_from(params, w, d, d);
                let d_a_norm = cotangent.matmul(&xv.transpose());
                let d_xv = a_norm.transpose().matmul(cotangent);
                // Value path: xv = X Vᵀ.
                let d_v = d_xv.transpose().matmul(t1);
                accumulate(grads, v, d_v.data());
                let mut d_x = d_xv.matmul(&vm);
                // Softmax rows, then the bilinear form S = X W Xᵀ.
                let mut d_s = Mat::zeros(a_norm.rows(), a_norm.cols());
                for i in 0..a_norm.rows() {
                    let inner = dot(d_a_norm.row(i), a_norm.row(i));
                    for j in 0..a_norm.cols() {
                        d_s[(i, j)] = a_norm[(i, j)] * (d_a_norm[(i, j)] - inner);
                    }
                }
                let d_w = t1.transpose().matmul(&d_s).matmul(t1);
                accumulate(grads, w, d_w.data());
                d_x = add(&d_x, &d_s.matmul(&t1.matmul(&wm.transpose())));
                d_x = add(&d_x, &d_s.transpose().matmul(&t1.matmul(&wm)));
                Ok(d_x)
            }
            _ => Err(ModelError::Format("attention cache does not match parameters".into())),
        }
    }

    pub fn forward(&self, params: &[f64], image: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let d = self.config.dim;
        let hidden = self.config.hidden;
        let patches = self.patchify(image)?;
        let mut t = self.embed(params, &patches);
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for lp in &self.layout.layers {
            let (t1, ln1) = layer_norm(&t, slice(params, &lp.ln1_gamma), slice(params, &lp.ln1_beta));
            let (a, attn) = self.attention_forward(params, lp, &t1)?;
            let t2 = add(&t, &a);
            let (t3, ln2) = layer_norm(&t2, slice(params, &lp.ln2_gamma), slice(params, &lp.ln2_beta));
            let w1 = mat_from(params, &lp.mlp_w1, hidden, d);
            let b1 = slice(params, &lp.mlp_b1);
            let w2 = mat_from(params, &lp.mlp_w2, d, hidden);
            let b2 = slice(params, &lp.mlp_b2);
            let n_rows = t3.rows();
            let mut h_pre = Mat::zeros(n_rows, hidden);
            let mut h_act = Mat::zeros(n_rows, hidden);
            let mut out = t2;
            for i in 0..n_rows {
                let pre = w1.matvec(t3.row(i));
                for j in 0..hidden {
                    h_pre[(i, j)] = pre[j] + b1[j];
                    h_act[(i, j)] = gelu(h_pre[(i, j)]);
                }
                let m = w2.matvec(h_act.row(i));
                let row = out.row_mut(i);
                for j in 0..d {
                    row[j] += m[j] + b2[j];
                }
            }
            t = out;
            layers.push(LayerCache { ln1, t1, attn, ln2, t3, h_pre, h_act });
        }
        let readout = if self.config.arch.uses_class_token() {
            t.row(0).to_vec()
        } else {
            let mut mean = vec![0.0; d];
            for i in 0..t.rows() {
                for j in 0..d {
                    mean[j] += t[(i, j)] / t.rows() as f64;
                }
            }
            mean
        };
        let head_w = mat_from(params, &self.layout.head_w, self.config.num_classes, d);
        let head_b = slice(params, &self.layout.head_b);
        let mut logits = head_w.matvec(&readout);
        for (l, b) in logits.iter_mut().zip(head_b) {
            *l += b;
        }
        let cache = ForwardCache { patches, layers, final_tokens: t, readout };
        Ok((logits, cache))
    }

    /// Reverse-mode gradient of `dot(logits, d_logits)` over every parameter.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        d_logits: &[f64],
    ) -> Result<Vec<f64>> {
        let d = self.config.dim;
        let hidden = self.config.hidden;
        let mut grads = vec![0.0; self.layout.total];

        // Linear head.
        add_outer(&mut grads[self.layout.head_w.clone()], d_logits, &cache.readout);
        accumulate(&mut grads, &self.layout.head_b, d_logits);
        let head_w = mat_from(params, &self.layout.head_w, self.config.num_classes, d);
        let d_readout = head_w.matvec_t(d_logits);

        // Readout scatter onto the final token rows.
        let n_rows = cache.final_tokens.rows();
        let mut d_t = Mat::zeros(n_rows, d);
        if self.config.arch.uses_class_token() {
            d_t.row_mut(0).copy_from_slice(&d_readout);
        } else {
            for i in 0..n_rows {
                for j in 0..d {
                    d_t[(i, j)] = d_readout[j] / n_rows as f64;
                }
            }
        }

        for (lp, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            let d_out = d_t;
            // MLP path: out = t2 + W2·gelu(W1·t3 + b1) + b2.
            let w1 = mat_from(params, &lp.mlp_w1, hidden, d);
            let w2 = mat_from(params, &lp.mlp_w2, d, hidden);
            let mut d_t3 = Mat::zeros(lc.t3.rows(), d);
            for i in 0..lc.t3.rows() {
                let d_m = d_out.row(i);
                add_outer(&mut grads[lp.mlp_w2.clone()], d_m, lc.h_act.row(i));
                accumulate(&mut grads, &lp.mlp_b2, d_m);
                let d_h_act = w2.matvec_t(d_m);
                let mut d_h_pre = vec![0.0; hidden];
                for j in 0..hidden {
                    d_h_pre[j] = d_h_act[j] * gelu_prime(lc.h_pre[(i, j)]);
                }
                add_outer(&mut grads[lp.mlp_w1.clone()], &d_h_pre, lc.t3.row(i));
                accumulate(&mut grads, &lp.mlp_b1, &d_h_pre);
                let d_row = w1.matvec_t(&d_h_pre);
                d_t3.row_mut(i).copy_from_slice(&d_row);
            }
            // Second layer norm feeding the MLP.
            let mut d_g2 = vec![0.0; d];
            let mut d_b2 = vec![0.0; d];
            let d_t2_ln =
                layer_norm_backward(&lc.ln2, slice(params, &lp.ln2_gamma), &d_t3, &mut d_g2, &mut d_b2);
            accumulate(&mut grads, &lp.ln2_gamma, &d_g2);
            accumulate(&mut grads, &lp.ln2_beta, &d_b2);
            let d_t2 = add(&d_out, &d_t2_ln);
            // Attention path: t2 = t_in + attn(t1).
            let d_t1 = self.attention_backward(params, lp, &lc.t1, &lc.attn, &d_t2, &mut grads)?;
            let mut d_g1 = vec![0.0; d];
            let mut d_b1 = vec![0.0; d];
            let d_tin_ln =
                layer_norm_backward(&lc.ln1, slice(params, &lp.ln1_gamma), &d_t1, &mut d_g1, &mut d_b1);
            accumulate(&mut grads, &lp.ln1_gamma, &d_g1);
            accumulate(&mut grads, &lp.ln1_beta, &d_b1);
            d_t = add(&d_t2, &d_tin_ln);
        }

        // Embedding: positional table, class token, patch projection.
        let tc = self.config.tokens_with_class();
        if self.config.per_token_positional {
            accumulate(&mut grads, &self.layout.positional, d_t.data());
        } else {
            for i in 0..tc {
                accumulate(&mut grads, &self.layout.positional, d_t.row(i));
            }
        }
        let offset = tc - cache.patches.rows();
        if let Some(class) = &self.layout.class_token {
            accumulate(&mut grads, class, d_t.row(0));
        }
        for t in 0..cache.patches.rows() {
            add_outer(&mut grads[self.layout.embed_w.clone()], d_t.row(offset + t), cache.patches.row(t));
            accumulate(&mut grads, &self.layout.embed_b, d_t.row(offset + t));
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qvt_core::attention::{NormAxis, NormMode};
    use qvt_core::ortho::LayoutKind;
    use qvt_core::rng::Pcg32;

    fn toy_config(arch: ArchKind) -> NetworkConfig {
        NetworkConfig {
            arch,
            layout: LayoutKind::Pyramid,
            dim: 4,
            layers: 1,
            hidden: 5,
            patch_grid: 2,
            attention_norm: NormMode::Softmax,
            attention_axis: NormAxis::Rows,
            per_token_positional: false,
            dataset: "toy".into(),
            num_classes: 3,
            channels: 1,
            epochs: 1,
            batch_size: 4,
            seed: 7,
        }
    }

    fn random_image(rng: &mut Pcg32, channels: usize) -> Vec<f64> {
        (0..IMAGE_SIDE * IMAGE_SIDE * channels)
            .map(|_| rng.uniform(0.0, 1.0))
            .collect()
    }

    #[test]
    fn gelu_shape_and_derivative() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-6);
        assert!(gelu(1.0) > 0.8 && gelu(1.0) < 0.9);
        for &x in &[-3.0, -1.2, -0.3, 0.0, 0.4, 1.7, 2.9] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (fd - gelu_prime(x)).abs() < 1e-7,
                "derivative mismatch at {x}: fd {fd}, analytic {}",
                gelu_prime(x)
            );
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut rng = Pcg32::new(5, 0);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.uniform(-4.0, 4.0)).collect())
            .collect();
        let x = Mat::from_rows(&rows);
        let gamma = vec![1.0; 6];
        let beta = vec![0.0; 6];
        let (y, _) = layer_norm(&x, &gamma, &beta);
        for i in 0..3 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 6.0;
            let var: f64 = y.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = Pcg32::new(9, 0);
        let d = 5;
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let gamma: Vec<f64> = (0..d).map(|_| rng.uniform(0.5, 1.5)).collect();
        let beta: Vec<f64> = (0..d).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let cot: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let cot = Mat::from_rows(&cot);
        let loss = |rows: &[Vec<f64>], gamma: &[f64], beta: &[f64]| -> f64 {
            let (y, _) = layer_norm(&Mat::from_rows(rows), gamma, beta);
            y.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&Mat::from_rows(&rows), &gamma, &beta);
        let mut d_gamma = vec![0.0; d];
        let mut d_beta = vec![0.0; d];
        let d_x = layer_norm_backward(&cache, &gamma, &cot, &mut d_gamma, &mut d_beta);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..d {
                let mut plus = rows.clone();
                plus[i][j] += h;
                let mut minus = rows.clone();
                minus[i][j] -= h;
                let fd = (loss(&plus, &gamma, &beta) - loss(&minus, &gamma, &beta)) / (2.0 * h);
                assert!((fd - d_x[(i, j)]).abs() < 1e-6, "input ({i},{j}): fd {fd} vs {}", d_x[(i, j)]);
            }
        }
        for j in 0..d {
            let mut gp = gamma.clone();
            gp[j] += h;
            let mut gm = gamma.clone();
            gm[j] -= h;
            let fd = (loss(&rows, &gp, &beta) - loss(&rows, &gm, &beta)) / (2.0 * h);
            assert!((fd - d_gamma[j]).abs() < 1e-6);
            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd = (loss(&rows, &gamma, &bp) - loss(&rows, &gamma, &bm)) / (2.0 * h);
            assert!((fd - d_beta[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn patchify_places_pixels_by_grid_cell() {
        let net = Network::new(toy_config(ArchKind::OrthoPatchWise)).unwrap();
        let image: Vec<f64> = (0..IMAGE_SIDE * IMAGE_SIDE).map(|i| i as f64).collect();
        let patches = net.patchify(&image).unwrap();
        assert_eq!((patches.rows(), patches.cols()), (4, 196));
        // Patch (1, 0), pixel (y=2, x=3) sits at image row 16, column 3.
        assert_eq!(patches[(2, 2 * 14 + 3)], (16 * IMAGE_SIDE + 3) as f64);
        // Patch (0, 1), pixel (0, 0) is image row 0, column 14.
        assert_eq!(patches[(1, 0)], 14.0);
    }

    #[test]
    fn patchify_interleaves_channels() {
        let mut config = toy_config(ArchKind::OrthoPatchWise);
        config.channels = 3;
        let net = Network::new(config).unwrap();
        let mut image = vec![0.0; IMAGE_SIDE * IMAGE_SIDE * 3];
        // Pixel (15, 16), channel 2.
        image[(15 * IMAGE_SIDE + 16) * 3 + 2] = 9.0;
        let patches = net.patchify(&image).unwrap();
        // Patch (1, 1), local (1, 2), channel 2.
        assert_eq!(patches[(3, (14 + 2) * 3 + 2)], 9.0);
    }

    #[test]
    fn whole_image_row_without_patching() {
        let net = Network::new(toy_config(ArchKind::OrthoFnn)).unwrap();
        let image: Vec<f64> = (0..784).map(|i| i as f64 / 784.0).collect();
        let patches = net.patchify(&image).unwrap();
        assert_eq!((patches.rows(), patches.cols()), (1, 784));
        assert_eq!(net.config.patch_len(), 784);
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        for arch in ArchKind::ALL {
            let net = Network::new(toy_config(arch)).unwrap();
            let params = net.init_params(3);
            let mut rng = Pcg32::new(8, 0);
            let image = random_image(&mut rng, 1);
            let (a, _) = net.forward(&params, &image).unwrap();
            let (b, _) = net.forward(&params, &image).unwrap();
            assert_eq!(a.len(), 3, "{}", arch.name());
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_architecture() {
        for arch in ArchKind::ALL {
            let net = Network::new(toy_config(arch)).unwrap();
            let mut params = net.init_params(11);
            let mut rng = Pcg32::new(21, 4);
            let image = random_image(&mut rng, 1);
            let cot: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (_, cache) = net.forward(&params, &image).unwrap();
            let grads = net.backward(&params, &cache, &cot).unwrap();
            let h = 1e-5;
            let mut worst = 0.0f64;
            for i in 0..params.len() {
                let orig = params[i];
                params[i] = orig + h;
                let (lp, _) = net.forward(&params, &image).unwrap();
                params[i] = orig - h;
                let (lm, _) = net.forward(&params, &image).unwrap();
                params[i] = orig;
                let fd = (dot(&lp, &cot) - dot(&lm, &cot)) / (2.0 * h);
                let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1.0);
                worst = worst.max(err);
                assert!(
                    err < 1e-4,
                    "{} param {i} ({}): fd {fd} vs analytic {}",
                    arch.name(),
                    net.layout
                        .entries
                        .iter()
                        .find(|e| e.range().contains(&i))
                        .map(|e| e.name.as_str())
                        .unwrap_or("?"),
                    grads[i]
                );
            }
            assert!(worst < 1e-4, "{} worst relative error {worst}", arch.name());
        }
    }

    #[test]
    fn shared_transform_readout_ignores_patch_order() {
        // With a shared per-token transform, shared positional shift, and a
        // mean readout, swapping two patches in the image cannot change the
        // logits.
        let net = Network::new(toy_config(ArchKind::OrthoPatchWise)).unwrap();
        let params = net.init_params(5);
        let mut rng = Pcg32::new(13, 0);
        let image = random_image(&mut rng, 1);
        // Swap the two top patches (columns 0..14 and 14..28 of rows 0..14).
        let mut swapped = image.clone();
        for y in 0..14 {
            for x in 0..14 {
                swapped.swap(y * IMAGE_SIDE + x, y * IMAGE_SIDE + 14 + x);
            }
        }
        let (a, _) = net.forward(&params, &image).unwrap();
        let (b, _) = net.forward(&params, &swapped).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // The grid transform mixes specific token wires, so the same swap
        // must generally change its logits.
        let net2 = Network::new(toy_config(ArchKind::CompoundTransformer)).unwrap();
        let params2 = net2.init_params(5);
        let (a2, _) = net2.forward(&params2, &image).unwrap();
        let (b2, _) = net2.forward(&params2, &swapped).unwrap();
        assert!(a2.iter().zip(&b2).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn class_token_row_feeds_the_head() {
        let mut config = toy_config(ArchKind::OrthoTransformer);
        config.layers = 1;
        let net = Network::new(config).unwrap();
        let params = net.init_params(2);
        let mut rng = Pcg32::new(3, 0);
        let image = random_image(&mut rng, 1);
        let (_, cache) = net.forward(&params, &image).unwrap();
        assert_eq!(cache.final_tokens.rows(), 5);
        assert_eq!(cache.readout, cache.final_tokens.row(0).to_vec());
    }
}
