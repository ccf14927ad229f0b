use serde::{Deserialize, Serialize};

use crate::basis::pair_rank;
use crate::circuit::{Circuit, GateOp};
use crate::error::{CoreError, Result};
use crate::loaders::{matrix_state, plan_vector_loader, LoaderTopology, NORM_FLOOR};
use crate::mat::{dot, norm2, Mat};
use crate::ortho::OrthoLayer;

/// Token rows split into directions and lengths, the form the circuit
/// constructions consume: loaders prepare unit vectors, norms are carried as
/// classical scale factors. Rows with negligible norm become zero tokens.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub n: usize,
    pub d: usize,
    pub unit_vectors: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

impl PatchSet {
    pub fn from_rows(rows: &Mat) -> PatchSet {
        let (n, d) = (rows.rows(), rows.cols());
        let mut unit_vectors = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = rows.row(i);
            let norm = norm2(row);
            if norm <= NORM_FLOOR {
                unit_vectors.push(vec![0.0; d]);
                norms.push(0.0);
            } else {
                unit_vectors.push(row.iter().map(|v| v / norm).collect());
                norms.push(norm);
            }
        }
        PatchSet { n, d, unit_vectors, norms }
    }

    /// Token i with its length restored.
    pub fn raw(&self, i: usize) -> Vec<f64> {
        self.unit_vectors[i].iter().map(|v| v * self.norms[i]).collect()
    }

    pub fn raw_rows(&self) -> Mat {
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| self.raw(i)).collect();
        Mat::from_rows(&rows)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionMatrix {
    pub entries: Mat,
    pub normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Softmax,
    L1,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    Rows,
    Columns,
}

/// Every token pushed through the same orthogonal transform:
/// row i of the result is ν_i · V x̂_i = V x_i.
pub fn patchwise_forward(v: &OrthoLayer, patches: &PatchSet) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = (0..patches.n)
        .map(|i| v.apply_unary(&patches.raw(i)))
        .collect::<Result<_>>()?;
    Ok(Mat::from_rows(&rows))
}

/// Reverse-mode derivative of `patchwise_forward`: angle gradients plus the
/// gradient on the raw token rows.
pub fn patchwise_backward(
    v: &OrthoLayer,
    patches: &PatchSet,
    cotangent: &Mat,
) -> Result<(Vec<f64>, Mat)> {
    if cotangent.rows() != patches.n || cotangent.cols() != patches.d {
        return Err(CoreError::ShapeMismatch(format!(
            "cotangent {}×{} for {} tokens of width {}",
            cotangent.rows(),
            cotangent.cols(),
            patches.n,
            patches.d
        )));
    }
    let inputs: Vec<Vec<f64>> = (0..patches.n).map(|i| patches.raw(i)).collect();
    let cots: Vec<Vec<f64>> = (0..patches.n).map(|i| cotangent.row(i).to_vec()).collect();
    let (grads, input_grads) = v.layer_grad_batch(&inputs, &cots)?;
    Ok((grads, Mat::from_rows(&input_grads)))
}

/// Unnormalized attention coefficients A_ij = (x_iᵀ W x_j)²: the squared
/// bilinear form is exactly the probability of reading 1 on the first wire
/// of the inner-product circuit, scaled by the two token lengths.
pub fn attention_coeffs(w: Option<&OrthoLayer>, patches: &PatchSet) -> Result<AttentionMatrix> {
    let s = coeff_bilinear(w, patches)?;
    let mut entries = Mat::zeros(patches.n, patches.n);
    for i in 0..patches.n {
        for j in 0..patches.n {
            entries[(i, j)] = s[(i, j)] * s[(i, j)];
        }
    }
    Ok(AttentionMatrix { entries, normalized: false })
}

/// The signed bilinear form S_ij = x_iᵀ W x_j on raw tokens.
fn coeff_bilinear(w: Option<&OrthoLayer>, patches: &PatchSet) -> Result<Mat> {
    let wx: Vec<Vec<f64>> = (0..patches.n)
        .map(|j| match w {
            Some(w) => w.apply_unary(&patches.raw(j)),
            None => Ok(patches.raw(j)),
        })
        .collect::<Result<_>>()?;
    let mut s = Mat::zeros(patches.n, patches.n);
    for i in 0..patches.n {
        let xi = patches.raw(i);
        for j in 0..patches.n {
            s[(i, j)] = dot(&xi, &wx[j]);
        }
    }
    Ok(s)
}

pub fn normalize_attention(
    a: &AttentionMatrix,
    mode: NormMode,
    axis: NormAxis,
) -> Result<AttentionMatrix> {
    let entries = match axis {
        NormAxis::Rows => normalize_rows(&a.entries, mode)?,
        NormAxis::Columns => normalize_rows(&a.entries.transpose(), mode)?.transpose(),
    };
    Ok(AttentionMatrix { entries, normalized: true })
}

fn normalize_rows(m: &Mat, mode: NormMode) -> Result<Mat> {
    let mut out = m.clone();
    match mode {
        NormMode::None => {}
        NormMode::Softmax => {
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
        }
        NormMode::L1 => {
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let sum: f64 = row.iter().sum();
                if sum <= NORM_FLOOR {
                    return Err(CoreError::DegenerateAttentionRow { row: i });
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
    Ok(out)
}

/// Pullback through `normalize_rows`: given normalized values and the
/// cotangent on them, return the cotangent on the unnormalized entries.
fn normalize_rows_backward(raw: &Mat, normed: &Mat, cot: &Mat, mode: NormMode) -> Mat {
    let mut out = cot.clone();
    match mode {
        NormMode::None => {}
        NormMode::Softmax => {
            for i in 0..out.rows() {
                let inner = dot(cot.row(i), normed.row(i));
                for j in 0..out.cols() {
                    out[(i, j)] = normed[(i, j)] * (cot[(i, j)] - inner);
                }
            }
        }
        NormMode::L1 => {
            for i in 0..out.rows() {
                let sum: f64 = raw.row(i).iter().sum();
                let inner = dot(cot.row(i), normed.row(i));
                for j in 0..out.cols() {
                    out[(i, j)] = (cot[(i, j)] - inner) / sum;
                }
            }
        }
    }
    out
}

/// Everything the attention backward pass needs from the forward pass.
pub struct OrthoAttentionCache {
    /// Signed bilinear form S_ij = x_iᵀ W x_j.
    pub s: Mat,
    /// Squared coefficients before normalization.
    pub a_raw: Mat,
    /// Normalized weights actually applied.
    pub a_norm: Mat,
    /// Rows V x_j.
    pub vx: Mat,
    pub mode: NormMode,
    pub axis: NormAxis,
}

/// Full attention block: squared-overlap coefficients, a normalization, and
/// the weighted recombination out_i = Σ_j A'_ij V x_j.
pub fn ortho_attention_forward(
    v: &OrthoLayer,
    w: Option<&OrthoLayer>,
    patches: &PatchSet,
    mode: NormMode,
    axis: NormAxis,
) -> Result<Mat> {
    Ok(ortho_attention_forward_cached(v, w, patches, mode, axis)?.0)
}

pub fn ortho_attention_forward_cached(
    v: &OrthoLayer,
    w: Option<&OrthoLayer>,
    patches: &PatchSet,
    mode: NormMode,
    axis: NormAxis,
) -> Result<(Mat, OrthoAttentionCache)> {
    let s = coeff_bilinear(w, patches)?;
    let mut a_raw = Mat::zeros(patches.n, patches.n);
    for i in 0..patches.n {
        for j in 0..patches.n {
            a_raw[(i, j)] = s[(i, j)] * s[(i, j)];
        }
    }
    let a_norm = match axis {
        NormAxis::Rows => normalize_rows(&a_raw, mode)?,
        NormAxis::Columns => normalize_rows(&a_raw.transpose(), mode)?.transpose(),
    };
    let vx = patchwise_forward(v, patches)?;
    let out = a_norm.matmul(&vx);
    Ok((out, OrthoAttentionCache { s, a_raw, a_norm, vx, mode, axis }))
}

pub struct OrthoAttentionGrads {
    pub d_v_angles: Vec<f64>,
    /// Empty when no mixing transform was used.
    pub d_w_angles: Vec<f64>,
    pub d_rows: Mat,
}

pub fn ortho_attention_backward(
    v: &OrthoLayer,
    w: Option<&OrthoLayer>,
    patches: &PatchSet,
    cache: &OrthoAttentionCache,
    cotangent: &Mat,
) -> Result<OrthoAttentionGrads> {
    let n = patches.n;
    // out = A'·VX: split the cotangent into the two factors.
    let d_a_norm = cotangent.matmul(&cache.vx.transpose());
    let d_vx = cache.a_norm.transpose().matmul(cotangent);

    // V path: angle gradients and Vᵀ pullback onto the raw tokens.
    let inputs: Vec<Vec<f64>> = (0..n).map(|i| patches.raw(i)).collect();
    let cots: Vec<Vec<f64>> = (0..n).map(|i| d_vx.row(i).to_vec()).collect();
    let (d_v_angles, vx_input_grads) = v.layer_grad_batch(&inputs, &cots)?;
    let mut d_rows = Mat::from_rows(&vx_input_grads);

    // Normalization pullback onto the squared coefficients.
    let d_a_raw = match cache.axis {
        NormAxis::Rows => normalize_rows_backward(&cache.a_raw, &cache.a_norm, &d_a_norm, cache.mode),
        NormAxis::Columns => normalize_rows_backward(
            &cache.a_raw.transpose(),
            &cache.a_norm.transpose(),
            &d_a_norm.transpose(),
            cache.mode,
        )
        .transpose(),
    };

    // Squaring: dS = 2 S ∘ dA.
    let mut d_s = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d_s[(i, j)] = 2.0 * cache.s[(i, j)] * d_a_raw[(i, j)];
        }
    }

    // Bilinear form S_ij = x_iᵀ W x_j.
    let wx: Vec<Vec<f64>> = (0..n)
        .map(|j| match w {
            Some(w) => w.apply_unary(&patches.raw(j)),
            None => Ok(patches.raw(j)),
        })
        .collect::<Result<_>>()?;
    let wt_x: Vec<Vec<f64>> = (0..n)
        .map(|i| match w {
            Some(w) => w.apply_unary_inverse(&patches.raw(i)),
            None => Ok(patches.raw(i)),
        })
        .collect::<Result<_>>()?;
    for i in 0..n {
        for j in 0..n {
            let g = d_s[(i, j)];
            if g == 0.0 {
                continue;
            }
            for k in 0..patches.d {
                d_rows[(i, k)] += g * wx[j][k];
                d_rows[(j, k)] += g * wt_x[i][k];
            }
        }
    }

    // W path via the matrix cotangent M = Xᵀ·dS·X: the loss term is the
    // Frobenius pairing ⟨W, M⟩, whose angle gradient is the batched layer
    // gradient over identity columns with M's columns as cotangents.
    let d_w_angles = match w {
        None => Vec::new(),
        Some(w_layer) => {
            let x = patches.raw_rows();
            let m = x.transpose().matmul(&d_s).matmul(&x);
            let d = patches.d;
            let eye_cols: Vec<Vec<f64>> = (0..d)
                .map(|k| {
                    let mut e = vec![0.0; d];
                    e[k] = 1.0;
                    e
                })
                .collect();
            let m_cols: Vec<Vec<f64>> = (0..d).map(|k| (0..d).map(|r| m[(r, k)]).collect()).collect();
            let (g, _) = w_layer.layer_grad_batch(&eye_cols, &m_cols)?;
            g
        }
    };

    Ok(OrthoAttentionGrads { d_v_angles, d_w_angles, d_rows })
}

/// One output row computed from an externally supplied coefficient row:
/// y = Σ_j a_j · V x_j. Linear in the coefficient row by construction.
pub fn quantum_attention_forward(
    a_row: &[f64],
    v: &OrthoLayer,
    patches: &PatchSet,
) -> Result<Vec<f64>> {
    if a_row.len() != patches.n {
        return Err(CoreError::ShapeMismatch(format!(
            "{} coefficients for {} tokens",
            a_row.len(),
            patches.n
        )));
    }
    let a_norm = norm2(a_row);
    if a_norm <= NORM_FLOOR {
        return Err(CoreError::DegenerateVector { norm: a_norm, floor: NORM_FLOOR });
    }
    let mut y = vec![0.0; patches.d];
    for (j, &a) in a_row.iter().enumerate() {
        if a == 0.0 || patches.norms[j] == 0.0 {
            continue;
        }
        let vx = v.apply_unary(&patches.raw(j))?;
        for (yk, vk) in y.iter_mut().zip(&vx) {
            *yk += a * vk;
        }
    }
    Ok(y)
}

/// Reverse-mode derivative of `quantum_attention_forward`:
/// (∂L/∂a_row, ∂L/∂V angles, ∂L/∂raw rows).
pub fn quantum_attention_backward(
    a_row: &[f64],
    v: &OrthoLayer,
    patches: &PatchSet,
    cotangent: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Mat)> {
    if cotangent.len() != patches.d {
        return Err(CoreError::ShapeMismatch(format!(
            "cotangent of length {} for width {}",
            cotangent.len(),
            patches.d
        )));
    }
    let mut d_a = vec![0.0; patches.n];
    let inputs: Vec<Vec<f64>> = (0..patches.n).map(|j| patches.raw(j)).collect();
    let cots: Vec<Vec<f64>> = a_row
        .iter()
        .map(|&a| cotangent.iter().map(|&u| a * u).collect())
        .collect();
    let (d_angles, input_grads) = v.layer_grad_batch(&inputs, &cots)?;
    for (j, x) in inputs.iter().enumerate() {
        let vx = v.apply_unary(x)?;
        d_a[j] = dot(cotangent, &vx);
    }
    Ok((d_a, d_angles, Mat::from_rows(&input_grads)))
}

/// Circuit realization of one attention output row on n+d wires: load the
/// normalized coefficient row on the top register, entangle each branch with
/// its token's loader, then run the trainable transform on the bottom
/// register. The prepared state is Σ_j â_j |e_j⟩ ⊗ |V x̂_j⟩.
pub fn build_quantum_attention_circuit(
    a_row: &[f64],
    v: &OrthoLayer,
    patches: &PatchSet,
) -> Result<Circuit> {
    let (n, d) = (patches.n, patches.d);
    if a_row.len() != n {
        return Err(CoreError::ShapeMismatch(format!("{} coefficients for {n} tokens", a_row.len())));
    }
    if v.n != d {
        return Err(CoreError::ShapeMismatch(format!(
            "transform on {} wires for tokens of width {d}",
            v.n
        )));
    }
    let a_norm = norm2(a_row);
    if a_norm <= NORM_FLOOR {
        return Err(CoreError::DegenerateVector { norm: a_norm, floor: NORM_FLOOR });
    }
    let top_topology = if n.is_power_of_two() { LoaderTopology::Parallel } else { LoaderTopology::Diagonal };
    let row_topology = if d.is_power_of_two() { LoaderTopology::Parallel } else { LoaderTopology::Diagonal };
    let mut c = Circuit::new(n + d);
    c.push(GateOp::PauliX { wire: 0 })?;
    if n > 1 {
        plan_vector_loader(a_row, top_topology)?.append_fan(&mut c, 0);
    }
    for j in 0..n {
        if a_row[j] == 0.0 || patches.norms[j] == 0.0 {
            continue;
        }
        let loader = plan_vector_loader(&patches.unit_vectors[j], row_topology)?;
        loader.append_fan_adjoint(&mut c, n);
        c.push(GateOp::Cnot { control: j, target: n })?;
        loader.append_fan(&mut c, n);
    }
    for (&(a, b), &theta) in v.pairs.iter().zip(&v.angles) {
        c.rbs(a + n, b + n, theta)?;
    }
    if v.det_flip {
        c.push(GateOp::PauliZ { wire: n + d - 1 })?;
    }
    Ok(c)
}

/// Output of the two-register compound transform: the recovered token grid
/// plus the probability mass that left the cross-register sector.
pub struct CompoundOutput {
    pub y: Mat,
    pub leakage: f64,
}

fn cross_rank(n: usize, d: usize, i: usize, j: usize) -> usize {
    pair_rank(n + d, i, n + j)
}

/// Two-excitation transform of the whole token grid at once: embed X as a
/// weight-2 state on n+d wires, apply the transform, and read the
/// cross-register block back as a matrix (rescaled by ‖X‖_F). Same-register
/// amplitude mass is reported as leakage.
pub fn compound_forward(v: &OrthoLayer, x: &Mat) -> Result<CompoundOutput> {
    let (n, d) = (x.rows(), x.cols());
    if v.n != n + d {
        return Err(CoreError::ShapeMismatch(format!(
            "transform on {} wires for a {n}×{d} grid",
            v.n
        )));
    }
    let state = matrix_state(x)?;
    let out = v.apply_hw2(&state.to_subspace())?;
    let mut y = Mat::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            y[(i, j)] = out.amplitudes[cross_rank(n, d, i, j)] * state.frobenius;
        }
    }
    let cross_mass: f64 = (0..n)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| {
            let a = out.amplitudes[cross_rank(n, d, i, j)];
            a * a
        })
        .sum();
    Ok(CompoundOutput { y, leakage: 1.0 - cross_mass })
}

/// Reverse-mode derivative of the cross-register block of
/// `compound_forward`. The transform is linear in the embedded grid and the
/// normalization cancels against the rescale, so the pullback is one
/// two-excitation layer gradient with both ends embedded on cross pairs.
pub fn compound_backward(v: &OrthoLayer, x: &Mat, cotangent: &Mat) -> Result<(Vec<f64>, Mat)> {
    let (n, d) = (x.rows(), x.cols());
    if cotangent.rows() != n || cotangent.cols() != d {
        return Err(CoreError::ShapeMismatch(format!(
            "cotangent {}×{} for a {n}×{d} grid",
            cotangent.rows(),
            cotangent.cols()
        )));
    }
    if v.n != n + d {
        return Err(CoreError::ShapeMismatch(format!(
            "transform on {} wires for a {n}×{d} grid",
            v.n
        )));
    }
    let basis = crate::ortho::hw2_basis(n + d)?;
    let mut in_state = crate::subspace::SubspaceVector::zero(basis.clone());
    let mut cot = crate::subspace::SubspaceVector::zero(basis);
    for i in 0..n {
        for j in 0..d {
            in_state.amplitudes[cross_rank(n, d, i, j)] = x[(i, j)];
            cot.amplitudes[cross_rank(n, d, i, j)] = cotangent[(i, j)];
        }
    }
    let (grads, input_grad) = v.layer_grad_hw2(&in_state, &cot)?;
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            dx[(i, j)] = input_grad.amplitudes[cross_rank(n, d, i, j)];
        }
    }
    Ok((grads, dx))
}
