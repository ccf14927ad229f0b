//! Self-verification suites: each check recomputes something the simulator
//! or training stack claims, through an independent route, and reports the
//! worst deviation against a fixed tolerance.

use std::sync::Arc;

use qvt_core::attention::{
    ortho_attention_backward, ortho_attention_forward_cached, NormAxis, NormMode, PatchSet,
};
use qvt_core::basis::{hw_basis, pair_rank};
use qvt_core::dense::dense_statevector_mask;
use qvt_core::loaders::{
    build_matrix_loader, build_overlap_circuit, exact_overlap, matrix_state, plan_vector_loader,
    LoaderTopology,
};
use qvt_core::mat::{dot, Mat};
use qvt_core::ortho::{compound2_matrix, LayoutKind, OrthoLayer};
use qvt_core::rng::Pcg32;
use qvt_core::sampling::{corrupt_single_flip, estimate_amplitudes, hw_postselect, sample};
use qvt_core::subspace::{apply_circuit_subspace, reduced_matrix, SubspaceVector};
use qvt_core::circuit::Circuit;

use qvt_model::config::{ArchKind, NetworkConfig};
use qvt_model::net::Network;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub worst: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64, worst: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            tolerance,
            worst,
            pass: worst.is_finite() && worst <= tolerance,
        }
    }
}

pub const SCOPES: [&str; 6] = ["loaders", "layers", "gradients", "compound", "sampling", "all"];

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

pub fn run_scope(scope: &str) -> Result<Vec<CheckResult>> {
    match scope {
        "loaders" => loaders(),
        "layers" => layers(),
        "gradients" => gradients(),
        "compound" => compound(),
        "sampling" => sampling(),
        "all" => {
            let mut all = loaders()?;
            all.extend(layers()?);
            all.extend(gradients()?);
            all.extend(compound()?);
            all.extend(sampling()?);
            Ok(all)
        }
        other => {
            Err(format!("unknown verification scope {other:?} (expected one of {SCOPES:?})").into())
        }
    }
}

fn random_unit(rng: &mut Pcg32, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn random_layer(rng: &mut Pcg32, layout: LayoutKind, n: usize) -> Result<OrthoLayer> {
    let angles: Vec<f64> = (0..OrthoLayer::angle_count(layout, n))
        .map(|_| rng.uniform(-1.5, 1.5))
        .collect();
    Ok(OrthoLayer::new(layout, n, angles, false)?)
}

pub fn loaders() -> Result<Vec<CheckResult>> {
    let mut rng = Pcg32::new(2024, 1);
    let mut results = Vec::new();

    // Vector loaders: the circuit, run on the vacuum through the dense
    // simulator, must place the target amplitudes on the one-hot states.
    let mut worst = 0.0f64;
    for topology in [LoaderTopology::Diagonal, LoaderTopology::Parallel, LoaderTopology::SemiDiagonal] {
        for _ in 0..40 {
            let x = random_unit(&mut rng, 8);
            let loader = plan_vector_loader(&x, topology)?;
            let dense = dense_statevector_mask(&loader.circuit(), 0)?;
            for (i, &want) in loader.target.iter().enumerate() {
                worst = worst.max((dense[1usize << i] - want).abs());
            }
        }
    }
    results.push(CheckResult::new("vector_loader_amplitudes", 1e-10, worst));

    // Matrix loaders: dense amplitudes on the cross one-hot pairs equal the
    // normalized matrix entries, with nothing left elsewhere.
    let mut worst = 0.0f64;
    for (n, d) in [(3usize, 4usize), (4, 2), (2, 8)] {
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let state = matrix_state(&x)?;
        let dense = dense_statevector_mask(&build_matrix_loader(&x)?, 0)?;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..d {
                let amp = dense[(1usize << i) | (1usize << (n + j))];
                worst = worst.max((amp - state.amplitudes[(i, j)]).abs());
                mass += amp * amp;
            }
        }
        worst = worst.max((mass - 1.0).abs());
    }
    results.push(CheckResult::new("matrix_loader_amplitudes", 1e-10, worst));

    // Inner-product circuits: P(wire 0 = 1) equals the squared bilinear form.
    let mut worst = 0.0f64;
    for with_layer in [false, true] {
        for _ in 0..20 {
            let xi = random_unit(&mut rng, 8);
            let xj = random_unit(&mut rng, 8);
            let layer = if with_layer {
                Some(random_layer(&mut rng, LayoutKind::Pyramid, 8)?)
            } else {
                None
            };
            let overlap = exact_overlap(&xi, layer.as_ref(), &xj)?;
            let dense = dense_statevector_mask(&build_overlap_circuit(&xi, layer.as_ref(), &xj)?, 0)?;
            let p: f64 = dense
                .iter()
                .enumerate()
                .filter(|(mask, _)| mask & 1 == 1)
                .map(|(_, a)| a * a)
                .sum();
            worst = worst.max((p - overlap * overlap).abs());
        }
    }
    results.push(CheckResult::new("overlap_circuit_probability", 1e-10, worst));
    Ok(results)
}

pub fn layers() -> Result<Vec<CheckResult>> {
    let mut rng = Pcg32::new(2024, 2);
    let mut ortho_worst = 0.0f64;
    let mut circuit_worst = 0.0f64;
    let mut det_worst = 0.0f64;
    for layout in LayoutKind::ALL {
        for flip in [false, true] {
            let angles: Vec<f64> = (0..OrthoLayer::angle_count(layout, 8))
                .map(|_| rng.uniform(-1.5, 1.5))
                .collect();
            let layer = OrthoLayer::new(layout, 8, angles, flip)?;
            let m = layer.unary_matrix();
            let gram = m.transpose().matmul(&m);
            ortho_worst = ortho_worst.max(gram.max_abs_diff(&Mat::eye(8)));
            let reduced = reduced_matrix(&layer.circuit(), 1)?;
            circuit_worst = circuit_worst.max(reduced.max_abs_diff(&m));
            let want_det = if flip { -1.0 } else { 1.0 };
            det_worst = det_worst.max((m.det() - want_det).abs());
        }
    }
    Ok(vec![
        CheckResult::new("transform_orthogonality", 1e-10, ortho_worst),
        CheckResult::new("transform_circuit_agreement", 1e-10, circuit_worst),
        CheckResult::new("transform_determinant", 1e-10, det_worst),
    ])
}

pub fn gradients() -> Result<Vec<CheckResult>> {
    gradients_with_perturbation(0.0)
}

/// Gradient checks with every analytic value scaled by `1 + perturbation`.
/// Zero perturbation is the real check; a nonzero value must make the suite
/// fail, proving the comparison has teeth.
#[doc(hidden)]
pub fn gradients_with_perturbation(perturbation: f64) -> Result<Vec<CheckResult>> {
    let scale = 1.0 + perturbation;
    let mut rng = Pcg32::new(2024, 3);
    let mut results = Vec::new();

    // Rotation-cascade angle gradients against central differences.
    let mut worst = 0.0f64;
    for layout in LayoutKind::ALL {
        let n = 8;
        let count = OrthoLayer::angle_count(layout, n);
        let angles: Vec<f64> = (0..count).map(|_| rng.uniform(-1.2, 1.2)).collect();
        let v = random_unit(&mut rng, n);
        let u: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let layer = OrthoLayer::new(layout, n, angles.clone(), false)?;
        let (grads, _) = layer.layer_grad(&v, &u)?;
        let h = 1e-6;
        for k in 0..count {
            let mut plus = angles.clone();
            plus[k] += h;
            let mut minus = angles.clone();
            minus[k] -= h;
            let lp = OrthoLayer::new(layout, n, plus, false)?.apply_unary(&v)?;
            let lm = OrthoLayer::new(layout, n, minus, false)?.apply_unary(&v)?;
            let fd = (dot(&lp, &u) - dot(&lm, &u)) / (2.0 * h);
            let analytic = grads[k] * scale;
            worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0));
        }
    }
    results.push(CheckResult::new("rotation_angle_gradients", 1e-6, worst));

    // Attention-block gradients (both transforms) against finite differences.
    let mut worst = 0.0f64;
    {
        let (n, d) = (3usize, 4usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let x = Mat::from_rows(&rows);
        let patches = PatchSet::from_rows(&x);
        let count = OrthoLayer::angle_count(LayoutKind::Pyramid, d);
        let va: Vec<f64> = (0..count).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let wa: Vec<f64> = (0..count).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let u: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let u = Mat::from_rows(&u);
        let loss = |va: &[f64], wa: &[f64]| -> Result<f64> {
            let v = OrthoLayer::new(LayoutKind::Pyramid, d, va.to_vec(), false)?;
            let w = OrthoLayer::new(LayoutKind::Pyramid, d, wa.to_vec(), false)?;
            let (out, _) = ortho_attention_forward_cached(
                &v,
                Some(&w),
                &patches,
                NormMode::Softmax,
                NormAxis::Rows,
            )?;
            Ok(out.data().iter().zip(u.data()).map(|(a, b)| a * b).sum())
        };
        let v = OrthoLayer::new(LayoutKind::Pyramid, d, va.clone(), false)?;
        let w = OrthoLayer::new(LayoutKind::Pyramid, d, wa.clone(), false)?;
        let (_, cache) =
            ortho_attention_forward_cached(&v, Some(&w), &patches, NormMode::Softmax, NormAxis::Rows)?;
        let grads = ortho_attention_backward(&v, Some(&w), &patches, &cache, &u)?;
        let h = 1e-6;
        for k in 0..count {
            let mut p = va.clone();
            p[k] += h;
            let mut m = va.clone();
            m[k] -= h;
            let fd = (loss(&p, &wa)? - loss(&m, &wa)?) / (2.0 * h);
            let analytic = grads.d_v_angles[k] * scale;
            worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0));
            let mut p = wa.clone();
            p[k] += h;
            let mut m = wa.clone();
            m[k] -= h;
            let fd = (loss(&va, &p)? - loss(&va, &m)?) / (2.0 * h);
            let analytic = grads.d_w_angles[k] * scale;
            worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0));
        }
    }
    results.push(CheckResult::new("attention_gradients", 1e-5, worst));

    // Whole-classifier gradients, every parameter class, against central
    // differences on the logit probe.
    let mut worst = 0.0f64;
    {
        let config = NetworkConfig {
            arch: ArchKind::OrthoTransformer,
            layout: LayoutKind::Pyramid,
            dim: 4,
            layers: 1,
            hidden: 4,
            patch_grid: 2,
            attention_norm: NormMode::Softmax,
            attention_axis: NormAxis::Rows,
            per_token_positional: false,
            dataset: "verify".into(),
            num_classes: 3,
            channels: 1,
            epochs: 1,
            batch_size: 1,
            seed: 1,
        };
        let net = Network::new(config)?;
        let mut params = net.init_params(5);
        let image: Vec<f64> = (0..784).map(|_| rng.uniform(0.0, 1.0)).collect();
        let cot: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, cache) = net.forward(&params, &image)?;
        let grads = net.backward(&params, &cache, &cot)?;
        let h = 1e-5;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let (lp, _) = net.forward(&params, &image)?;
            params[i] = orig - h;
            let (lm, _) = net.forward(&params, &image)?;
            params[i] = orig;
            let fd = (dot(&lp, &cot) - dot(&lm, &cot)) / (2.0 * h);
            let analytic = grads[i] * scale;
            worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0));
        }
    }
    results.push(CheckResult::new("model_gradients", 1e-4, worst));
    Ok(results)
}

pub fn compound() -> Result<Vec<CheckResult>> {
    let mut rng = Pcg32::new(2024, 4);
    let (n, d) = (3usize, 5usize);
    let wires = n + d;
    let mut matrix_worst = 0.0f64;
    let mut circuit_worst = 0.0f64;
    let mut mass_worst = 0.0f64;
    for _ in 0..10 {
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let layer = random_layer(&mut rng, LayoutKind::Pyramid, wires)?;
        let out = qvt_core::attention::compound_forward(&layer, &x)?;

        // Independent route 1: the second compound of the explicit matrix.
        let comp = compound2_matrix(&layer.unary_matrix())?;
        let state = matrix_state(&x)?;
        let frob = state.frobenius;
        let amps = state.to_subspace();
        let dim2 = wires * (wires - 1) / 2;
        let mut expect = vec![0.0; dim2];
        for r in 0..dim2 {
            for q in 0..dim2 {
                expect[r] += comp[(r, q)] * amps.amplitudes[q];
            }
        }
        for i in 0..n {
            for j in 0..d {
                let want = expect[pair_rank(wires, i, n + j)] * frob;
                matrix_worst = matrix_worst.max((out.y[(i, j)] - want).abs());
            }
        }

        // Independent route 2: the gate list through the subspace simulator.
        let evolved = apply_circuit_subspace(&layer.circuit(), &amps)?;
        for i in 0..n {
            for j in 0..d {
                let want = evolved.amplitudes[pair_rank(wires, i, n + j)] * frob;
                circuit_worst = circuit_worst.max((out.y[(i, j)] - want).abs());
            }
        }

        // Unitarity: recovered mass plus reported leakage is all of it.
        let y_mass: f64 = out.y.data().iter().map(|v| v * v).sum::<f64>() / (frob * frob);
        mass_worst = mass_worst.max((y_mass + out.leakage - 1.0).abs());
    }
    Ok(vec![
        CheckResult::new("grid_transform_matrix_agreement", 1e-10, matrix_worst),
        CheckResult::new("grid_transform_circuit_agreement", 1e-10, circuit_worst),
        CheckResult::new("grid_transform_mass_accounting", 1e-10, mass_worst),
    ])
}

pub fn sampling() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    // Balanced beam splitter: counts against the exact half/half law.
    // Chi-square with one degree of freedom at the 1 - 1e-6 quantile.
    let mut circuit = Circuit::new(2);
    circuit.rbs(0, 1, std::f64::consts::FRAC_PI_4)?;
    let shots = 100_000u64;
    let result = sample(&circuit, "10", shots, 41)?;
    let mut chi2 = 0.0;
    for key in ["10", "01"] {
        let observed = *result.counts.get(key).unwrap_or(&0) as f64;
        let expected = shots as f64 / 2.0;
        chi2 += (observed - expected) * (observed - expected) / expected;
    }
    results.push(CheckResult::new("beam_splitter_chi_square", 23.928, chi2));

    // Weight-preserving postselection removes every single-bit-flip
    // corruption: a flip always changes the excitation count.
    let loader = plan_vector_loader(&random_unit(&mut Pcg32::new(7, 7), 8), LoaderTopology::Diagonal)?;
    let clean = sample(&loader.circuit(), &"0".repeat(8), 50_000, 13)?;
    let (noisy, corrupted) = corrupt_single_flip(&clean, 0.1, 17);
    let kept = hw_postselect(&noisy, 1);
    let surviving = if corrupted == 0 {
        f64::INFINITY
    } else {
        (kept.total() as i64 - (clean.total() as i64 - corrupted as i64)).abs() as f64
    };
    results.push(CheckResult::new("corrupted_shot_rejection", 0.0, surviving));

    // Amplitude estimation error at 10^5 shots stays within a generous
    // multiple of the 1/√N statistical floor.
    let basis = Arc::new(hw_basis(8, 1)?);
    let exact = SubspaceVector::from_amplitudes(basis.clone(), loader.target.clone())?;
    let sampled = sample(&loader.circuit(), &"0".repeat(8), 100_000, 19)?;
    let estimate = estimate_amplitudes(&sampled, basis, &exact)?;
    let err: f64 = estimate
        .amplitudes
        .iter()
        .zip(&exact.amplitudes)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        .sqrt();
    results.push(CheckResult::new("amplitude_estimate_error", 0.02, err));
    Ok(results)
}
