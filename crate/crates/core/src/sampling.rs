use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::HWBasis;
use crate::circuit::Circuit;
use crate::dense::dense_statevector;
use crate::error::{CoreError, Result};
use crate::rng::Pcg32;
use crate::subspace::{apply_circuit_subspace, SubspaceVector};

/// RNG stream ids so sampling and noise never share a sequence even under
/// the same seed.
const SAMPLER_STREAM: u64 = 7;
const NOISE_STREAM: u64 = 11;

/// Largest fixed-weight basis the sampler will enumerate.
const MAX_BASIS: usize = 2_000_000;

/// Measurement record: bitstring (character i = wire i) → occurrence count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotResult {
    pub shots: u64,
    pub seed: u64,
    pub counts: BTreeMap<String, u64>,
}

impl ShotResult {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("shot results serialize")
    }

    pub fn from_json(text: &str) -> Result<ShotResult> {
        serde_json::from_str(text).map_err(|e| CoreError::BadCircuitJson(e.to_string()))
    }
}

fn mask_to_string(mask: u64, n: usize) -> String {
    (0..n).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect()
}

fn string_weight(bits: &str) -> u32 {
    bits.bytes().filter(|&b| b == b'1').count() as u32
}

/// The exact outcome distribution of measuring the circuit on the given
/// input, as (bitstring, probability) pairs with nonzero probability.
/// Weight-preserving circuits are evaluated in the fixed-weight subspace of
/// the input (any wire count, subject to basis size); anything else falls
/// back to the dense simulator.
pub fn outcome_distribution(circuit: &Circuit, input_bits: &str) -> Result<Vec<(String, f64)>> {
    let n = circuit.n_qubits();
    if input_bits.len() != n {
        return Err(CoreError::ShapeMismatch(format!(
            "input of {} bits for {} wires",
            input_bits.len(),
            n
        )));
    }
    if input_bits.bytes().any(|b| b != b'0' && b != b'1') {
        return Err(CoreError::ShapeMismatch(format!("input is not a bitstring: {input_bits:?}")));
    }
    if circuit.is_weight_preserving() {
        let k = string_weight(input_bits) as usize;
        if crate::basis::binomial(n, k) > MAX_BASIS {
            return Err(CoreError::OracleTooLarge { n, max: MAX_BASIS });
        }
        let basis = Arc::new(HWBasis::new(n, k)?);
        let mask = input_bits
            .bytes()
            .enumerate()
            .filter(|(_, b)| *b == b'1')
            .fold(0u64, |m, (i, _)| m | 1 << i);
        let state = SubspaceVector::basis_state(basis.clone(), mask)?;
        let out = apply_circuit_subspace(circuit, &state)?;
        Ok(basis
            .masks()
            .iter()
            .zip(&out.amplitudes)
            .filter(|(_, a)| **a != 0.0)
            .map(|(&m, &a)| (mask_to_string(m, n), a * a))
            .collect())
    } else {
        let amps = dense_statevector(circuit, input_bits)?;
        Ok(amps
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(idx, &a)| (mask_to_string(idx as u64, n), a * a))
            .collect())
    }
}

/// Draw `shots` independent measurement outcomes from the exact
/// distribution. Deterministic in (circuit, input, seed).
pub fn sample(circuit: &Circuit, input_bits: &str, shots: u64, seed: u64) -> Result<ShotResult> {
    if shots == 0 {
        return Err(CoreError::NoShots);
    }
    let dist = outcome_distribution(circuit, input_bits)?;
    let mut cumulative = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for (_, p) in &dist {
        acc += p;
        cumulative.push(acc);
    }
    // Exact simulation keeps the total within rounding of 1; scale the draw
    // instead of renormalizing every entry.
    let total = acc;
    let mut rng = Pcg32::new(seed, SAMPLER_STREAM);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for _ in 0..shots {
        let u = rng.next_f64() * total;
        let idx = cumulative.partition_point(|&c| c <= u).min(dist.len() - 1);
        *counts.entry(dist[idx].0.clone()).or_insert(0) += 1;
    }
    Ok(ShotResult { shots, seed, counts })
}

/// Keep only outcomes with the expected excitation count. Surviving counts
/// are untouched; `shots` becomes the retained total so downstream
/// frequency estimates use the post-selected sample size.
pub fn hw_postselect(result: &ShotResult, k: u32) -> ShotResult {
    let counts: BTreeMap<String, u64> = result
        .counts
        .iter()
        .filter(|(bits, _)| string_weight(bits) == k)
        .map(|(bits, &c)| (bits.clone(), c))
        .collect();
    let shots = counts.values().sum();
    ShotResult { shots, seed: result.seed, counts }
}

/// Keep only outcomes with exactly one excitation in wires [0, split) and
/// one in [split, n): the readout filter for two-register circuits.
pub fn postselect_registers(result: &ShotResult, split: usize) -> ShotResult {
    let counts: BTreeMap<String, u64> = result
        .counts
        .iter()
        .filter(|(bits, _)| {
            let top = bits.as_bytes()[..split.min(bits.len())]
                .iter()
                .filter(|&&b| b == b'1')
                .count();
            let bottom = bits.as_bytes()[split.min(bits.len())..]
                .iter()
                .filter(|&&b| b == b'1')
                .count();
            top == 1 && bottom == 1
        })
        .map(|(bits, &c)| (bits.clone(), c))
        .collect();
    let shots = counts.values().sum();
    ShotResult { shots, seed: result.seed, counts }
}

/// Frequency-based amplitude estimate over a fixed-weight basis: magnitude
/// √(count / total), sign copied from the exact state. Outcomes outside the
/// basis are ignored; an empty record is an error.
pub fn estimate_amplitudes(
    result: &ShotResult,
    basis: Arc<HWBasis>,
    signs: &SubspaceVector,
) -> Result<SubspaceVector> {
    let total = result.total();
    if total == 0 {
        return Err(CoreError::NoShots);
    }
    if !Arc::ptr_eq(&signs.basis, &basis) && (signs.basis.n() != basis.n() || signs.basis.k() != basis.k())
    {
        return Err(CoreError::ShapeMismatch(format!(
            "sign source on a ({}, {}) basis, estimating on ({}, {})",
            signs.basis.n(),
            signs.basis.k(),
            basis.n(),
            basis.k()
        )));
    }
    let mut out = SubspaceVector::zero(basis.clone());
    for (bits, &count) in &result.counts {
        let mask = bits
            .bytes()
            .enumerate()
            .filter(|(_, b)| *b == b'1')
            .fold(0u64, |m, (i, _)| m | 1 << i);
        if let Some(idx) = basis.index_of(mask) {
            let magnitude = (count as f64 / total as f64).sqrt();
            out.amplitudes[idx] = magnitude.copysign(signs.amplitudes[idx]);
        }
    }
    Ok(out)
}

/// Independent bit-flip channel: every bit of every shot flips with
/// probability p. Deterministic in (result, p, seed).
pub fn apply_bit_flip(result: &ShotResult, p: f64, seed: u64) -> ShotResult {
    let mut rng = Pcg32::new(seed, NOISE_STREAM);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (bits, &count) in &result.counts {
        for _ in 0..count {
            let flipped: String = bits
                .bytes()
                .map(|b| {
                    if rng.next_f64() < p {
                        if b == b'1' {
                            '0'
                        } else {
                            '1'
                        }
                    } else {
                        b as char
                    }
                })
                .collect();
            *counts.entry(flipped).or_insert(0) += 1;
        }
    }
    ShotResult { shots: result.shots, seed: result.seed, counts }
}

/// Corrupt a fraction of shots by flipping exactly one uniformly chosen bit
/// each; returns the noisy record and how many shots were corrupted. A
/// single flip always changes the excitation count, so weight post-selection
/// removes every corrupted shot.
pub fn corrupt_single_flip(result: &ShotResult, fraction: f64, seed: u64) -> (ShotResult, u64) {
    let mut rng = Pcg32::new(seed, NOISE_STREAM);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut corrupted = 0u64;
    for (bits, &count) in &result.counts {
        for _ in 0..count {
            if rng.next_f64() < fraction {
                corrupted += 1;
                let pos = rng.next_below(bits.len() as u32) as usize;
                let mut chars: Vec<u8> = bits.bytes().collect();
                chars[pos] = if chars[pos] == b'1' { b'0' } else { b'1' };
                *counts.entry(String::from_utf8(chars).expect("ascii")).or_insert(0) += 1;
            } else {
                *counts.entry(bits.clone()).or_insert(0) += 1;
            }
        }
    }
    (ShotResult { shots: result.shots, seed: result.seed, counts }, corrupted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::GateOp;
    use crate::loaders::{plan_vector_loader, LoaderTopology};
    use crate::ortho::{LayoutKind, OrthoLayer};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn quarter_circuit() -> Circuit {
        let mut c = Circuit::new(2);
        c.rbs(0, 1, FRAC_PI_4).unwrap();
        c
    }

    #[test]
    fn zero_shots_is_an_error() {
        assert!(matches!(sample(&quarter_circuit(), "10", 0, 1), Err(CoreError::NoShots)));
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let c = quarter_circuit();
        let a = sample(&c, "10", 5_000, 9).unwrap();
        let b = sample(&c, "10", 5_000, 9).unwrap();
        assert_eq!(a, b);
        let other = sample(&c, "10", 5_000, 10).unwrap();
        assert_ne!(a.counts, other.counts);
    }

    #[test]
    fn deterministic_outcome_concentrates_all_shots() {
        // A half-turn sends the second-wire excitation to the first wire
        // with amplitude −1: every shot reads "10".
        let mut c = Circuit::new(2);
        c.rbs(0, 1, FRAC_PI_2).unwrap();
        let result = sample(&c, "01", 1_000, 3).unwrap();
        assert_eq!(result.counts.len(), 1);
        assert_eq!(result.counts["10"], 1_000);
    }

    #[test]
    fn balanced_rotation_splits_shots_evenly() {
        let result = sample(&quarter_circuit(), "10", 100_000, 17).unwrap();
        let p = result.counts["10"] as f64 / 100_000.0;
        // 5σ binomial band around 1/2.
        assert!((p - 0.5).abs() < 5.0 * 0.5 / (100_000f64).sqrt(), "p = {p}");
    }

    #[test]
    fn sampler_uses_the_subspace_path_beyond_dense_reach() {
        // 20 wires is out of range for the dense simulator but fine for a
        // weight-preserving circuit.
        let mut c = Circuit::new(20);
        for i in 0..19 {
            c.rbs(i, i + 1, 0.3).unwrap();
        }
        let input = "10000000000000000000";
        let result = sample(&c, input, 1_000, 5).unwrap();
        assert_eq!(result.total(), 1_000);
        for bits in result.counts.keys() {
            assert_eq!(string_weight(bits), 1);
        }
    }

    #[test]
    fn non_preserving_circuits_fall_back_to_dense() {
        let mut c = Circuit::new(3);
        c.push(GateOp::PauliX { wire: 2 }).unwrap();
        c.rbs(0, 2, 1.2).unwrap();
        let result = sample(&c, "000", 2_000, 8).unwrap();
        let dist = outcome_distribution(&c, "000").unwrap();
        let support: std::collections::BTreeSet<&str> =
            dist.iter().map(|(b, _)| b.as_str()).collect();
        for bits in result.counts.keys() {
            assert!(support.contains(bits.as_str()));
        }
    }

    #[test]
    fn goodness_of_fit_weight_one() {
        // Four-outcome distribution from a random-ish loader circuit;
        // Pearson statistic against the exact probabilities must stay under
        // the 1e-6 tail of its null distribution (3 degrees of freedom).
        let loader =
            plan_vector_loader(&[0.5, -0.5, 0.3, 0.8], LoaderTopology::Diagonal).unwrap();
        let c = loader.circuit();
        let shots = 100_000u64;
        let result = sample(&c, "0000", shots, 23).unwrap();
        let dist = outcome_distribution(&c, "0000").unwrap();
        assert_eq!(dist.len(), 4);
        let mut stat = 0.0;
        for (bits, p) in &dist {
            let expected = p * shots as f64;
            let observed = *result.counts.get(bits).unwrap_or(&0) as f64;
            stat += (observed - expected).powi(2) / expected;
        }
        assert!(stat < 30.664849706154, "chi-square statistic {stat}");
    }

    #[test]
    fn goodness_of_fit_weight_two() {
        // Six outcomes on four wires (5 degrees of freedom).
        let layer = OrthoLayer::new(
            LayoutKind::Pyramid,
            4,
            vec![0.4, -0.9, 1.3, 0.2, -0.5, 0.8],
            false,
        )
        .unwrap();
        let c = layer.circuit();
        let shots = 100_000u64;
        let result = sample(&c, "1100", shots, 29).unwrap();
        let dist = outcome_distribution(&c, "1100").unwrap();
        assert_eq!(dist.len(), 6);
        let mut stat = 0.0;
        for (bits, p) in &dist {
            let expected = p * shots as f64;
            let observed = *result.counts.get(bits).unwrap_or(&0) as f64;
            stat += (observed - expected).powi(2) / expected;
        }
        assert!(stat < 35.888186879610, "chi-square statistic {stat}");
    }

    #[test]
    fn estimation_error_shrinks_as_root_shots() {
        let loader =
            plan_vector_loader(&[0.4, 0.7, -0.2, 0.5, 0.3, -0.6], LoaderTopology::Diagonal)
                .unwrap();
        let c = loader.circuit();
        // The single-excitation basis orders masks by wire, so the exact
        // amplitudes are the loader's target coordinates.
        let basis = Arc::new(HWBasis::new(6, 1).unwrap());
        let exact =
            SubspaceVector::from_amplitudes(basis.clone(), loader.target.clone()).unwrap();
        let mut points = Vec::new();
        for exp in 3..=7 {
            let shots = 10u64.pow(exp);
            let result = sample(&c, "000000", shots, 41).unwrap();
            let est = estimate_amplitudes(&result, basis.clone(), &exact).unwrap();
            let err: f64 = est
                .amplitudes
                .iter()
                .zip(&exact.amplitudes)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            points.push(((shots as f64).ln(), err.ln()));
        }
        let n = points.len() as f64;
        let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
        let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
        let slope = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum::<f64>()
            / points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum::<f64>();
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn weight_postselection_keeps_surviving_counts() {
        let mut counts = BTreeMap::new();
        counts.insert("1100".to_string(), 10);
        counts.insert("1000".to_string(), 5);
        counts.insert("0011".to_string(), 7);
        let result = ShotResult { shots: 22, seed: 0, counts };
        let kept = hw_postselect(&result, 2);
        assert_eq!(kept.shots, 17);
        assert_eq!(kept.counts["1100"], 10);
        assert_eq!(kept.counts["0011"], 7);
        assert!(!kept.counts.contains_key("1000"));
    }

    #[test]
    fn register_postselection_requires_one_excitation_per_side() {
        let mut counts = BTreeMap::new();
        counts.insert("1001".to_string(), 4); // one per register
        counts.insert("1100".to_string(), 3); // both on top
        counts.insert("0011".to_string(), 2); // both on bottom
        let result = ShotResult { shots: 9, seed: 0, counts };
        let kept = postselect_registers(&result, 2);
        assert_eq!(kept.shots, 4);
        assert_eq!(kept.counts.len(), 1);
        assert_eq!(kept.counts["1001"], 4);
    }

    #[test]
    fn single_flip_corruption_is_fully_removed() {
        let loader = plan_vector_loader(&[0.6, -0.3, 0.4, 0.62], LoaderTopology::Diagonal).unwrap();
        let c = loader.circuit();
        let clean = sample(&c, "0000", 50_000, 13).unwrap();
        let (noisy, corrupted) = corrupt_single_flip(&clean, 0.1, 99);
        assert!(corrupted > 3_000, "corruption touched ~10% of shots: {corrupted}");
        let kept = hw_postselect(&noisy, 1);
        assert_eq!(kept.shots, clean.shots - corrupted);
        for bits in kept.counts.keys() {
            assert_eq!(string_weight(bits), 1);
        }
    }

    #[test]
    fn bit_flip_extremes() {
        let mut counts = BTreeMap::new();
        counts.insert("101".to_string(), 3);
        let result = ShotResult { shots: 3, seed: 0, counts };
        let untouched = apply_bit_flip(&result, 0.0, 1);
        assert_eq!(untouched.counts, result.counts);
        let inverted = apply_bit_flip(&result, 1.0, 1);
        assert_eq!(inverted.counts["010"], 3);
    }

    #[test]
    fn estimates_recover_exact_magnitudes_and_signs() {
        let basis = Arc::new(HWBasis::new(3, 1).unwrap());
        let exact = SubspaceVector::from_amplitudes(
            basis.clone(),
            vec![-(0.25f64).sqrt(), (0.5f64).sqrt(), 0.5],
        )
        .unwrap();
        let mut counts = BTreeMap::new();
        counts.insert("100".to_string(), 25);
        counts.insert("010".to_string(), 50);
        counts.insert("001".to_string(), 25);
        let result = ShotResult { shots: 100, seed: 0, counts };
        let est = estimate_amplitudes(&result, basis.clone(), &exact).unwrap();
        assert!((est.amplitudes[0] + 0.5).abs() < 1e-12);
        assert!((est.amplitudes[1] - (0.5f64).sqrt()).abs() < 1e-12);
        assert!((est.amplitudes[2] - 0.5).abs() < 1e-12);
        let empty = ShotResult { shots: 0, seed: 0, counts: BTreeMap::new() };
        assert!(matches!(
            estimate_amplitudes(&empty, basis, &exact),
            Err(CoreError::NoShots)
        ));
    }
}
