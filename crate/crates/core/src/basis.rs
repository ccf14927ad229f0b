use std::collections::HashMap;

use crate::error::{CoreError, Result};

/// Number of k-subsets of an n-set. Sizes here stay far below u64 overflow
/// (n ≤ 64 by construction, and in practice n ≤ 32).
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Index of the pair {i, j} (i < j) in the lexicographic enumeration of
/// 2-subsets of [0, n).
pub fn pair_rank(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// The computational basis of the fixed-hamming-weight-k subspace on n qubits:
/// all k-subsets of wire indices, ordered lexicographically as ascending
/// tuples, stored as bitmasks with wire i at bit i.
#[derive(Debug, Clone)]
pub struct HWBasis {
    n: usize,
    k: usize,
    masks: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl HWBasis {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k > n || n > 64 {
            return Err(CoreError::InvalidDimension { n, k });
        }
        let mut masks = Vec::with_capacity(binomial(n, k));
        let mut subset: Vec<usize> = (0..k).collect();
        if k == 0 {
            masks.push(0);
        } else {
            loop {
                masks.push(subset.iter().fold(0u64, |m, &w| m | (1 << w)));
                // Advance to the next subset in lexicographic tuple order.
                let mut pos = k;
                while pos > 0 {
                    pos -= 1;
                    if subset[pos] < n - (k - pos) {
                        subset[pos] += 1;
                        for p in pos + 1..k {
                            subset[p] = subset[p - 1] + 1;
                        }
                        break;
                    }
                    if pos == 0 {
                        subset.clear();
                    }
                }
                if subset.is_empty() {
                    break;
                }
            }
        }
        let index = masks.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        Ok(HWBasis { n, k, masks, index })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn mask(&self, idx: usize) -> u64 {
        self.masks[idx]
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    /// Ascending wire indices of basis element `idx`.
    pub fn wires(&self, idx: usize) -> Vec<usize> {
        let mut m = self.masks[idx];
        let mut out = Vec::with_capacity(self.k);
        while m != 0 {
            let w = m.trailing_zeros() as usize;
            out.push(w);
            m &= m - 1;
        }
        out
    }

    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.index.get(&mask).copied()
    }
}

pub fn hw_basis(n: usize, k: usize) -> Result<HWBasis> {
    HWBasis::new(n, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unary_enumeration() {
        let b = hw_basis(4, 1).unwrap();
        assert_eq!(b.len(), 4);
        for i in 0..4 {
            assert_eq!(b.wires(i), vec![i]);
        }
    }

    #[test]
    fn pairs_in_lexicographic_tuple_order() {
        let b = hw_basis(4, 2).unwrap();
        let got: Vec<Vec<usize>> = (0..b.len()).map(|i| b.wires(i)).collect();
        assert_eq!(
            got,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }

    #[test]
    fn count_matches_brute_force_enumeration() {
        // Independent count: enumerate all 2^n masks and keep weight-3 ones.
        let n = 10;
        let brute = (0u64..(1 << n)).filter(|m| m.count_ones() == 3).count();
        let b = hw_basis(n, 3).unwrap();
        assert_eq!(b.len(), brute);
        assert_eq!(b.len(), 120);
        assert_eq!(binomial(n, 3), 120);
    }

    #[test]
    fn lex_order_differs_from_mask_order() {
        // {0,3} (mask 9) must precede {1,2} (mask 6): tuple order, not mask order.
        let b = hw_basis(4, 2).unwrap();
        assert!(b.index_of(0b1001).unwrap() < b.index_of(0b0110).unwrap());
    }

    #[test]
    fn index_roundtrip() {
        let b = hw_basis(8, 2).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.index_of(b.mask(i)), Some(i));
        }
        assert_eq!(b.index_of(0b111), None);
    }

    #[test]
    fn pair_rank_matches_enumeration() {
        for n in 2..=12 {
            let b = hw_basis(n, 2).unwrap();
            for idx in 0..b.len() {
                let w = b.wires(idx);
                assert_eq!(pair_rank(n, w[0], w[1]), idx);
            }
        }
    }

    #[test]
    fn degenerate_dimensions_rejected() {
        assert!(hw_basis(0, 0).is_err());
        assert!(hw_basis(3, 4).is_err());
    }

    #[test]
    fn weight_zero_and_full() {
        assert_eq!(hw_basis(5, 0).unwrap().len(), 1);
        let full = hw_basis(5, 5).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full.mask(0), 0b11111);
    }

    #[test]
    fn binomial_table() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(32, 2), 496);
        assert_eq!(binomial(16, 1), 16);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }
}
