//! Maximum-weight perfect matching on a square count matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// `permutation[row] = col`: predicted cluster to true class.
    pub permutation: Vec<usize>,
    /// Sum of the matched entries.
    pub matched: u64,
}

/// Picks one column per row, maximizing the matched total.
///
/// Shortest augmenting path formulation with row/column potentials, O(K³).
pub fn hungarian_match(contingency: &Array2<u64>) -> Result<Matching> {
    let (rows, cols) = contingency.dim();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    let n = rows;
    if n == 0 {
        return Ok(Matching {
            permutation: Vec::new(),
            matched: 0,
        });
    }
    let max = contingency.iter().copied().max().unwrap_or(0) as i128;
    let cost = |i: usize, j: usize| max - contingency[[i, j]] as i128;

    // 1-based arrays; index 0 is the virtual root of each augmenting search.
    let inf = i128::MAX / 4;
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[col_owner[j] - 1] = j - 1;
    }
    let matched = permutation.iter().enumerate().map(|(i, &j)| contingency[[i, j]]).sum();
    Ok(Matching { permutation, matched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_contingency() {
        let c = array![[5u64, 0, 0], [0, 3, 0], [0, 0, 7]];
        let m = hungarian_match(&c).unwrap();
        assert_eq!(m.permutation, vec![0, 1, 2]);
        assert_eq!(m.matched, 15);
    }

    #[test]
    fn permuted_contingency_gives_inverse() {
        // predicted cluster i holds true class perm[i]
        let c = array![[0u64, 4, 0], [0, 0, 6], [2, 0, 0]];
        let m = hungarian_match(&c).unwrap();
        assert_eq!(m.permutation, vec![1, 2, 0]);
        assert_eq!(m.matched, 12);
    }

    #[test]
    fn non_square_rejected() {
        let c = Array2::<u64>::zeros((2, 3));
        assert!(matches!(
            hungarian_match(&c),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn prefers_global_over_greedy() {
        // greedy on the 9 would yield 9 + 1 = 10; optimum is 8 + 8 = 16
        let c = array![[9u64, 8], [8, 1]];
        let m = hungarian_match(&c).unwrap();
        assert_eq!(m.matched, 16);
        assert_eq!(m.permutation, vec![1, 0]);
    }
}
