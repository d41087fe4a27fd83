//! Maximum-weight perfect matching (Hungarian / Kuhn-Munkres) with a
//! deterministic tie-break.
//!
//! The shortest-augmenting-path solver runs on negated weights and leaves
//! feasible dual potentials behind. Every optimal assignment is a perfect
//! matching on the tight edges of those potentials, so the lexicographically
//! smallest optimum is found by fixing rows in order and, for each, taking the
//! smallest tight column that still admits a perfect matching of the rest.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Result, VebmError};
use crate::types::EventSequence;

/// Returns the permutation maximising `Σ_i m[i][order[i]]`, choosing the
/// lexicographically smallest `order` among optima.
pub fn hungarian(m: &Array2<f64>) -> Result<EventSequence> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(VebmError::DimensionMismatch(format!(
            "assignment needs a square non-empty matrix, got {:?}",
            m.dim()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(VebmError::NonFinite("assignment weights".into()));
    }
    let cost = m.mapv(|v| -v);
    let sol = solve_min(&cost);
    let scale = cost.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale;
    let order = lexicographic_refine(&cost, &sol, tol);
    EventSequence::new(order)
}

struct Solution {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// O(n³) shortest augmenting path with potentials (1-based internally).
fn solve_min(a: &Array2<f64>) -> Solution {
    let n = a.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    Solution {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

fn lexicographic_refine(a: &Array2<f64>, sol: &Solution, tol: f64) -> Vec<usize> {
    let n = a.nrows();
    let tight = |i: usize, j: usize| a[[i, j]] - sol.u[i] - sol.v[j] <= tol;
    let mut row_to_col = sol.row_to_col.clone();
    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut fixed_col = vec![false; n];
    let mut parent = vec![usize::MAX; n]; // column -> column it was reached from
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();

    for i in 0..n {
        let current = row_to_col[i];
        for c in 0..current {
            if fixed_col[c] || !tight(i, c) {
                continue;
            }
            // Force (i, c): the row holding c must reach `current` along an
            // alternating path of tight edges over unfixed columns.
            seen.iter_mut().for_each(|s| *s = false);
            queue.clear();
            seen[c] = true;
            parent[c] = usize::MAX;
            queue.push_back(c);
            let mut found = None;
            'bfs: while let Some(col) = queue.pop_front() {
                let r = col_to_row[col];
                for nc in 0..n {
                    if fixed_col[nc] || seen[nc] || !tight(r, nc) {
                        continue;
                    }
                    seen[nc] = true;
                    parent[nc] = col;
                    if nc == current {
                        found = Some(nc);
                        break 'bfs;
                    }
                    queue.push_back(nc);
                }
            }
            if let Some(end) = found {
                // shift each row on the path one step along
                let mut col = end;
                while parent[col] != usize::MAX {
                    let prev = parent[col];
                    let r = col_to_row[prev];
                    row_to_col[r] = col;
                    col_to_row[col] = r;
                    col = prev;
                }
                row_to_col[i] = c;
                col_to_row[c] = i;
                break;
            }
        }
        fixed_col[row_to_col[i]] = true;
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn dominant_diagonal() {
        let s = hungarian(&array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert_eq!(s.order(), &[0, 1]);
        let s = hungarian(&array![[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(s.order(), &[1, 0]);
    }

    #[test]
    fn identity_matrix() {
        for n in [1, 4, 9] {
            let s = hungarian(&Array2::eye(n)).unwrap();
            assert_eq!(s, EventSequence::identity(n));
        }
    }

    #[test]
    fn all_ties_give_identity() {
        let s = hungarian(&Array2::from_elem((7, 7), 0.3)).unwrap();
        assert_eq!(s, EventSequence::identity(7));
    }

    #[test]
    fn partial_ties_pick_lexicographic_smallest() {
        // rows 0 and 1 are interchangeable; optimum value 3 either way
        let m = array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(hungarian(&m).unwrap().order(), &[0, 1, 2]);
        // only a reversed block is optimal for the last two rows
        let m = array![[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(hungarian(&m).unwrap().order(), &[1, 0, 2]);
    }

    #[test]
    fn random_large_matrix_is_a_permutation() {
        let mut rng = SeededRng::new(2);
        let m = Array2::from_shape_fn((150, 150), |_| rng.random::<f64>());
        let s = hungarian(&m).unwrap();
        assert_eq!(s.len(), 150);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(hungarian(&Array2::zeros((2, 3))).is_err());
        assert!(hungarian(&array![[f64::NAN, 0.0], [0.0, 1.0]]).is_err());
    }
}
