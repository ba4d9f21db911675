//! Block-sparse symmetric positive definite solver.
//!
//! Blocks are reordered with reverse Cuthill-McKee and factorized in skyline
//! (variable band) storage. Pose chains with a handful of loop closures keep a
//! narrow envelope under this ordering.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix6, Vector6};

use crate::math::sqrt;

const B: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NotPositiveDefinite;

/// Symmetric block matrix; only blocks with `row <= col` are stored.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockMatrix {
    n: usize,
    blocks: BTreeMap<(usize, usize), Matrix6<f64>>,
}

impl BlockMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            blocks: BTreeMap::new(),
        }
    }

    /// Adds `m` at block `(i, j)`; for `i > j` the transpose goes to `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, m: &Matrix6<f64>) {
        let (key, val) = if i <= j { ((i, j), *m) } else { ((j, i), m.transpose()) };
        *self.blocks.entry(key).or_insert_with(Matrix6::zeros) += val;
    }

    pub fn diagonal(&self, i: usize) -> Matrix6<f64> {
        self.blocks.get(&(i, i)).copied().unwrap_or_else(Matrix6::zeros)
    }

    #[cfg(test)]
    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &Matrix6<f64>)> {
        self.blocks.iter()
    }

    pub fn set_diagonal_entry(&mut self, i: usize, k: usize, value: f64) {
        self.blocks.entry((i, i)).or_insert_with(Matrix6::zeros)[(k, k)] = value;
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[Vector6<f64>]) -> Result<Vec<Vector6<f64>>, NotPositiveDefinite> {
        let n = self.n;
        let perm = rcm_order(n, &self.blocks);
        let mut pos = vec![0usize; n];
        for (p, &b) in perm.iter().enumerate() {
            pos[b] = p;
        }

        // First block column touched by each permuted block row.
        let mut first_block: Vec<usize> = (0..n).collect();
        for &(i, j) in self.blocks.keys() {
            let (pi, pj) = (pos[i], pos[j]);
            let (lo, hi) = if pi < pj { (pi, pj) } else { (pj, pi) };
            if first_block[hi] > lo {
                first_block[hi] = lo;
            }
        }
        let dim = n * B;
        let first: Vec<usize> = (0..dim).map(|r| first_block[r / B] * B).collect();
        let mut offsets = Vec::with_capacity(dim + 1);
        offsets.push(0usize);
        for r in 0..dim {
            offsets.push(offsets[r] + (r - first[r] + 1));
        }
        let mut sky = vec![0.0f64; offsets[dim]];

        // Scatter the lower triangle of the permuted matrix.
        for (&(i, j), m) in &self.blocks {
            let (pi, pj) = (pos[i], pos[j]);
            for a in 0..B {
                for b in 0..B {
                    let (r, c, v) = (pi * B + a, pj * B + b, m[(a, b)]);
                    let (r, c) = if r >= c { (r, c) } else { (c, r) };
                    if i == j && pi * B + a < pj * B + b {
                        // Diagonal blocks are symmetric; take the lower half once.
                        continue;
                    }
                    sky[offsets[r] + c - first[r]] = v;
                }
            }
        }

        // Row-oriented Cholesky in the envelope.
        let mut max_diag = 0.0f64;
        for r in 0..dim {
            max_diag = max_diag.max(sky[offsets[r] + r - first[r]].abs());
        }
        let tiny = max_diag * 1e-14;
        for r in 0..dim {
            let fr = first[r];
            for c in fr..=r {
                let fc = first[c];
                let start = fr.max(fc);
                let mut sum = sky[offsets[r] + c - fr];
                for k in start..c {
                    sum -= sky[offsets[r] + k - fr] * sky[offsets[c] + k - fc];
                }
                if c == r {
                    if !(sum > tiny) || !sum.is_finite() {
                        return Err(NotPositiveDefinite);
                    }
                    sky[offsets[r] + r - fr] = sqrt(sum);
                } else {
                    sky[offsets[r] + c - fr] = sum / sky[offsets[c] + c - fc];
                }
            }
        }

        // Forward then backward substitution on the permuted right-hand side.
        let mut y = vec![0.0f64; dim];
        for b in 0..n {
            for a in 0..B {
                y[pos[b] * B + a] = rhs[b][a];
            }
        }
        for r in 0..dim {
            let fr = first[r];
            let mut sum = y[r];
            for k in fr..r {
                sum -= sky[offsets[r] + k - fr] * y[k];
            }
            y[r] = sum / sky[offsets[r] + r - fr];
        }
        for r in (0..dim).rev() {
            let fr = first[r];
            y[r] /= sky[offsets[r] + r - fr];
            let yr = y[r];
            for k in fr..r {
                y[k] -= sky[offsets[r] + k - fr] * yr;
            }
        }

        let mut out = vec![Vector6::zeros(); n];
        for b in 0..n {
            for a in 0..B {
                out[b][a] = y[pos[b] * B + a];
            }
        }
        Ok(out)
    }
}

/// Reverse Cuthill-McKee order of the block graph. Deterministic: ties break
/// on block index.
fn rcm_order(n: usize, blocks: &BTreeMap<(usize, usize), Matrix6<f64>>) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in blocks.keys() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v));
        let Some(start) = start else { break };
        let mut queue = VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spd_block(seed: u64) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        let mut s = seed;
        for v in m.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        m * m.transpose() + Matrix6::identity() * 3.0
    }

    #[test]
    fn matches_dense_solve_on_chain_with_loop() {
        let n = 7;
        let mut a = BlockMatrix::new(n);
        for i in 0..n {
            a.add(i, i, &spd_block(i as u64 + 1));
        }
        let coupling = |s| spd_block(s) * 0.1;
        for i in 0..n - 1 {
            a.add(i, i + 1, &coupling(100 + i as u64));
        }
        a.add(n - 1, 0, &coupling(999));
        let rhs: Vec<Vector6<f64>> = (0..n).map(|i| Vector6::from_element(i as f64 - 2.0)).collect();
        let x = a.solve(&rhs).unwrap();

        let mut dense = DMatrix::zeros(n * B, n * B);
        for (&(i, j), m) in a.blocks() {
            for r in 0..B {
                for c in 0..B {
                    dense[(i * B + r, j * B + c)] = m[(r, c)];
                    dense[(j * B + c, i * B + r)] = m[(r, c)];
                }
            }
        }
        let mut b = nalgebra::DVector::zeros(n * B);
        for i in 0..n {
            for r in 0..B {
                b[i * B + r] = rhs[i][r];
            }
        }
        let expected = dense.lu().solve(&b).unwrap();
        for i in 0..n {
            for r in 0..B {
                assert!((x[i][r] - expected[i * B + r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let mut a = BlockMatrix::new(2);
        a.add(0, 0, &Matrix6::identity());
        assert_eq!(a.solve(&[Vector6::zeros(), Vector6::zeros()]), Err(NotPositiveDefinite));
    }
}
