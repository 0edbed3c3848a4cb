use std::collections::VecDeque;

use nalgebra::DVector;

use super::sparse::CscMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern given as
/// adjacency lists. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        // Pseudo-peripheral start: a few rounds of "farthest node, min degree".
        let mut root = start;
        for _ in 0..3 {
            let (last_level, _) = bfs_levels(adjacency, root, &visited);
            let candidate = *last_level
                .iter()
                .min_by_key(|&&i| (degree[i], i))
                .expect("nonempty level");
            if candidate == root {
                break;
            }
            root = candidate;
        }
        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            nbrs.dedup();
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Returns the deepest BFS level from `root` (ignoring already-ordered nodes)
/// and the number of levels.
fn bfs_levels(adjacency: &[Vec<usize>], root: usize, excluded: &[bool]) -> (Vec<usize>, usize) {
    let n = adjacency.len();
    let mut level = vec![NONE; n];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adjacency[v] {
                if level[w] == NONE && !excluded[w] {
                    level[w] = depth + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (frontier, depth + 1);
        }
        frontier = next;
        depth += 1;
    }
}

/// `P A Pᵀ = L D Lᵀ` for a symmetric quasidefinite matrix, without pivoting.
///
/// The factorization follows the elimination-tree, up-looking scheme of
/// QDLDL: any symmetric permutation of a quasidefinite matrix admits such a
/// factorization, so the fill-reducing ordering can be chosen freely.
#[derive(Debug, Clone)]
pub struct QuasiDefiniteLdl {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    /// Full symmetric matrix in the original ordering, kept for refinement.
    matrix: CscMatrix,
}

impl QuasiDefiniteLdl {
    /// Factor the symmetric matrix whose upper triangle (row ≤ col) is given
    /// by `upper`. Lower-triangle entries are ignored.
    pub fn factor(n: usize, upper: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        let mut full = Vec::with_capacity(2 * upper.len());
        for &(i, j, v) in upper {
            if i > j {
                continue;
            }
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        let perm = reverse_cuthill_mckee(&adjacency);
        Self::factor_with_ordering(n, upper, perm, CscMatrix::from_triplets(n, n, &full))
    }

    fn factor_with_ordering(
        n: usize,
        upper: &[(usize, usize, f64)],
        perm: Vec<usize>,
        matrix: CscMatrix,
    ) -> Result<Self> {
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Permuted upper triangle, with an explicit diagonal for every column.
        let mut entries: Vec<(usize, usize, f64)> = upper
            .iter()
            .filter(|e| e.0 <= e.1)
            .map(|&(i, j, v)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b), v)
            })
            .collect();
        entries.extend((0..n).map(|k| (k, k, 0.0)));
        let a = CscMatrix::from_triplets(n, n, &entries);

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in a.colptr[j]..a.colptr[j + 1] {
                let mut i = a.rowind[p];
                if i == j {
                    continue;
                }
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();
        let mut y_vals = vec![0.0; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];

        for k in 0..n {
            let mut nnz_y = 0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let b = a.rowind[p];
                if b == k {
                    d[k] = a.values[p];
                    continue;
                }
                y_vals[b] = a.values[p];
                if !y_marked[b] {
                    y_marked[b] = true;
                    elim[0] = b;
                    let mut nnz_e = 1;
                    let mut next = etree[b];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next_space[c];
                let yc = y_vals[c];
                for j in lp[c]..slot {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[slot] = k;
                lx[slot] = yc * dinv[c];
                d[k] -= yc * lx[slot];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::Factorization(format!("zero pivot at column {k}")));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(QuasiDefiniteLdl {
            n,
            perm,
            lp,
            li,
            lx,
            d,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of positive pivots (the inertia check for quasidefinite KKT).
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }

    /// Single forward/backward substitution, no refinement.
    pub fn solve_unrefined(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        let mut out = DVector::zeros(self.n);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    /// Solve `A x = b` with a few steps of iterative refinement.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_unrefined(b);
        for _ in 0..2 {
            let r = b - self.matrix.mul_vec(&x);
            if r.amax() <= 1e-15 * (1.0 + b.amax()) {
                break;
            }
            x += self.solve_unrefined(&r);
        }
        x
    }
}
