//! Compressed sparse row storage, triplet assembly and an envelope
//! LDL^T factorization with reverse Cuthill-McKee ordering.
//!
//! The factorization is generic over real and complex scalars. For complex
//! symmetric matrices it computes the unconjugated LDL^T, which is what the
//! frequency-domain elastodynamic operators need.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use std::collections::VecDeque;

use crate::error::{dim_err, Error, Result};

/// Scalar types the sparse kernels operate on.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {}
impl Scalar for f64 {}
impl Scalar for Complex64 {}

/// Coordinate-format accumulator. Duplicates are summed on conversion.
#[derive(Debug, Clone)]
pub struct TripletBuilder<T> {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> TripletBuilder<T> {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, entries: Vec::new() }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Self { n_rows, n_cols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.entries.push((i, j, v));
    }

    pub fn build(self) -> CsrMatrix<T> {
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, self.entries)
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, T)>) -> Self {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<T> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                let k = values.len() - 1;
                values[k] += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Iterator over `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::zero(),
        }
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut s = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y` without conjugation.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.n_rows {
            let mut r = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.values[k] * y[self.col_idx[k]];
            }
            s += x[i] * r;
        }
        s
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Maps values to a different scalar type, keeping the pattern.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Extracts the submatrix with the given (ordered) rows and columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut t = Vec::new();
        for (ri, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                let m = col_map[c];
                if m != usize::MAX {
                    t.push((ri, m, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), t)
    }

    /// Maximum absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).modulus());
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// `W^T A W` for a dense real `W` (columns are basis vectors).
    pub fn project(&self, w: &DMatrix<f64>) -> DMatrix<T> {
        let n = w.ncols();
        let mut aw = DMatrix::<T>::zeros(self.n_rows, n);
        let mut x = vec![T::zero(); self.n_cols];
        let mut y = vec![T::zero(); self.n_rows];
        for c in 0..n {
            for i in 0..self.n_cols {
                x[i] = T::from_real(w[(i, c)]);
            }
            self.mul_vec_into(&x, &mut y);
            for i in 0..self.n_rows {
                aw[(i, c)] = y[i];
            }
        }
        let mut out = DMatrix::<T>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut s = T::zero();
                for i in 0..self.n_rows {
                    s += T::from_real(w[(i, a)]) * aw[(i, b)];
                }
                out[(a, b)] = s;
            }
        }
        out
    }
}

/// Linear combination `sum_k c_k A_k` of matrices.
///
/// Uses a fast value-wise path when all operands share one pattern.
pub fn linear_combination<S: Scalar>(terms: &[(S, &CsrMatrix<f64>)]) -> Result<CsrMatrix<S>> {
    let first = terms.first().ok_or_else(|| dim_err("empty linear combination"))?.1;
    for (_, m) in terms {
        if m.n_rows != first.n_rows || m.n_cols != first.n_cols {
            return Err(dim_err("linear combination of differently sized matrices"));
        }
    }
    if terms.iter().all(|(_, m)| m.same_pattern(first)) {
        let mut values = vec![S::zero(); first.nnz()];
        for (c, m) in terms {
            for (v, &a) in values.iter_mut().zip(&m.values) {
                *v += *c * S::from_real(a);
            }
        }
        return Ok(CsrMatrix {
            n_rows: first.n_rows,
            n_cols: first.n_cols,
            row_ptr: first.row_ptr.clone(),
            col_idx: first.col_idx.clone(),
            values,
        });
    }
    let mut t = Vec::new();
    for (c, m) in terms {
        for i in 0..m.n_rows {
            for (j, v) in m.row(i) {
                t.push((i, j, *c * S::from_real(v)));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(first.n_rows, first.n_cols, t))
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering<T: Scalar>(a: &CsrMatrix<T>) -> Vec<usize> {
    let n = a.n_rows;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(|r| r.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited_mask: &Vec<bool>| -> (usize, usize) {
        // Returns (eccentricity, a node of the last level with min degree).
        let mut level = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        level[start] = 0;
        q.push_back(start);
        let mut last = start;
        while let Some(u) = q.pop_front() {
            let lu = level[u];
            let better = level[last] < lu || (level[last] == lu && degree[u] < degree[last]);
            if better {
                last = u;
            }
            for &v in &adj[u] {
                if !visited_mask[v] && level[v] == usize::MAX {
                    level[v] = lu + 1;
                    q.push_back(v);
                }
            }
        }
        (level[last], last)
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node by repeated BFS.
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let (e2, f2) = bfs_levels(far, &visited);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (degree[v], v));
            for v in nb {
                if !visited[v] {
                    visited[v] = true;
                    q.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) LDL^T factorization of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct LdltFactor<T> {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> LdltFactor<T> {
    /// Factors `a` (only the lower triangle in the permuted ordering is read,
    /// the matrix is assumed symmetric).
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        let perm = rcm_ordering(a);
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &CsrMatrix<T>, perm: Vec<usize>) -> Result<Self> {
        let n = a.n_rows;
        if a.n_cols != n || perm.len() != n {
            return Err(dim_err(format!("ldlt of {}x{} matrix", a.n_rows, a.n_cols)));
        }
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for (j, _) in a.row(old) {
                let jn = iperm[j];
                if jn < first[new] {
                    first[new] = jn;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut l = vec![T::zero(); start[n]];
        let mut d = vec![T::zero(); n];
        let mut scale: f64 = 0.0;
        for (new, &old) in perm.iter().enumerate() {
            for (j, v) in a.row(old) {
                let jn = iperm[j];
                if jn < new {
                    l[start[new] + jn - first[new]] = v;
                } else if jn == new {
                    d[new] = v;
                    scale = scale.max(v.modulus());
                }
            }
        }
        let tiny = scale * 1e-14;
        let mut w: Vec<T> = Vec::new();
        for i in 0..n {
            let fi = first[i];
            let len = i - fi;
            w.clear();
            w.resize(len, T::zero());
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = l[start[i] + j - fi];
                let lj = &l[start[j]..start[j + 1]];
                for k in k0..j {
                    s -= w[k - fi] * lj[k - fj];
                }
                w[j - fi] = s;
                l[start[i] + j - fi] = s / d[j];
            }
            let mut di = d[i];
            for k in 0..len {
                di -= w[k] * l[start[i] + k];
            }
            if !(di.modulus() > tiny) || !di.modulus().is_finite() {
                return Err(Error::Singular { pivot: perm[i], magnitude: di.modulus() });
            }
            d[i] = di;
        }
        Ok(Self { n, perm, first, start, l, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored off-diagonal factor entries.
    pub fn profile(&self) -> usize {
        self.l.len()
    }

    /// Number of negative real parts of the pivots (inertia for real matrices).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|d| d.real() < 0.0).count()
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, &lik) in row.iter().enumerate() {
                s -= lik * y[fi + k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = y[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            for (k, &lik) in row.iter().enumerate() {
                y[fi + k] -= lik * xi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
                t.push(i - 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn ldlt_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x);
        let f = LdltFactor::factor(&a).unwrap();
        let y = f.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
        assert_eq!(f.negative_pivots(), 0);
    }

    #[test]
    fn ldlt_complex_symmetric() {
        let a = laplacian_1d(30);
        let m = CsrMatrix::<f64>::identity(30);
        let z = linear_combination(&[(Complex64::new(1.0, 0.0), &a), (Complex64::new(-0.5, 0.2), &m)]).unwrap();
        let x: Vec<Complex64> = (0..30).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let b = z.mul_vec(&x);
        let y = LdltFactor::factor(&z).unwrap().solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn singular_detected() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(LdltFactor::factor(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn rcm_is_permutation() {
        let a = laplacian_1d(17);
        let mut p = rcm_ordering(&a);
        p.sort();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
