//! Sparse assembly and direct solves.

use crate::error::{solver, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use std::cell::RefCell;

/// A linear functional on the unknown vector, stored as (index, coefficient) pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Combo(pub Vec<(usize, f64)>);

impl Combo {
    pub fn zero() -> Self {
        Combo(Vec::new())
    }

    pub fn unit(i: usize) -> Self {
        Combo(vec![(i, 1.0)])
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(mut self, s: f64) -> Self {
        if s == 0.0 {
            self.0.clear();
        } else {
            for t in &mut self.0 {
                t.1 *= s;
            }
        }
        self
    }

    pub fn add(mut self, other: &Combo, s: f64) -> Self {
        if s != 0.0 {
            for &(i, c) in &other.0 {
                self.0.push((i, c * s));
            }
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// Merge duplicate indices and drop zeros.
    pub fn compact(mut self) -> Self {
        self.0.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.0.len());
        for (i, c) in self.0 {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Combo(out)
    }
}

/// Linear combination of several combos.
pub fn lin(terms: &[(f64, &Combo)]) -> Combo {
    let mut out = Combo::zero();
    for &(s, c) in terms {
        out = out.add(c, s);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Triplets { rows, cols, entries: Vec::new() }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    /// Adds `w * a b^T` (Gram contribution when a == b).
    pub fn outer(&mut self, w: f64, a: &Combo, b: &Combo) {
        if w == 0.0 {
            return;
        }
        for &(i, ci) in &a.0 {
            for &(j, cj) in &b.0 {
                self.push(i, j, w * ci * cj);
            }
        }
    }

    /// Adds `coef * combo` into row `r`.
    pub fn row(&mut self, r: usize, coef: f64, c: &Combo) {
        for &(j, cj) in &c.0 {
            self.push(r, j, coef * cj);
        }
    }

    pub fn transpose(&self) -> Triplets {
        Triplets {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Triplets {
        Triplets {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, v * s)).collect(),
        }
    }

    pub fn extend_scaled(&mut self, other: &Triplets, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for &(r, c, v) in &other.entries {
            self.push(r, c, v * s);
        }
    }

    /// Diagonal with duplicates summed.
    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows.min(self.cols)];
        for &(r, c, v) in &self.entries {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    pub fn to_csr(&self) -> Csr {
        Csr::from_triplets(self)
    }
}

/// Compressed rows, used for matrix-vector products.
#[derive(Clone, Debug)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(t: &Triplets) -> Self {
        // bucket by row, then sort and merge each row
        let mut start = vec![0usize; t.rows + 1];
        for &(r, _, _) in &t.entries {
            start[r + 1] += 1;
        }
        for r in 0..t.rows {
            start[r + 1] += start[r];
        }
        let mut fill = start.clone();
        let mut bucket = vec![(0usize, 0.0f64); t.entries.len()];
        for &(r, c, v) in &t.entries {
            bucket[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut ptr = vec![0usize; t.rows + 1];
        let mut idx = Vec::with_capacity(t.entries.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.entries.len());
        for r in 0..t.rows {
            let row = &mut bucket[start[r]..start[r + 1]];
            row.sort_unstable_by_key(|e| e.0);
            let row_start = idx.len();
            for &(c, v) in row.iter() {
                if idx.len() > row_start && *idx.last().unwrap() == c {
                    *val.last_mut().unwrap() += v;
                } else {
                    idx.push(c);
                    val.push(v);
                }
            }
            ptr[r + 1] = idx.len();
        }
        Csr { rows: t.rows, cols: t.cols, ptr, idx, val }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| (self.ptr[r]..self.ptr[r + 1]).map(|k| self.val[k] * x[self.idx[k]]).sum()).collect()
    }

    pub fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for k in self.ptr[r]..self.ptr[r + 1] {
                out[self.idx[k]] += self.val[k] * y[r];
            }
        }
        out
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows.min(self.cols)];
        for (r, dr) in d.iter_mut().enumerate() {
            for k in self.ptr[r]..self.ptr[r + 1] {
                if self.idx[k] == r {
                    *dr += self.val[k];
                }
            }
        }
        d
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[r]..self.ptr[r + 1]).map(move |k| (self.idx[k], self.val[k]))
    }

    pub fn to_triplets(&self) -> Triplets {
        let mut t = Triplets::new(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.push(r, c, v);
            }
        }
        t
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

type Pattern = (usize, Vec<usize>, Vec<usize>);

thread_local! {
    // steps of one run repeat a handful of sparsity patterns
    static SYMBOLIC: RefCell<Vec<(Pattern, SymbolicLu<usize>)>> = const { RefCell::new(Vec::new()) };
}

fn cached_symbolic(m: &SparseColMat<usize, f64>) -> Result<SymbolicLu<usize>> {
    let s = m.symbolic();
    let key: Pattern = (s.nrows(), s.col_ptr().to_vec(), s.row_idx().to_vec());
    SYMBOLIC.with(|c| {
        let mut c = c.borrow_mut();
        if let Some(pos) = c.iter().position(|(k, _)| *k == key) {
            let hit = c.remove(pos);
            let sym = hit.1.clone();
            c.push(hit);
            return Ok(sym);
        }
        let sym = SymbolicLu::try_new(s).map_err(|e| solver(format!("symbolic LU failed: {e:?}")))?;
        if c.len() >= 4 {
            c.remove(0);
        }
        c.push((key, sym.clone()));
        Ok(sym)
    })
}

/// Sparse LU factorization with a few steps of iterative refinement on solve.
pub struct Factored {
    n: usize,
    a: Csr,
    lu: Lu<usize, f64>,
}

impl Factored {
    pub fn new(t: &Triplets) -> Result<Self> {
        if t.rows != t.cols {
            return Err(solver("factorization of a non-square matrix"));
        }
        let a = t.to_csr();
        let trip: Vec<Triplet<usize, usize, f64>> = {
            let mut v = Vec::with_capacity(t.entries.len());
            for r in 0..a.rows {
                for (c, x) in a.row_entries(r) {
                    v.push(Triplet::new(r, c, x));
                }
            }
            v
        };
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(t.rows, t.cols, &trip)
            .map_err(|e| solver(format!("sparse assembly failed: {e:?}")))?;
        let sym = cached_symbolic(&m)?;
        let lu = Lu::try_new_with_symbolic(sym, m.as_ref()).map_err(|e| solver(format!("LU failed: {e:?}")))?;
        Ok(Factored { n: t.rows, a, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn raw_solve(&self, bs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rhs = Mat::<f64>::from_fn(self.n, bs.len(), |i, j| bs[j][i]);
        let x = self.lu.solve(&rhs);
        (0..bs.len()).map(|j| (0..self.n).map(|i| x[(i, j)]).collect()).collect()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_many(&[b.to_vec()])?.pop().unwrap())
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, bs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if bs.is_empty() {
            return Ok(Vec::new());
        }
        assert!(bs.iter().all(|b| b.len() == self.n));
        let mut xs = self.raw_solve(bs);
        let bn: Vec<f64> = bs.iter().map(|b| norm2(b).max(f64::MIN_POSITIVE)).collect();
        for _ in 0..3 {
            let rs: Vec<Vec<f64>> = xs
                .iter()
                .zip(bs)
                .map(|(x, b)| {
                    let ax = self.a.mul(x);
                    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
                })
                .collect();
            if rs.iter().zip(&bn).all(|(r, n)| norm2(r) <= 1e-15 * n) {
                break;
            }
            let ds = self.raw_solve(&rs);
            for (x, d) in xs.iter_mut().zip(&ds) {
                axpy(x, 1.0, d);
            }
        }
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(solver("non-finite solution (singular system?)"));
        }
        Ok(xs)
    }
}

/// Block system `[A B^T; B -0]` with optional pinned multiplier row.
pub struct Saddle {
    pub nu: usize,
    pub np: usize,
    pin: Option<usize>,
    f: Factored,
}

impl Saddle {
    /// `pin` replaces constraint row `pin` by `lambda_pin = 0` (for a constant null space).
    pub fn new(a: &Triplets, b: &Triplets, pin: Option<usize>) -> Result<Self> {
        let nu = a.rows;
        let np = b.rows;
        assert_eq!(b.cols, nu);
        let mut t = Triplets::new(nu + np, nu + np);
        t.entries.extend(a.entries.iter().copied());
        for &(r, c, v) in &b.entries {
            if Some(r) != pin {
                t.push(nu + r, c, v);
            }
            t.push(c, nu + r, v);
        }
        if let Some(p) = pin {
            // keep column so the multiplier is still coupled, pin its value
            t.entries.retain(|&(r, c, _)| !(c == nu + p && r < nu));
            t.push(nu + p, nu + p, 1.0);
        }
        Ok(Saddle { nu, np, pin, f: Factored::new(&t)? })
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.solve_many(&[(f, g)])?.pop().unwrap())
    }

    pub fn solve_many(&self, rhs: &[(&[f64], &[f64])]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let bs: Vec<Vec<f64>> = rhs
            .iter()
            .map(|(f, g)| {
                let mut b = Vec::with_capacity(self.nu + self.np);
                b.extend_from_slice(f);
                b.extend_from_slice(g);
                if let Some(p) = self.pin {
                    b[self.nu + p] = 0.0;
                }
                b
            })
            .collect();
        let xs = self.f.solve_many(&bs)?;
        Ok(xs.into_iter().map(|x| (x[..self.nu].to_vec(), x[self.nu..].to_vec())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combo_compact_merges() {
        let c = Combo(vec![(2, 1.0), (0, 2.0), (2, -1.0), (1, 0.5)]).compact();
        assert_eq!(c.0, vec![(0, 2.0), (1, 0.5)]);
    }

    #[test]
    fn saddle_solves_small_stokes() {
        // minimize 1/2 |x|^2 - f.x subject to x0 + x1 = 0
        let mut a = Triplets::new(2, 2);
        a.push(0, 0, 1.0);
        a.push(1, 1, 1.0);
        let mut b = Triplets::new(1, 2);
        b.push(0, 0, 1.0);
        b.push(0, 1, 1.0);
        let s = Saddle::new(&a, &b, None).unwrap();
        let (x, _) = s.solve(&[1.0, 0.0], &[0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn pinned_saddle_handles_constant_null_space() {
        // two constraints that sum to zero
        let mut a = Triplets::new(2, 2);
        a.push(0, 0, 2.0);
        a.push(1, 1, 1.0);
        let mut b = Triplets::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(0, 1, -1.0);
        b.push(1, 0, -1.0);
        b.push(1, 1, 1.0);
        let s = Saddle::new(&a, &b, Some(1)).unwrap();
        let (x, _) = s.solve(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((x[0] - x[1]).abs() < 1e-13);
        assert!((x[0] - 1.0).abs() < 1e-13);
    }
}

/// Symmetric positive definite banded solve. `a(i, j)` is queried for `|i - j| <= bw`.
pub fn banded_cholesky_solve(n: usize, bw: usize, a: impl Fn(usize, usize) -> f64, b: &[f64]) -> Result<Vec<f64>> {
    // l[i][k] for k in i-bw..=i, stored as l[i * (bw + 1) + (k + bw - i)]
    let w = bw + 1;
    let mut l = vec![0.0; n * w];
    for i in 0..n {
        let k0 = i.saturating_sub(bw);
        for j in k0..=i {
            let mut s = a(i, j);
            for k in k0.max(j.saturating_sub(bw))..j {
                s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(solver("banded matrix is not positive definite"));
                }
                l[i * w + bw] = s.sqrt();
            } else {
                l[i * w + j + bw - i] = s / l[j * w + bw];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in i.saturating_sub(bw)..i {
            y[i] -= l[i * w + k + bw - i] * y[k];
        }
        y[i] /= l[i * w + bw];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + bw + 1).min(n) {
            y[i] -= l[k * w + i + bw - k] * y[k];
        }
        y[i] /= l[i * w + bw];
    }
    Ok(y)
}

#[cfg(test)]
mod banded_tests {
    use super::*;

    #[test]
    fn banded_matches_tridiagonal() {
        let n = 6;
        let a = |i: usize, j: usize| {
            if i == j {
                4.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else if i.abs_diff(j) == 2 {
                0.5
            } else {
                0.0
            }
        };
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a(i, j) * x_true[j]).sum()).collect();
        let x = banded_cholesky_solve(n, 2, a, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
