//! Shared numerical machinery: Adam, finite-difference gradient checking and
//! a sparse normal-equation conjugate-gradient solver.

use crate::error::{Error, Result};

/// State of the Adam optimizer for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch(params.len(), grads.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// Max relative error between an analytic gradient and central differences.
///
/// `f` returns (value, gradient); only the gradient at `x` is compared.
pub fn fd_check<F>(mut f: F, x: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = f(x);
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let (fp, _) = f(&xp);
        xp[i] = x[i] - h;
        let (fm, _) = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let err = (grad[i] - fd).abs() / (grad[i].abs() + 1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Sparse real matrix in CSR form; duplicate triplets are summed at build.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet index out of range");
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = 0.0;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { rows, cols, row_ptr, col_idx, values }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[r] = acc;
        }
    }

    pub fn mul_transpose_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for r in 0..self.rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[k]] += self.values[k] * yr;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the least-squares problem `min ||Ax - b||` via conjugate gradient on
/// the normal equations. Converged when `||A'(Ax - b)|| <= tol * ||A'b||`.
pub fn solve_normal_cg(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.cols;
    let max_iter = 10 * n.max(1);
    let mut x = vec![0.0; n];
    let mut atb = vec![0.0; n];
    a.mul_transpose_vec(b, &mut atb);
    let target = tol * dot(&atb, &atb).sqrt();
    // r = A'b - A'A x, starts at A'b since x = 0
    let mut r = atb;
    let mut p = r.clone();
    let mut ap_rows = vec![0.0; a.rows];
    let mut atap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(x);
    }
    for _ in 0..max_iter {
        a.mul_vec(&p, &mut ap_rows);
        a.mul_transpose_vec(&ap_rows, &mut atap);
        let p_atap = dot(&p, &atap);
        if p_atap <= 0.0 {
            return Err(Error::SingularSystem);
        }
        let alpha = rr / p_atap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * atap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence(max_iter))
}
