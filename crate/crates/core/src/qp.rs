//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//! minimize    0.5 x^T G x + a^T x
//! subject to  c_i^T x >= b_i,   i = 0..m
//! ```
//!
//! with `G` symmetric positive definite. The factor `L^{-1}` of `G` is
//! computed once in [`QpFactor`] and reused across solves that share the
//! Hessian, which is the common case inside the sequential convexification
//! loop of the planner.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Cholesky-derived factor of a fixed Hessian.
#[derive(Debug, Clone)]
pub struct QpFactor {
    n: usize,
    hessian: Vec<f64>,
    /// `L^{-1}` row-major, i.e. the transpose of `J = L^{-T}`.
    jt: Vec<f64>,
}

impl QpFactor {
    pub fn new(hessian: &DMatrix<f64>) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n {
            return Err(Error::SolverFailure {
                iterations: 0,
                detail: format!("Hessian is {}x{}, expected square", n, hessian.ncols()),
            });
        }
        let chol = hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SolverFailure { iterations: 0, detail: "Hessian is not positive definite".into() })?;
        let l = chol.l();
        let min_diag = l.diagonal().min();
        let max_diag = l.diagonal().max();
        if !(min_diag > 1e-10 * max_diag.max(1.0)) {
            return Err(Error::SolverFailure {
                iterations: 0,
                detail: format!("Hessian ill-conditioned (Cholesky diagonal range {min_diag:e}..{max_diag:e})"),
            });
        }
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::SolverFailure { iterations: 0, detail: "singular Cholesky factor".into() })?;
        let mut jt = vec![0.0; n * n];
        let mut g = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                jt[r * n + c] = l_inv[(r, c)];
                g[r * n + c] = hessian[(r, c)];
            }
        }
        Ok(QpFactor { n, hessian: g, jt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `0.5 x^T G x + a^T x`.
    pub fn objective(&self, linear: &[f64], x: &[f64]) -> f64 {
        let n = self.n;
        let mut quad = 0.0;
        for r in 0..n {
            quad += x[r] * dot(&self.hessian[r * n..(r + 1) * n], x);
        }
        0.5 * quad + dot(linear, x)
    }
}

/// Inequality rows `c_i^T x >= b_i`, stored row-major.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    n: usize,
    rows: Vec<f64>,
    rhs: Vec<f64>,
}

impl Constraints {
    pub fn new(n: usize) -> Self {
        Constraints { n, rows: Vec::new(), rhs: Vec::new() }
    }

    pub fn with_capacity(n: usize, m: usize) -> Self {
        Constraints { n, rows: Vec::with_capacity(n * m), rhs: Vec::with_capacity(m) }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    /// Appends a zeroed row and returns it for filling.
    pub fn push_row(&mut self, rhs: f64) -> &mut [f64] {
        let start = self.rows.len();
        self.rows.resize(start + self.n, 0.0);
        self.rhs.push(rhs);
        &mut self.rows[start..]
    }

    pub fn push(&mut self, row: &[f64], rhs: f64) {
        assert_eq!(row.len(), self.n, "constraint row length");
        self.rows.extend_from_slice(row);
        self.rhs.push(rhs);
    }

    /// `x_index >= lo`.
    pub fn push_lower_bound(&mut self, index: usize, lo: f64) {
        self.push_row(lo)[index] = 1.0;
    }

    /// `x_index <= hi`.
    pub fn push_upper_bound(&mut self, index: usize, hi: f64) {
        self.push_row(-hi)[index] = -1.0;
    }

    pub fn residual(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x) - self.rhs[i]
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Indices of the constraints active at the optimum.
    pub active: Vec<usize>,
    /// Lagrange multipliers matching `active`, all non-negative.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-10;

pub fn solve(factor: &QpFactor, linear: &[f64], cons: &Constraints) -> Result<QpSolution> {
    let n = factor.n;
    assert_eq!(linear.len(), n, "linear term length");
    assert_eq!(cons.n, n, "constraint width");
    let m = cons.len();
    let max_iter = 10 * (n + m) + 10;

    let mut jt = factor.jt.clone();
    let mut r = vec![0.0; n * n];
    let row_norms: Vec<f64> = (0..m).map(|i| norm(cons.row(i))).collect();

    // Unconstrained minimum x = -G^{-1} a = -J J^T a.
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = &jt[i * n..(i + 1) * n];
        axpy(-dot(row, linear), row, &mut x);
    }

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut iterations = 0usize;
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rv = vec![0.0; n];

    loop {
        // Most violated inactive constraint, measured as signed distance.
        let mut chosen: Option<(usize, f64)> = None;
        let mut worst = 0.0;
        for i in 0..m {
            if is_active[i] || row_norms[i] == 0.0 {
                continue;
            }
            let s = cons.residual(i, &x);
            if s < -FEAS_TOL * (1.0 + cons.rhs[i].abs()) {
                let scaled = s / row_norms[i];
                if scaled < worst {
                    worst = scaled;
                    chosen = Some((i, s));
                }
            }
        }
        let Some((p, mut sp)) = chosen else { break };
        let cp = cons.row(p);

        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::SolverFailure {
                    iterations,
                    detail: format!("iteration limit reached with {} active constraints", active.len()),
                });
            }
            let q = active.len();

            for i in 0..n {
                d[i] = dot(&jt[i * n..(i + 1) * n], cp);
            }
            z.iter_mut().for_each(|v| *v = 0.0);
            for i in q..n {
                axpy(d[i], &jt[i * n..(i + 1) * n], &mut z);
            }
            back_substitute(&r, n, q, &d[..q], &mut rv[..q]);

            // Dual (partial) step length.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for j in 0..q {
                if rv[j] > 0.0 {
                    let t = u_plus[j] / rv[j];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(j);
                    }
                }
            }
            // Primal (full) step length.
            let zc = dot(&z, cp);
            let t2 = if norm(&z) > 1e-14 && zc > 0.0 { -sp / zc } else { f64::INFINITY };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::SolverFailure {
                    iterations,
                    detail: format!("constraint {p} cannot be satisfied (infeasible subproblem)"),
                });
            }

            if t2.is_infinite() {
                for j in 0..q {
                    u_plus[j] -= t1 * rv[j];
                }
                u_plus[q] += t1;
                let l = drop_at.expect("finite partial step has a blocking constraint");
                drop_constraint(&mut jt, &mut r, n, q, l);
                is_active[active.remove(l)] = false;
                u_plus.remove(l);
                continue;
            }

            let t = t1.min(t2);
            axpy(t, &z, &mut x);
            for j in 0..q {
                u_plus[j] -= t * rv[j];
            }
            u_plus[q] += t;

            if t2 <= t1 {
                if !add_constraint(&mut jt, &mut r, n, q, &mut d) {
                    return Err(Error::SolverFailure {
                        iterations,
                        detail: format!("constraint {p} is linearly dependent on the active set"),
                    });
                }
                active.push(p);
                is_active[p] = true;
                u = u_plus;
                break;
            }

            let l = drop_at.expect("partial step has a blocking constraint");
            drop_constraint(&mut jt, &mut r, n, q, l);
            is_active[active.remove(l)] = false;
            u_plus.remove(l);
            sp = cons.residual(p, &x);
            if sp >= 0.0 {
                // Reached feasibility for p on the partial step; drop it from consideration.
                u = u_plus[..u_plus.len() - 1].to_vec();
                break;
            }
        }
    }

    let objective = factor.objective(linear, &x);
    Ok(QpSolution { x, objective, active, multipliers: u, iterations })
}

/// Append the constraint whose transformed normal is `d = J^T c` to the
/// active set. Returns false when the normal is dependent.
fn add_constraint(jt: &mut [f64], r: &mut [f64], n: usize, q: usize, d: &mut [f64]) -> bool {
    for j in (q + 1..n).rev() {
        let (a, b) = (d[j - 1], d[j]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (c, s) = (a / h, b / h);
        d[j - 1] = h;
        d[j] = 0.0;
        rotate_rows(jt, n, j - 1, c, s);
    }
    if d[q].abs() <= f64::EPSILON * norm(&d[..=q]).max(1e-300) {
        return false;
    }
    for i in 0..=q {
        r[i * n + q] = d[i];
    }
    true
}

/// Remove active constraint `l` (of `q`) and restore `R` to upper triangular.
fn drop_constraint(jt: &mut [f64], r: &mut [f64], n: usize, q: usize, l: usize) {
    for col in l..q - 1 {
        for row in 0..=col + 1 {
            r[row * n + col] = r[row * n + col + 1];
        }
    }
    for row in 0..q {
        r[row * n + q - 1] = 0.0;
    }
    for j in l..q.saturating_sub(1) {
        let (a, b) = (r[j * n + j], r[(j + 1) * n + j]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (c, s) = (a / h, b / h);
        for k in j..q - 1 {
            let (x1, x2) = (r[j * n + k], r[(j + 1) * n + k]);
            r[j * n + k] = c * x1 + s * x2;
            r[(j + 1) * n + k] = -s * x1 + c * x2;
        }
        r[(j + 1) * n + j] = 0.0;
        rotate_rows(jt, n, j, c, s);
    }
}

fn rotate_rows(m: &mut [f64], n: usize, i: usize, c: f64, s: f64) {
    let (head, tail) = m.split_at_mut((i + 1) * n);
    let a = &mut head[i * n..];
    let b = &mut tail[..n];
    for k in 0..n {
        let (x1, x2) = (a[k], b[k]);
        a[k] = c * x1 + s * x2;
        b[k] = -s * x1 + c * x2;
    }
}

fn back_substitute(r: &[f64], n: usize, q: usize, rhs: &[f64], out: &mut [f64]) {
    for i in (0..q).rev() {
        let mut acc = rhs[i];
        for k in i + 1..q {
            acc -= r[i * n + k] * out[k];
        }
        out[i] = acc / r[i * n + i];
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
