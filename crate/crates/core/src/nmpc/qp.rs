//! Dense strictly convex QP solver using the dual active-set method of
//! Goldfarb and Idnani.
//!
//! Solves `min ½ zᵀHz + gᵀz` subject to `aᵢᵀz = bᵢ` (equalities) and
//! `aᵢᵀz ≥ bᵢ` (inequalities). Pivoting is deterministic: equalities are
//! added in order, then the most violated inequality (lowest index on ties).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (constraint {constraint})")]
    Infeasible { constraint: usize },
    #[error("iteration limit {0} reached")]
    MaxIterations(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// One linear constraint row `a·z (= or ≥) b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub a: DVector<f64>,
    pub b: f64,
    pub equality: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Allowed constraint violation at termination.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Lagrange multiplier per constraint (zero when inactive).
    pub multipliers: Vec<f64>,
    /// Indices of active constraints in the order they were added.
    pub active: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        Self {
            h,
            g,
            constraints: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn push_ge(&mut self, a: DVector<f64>, b: f64) {
        self.constraints.push(Constraint { a, b, equality: false });
    }

    pub fn push_eq(&mut self, a: DVector<f64>, b: f64) {
        self.constraints.push(Constraint { a, b, equality: true });
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let s = c.a.dot(z) - c.b;
                if c.equality {
                    s.abs()
                } else {
                    (-s).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Infinity norm of the KKT conditions: stationarity, primal and dual
    /// feasibility and complementarity.
    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        let mut grad = &self.h * &sol.z + &self.g;
        let mut worst: f64 = 0.0;
        for (c, &lambda) in self.constraints.iter().zip(&sol.multipliers) {
            grad.axpy(-lambda, &c.a, 1.0);
            let s = c.a.dot(&sol.z) - c.b;
            if c.equality {
                worst = worst.max(s.abs());
            } else {
                worst = worst.max((-s).max(0.0));
                worst = worst.max((-lambda).max(0.0));
                worst = worst.max((lambda * s).abs());
            }
        }
        worst.max(grad.amax())
    }

    pub fn solve(&self, opts: &QpOptions) -> Result<QpSolution, QpError> {
        solve(self, opts)
    }
}

struct ActiveSet {
    /// `Jᵀ H J = I`; the first `q` columns span the active normals.
    j: DMatrix<f64>,
    /// Upper triangular, `J₁ R = N` for the active normals `N`.
    r: DMatrix<f64>,
    q: usize,
    index: Vec<usize>,
    /// Sign applied to each active normal (equalities may be flipped).
    sign: Vec<f64>,
    u: Vec<f64>,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

impl ActiveSet {
    fn rotate_j(&mut self, i: usize, k: usize, c: f64, s: f64) {
        let n = self.j.nrows();
        for row in 0..n {
            let a = self.j[(row, i)];
            let b = self.j[(row, k)];
            self.j[(row, i)] = c * a + s * b;
            self.j[(row, k)] = -s * a + c * b;
        }
    }

    /// Appends a normal whose `d = Jᵀ n` is given.
    fn add(&mut self, mut d: DVector<f64>, index: usize, sign: f64, u: f64) {
        let n = d.len();
        let q = self.q;
        for i in (q + 1..n).rev() {
            if d[i] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[i - 1], d[i]);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j(i - 1, i, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.q += 1;
        self.index.push(index);
        self.sign.push(sign);
        self.u.push(u);
    }

    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for j in l..q - 1 {
            let (c, s, h) = givens(self.r[(j, j)], self.r[(j + 1, j)]);
            self.r[(j, j)] = h;
            self.r[(j + 1, j)] = 0.0;
            for col in j + 1..q - 1 {
                let a = self.r[(j, col)];
                let b = self.r[(j + 1, col)];
                self.r[(j, col)] = c * a + s * b;
                self.r[(j + 1, col)] = -s * a + c * b;
            }
            self.rotate_j(j, j + 1, c, s);
        }
        self.q -= 1;
        self.index.remove(l);
        self.sign.remove(l);
        self.u.remove(l);
    }

    /// Solves `R r = d[..q]` by back substitution.
    fn back_substitute(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    let n = p.dim();
    if p.h.nrows() != n || p.h.ncols() != n {
        return Err(QpError::Dimension(format!(
            "Hessian {}x{} for {} variables",
            p.h.nrows(),
            p.h.ncols(),
            n
        )));
    }
    if let Some(c) = p.constraints.iter().find(|c| c.a.len() != n) {
        return Err(QpError::Dimension(format!("constraint of length {}", c.a.len())));
    }
    let chol = p.h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut z = -chol.solve(&p.g);
    let lt_inv = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut set = ActiveSet {
        j: lt_inv,
        r: DMatrix::zeros(n, n),
        q: 0,
        index: Vec::new(),
        sign: Vec::new(),
        u: Vec::new(),
    };
    let m = p.constraints.len();
    let mut is_active = vec![false; m];
    let mut iterations = 0;

    loop {
        // Pick the next constraint to add.
        let mut pick: Option<(usize, f64)> = None;
        for (i, c) in p.constraints.iter().enumerate() {
            if c.equality && !is_active[i] {
                pick = Some((i, c.a.dot(&z) - c.b));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = -opts.feasibility_tol;
            for (i, c) in p.constraints.iter().enumerate() {
                if is_active[i] || c.equality {
                    continue;
                }
                let s = c.a.dot(&z) - c.b;
                if s < worst {
                    worst = s;
                    pick = Some((i, s));
                }
            }
        }
        let Some((pi, s0)) = pick else { break };
        let c = &p.constraints[pi];
        let sign = if c.equality && s0 > 0.0 { -1.0 } else { 1.0 };
        let np = &c.a * sign;
        let bp = c.b * sign;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(QpError::MaxIterations(opts.max_iterations));
            }
            let d = set.j.transpose() * &np;
            let q = set.q;
            let mut step = DVector::zeros(n);
            for k in q..n {
                step.axpy(d[k], &set.j.column(k), 1.0);
            }
            let r = set.back_substitute(&d);

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 && !p.constraints[set.index[k]].equality {
                    let ratio = set.u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let curvature = step.dot(&np);
            let scale = np.norm().max(1.0);
            let t2 = if step.norm() > 1e-12 * scale && curvature > 0.0 {
                -(np.dot(&z) - bp) / curvature
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible { constraint: pi });
            }
            for (uk, rk) in set.u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_plus += t;
            if t2.is_finite() {
                z.axpy(t, &step, 1.0);
            }
            if t2 <= t1 {
                set.add(set.j.transpose() * &np, pi, sign, u_plus);
                is_active[pi] = true;
                break;
            }
            let l = drop_at.expect("partial step without a blocking constraint");
            is_active[set.index[l]] = false;
            set.drop(l);
        }
    }

    let mut multipliers = vec![0.0; m];
    for k in 0..set.q {
        multipliers[set.index[k]] = set.u[k] * set.sign[k];
    }
    Ok(QpSolution {
        objective: p.objective(&z),
        z,
        multipliers,
        active: set.index,
        iterations,
    })
}
