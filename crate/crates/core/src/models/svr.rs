//! Epsilon-insensitive support vector regression solved by SMO.
//!
//! The dual is written over `2n` variables (`alpha` for the upper side of the
//! tube, `alpha*` for the lower side) with a single equality constraint. Each
//! iteration picks a maximal-violating pair with second-order working-set
//! selection and solves the two-variable subproblem analytically. The solver
//! stops when the maximal KKT violation drops below `tol`, or at `max_iter`
//! (reported as not converged).

use super::{ModelError, ModelSpec};
use crate::matrix::Matrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(p, q)| p * q).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    /// `1 / (n_features * var(X))` over all entries of the training matrix.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: Gamma,
    pub linear: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl SvrParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let bad = |key: &str, value: String| ModelError::BadParam {
            key: key.into(),
            value,
        };
        let linear = match spec.text("kernel")?.as_str() {
            "rbf" => false,
            "linear" => true,
            other => return Err(bad("kernel", other.into())),
        };
        let gamma = match spec.text("gamma")?.as_str() {
            "scale" => Gamma::Scale,
            _ => {
                let g = spec.num("gamma")?;
                if g <= 0.0 {
                    return Err(bad("gamma", g.to_string()));
                }
                Gamma::Value(g)
            }
        };
        let p = Self {
            c: spec.num("C")?,
            epsilon: spec.num("epsilon")?,
            gamma,
            linear,
            tol: spec.num("tol")?,
            max_iter: spec.count("max_iter")?.max(1),
        };
        if p.c <= 0.0 || p.epsilon < 0.0 || p.tol <= 0.0 {
            return Err(bad("C/epsilon/tol", format!("{}/{}/{}", p.c, p.epsilon, p.tol)));
        }
        Ok(p)
    }

    pub fn kernel_for(&self, x: &Matrix) -> Kernel {
        if self.linear {
            return Kernel::Linear;
        }
        let gamma = match self.gamma {
            Gamma::Value(g) => g,
            Gamma::Scale => {
                let all = x.as_slice();
                let n = all.len() as f64;
                let mean = all.iter().sum::<f64>() / n;
                let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    1.0 / (x.cols() as f64 * var)
                } else {
                    1.0
                }
            }
        };
        Kernel::Rbf { gamma }
    }
}

/// Raw dual solution, kept for diagnostics such as KKT residuals.
#[derive(Debug, Clone)]
pub struct SvrSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kernel: Kernel,
}

impl SvrSolution {
    /// Dual coefficient `alpha_i - alpha*_i` of training row `i`.
    pub fn beta(&self, i: usize) -> f64 {
        self.alpha[i] - self.alpha_star[i]
    }

    /// Decision value on training row `i`.
    pub fn decision(&self, x: &Matrix, i: usize) -> f64 {
        (0..x.rows())
            .map(|j| self.beta(j) * self.kernel.eval(x.row(j), x.row(i)))
            .sum::<f64>()
            - self.rho
    }

    /// Largest KKT violation over all training points, in units of the
    /// residual `y - f(x)` measured against the tube edge.
    pub fn max_kkt_residual(&self, x: &Matrix, y: &[f64], c: f64, epsilon: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..x.rows() {
            let r = y[i] - self.decision(x, i);
            // alpha_i pushes f up (active when r >= eps); alpha*_i pushes f down.
            let up = kkt_violation(self.alpha[i], c, r - epsilon);
            let down = kkt_violation(self.alpha_star[i], c, -r - epsilon);
            worst = worst.max(up).max(down);
        }
        worst
    }
}

/// Violation for one box-constrained multiplier whose optimality condition is
/// `slack <= 0` at the lower bound, `= 0` when free, `>= 0` at the upper bound.
fn kkt_violation(a: f64, c: f64, slack: f64) -> f64 {
    if a <= 0.0 {
        slack.max(0.0)
    } else if a >= c {
        (-slack).max(0.0)
    } else {
        slack.abs()
    }
}

/// Solves the dual problem on `x`, `y`.
pub fn solve(p: &SvrParams, x: &Matrix, y: &[f64]) -> SvrSolution {
    let n = x.rows();
    let l = 2 * n;
    let c = p.c;
    let kernel = p.kernel_for(x);

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(x.row(i), x.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let base = |t: usize| if t < n { t } else { t - n };
    // Q(t, s) = sign(t) sign(s) K(base t, base s)
    let q = |t: usize, s: usize| sign(t) * sign(s) * k[base(t) * n + base(s)];

    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                p.epsilon - y[t]
            } else {
                p.epsilon + y[t - n]
            }
        })
        .collect();

    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < p.max_iter {
        // Working-set selection.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..l {
            if sign(t) > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    gmax_idx = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                gmax_idx = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = gmax_idx {
            let qii = q(i, i);
            for j in 0..l {
                let qjj = q(j, j);
                if sign(j) > 0.0 {
                    if !lower(alpha[j]) {
                        let diff = gmax + grad[j];
                        gmax2 = gmax2.max(grad[j]);
                        if diff > 0.0 {
                            let quad = qii + qjj - 2.0 * sign(i) * q(i, j);
                            let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= obj_min {
                                gmin_idx = Some(j);
                                obj_min = obj;
                            }
                        }
                    }
                } else if !upper(alpha[j]) {
                    let diff = gmax - grad[j];
                    gmax2 = gmax2.max(-grad[j]);
                    if diff > 0.0 {
                        let quad = qii + qjj + 2.0 * sign(i) * q(i, j);
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            gmin_idx = Some(j);
                            obj_min = obj;
                        }
                    }
                }
            }
        }
        let (i, j) = match (gmax_idx, gmin_idx) {
            (Some(i), Some(j)) if gmax + gmax2 >= p.tol => (i, j),
            _ => {
                converged = true;
                break;
            }
        };
        iterations += 1;

        // Two-variable update.
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let mut quad = q(i, i) + q(j, j) + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            // Both bounds are C, so the libsvm test `diff > C_i - C_j` is `diff > 0`.
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Offset from free variables, or the midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if upper(alpha[t]) {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };

    SvrSolution {
        alpha: alpha[..n].to_vec(),
        alpha_star: alpha[n..].to_vec(),
        rho,
        iterations,
        converged,
        kernel,
    }
}

/// Fitted model: support vectors with nonzero dual coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Svr {
    pub kernel: Kernel,
    pub support: Matrix,
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl Svr {
    pub fn fit(p: &SvrParams, x: &Matrix, y: &[f64]) -> (Self, bool) {
        let sol = solve(p, x, y);
        let idx: Vec<usize> = (0..x.rows()).filter(|&i| sol.beta(i) != 0.0).collect();
        let coef = idx.iter().map(|&i| sol.beta(i)).collect();
        (
            Self {
                kernel: sol.kernel,
                support: x.select_rows(&idx),
                coef,
                rho: sol.rho,
            },
            sol.converged,
        )
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.support
            .iter_rows()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, row))
            .sum::<f64>()
            - self.rho
    }
}
