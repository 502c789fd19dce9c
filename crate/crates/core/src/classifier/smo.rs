//! Two-variable sequential optimisation of the C-SVM dual.
//!
//! Solves
//!
//! ```text
//! max_α  Σ α_i - ½ Σ_ij α_i α_j y_i y_j K_ij
//! s.t.   0 <= α_i <= C,  Σ α_i y_i = 0
//! ```
//!
//! over a precomputed kernel matrix, picking the working pair by maximal
//! violation for the first index and second-order gain for the second.
//! Ties go to the lowest index so runs are reproducible.

use log::warn;

use super::kernel::KernelMatrix;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SmoParams {
    pub fn new(c: f64) -> Self {
        SmoParams {
            c,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Added to `Σ α_i y_i K(x_i, x)` to form the decision value.
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Value of the (maximised) dual objective at `alpha`.
pub fn dual_objective(gram: &KernelMatrix, labels: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * labels[i] * labels[j] * gram.get(i, j);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Solves the binary problem with labels in `{-1, +1}`.
pub fn solve(gram: &KernelMatrix, labels: &[f64], params: &SmoParams) -> DualSolution {
    let n = labels.len();
    assert_eq!(gram.len(), n, "kernel matrix does not match label count");
    let c = params.c;
    let y = labels;
    let mut alpha = vec![0.0; n];
    // Gradient of ½ αᵀQα - eᵀα with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];

    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };

        let mut g_max2 = f64::NEG_INFINITY;
        let mut obj_min = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let yg = y[t] * grad[t];
            if yg > g_max2 {
                g_max2 = yg;
            }
            let diff = g_max + yg;
            if diff > 0.0 {
                let mut quad = gram.get(i, i) + gram.get(t, t) - 2.0 * gram.get(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj < obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        if g_max + g_max2 < params.tolerance {
            converged = true;
            break;
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let q_ij = y[i] * y[j] * gram.get(i, j);
        let (q_ii, q_jj) = (gram.get(i, i), gram.get(j, j));
        if y[i] != y[j] {
            let quad = (q_ii + q_jj + 2.0 * q_ij).max(TAU);
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
            let quad = (q_ii + q_jj - 2.0 * q_ij).max(TAU);
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

        let (d_ai, d_aj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        let (row_i, row_j) = (gram.row(i), gram.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * row_i[t] * d_ai + y[j] * row_j[t] * d_aj);
        }
    }
    if !converged {
        warn!("SMO stopped after {iterations} iterations without reaching tolerance");
    }

    // Offset from free variables, or the midpoint of the feasible range.
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (upper + lower) / 2.0
    };

    DualSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_gram(xs: &[f64]) -> KernelMatrix {
        KernelMatrix::from_fn(xs.len(), |i, j| xs[i] * xs[j])
    }

    #[test]
    fn two_points_by_hand() {
        // Linear kernel on x = -1, +1: optimum α = (½, ½), b = 0.
        let gram = linear_gram(&[-1.0, 1.0]);
        let sol = solve(&gram, &[-1.0, 1.0], &SmoParams::new(10.0));
        assert!(sol.converged);
        assert!((sol.alpha[0] - 0.5).abs() < 1e-12 && (sol.alpha[1] - 0.5).abs() < 1e-12);
        assert!(sol.bias.abs() < 1e-12);
        assert!((dual_objective(&gram, &[-1.0, 1.0], &sol.alpha) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn box_constraint_binds_for_small_c() {
        let gram = linear_gram(&[-1.0, 1.0]);
        let sol = solve(&gram, &[-1.0, 1.0], &SmoParams::new(0.1));
        assert_eq!(sol.alpha, vec![0.1, 0.1]);
    }

    #[test]
    fn equality_constraint_holds() {
        let xs = [-3.0, -1.0, -0.5, 0.2, 1.0, 2.5];
        let y = [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        let sol = solve(&linear_gram(&xs), &y, &SmoParams::new(1.0));
        let s: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-12);
        assert!(sol.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}
