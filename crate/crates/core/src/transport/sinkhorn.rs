//! Entropically regularised transport in the log domain, with epsilon
//! scaling: iterations start at a regularisation near the cost scale and
//! anneal down to the target, which keeps the iteration count low even for
//! small target epsilon. Serves the marginals the exact solver refuses
//! (unequal sizes), at the price of an epsilon-dependent bias.

use super::{check_order, cost_matrix, root, Method, TransportError, WassersteinResult};
use crate::measures::EmpiricalMeasure;

#[derive(Clone, Copy, Debug)]
pub struct SinkhornSettings {
    /// Target regularisation. `None` means 0.01 x (median cost entry).
    pub epsilon: Option<f64>,
    /// Max allowed marginal violation at convergence. The iteration count
    /// needed grows sharply as epsilon shrinks; epsilon far below the cost
    /// scale may not reach a tight tol within the budget and then errors out.
    pub tol: f64,
    /// Total iteration budget across all annealing stages.
    pub max_iters: usize,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        SinkhornSettings { epsilon: None, tol: 1e-8, max_iters: 10_000 }
    }
}

/// Regularised W_p with explicit epsilon and tolerance.
pub fn sinkhorn(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    epsilon: f64,
    tol: f64,
) -> Result<WassersteinResult, TransportError> {
    let settings = SinkhornSettings { epsilon: Some(epsilon), tol, ..SinkhornSettings::default() };
    sinkhorn_with(mu, nu, p, settings)
}

fn bad_param(field: &'static str, value: f64) -> TransportError {
    TransportError::InvalidParameter {
        field,
        reason: format!("must be positive and finite, got {value}"),
    }
}

/// Regularised W_p; `settings.epsilon = None` picks the default scale from
/// the cost matrix median.
pub fn sinkhorn_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    settings: SinkhornSettings,
) -> Result<WassersteinResult, TransportError> {
    check_order(p)?;
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch { a: mu.dim(), b: nu.dim() });
    }
    if let Some(eps) = settings.epsilon {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(bad_param("epsilon", eps));
        }
    }
    if !(settings.tol.is_finite() && settings.tol > 0.0) {
        return Err(bad_param("tol", settings.tol));
    }
    if settings.max_iters == 0 {
        return Err(TransportError::InvalidParameter {
            field: "max_iters",
            reason: "must be at least 1".into(),
        });
    }

    let (n, m) = (mu.len(), nu.len());
    let cost = cost_matrix(mu, nu, p);
    let scale = {
        let mut sorted = cost.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[sorted.len() / 2];
        if med > 0.0 {
            med
        } else {
            1.0
        }
    };
    let eps_target = settings.epsilon.unwrap_or(0.01 * scale);

    // Annealing schedule: halvings from roughly the cost scale down to the
    // target, target last. The residual plateau after warm-starting a stage
    // shrinks with the stage ratio, so a gentle ratio buys a smaller final
    // residual for the same budget.
    let mut schedule = vec![eps_target];
    let mut e = eps_target;
    while e < scale && schedule.len() < 64 {
        e *= 2.0;
        schedule.push(e);
    }
    schedule.reverse();

    let ln_a = -(n as f64).ln();
    let ln_b = -(m as f64).ln();
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut row_sum = vec![0.0f64; n];
    let mut col_sum = vec![0.0f64; m];

    let mut spent = 0usize;
    let mut residual = f64::INFINITY;
    let stages = schedule.len();
    for (k, &eps) in schedule.iter().enumerate() {
        let last = k + 1 == stages;
        // Intermediate stages only warm-start the duals; they stop early,
        // and a stalled stage yields its remaining budget to later stages.
        let stage_tol = if last { settings.tol } else { settings.tol.max(1e-6) };
        let mut best_res = f64::INFINITY;
        let mut since_improve = 0usize;
        while spent < settings.max_iters {
            spent += 1;
            // Row-satisfying then column-satisfying dual updates.
            for (i, fi) in f.iter_mut().enumerate() {
                let base = i * m;
                let mut hi = f64::NEG_INFINITY;
                for j in 0..m {
                    hi = hi.max((g[j] - cost[base + j]) / eps);
                }
                let mut s = 0.0;
                for j in 0..m {
                    s += ((g[j] - cost[base + j]) / eps - hi).exp();
                }
                *fi = eps * (ln_a - hi - s.ln());
            }
            for j in 0..m {
                let mut hi = f64::NEG_INFINITY;
                for i in 0..n {
                    hi = hi.max((f[i] - cost[i * m + j]) / eps);
                }
                let mut s = 0.0;
                for i in 0..n {
                    s += ((f[i] - cost[i * m + j]) / eps - hi).exp();
                }
                g[j] = eps * (ln_b - hi - s.ln());
            }
            // Marginal violation of the implied plan.
            row_sum.fill(0.0);
            col_sum.fill(0.0);
            for i in 0..n {
                let base = i * m;
                for j in 0..m {
                    let pi = ((f[i] + g[j] - cost[base + j]) / eps).exp();
                    row_sum[i] += pi;
                    col_sum[j] += pi;
                }
            }
            let row_err = row_sum.iter().map(|r| (r - a).abs()).fold(0.0, f64::max);
            let col_err = col_sum.iter().map(|c| (c - b).abs()).fold(0.0, f64::max);
            residual = row_err.max(col_err);
            if residual <= stage_tol {
                break;
            }
            if residual < 0.95 * best_res {
                best_res = residual;
                since_improve = 0;
            } else {
                since_improve += 1;
                if !last && since_improve >= 20 {
                    break;
                }
            }
        }
        if last && residual > settings.tol {
            return Err(TransportError::Diverged { iterations: spent, residual });
        }
    }

    let eps = eps_target;
    let mut plan_cost = 0.0;
    for (i, &fi) in f.iter().enumerate() {
        let base = i * m;
        for j in 0..m {
            plan_cost += ((fi + g[j] - cost[base + j]) / eps).exp() * cost[base + j];
        }
    }
    Ok(WassersteinResult {
        distance: root(plan_cost.max(0.0), p),
        plan: None,
        method: Method::Sinkhorn,
        residual,
    })
}
