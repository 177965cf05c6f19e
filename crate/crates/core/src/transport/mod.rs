//! Wasserstein-p distances between uniformly weighted empirical measures.
//!
//! Equal-size pairs are solved exactly: the optimal coupling of two uniform
//! n-point measures is a permutation, found by a shortest-augmenting-path
//! assignment solver. Unequal sizes go through entropic regularisation
//! ([`sinkhorn`]). A factorial-time enumerator ([`brute_force_wasserstein`])
//! serves as the correctness oracle for small instances.

mod assignment;
mod sinkhorn;

pub use sinkhorn::{sinkhorn, sinkhorn_with, SinkhornSettings};

use crate::measures::EmpiricalMeasure;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("exact solver needs equal atom counts (got {n} vs {m}); use sinkhorn for unequal marginals")]
    UnsupportedMarginals { n: usize, m: usize },
    #[error("ambient dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("sorted-pairing solver requires dimension 1, got {dim}")]
    NotOneDimensional { dim: usize },
    #[error("brute force refused for n = {n} > 8 (factorial blowup)")]
    BruteForceTooLarge { n: usize },
    #[error("order p must be finite and >= 1, got {p}")]
    InvalidOrder { p: f64 },
    #[error("invalid sinkhorn parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("sinkhorn did not reach tolerance within {iterations} iterations (residual {residual:.3e})")]
    Diverged { iterations: usize, residual: f64 },
}

/// Optimal pairing for equal-size uniform marginals: source atom i goes to
/// target atom `pairing[i]`. `cost` is the transported p-cost
/// (1/n)·Σ|x_i − y_{π(i)}|^p, so `distance = cost^(1/p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub pairing: Vec<usize>,
    pub cost: f64,
    pub order: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactAssignment,
    Exact1d,
    Dirac,
    Sinkhorn,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::ExactAssignment => "exact-assignment",
            Method::Exact1d => "exact-1d",
            Method::Dirac => "dirac",
            Method::Sinkhorn => "sinkhorn",
        };
        f.write_str(s)
    }
}

/// `residual` is 0 for exact methods and the max marginal violation for
/// sinkhorn. `plan` is present exactly when the method produces a permutation.
#[derive(Clone, Debug)]
pub struct WassersteinResult {
    pub distance: f64,
    pub plan: Option<TransportPlan>,
    pub method: Method,
    pub residual: f64,
}

pub(crate) fn check_order(p: f64) -> Result<(), TransportError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(TransportError::InvalidOrder { p })
    }
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(), TransportError> {
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch { a: mu.dim(), b: nu.dim() });
    }
    Ok(())
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// |x − y|^p. p is applied to the plain Euclidean distance.
fn pair_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d = euclidean(x, y);
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

fn root(cost: f64, p: f64) -> f64 {
    if p == 1.0 {
        cost
    } else if p == 2.0 {
        cost.sqrt()
    } else {
        cost.powf(1.0 / p)
    }
}

pub(crate) fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let (n, m) = (mu.len(), nu.len());
    let mut c = Vec::with_capacity(n * m);
    for x in mu.cloud().points() {
        for y in nu.cloud().points() {
            c.push(pair_cost(x, y, p));
        }
    }
    c
}

fn mean_plan_cost(cost: &[f64], pairing: &[usize], m: usize) -> f64 {
    let n = pairing.len();
    pairing.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum::<f64>() / n as f64
}

fn result_from_pairing(
    cost: &[f64],
    pairing: Vec<usize>,
    p: f64,
    method: Method,
) -> WassersteinResult {
    let n = pairing.len();
    let plan_cost = mean_plan_cost(cost, &pairing, n);
    WassersteinResult {
        distance: root(plan_cost, p),
        plan: Some(TransportPlan { pairing, cost: plan_cost, order: p }),
        method,
        residual: 0.0,
    }
}

/// Exact W_p for equal-size uniform empirical measures via optimal assignment
/// on the |x_i − y_j|^p cost matrix. O(n³) worst case.
pub fn wasserstein_exact(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
) -> Result<WassersteinResult, TransportError> {
    check_order(p)?;
    check_pair(mu, nu)?;
    let n = mu.len();
    if n != nu.len() {
        return Err(TransportError::UnsupportedMarginals { n, m: nu.len() });
    }
    let cost = cost_matrix(mu, nu, p);
    // Zero diagonal means the identity is already optimal (cost is the global
    // minimum 0); returning it keeps the mu == nu plan canonical.
    if (0..n).all(|i| cost[i * n + i] == 0.0) {
        return Ok(result_from_pairing(&cost, (0..n).collect(), p, Method::ExactAssignment));
    }
    let pairing = assignment::solve(n, &cost);
    Ok(result_from_pairing(&cost, pairing, p, Method::ExactAssignment))
}

/// W_p in dimension 1 by pairing order statistics; O(n log n).
pub fn wasserstein_1d(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
) -> Result<WassersteinResult, TransportError> {
    check_order(p)?;
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(TransportError::NotOneDimensional { dim: mu.dim().max(nu.dim()) });
    }
    let n = mu.len();
    if n != nu.len() {
        return Err(TransportError::UnsupportedMarginals { n, m: nu.len() });
    }
    let by_value = |vals: &[f64]| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        idx
    };
    let xs = mu.cloud().as_flat();
    let ys = nu.cloud().as_flat();
    let xi = by_value(xs);
    let yi = by_value(ys);
    let mut pairing = vec![0usize; n];
    let mut total = 0.0;
    for r in 0..n {
        pairing[xi[r]] = yi[r];
        total += pair_cost(&[xs[xi[r]]], &[ys[yi[r]]], p);
    }
    let plan_cost = total / n as f64;
    Ok(WassersteinResult {
        distance: root(plan_cost, p),
        plan: Some(TransportPlan { pairing, cost: plan_cost, order: p }),
        method: Method::Exact1d,
        residual: 0.0,
    })
}

/// W_p(mu, δ₀): everything transports to the origin, so the distance is the
/// p-th root of the p-th absolute moment.
pub fn wasserstein_to_dirac(mu: &EmpiricalMeasure, p: f64) -> Result<WassersteinResult, TransportError> {
    check_order(p)?;
    Ok(WassersteinResult {
        distance: root(mu.pth_absolute_moment(p), p),
        plan: None,
        method: Method::Dirac,
        residual: 0.0,
    })
}

/// Testing oracle: enumerate all n! pairings (Heap's algorithm). Refuses
/// n > 8.
pub fn brute_force_wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
) -> Result<WassersteinResult, TransportError> {
    check_order(p)?;
    check_pair(mu, nu)?;
    let n = mu.len();
    if n != nu.len() {
        return Err(TransportError::UnsupportedMarginals { n, m: nu.len() });
    }
    if n > 8 {
        return Err(TransportError::BruteForceTooLarge { n });
    }
    let cost = cost_matrix(mu, nu, p);
    let total = |perm: &[usize]| -> f64 {
        perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = total(&perm);
    let mut best_perm = perm.clone();
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best {
                best = t;
                best_perm.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(result_from_pairing(&cost, best_perm, p, Method::ExactAssignment))
}
