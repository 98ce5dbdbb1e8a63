//! Gauss-Legendre rules and the subject-specific cumulative-hazard estimate.
//!
//! A rule of order `K` integrates polynomials of degree `2K - 1` exactly on
//! `[-1, 1]`. Cumulative hazards are integrals over `[0, t]`, so rules also
//! carry their nodes mapped onto the unit interval, and
//!
//! ```text
//! Λ̂(t) = t/2 · Σ_k w_k · λ(t · τ_k),     τ_k = (ξ_k + 1) / 2
//! ```

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Largest supported order.
pub const MAX_ORDER: usize = 64;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-15;

/// Nodes and weights of a `K`-point Gauss-Legendre rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    order: usize,
    canonical_nodes: Vec<f64>,
    unit_nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Roots of `P_K` on `(-1, 1)`, ascending.
    pub fn canonical_nodes(&self) -> &[f64] {
        &self.canonical_nodes
    }

    /// Nodes mapped to `(0, 1)`.
    pub fn unit_nodes(&self) -> &[f64] {
        &self.unit_nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Absolute node times `t · τ_k` for an interval `[0, t]`.
    pub fn node_times(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.unit_nodes.iter().map(move |&tau| t * tau)
    }

    /// Integrates `f` over `[a, b]` with the affine change of variables.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        half * self
            .canonical_nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xi, &w)| w * f(half * xi + mid))
            .sum::<f64>()
    }
}

/// `P_K(x)` and `P_K'(x)` from the three-term recurrence.
///
/// Uses `P'_{n+1} = (n + 1) P_n + x P'_n`, which stays finite at `x = ±1`.
pub fn legendre_eval(order: usize, x: f64) -> (f64, f64) {
    if order == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let mut dp = 1.0;
    for n in 1..order {
        let nf = n as f64;
        let p_next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        let dp_next = (nf + 1.0) * p + x * dp;
        p_prev = p;
        p = p_next;
        dp = dp_next;
    }
    (p, dp)
}

/// Builds a fresh rule of order `order`.
pub fn build_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidOrder(order));
    }
    let kf = order as f64;
    let mut canonical_nodes = vec![0.0; order];
    // Only the non-negative half is solved; the other half is its mirror image.
    for k in 1..=order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (kf + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre_eval(order, x);
            let step = p / dp;
            x -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        if order % 2 == 1 && k == order.div_ceil(2) {
            x = 0.0;
        }
        // Seeds are descending in k.
        canonical_nodes[order - k] = x;
        canonical_nodes[k - 1] = -x;
    }
    let weights: Vec<f64> = canonical_nodes
        .iter()
        .map(|&xi| {
            let (_, dp) = legendre_eval(order, xi);
            2.0 / ((1.0 - xi * xi) * dp * dp)
        })
        .collect();
    let unit_nodes = canonical_nodes.iter().map(|&xi| 0.5 * (xi + 1.0)).collect();
    Ok(QuadratureRule {
        order,
        canonical_nodes,
        unit_nodes,
        weights,
    })
}

static RULE_CACHE: [OnceLock<Arc<QuadratureRule>>; MAX_ORDER] = [const { OnceLock::new() }; MAX_ORDER];

/// Shared, lazily constructed rule of order `order`.
pub fn rule(order: usize) -> Result<Arc<QuadratureRule>> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidOrder(order));
    }
    let slot = &RULE_CACHE[order - 1];
    if let Some(r) = slot.get() {
        return Ok(Arc::clone(r));
    }
    let built = Arc::new(build_rule(order)?);
    Ok(Arc::clone(slot.get_or_init(|| built)))
}

/// Quadrature estimate of `∫_0^t hazard_at(s) ds`.
pub fn cumulative_hazard<F>(rule: &QuadratureRule, mut hazard_at: F, t: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Contract(format!(
            "cumulative hazard needs a finite t >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (&tau, &w) in rule.unit_nodes.iter().zip(&rule.weights) {
        let s = t * tau;
        let h = hazard_at(s);
        if !h.is_finite() {
            return Err(Error::numeric("hazard at quadrature node", s));
        }
        acc += w * h;
    }
    Ok(0.5 * t * acc)
}

/// Worst-case error of [`cumulative_hazard`] given `|λ^(2K)| <= deriv_max` on `[0, t]`.
///
/// The coefficient `t^(2K+1) (K!)^4 / ((2K+1) ((2K)!)^3)` is assembled in
/// log space so that it neither overflows nor underflows up to `K = 64`.
pub fn error_bound(rule: &QuadratureRule, t: f64, deriv_max: f64) -> f64 {
    if t <= 0.0 || deriv_max <= 0.0 {
        return 0.0;
    }
    let k = rule.order as u64;
    let log_coeff = (2 * k + 1) as f64 * t.ln() + 4.0 * ln_factorial(k)
        - ((2 * k + 1) as f64).ln()
        - 3.0 * ln_factorial(2 * k);
    (log_coeff + deriv_max.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn low_orders_are_analytic() {
        let r1 = build_rule(1).unwrap();
        assert_eq!(r1.canonical_nodes(), &[0.0]);
        assert!(close(r1.weights()[0], 2.0, 1e-15));

        let r2 = build_rule(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!(close(r2.canonical_nodes()[0], -s, 1e-15));
        assert!(close(r2.canonical_nodes()[1], s, 1e-15));
        assert!(r2.weights().iter().all(|&w| close(w, 1.0, 1e-14)));
    }

    #[test]
    fn order_bounds() {
        assert!(matches!(build_rule(0), Err(Error::InvalidOrder(0))));
        assert!(matches!(build_rule(65), Err(Error::InvalidOrder(65))));
        assert!(build_rule(64).is_ok());
        assert!(rule(0).is_err());
    }

    #[test]
    fn invariants_hold_for_every_order() {
        for k in 1..=MAX_ORDER {
            let r = build_rule(k).unwrap();
            let sum: f64 = r.weights().iter().sum();
            assert!(close(sum, 2.0, 1e-12), "K={k} sum={sum}");
            let nodes = r.canonical_nodes();
            for (i, &xi) in nodes.iter().enumerate() {
                let (p, dp) = legendre_eval(k, xi);
                assert!(p.abs() < 1e-12, "K={k} residual {p}");
                assert!(close(nodes[k - 1 - i], -xi, 1e-12));
                let w = 2.0 / ((1.0 - xi * xi) * dp * dp);
                assert!(close(r.weights()[i], w, 1e-12));
                assert!(r.weights()[i] > 0.0);
            }
            assert!(nodes.windows(2).all(|w| w[0] < w[1]));
            for (&u, &xi) in r.unit_nodes().iter().zip(nodes) {
                assert!(u > 0.0 && u < 1.0);
                assert_eq!(u, 0.5 * (xi + 1.0));
            }
        }
    }

    #[test]
    fn legendre_examples() {
        assert_eq!(legendre_eval(0, 0.7), (1.0, 0.0));
        let (p, dp) = legendre_eval(2, 0.5);
        assert!(close(p, -0.125, 1e-15) && close(dp, 1.5, 1e-15));
        for k in 0..20 {
            assert!(close(legendre_eval(k, 1.0).0, 1.0, 1e-13));
        }
    }

    #[test]
    fn cached_rule_matches_fresh() {
        let a = rule(7).unwrap();
        let b = rule(7).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, build_rule(7).unwrap());
    }

    #[test]
    fn cumulative_hazard_examples() {
        for k in 1..6 {
            let r = build_rule(k).unwrap();
            assert!(close(cumulative_hazard(&r, |_| 3.0, 2.0).unwrap(), 6.0, 1e-13));
            assert_eq!(cumulative_hazard(&r, |_| 3.0, 0.0).unwrap(), 0.0);
        }
        let r2 = build_rule(2).unwrap();
        assert!(close(cumulative_hazard(&r2, |s| s * s * s, 1.0).unwrap(), 0.25, 1e-15));
    }

    #[test]
    fn non_finite_hazard_reports_node_time() {
        let r = build_rule(3).unwrap();
        let err = cumulative_hazard(&r, |s| if s > 1.0 { f64::NAN } else { 1.0 }, 2.0).unwrap_err();
        match err {
            Error::NumericDomain { at, .. } => assert!(at > 1.0 && at < 2.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(cumulative_hazard(&r, |_| 1.0, -1.0).is_err());
    }

    #[test]
    fn error_bound_examples() {
        let r1 = build_rule(1).unwrap();
        assert_eq!(error_bound(&r1, 1.0, 0.0), 0.0);
        // 2^5 (2!)^4 / (5 (4!)^3)
        let r2 = build_rule(2).unwrap();
        assert!((error_bound(&r2, 2.0, 1.0) - 512.0 / 69120.0).abs() < 1e-15);
        // (3!)^4 / (7 (6!)^3) = 1296 / 2_612_736_000
        let r3 = build_rule(3).unwrap();
        let e = std::f64::consts::E;
        let expected = 1296.0 / 2_612_736_000.0 * e;
        assert!((error_bound(&r3, 1.0, e) - expected).abs() < 1e-12 * expected);
        let r64 = build_rule(64).unwrap();
        let b = error_bound(&r64, 1.0, 1.0);
        assert!(b.is_finite() && b >= 0.0);
    }
}
