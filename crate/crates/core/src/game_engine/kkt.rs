//! Device-side participation response.
//!
//! A device splits one unit of participation across tenants to maximize
//! `sum_i q_i P_i - c_i q_i^tau` subject to `q_i in [0, 1]` and `sum q_i <= 1`.
//! For `tau > 1` the optimum is `q_i(mu) = clamp(((P_i - mu) / (tau c_i))^(1/(tau-1)), 0, 1)`
//! with the capacity multiplier `mu >= 0` chosen by bisection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceResponse {
    pub q: Vec<f64>,
    /// Multiplier of the capacity constraint `sum q <= 1`.
    pub mu: f64,
}

/// `x^e` with the common exponents of the cost model done without `powf`.
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

pub(crate) fn level(price: f64, cost: f64, tau: f64, mu: f64) -> f64 {
    let slack = price - mu;
    if slack <= 0.0 {
        return 0.0;
    }
    pow(slack / (tau * cost), 1.0 / (tau - 1.0)).min(1.0)
}

fn total(prices: &[f64], costs: &[f64], tau: f64, mu: f64) -> f64 {
    prices
        .iter()
        .zip(costs)
        .map(|(&p, &c)| level(p, c, tau, mu))
        .sum()
}

/// The utility-maximizing participation levels and their multiplier.
pub fn device_response(prices: &[f64], costs: &[f64], tau: f64) -> DeviceResponse {
    let m = prices.len();
    if tau <= 1.0 {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&p, &c)) in prices.iter().zip(costs).enumerate() {
            let margin = p - c;
            if margin > 0.0 && best.is_none_or(|(_, b)| margin > b) {
                best = Some((i, margin));
            }
        }
        let mut q = vec![0.0; m];
        let mut mu = 0.0;
        if let Some((i, margin)) = best {
            q[i] = 1.0;
            mu = margin;
        }
        return DeviceResponse { q, mu };
    }
    if total(prices, costs, tau, 0.0) <= 1.0 {
        return DeviceResponse {
            q: prices
                .iter()
                .zip(costs)
                .map(|(&p, &c)| level(p, c, tau, 0.0))
                .collect(),
            mu: 0.0,
        };
    }
    // The sum is continuous and nonincreasing in mu and vanishes at max price.
    let mut lo = 0.0;
    let mut hi = prices.iter().copied().fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(prices, costs, tau, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DeviceResponse {
        q: prices
            .iter()
            .zip(costs)
            .map(|(&p, &c)| level(p, c, tau, hi))
            .collect(),
        mu: hi,
    }
}

pub fn device_best_response(prices: &[f64], costs: &[f64], tau: f64) -> Vec<f64> {
    device_response(prices, costs, tau).q
}

pub fn device_utility(prices: &[f64], costs: &[f64], tau: f64, q: &[f64]) -> f64 {
    prices
        .iter()
        .zip(costs)
        .zip(q)
        .map(|((&p, &c), &q)| q * p - c * pow(q, tau))
        .sum()
}

/// Largest violation of each KKT condition for a candidate response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementary_slackness: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementary_slackness)
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
    }
}

/// Box constraints carry implicit multipliers: a level at 0 may have a
/// negative marginal, a level at 1 a positive one.
pub fn kkt_residuals(prices: &[f64], costs: &[f64], tau: f64, r: &DeviceResponse) -> KktResiduals {
    let mut stationarity: f64 = 0.0;
    let mut primal: f64 = 0.0;
    for ((&p, &c), &q) in prices.iter().zip(costs).zip(&r.q) {
        let marginal = p - tau * c * pow(q, tau - 1.0) - r.mu;
        let v = if q <= 0.0 {
            marginal.max(0.0)
        } else if q >= 1.0 {
            (-marginal).max(0.0)
        } else {
            marginal.abs()
        };
        stationarity = stationarity.max(v);
        primal = primal.max(-q).max(q - 1.0);
    }
    let sum: f64 = r.q.iter().sum();
    primal = primal.max(sum - 1.0);
    KktResiduals {
        stationarity,
        complementary_slackness: (r.mu * (1.0 - sum)).abs(),
        primal_feasibility: primal.max(0.0),
        dual_feasibility: (-r.mu).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tenant_stationary_point() {
        let q = device_best_response(&[0.6], &[0.5], 2.0);
        assert!((q[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn two_tenants_share_capacity() {
        let r = device_response(&[1.0, 1.0], &[0.5, 0.5], 2.0);
        assert!((r.mu - 0.5).abs() < 1e-12);
        assert!((r.q[0] - 0.5).abs() < 1e-12 && (r.q[1] - 0.5).abs() < 1e-12);
        assert!(kkt_residuals(&[1.0, 1.0], &[0.5, 0.5], 2.0, &r).max() < 1e-12);
    }

    #[test]
    fn zero_prices_zero_participation() {
        for tau in [1.0, 1.5, 2.0, 3.0] {
            assert_eq!(device_best_response(&[0.0; 3], &[0.2; 3], tau), vec![0.0; 3]);
        }
    }

    #[test]
    fn linear_cost_is_bang_bang_with_low_index_ties() {
        let q = device_best_response(&[2.0, 3.0, 3.0], &[1.0, 1.0, 1.0], 1.0);
        assert_eq!(q, vec![0.0, 1.0, 0.0]);
        let q = device_best_response(&[0.5, 0.9], &[1.0, 1.0], 1.0);
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn price_raise_never_lowers_own_level() {
        let costs = [0.3, 0.2, 0.5];
        let base = device_best_response(&[0.4, 0.7, 0.9], &costs, 1.5);
        let up = device_best_response(&[0.6, 0.7, 0.9], &costs, 1.5);
        assert!(up[0] >= base[0]);
        assert!(up[1] <= base[1] && up[2] <= base[2]);
    }
}
