//! One tenant's participation on one device as a function of its own price,
//! with every other tenant's price held fixed.
//!
//! The curve is traced by a parameter `t in [0, 2]`. On `[0, 1]` the device
//! has spare capacity (or the tenant is priced out) and the multiplier is
//! pinned; on `[1, 2]` capacity binds and the multiplier `mu` sweeps from the
//! point where the tenant enters up to the largest rival price, after which
//! the tenant holds the whole device. Both price and level are nondecreasing
//! in `t`, so bisection in `t` inverts them.

use super::kkt::{device_best_response, level, pow};

pub(crate) struct ResponseCurve {
    tau: f64,
    cost: f64,
    /// Rival (price, cost) pairs.
    rivals: Vec<(f64, f64)>,
    shape: Shape,
}

enum Shape {
    /// Linear cost: the tenant holds the device at one threshold price.
    Threshold(f64),
    Smooth {
        /// Spare capacity left by rivals at `mu = 0`, or `None` if they
        /// already exhaust it.
        spare: Option<f64>,
        /// Price reached at `t = 1`.
        knee: f64,
        mu_start: f64,
        mu_end: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CurvePoint {
    pub price: f64,
    pub level: f64,
    /// `d level / d price`.
    pub slope: f64,
}

impl ResponseCurve {
    pub fn new(prices: &[f64], costs: &[f64], tau: f64, tenant: usize) -> Self {
        let rivals: Vec<(f64, f64)> = prices
            .iter()
            .zip(costs)
            .enumerate()
            .filter(|(k, _)| *k != tenant)
            .map(|(_, (&p, &c))| (p, c))
            .collect();
        let cost = costs[tenant];
        if tau <= 1.0 {
            let best = rivals
                .iter()
                .map(|(p, c)| p - c)
                .fold(0.0, f64::max);
            let mut p = cost + best;
            let mut trial = prices.to_vec();
            for _ in 0..64 {
                trial[tenant] = p;
                if device_best_response(&trial, costs, tau)[tenant] == 1.0 {
                    break;
                }
                p = p.next_up();
            }
            return Self {
                tau,
                cost,
                rivals,
                shape: Shape::Threshold(p),
            };
        }
        let mut curve = Self {
            tau,
            cost,
            rivals,
            shape: Shape::Threshold(0.0),
        };
        let r0 = curve.rival_total(0.0);
        let mu_end = curve.rivals.iter().map(|r| r.0).fold(0.0, f64::max);
        curve.shape = if r0 < 1.0 {
            Shape::Smooth {
                spare: Some(1.0 - r0),
                knee: tau * cost * pow(1.0 - r0, tau - 1.0),
                mu_start: 0.0,
                mu_end,
            }
        } else {
            let (mut lo, mut hi) = (0.0, mu_end);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if curve.rival_total(mid) >= 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Shape::Smooth {
                spare: None,
                knee: lo,
                mu_start: lo,
                mu_end,
            }
        };
        curve
    }

    fn rival_total(&self, mu: f64) -> f64 {
        self.rivals
            .iter()
            .map(|&(p, c)| level(p, c, self.tau, mu))
            .sum()
    }

    /// Sum of `-d q_k / d mu` over rivals strictly inside `(0, 1)`.
    fn rival_sensitivity(&self, mu: f64) -> f64 {
        self.rivals
            .iter()
            .map(|&(p, c)| {
                let q = level(p, c, self.tau, mu);
                if q > 0.0 && q < 1.0 {
                    q / ((self.tau - 1.0) * (p - mu))
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn threshold(&self) -> Option<f64> {
        match self.shape {
            Shape::Threshold(p) => Some(p),
            Shape::Smooth { .. } => None,
        }
    }

    pub fn at(&self, t: f64) -> CurvePoint {
        let Shape::Smooth {
            spare,
            knee,
            mu_start,
            mu_end,
        } = self.shape
        else {
            unreachable!("threshold curves have a single point")
        };
        let tau = self.tau;
        let c = self.cost;
        if t <= 1.0 {
            let price = t * knee;
            return match spare {
                Some(_) if price > 0.0 => {
                    let level = pow(price / (tau * c), 1.0 / (tau - 1.0));
                    CurvePoint {
                        price,
                        level,
                        slope: level / ((tau - 1.0) * price),
                    }
                }
                Some(_) => CurvePoint {
                    price,
                    level: 0.0,
                    slope: f64::INFINITY,
                },
                None => CurvePoint {
                    price,
                    level: 0.0,
                    slope: 0.0,
                },
            };
        }
        let mu = mu_start + (t - 1.0).min(1.0) * (mu_end - mu_start);
        let x = (1.0 - self.rival_total(mu)).clamp(0.0, 1.0);
        let s = self.rival_sensitivity(mu);
        let slope = if s > 0.0 {
            s / (1.0 + tau * (tau - 1.0) * c * pow(x, tau - 2.0) * s)
        } else {
            0.0
        };
        CurvePoint {
            price: mu + tau * c * pow(x, tau - 1.0),
            level: x,
            slope: if slope.is_finite() { slope } else { 0.0 },
        }
    }

    /// Smallest parameter whose level reaches `floor`.
    pub fn param_for_level(&self, floor: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 2.0);
        if self.at(0.0).level >= floor {
            return 0.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.at(mid).level >= floor {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_engine::kkt::device_best_response;

    #[test]
    fn curve_agrees_with_direct_response() {
        let prices = [0.8, 0.3, 1.1];
        let costs = [0.4, 0.2, 0.6];
        for tau in [1.5, 2.0, 3.0] {
            let curve = ResponseCurve::new(&prices, &costs, tau, 0);
            for k in 0..=40 {
                let pt = curve.at(k as f64 / 20.0);
                let mut p = prices;
                p[0] = pt.price;
                let q = device_best_response(&p, &costs, tau)[0];
                assert!((q - pt.level).abs() < 1e-8, "tau {tau} t {k}: {q} vs {}", pt.level);
            }
        }
    }

    #[test]
    fn slope_matches_finite_differences() {
        let prices = [0.8, 0.3, 1.1];
        let costs = [0.4, 0.2, 0.6];
        let curve = ResponseCurve::new(&prices, &costs, 2.0, 0);
        for t in [0.3, 0.7, 1.2, 1.5] {
            let pt = curve.at(t);
            let h = 1e-6;
            let q = |price: f64| {
                let mut p = prices;
                p[0] = price;
                device_best_response(&p, &costs, 2.0)[0]
            };
            let fd = (q(pt.price + h) - q(pt.price - h)) / (2.0 * h);
            assert!((fd - pt.slope).abs() < 1e-5, "t {t}: {fd} vs {}", pt.slope);
        }
    }

    #[test]
    fn threshold_price_wins_the_device() {
        let prices = [0.0, 2.0, 1.5];
        let costs = [0.5, 1.0, 0.2];
        let curve = ResponseCurve::new(&prices, &costs, 1.0, 0);
        let p = curve.threshold().unwrap();
        assert!((p - 1.8).abs() < 1e-12);
        assert_eq!(device_best_response(&[p, 2.0, 1.5], &costs, 1.0)[0], 1.0);
    }
}
