//! A tenant's pricing problem: minimize its disutility over the budget
//! simplex, holding rival prices fixed.
//!
//! The disutility is a sum over devices of `w_j (1 - q_j) / q_j` where `q_j`
//! depends only on this tenant's price for device `j`. Budget is therefore
//! water-filled: for a multiplier `lambda` each device takes the price where
//! its marginal benefit `w_j q_j' / q_j^2` falls to `lambda`, and `lambda` is
//! bisected until the budget is spent. Random simplex samples back this up
//! when the marginal benefit is not monotone.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::curve::ResponseCurve;
use super::dynamics::fit_budget;
use super::{Game, PricingProfile};
use crate::convergence_bound::{disutility, BoundValue};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponseOptions {
    pub eps_improve: f64,
    pub fallback_starts: usize,
    pub seed: u64,
}

impl Default for BestResponseOptions {
    fn default() -> Self {
        Self {
            eps_improve: 1e-6,
            fallback_starts: 64,
            seed: 0,
        }
    }
}

/// `(alpha/K) sum_j (1 - q_j) a_j^2 G_j^2 / q_j` for one tenant's levels.
pub fn tenant_disutility(game: &Game, tenant: usize, q_row: &[f64]) -> Result<BoundValue> {
    let t = &game.tenants[tenant];
    disutility(t.alpha, t.cycles, &t.weights, &t.g_sq, q_row)
}

/// The tenant's disutility if it alone switches to `row`.
pub(crate) fn own_disutility(game: &Game, tenant: usize, prices: &PricingProfile, row: &[f64]) -> BoundValue {
    let coeff = game.tenants[tenant].coefficients();
    let mut out = BoundValue::default();
    for (j, d) in game.devices.iter().enumerate() {
        if coeff[j] == 0.0 {
            continue;
        }
        let mut col = prices.column(j);
        col[tenant] = row[j];
        let q = super::kkt::device_best_response(&col, &d.costs, d.exponent)[tenant];
        if q == 0.0 {
            out.unbounded += 1;
        } else {
            out.finite += coeff[j] * (1.0 - q) / q;
        }
    }
    out
}

struct Lane {
    device: usize,
    coeff: f64,
    curve: ResponseCurve,
    t_floor: f64,
    floor: f64,
}

impl Lane {
    fn marginal(&self, t: f64) -> f64 {
        let p = self.curve.at(t);
        if p.level <= 0.0 {
            return f64::INFINITY;
        }
        self.coeff * p.slope / (p.level * p.level)
    }

    /// Price at which the marginal benefit drops to `lambda`.
    fn price_at(&self, lambda: f64) -> f64 {
        if self.curve.threshold().is_some() {
            return self.floor;
        }
        if self.marginal(self.t_floor) <= lambda {
            return self.floor;
        }
        if self.marginal(2.0) >= lambda {
            return self.curve.at(2.0).price;
        }
        let (mut lo, mut hi) = (self.t_floor, 2.0);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if self.marginal(mid) >= lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.curve.at(lo).price.max(self.floor)
    }
}

fn lanes(game: &Game, tenant: usize, prices: &PricingProfile) -> Vec<Lane> {
    let coeff = game.tenants[tenant].coefficients();
    game.devices
        .iter()
        .enumerate()
        .filter(|(j, _)| coeff[*j] > 0.0)
        .map(|(j, d)| {
            let curve = ResponseCurve::new(&prices.column(j), &d.costs, d.exponent, tenant);
            let (t_floor, floor) = match curve.threshold() {
                Some(p) => (2.0, p),
                None => {
                    let t = curve.param_for_level(game.q_floor);
                    (t, curve.at(t).price)
                }
            };
            Lane {
                device: j,
                coeff: coeff[j],
                curve,
                t_floor,
                floor,
            }
        })
        .collect()
}

/// Minimum price per device that keeps this tenant's level at or above the
/// game's floor, given rival prices; zero where the tenant has no stake.
pub fn price_floors(game: &Game, tenant: usize, prices: &PricingProfile) -> Vec<f64> {
    let mut out = vec![0.0; game.num_devices()];
    for lane in lanes(game, tenant, prices) {
        out[lane.device] = lane.floor;
    }
    out
}

fn water_fill(lanes: &[Lane], budget: f64, n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let total = |lambda: f64, row: &mut Vec<f64>| {
        let mut s = 0.0;
        for l in lanes {
            let p = l.price_at(lambda);
            row[l.device] = p;
            s += p;
        }
        s
    };
    // lambda -> 0 gives every device its saturating price.
    if total(0.0, &mut row) <= budget {
        return row;
    }
    let mut hi = lanes
        .iter()
        .map(|l| l.marginal(l.t_floor))
        .filter(|m| m.is_finite())
        .fold(1e-300, f64::max);
    let mut scratch = vec![0.0; n];
    while total(hi, &mut scratch) > budget {
        hi *= 2.0;
    }
    let mut lo = hi;
    for _ in 0..4000 {
        lo *= 0.5;
        if total(lo, &mut scratch) > budget || lo < 1e-300 {
            break;
        }
        hi = lo;
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid, &mut scratch) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    total(hi, &mut row);
    row
}

/// Random points of `{P >= floor, sum P = budget}` over the staked devices.
fn simplex_samples(lanes: &[Lane], budget: f64, n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let spare = budget - lanes.iter().map(|l| l.floor).sum::<f64>();
    let mut r = rng::stream(seed, 7);
    (0..count)
        .map(|_| {
            let e: Vec<f64> = lanes.iter().map(|_| r.sample::<f64, _>(Exp1)).collect();
            let s: f64 = e.iter().sum();
            let mut row = vec![0.0; n];
            for (l, e) in lanes.iter().zip(&e) {
                row[l.device] = l.floor + spare * e / s;
            }
            fit_budget(&mut row, budget);
            row
        })
        .collect()
}

/// A price row that lowers this tenant's disutility by more than
/// `eps_improve`, or `None` if none was found.
pub fn tenant_best_response(
    game: &Game,
    tenant: usize,
    prices: &PricingProfile,
    opts: &BestResponseOptions,
) -> Result<Option<Vec<f64>>> {
    let budget = game.tenants[tenant].budget;
    let n = game.num_devices();
    let lanes = lanes(game, tenant, prices);
    let floors: f64 = lanes.iter().map(|l| l.floor).sum();
    if floors > budget {
        return Err(Error::BudgetInfeasible {
            tenant,
            floors,
            budget,
        });
    }
    if lanes.is_empty() {
        return Ok(None);
    }
    let current = own_disutility(game, tenant, prices, &prices.prices[tenant]);
    let filled = water_fill(&lanes, budget, n);
    let value = own_disutility(game, tenant, prices, &filled);
    if value.improves_on(&current, opts.eps_improve) {
        return Ok(Some(filled));
    }
    let mut best: Option<(BoundValue, Vec<f64>)> = None;
    for row in simplex_samples(&lanes, budget, n, opts.fallback_starts, opts.seed) {
        let v = own_disutility(game, tenant, prices, &row);
        if v.improves_on(&current, opts.eps_improve) && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, row));
        }
    }
    Ok(best.map(|(_, row)| row))
}
