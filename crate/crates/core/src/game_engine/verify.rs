//! Equilibrium certification: no tenant can lower its own disutility by more
//! than `eps_improve` through a unilateral budget-feasible price change.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::dynamics::fit_budget;
use super::tenant::{own_disutility, tenant_best_response, BestResponseOptions};
use super::{Game, PricingProfile};
use crate::convergence_bound::BoundValue;
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantCheck {
    pub tenant: usize,
    pub disutility: BoundValue,
    /// Best deviation found, if it beats the current value by more than eps.
    pub improving_deviation: Option<Vec<f64>>,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub passed: bool,
    pub tenants: Vec<TenantCheck>,
}

fn gain(from: &BoundValue, to: &BoundValue) -> f64 {
    if to.unbounded < from.unbounded {
        f64::INFINITY
    } else if to.unbounded > from.unbounded {
        f64::NEG_INFINITY
    } else {
        from.finite - to.finite
    }
}

/// Probe each tenant with `n_probes` random deviations (half anywhere on its
/// budget simplex, half near its current prices) and with its best response.
pub fn verify_equilibrium(
    game: &Game,
    prices: &PricingProfile,
    n_probes: usize,
    opts: &BestResponseOptions,
) -> Result<EquilibriumReport> {
    game.validate()?;
    let n = game.num_devices();
    let mut tenants = Vec::with_capacity(game.num_tenants());
    for (i, t) in game.tenants.iter().enumerate() {
        let current = &prices.prices[i];
        let value = own_disutility(game, i, prices, current);
        let staked: Vec<usize> = (0..n).filter(|&j| t.weights[j] * t.g_sq[j] > 0.0).collect();
        let mut r = rng::stream(opts.seed, 1000 + i as u64);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let consider = |row: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
            let g = gain(&value, &own_disutility(game, i, prices, &row));
            if g > opts.eps_improve && best.as_ref().is_none_or(|(b, _)| g > *b) {
                *best = Some((g, row));
            }
        };
        for probe in 0..n_probes {
            if staked.is_empty() {
                break;
            }
            let e: Vec<f64> = staked.iter().map(|_| r.sample::<f64, _>(Exp1)).collect();
            let s: f64 = e.iter().sum();
            let mut sample = vec![0.0; n];
            for (&j, e) in staked.iter().zip(&e) {
                sample[j] = t.budget * e / s;
            }
            let mut row = if probe % 2 == 0 {
                sample
            } else {
                let w: f64 = r.random::<f64>() * 0.05;
                current.iter().zip(&sample).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            };
            fit_budget(&mut row, t.budget);
            consider(row, &mut best);
        }
        if let Some(row) = tenant_best_response(game, i, prices, opts)? {
            consider(row, &mut best);
        }
        tenants.push(TenantCheck {
            tenant: i,
            disutility: value,
            improvement: best.as_ref().map_or(0.0, |b| b.0),
            improving_deviation: best.map(|b| b.1),
        });
    }
    Ok(EquilibriumReport {
        passed: tenants.iter().all(|t| t.improving_deviation.is_none()),
        tenants,
    })
}
