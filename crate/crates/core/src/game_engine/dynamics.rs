//! Improvement dynamics over tenant prices.
//!
//! Each iteration every tenant proposes a unilateral price change, the
//! proposals are scored by the potential (the sum of all tenants'
//! disutilities after devices respond), and the proposal with the lowest
//! potential is approved if it lowers the potential by more than
//! `eps_improve`. The loop stops when no proposal is approved.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tenant::{own_disutility, tenant_best_response, BestResponseOptions};
use super::{Game, ParticipationProfile, PricingProfile};
use crate::convergence_bound::BoundValue;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrinceOptions {
    pub eps_improve: f64,
    pub max_iterations: usize,
    pub fallback_starts: usize,
    /// Halvings tried along the segment towards a best response whose full
    /// step raises the potential.
    pub backtrack_steps: usize,
    pub seed: u64,
}

impl Default for PrinceOptions {
    fn default() -> Self {
        Self {
            eps_improve: 1e-6,
            max_iterations: 10_000,
            fallback_starts: 64,
            backtrack_steps: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTraceRow {
    pub iter: usize,
    /// `None` for the starting profile.
    pub winner: Option<usize>,
    pub potential: BoundValue,
    pub disutilities: Vec<BoundValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub rows: Vec<GameTraceRow>,
}

impl GameTrace {
    /// Approved iterations.
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// Every approved step lowered the potential by more than `eps`.
    pub fn strictly_decreasing(&self, eps: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].potential.improves_on(&w[0].potential, eps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrinceOutcome {
    pub prices: PricingProfile,
    pub participation: ParticipationProfile,
    pub disutilities: Vec<BoundValue>,
    pub potential: BoundValue,
    pub trace: GameTrace,
}

/// Sum of all tenants' disutilities once devices respond to `prices`.
pub fn potential(game: &Game, prices: &PricingProfile) -> BoundValue {
    game.disutilities(&game.responses(prices)).into_iter().sum()
}

/// The proposer whose substitution gives the lowest potential, provided it
/// beats the current potential by more than `eps`; ties go to the lowest
/// tenant index.
pub fn select_winner(
    game: &Game,
    prices: &PricingProfile,
    proposals: &[Option<Vec<f64>>],
    eps: f64,
) -> Option<(usize, BoundValue)> {
    let current = potential(game, prices);
    let scored: Vec<Option<BoundValue>> = proposals
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            p.as_ref()
                .map(|row| potential(game, &prices.with_row(i, row.clone())))
        })
        .collect();
    let mut best: Option<(usize, BoundValue)> = None;
    for (i, v) in scored.into_iter().enumerate() {
        let Some(v) = v else { continue };
        if v.improves_on(&current, eps) && best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best
}

/// Scale a row down until its sum does not exceed `budget`.
pub(crate) fn fit_budget(row: &mut [f64], budget: f64) {
    let s: f64 = row.iter().sum();
    if s <= budget {
        return;
    }
    let f = budget / s;
    row.iter_mut().for_each(|p| *p *= f);
    while row.iter().sum::<f64>() > budget {
        row.iter_mut().for_each(|p| *p = p.next_down().max(0.0));
    }
}

fn propose(
    game: &Game,
    tenant: usize,
    prices: &PricingProfile,
    current: BoundValue,
    opts: &PrinceOptions,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let br_opts = BestResponseOptions {
        eps_improve: opts.eps_improve,
        fallback_starts: opts.fallback_starts,
        seed,
    };
    let Some(target) = tenant_best_response(game, tenant, prices, &br_opts)? else {
        return Ok(None);
    };
    if potential(game, &prices.with_row(tenant, target.clone())).improves_on(&current, opts.eps_improve) {
        return Ok(Some(target));
    }
    // The full step helps this tenant but hurts the others more; look for a
    // shorter step that still helps it and lowers the potential.
    let from = &prices.prices[tenant];
    let own = own_disutility(game, tenant, prices, from);
    let budget = game.tenants[tenant].budget;
    let mut best: Option<(BoundValue, Vec<f64>)> = None;
    let mut t = 1.0;
    for _ in 0..opts.backtrack_steps {
        t *= 0.5;
        let mut row: Vec<f64> = from.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect();
        fit_budget(&mut row, budget);
        if !own_disutility(game, tenant, prices, &row).improves_on(&own, opts.eps_improve) {
            continue;
        }
        let v = potential(game, &prices.with_row(tenant, row.clone()));
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, row));
        }
    }
    Ok(match best {
        Some((v, row)) if v.improves_on(&current, opts.eps_improve) => Some(row),
        _ => Some(target),
    })
}

fn record(game: &Game, prices: &PricingProfile, iter: usize, winner: Option<usize>) -> GameTraceRow {
    let disutilities = game.disutilities(&game.responses(prices));
    GameTraceRow {
        iter,
        winner,
        potential: disutilities.iter().copied().sum(),
        disutilities,
    }
}

/// Improvement dynamics from the uniform profile until no proposal is
/// approved.
pub fn run_prince(game: &Game, opts: &PrinceOptions) -> Result<PrinceOutcome> {
    run_prince_from(game, PricingProfile::uniform(game), opts)
}

pub fn run_prince_from(game: &Game, start: PricingProfile, opts: &PrinceOptions) -> Result<PrinceOutcome> {
    game.validate()?;
    if !start.is_feasible(game, 0.0) {
        return Err(Error::InvalidArgument("starting prices exceed a budget".into()));
    }
    let m = game.num_tenants();
    let mut prices = start;
    let mut trace = GameTrace {
        rows: vec![record(game, &prices, 0, None)],
    };
    loop {
        let iter = trace.rows.len();
        let current = trace.rows[iter - 1].potential;
        let proposals = (0..m)
            .into_par_iter()
            .map(|i| {
                let seed = rng::derive_seed(opts.seed, (iter * m + i) as u64);
                propose(game, i, &prices, current, opts, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let Some((winner, _)) = select_winner(game, &prices, &proposals, opts.eps_improve) else {
            break;
        };
        if iter > opts.max_iterations {
            return Err(Error::NonConvergence { iterations: iter - 1 });
        }
        prices.prices[winner] = proposals[winner].clone().expect("winner proposed");
        if !prices.is_feasible(game, 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tenant {winner} proposal exceeds its budget"
            )));
        }
        trace.rows.push(record(game, &prices, iter, Some(winner)));
    }
    let participation = game.responses(&prices);
    let last = trace.rows.last().expect("nonempty trace");
    Ok(PrinceOutcome {
        disutilities: last.disutilities.clone(),
        potential: last.potential,
        prices,
        participation,
        trace,
    })
}

/// Budget splits `budget * k / steps` over `n` devices, `sum k = steps`.
pub fn grid_rows(budget: f64, n: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n - 1, left - k, cur, out);
            cur.pop();
        }
    }
    let mut ks = Vec::new();
    rec(n, steps, &mut Vec::new(), &mut ks);
    ks.into_iter()
        .map(|k| k.into_iter().map(|k| budget * k as f64 / steps as f64).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub prices: PricingProfile,
    pub potential: BoundValue,
    pub trace: GameTrace,
}

/// The dynamics with every tenant restricted to grid splits of its budget.
/// Proposals are all of a tenant's grid rows that lower its own disutility;
/// the approved one lowers the potential the most.
pub fn run_prince_grid(game: &Game, steps: usize, opts: &PrinceOptions) -> Result<GridOutcome> {
    game.validate()?;
    let n = game.num_devices();
    if steps % n != 0 {
        return Err(Error::InvalidArgument(format!(
            "{steps} grid steps do not split evenly over {n} devices"
        )));
    }
    let grids: Vec<Vec<Vec<f64>>> = game
        .tenants
        .iter()
        .map(|t| grid_rows(t.budget, n, steps))
        .collect();
    let mut idx: Vec<usize> = grids
        .iter()
        .map(|g| {
            g.iter()
                .position(|r| r.iter().all(|p| (*p - r[0]).abs() == 0.0))
                .expect("uniform split is on the grid")
        })
        .collect();
    let profile = |idx: &[usize]| PricingProfile {
        prices: idx.iter().zip(&grids).map(|(&k, g)| g[k].clone()).collect(),
    };
    let mut prices = profile(&idx);
    let mut trace = GameTrace {
        rows: vec![record(game, &prices, 0, None)],
    };
    loop {
        let iter = trace.rows.len();
        let current = trace.rows[iter - 1].potential;
        let mut best: Option<(BoundValue, usize, usize)> = None;
        for (i, g) in grids.iter().enumerate() {
            let own = own_disutility(game, i, &prices, &prices.prices[i]);
            for (k, row) in g.iter().enumerate() {
                if k == idx[i] || !own_disutility(game, i, &prices, row).improves_on(&own, opts.eps_improve) {
                    continue;
                }
                let v = potential(game, &prices.with_row(i, row.clone()));
                if v.improves_on(&current, opts.eps_improve) && best.is_none_or(|(b, _, _)| v < b) {
                    best = Some((v, i, k));
                }
            }
        }
        let Some((_, i, k)) = best else { break };
        if iter > opts.max_iterations {
            return Err(Error::NonConvergence { iterations: iter - 1 });
        }
        idx[i] = k;
        prices = profile(&idx);
        trace.rows.push(record(game, &prices, iter, Some(i)));
    }
    Ok(GridOutcome {
        potential: trace.rows.last().expect("nonempty trace").potential,
        prices,
        trace,
    })
}

/// Exhaustive minimum of the potential over all grid profiles.
pub fn grid_minimum(game: &Game, steps: usize) -> (BoundValue, PricingProfile) {
    let n = game.num_devices();
    let grids: Vec<Vec<Vec<f64>>> = game
        .tenants
        .iter()
        .map(|t| grid_rows(t.budget, n, steps))
        .collect();
    let mut idx = vec![0usize; grids.len()];
    let mut best: Option<(BoundValue, PricingProfile)> = None;
    loop {
        let p = PricingProfile {
            prices: idx.iter().zip(&grids).map(|(&k, g)| g[k].clone()).collect(),
        };
        let v = potential(game, &p);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, p));
        }
        let mut d = 0;
        loop {
            if d == idx.len() {
                return best.expect("at least one profile");
            }
            idx[d] += 1;
            if idx[d] < grids[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `iter,winner,potential,lambda_1..lambda_M`; the starting row has an empty
/// winner and unbounded values print as `inf`.
pub fn write_game_trace<W: Write>(trace: &GameTrace, out: W) -> Result<()> {
    let m = trace.rows.first().map_or(0, |r| r.disutilities.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string(), "winner".into(), "potential".into()];
    header.extend((1..=m).map(|i| format!("lambda_{i}")));
    w.write_record(&header)?;
    for r in &trace.rows {
        let mut rec = vec![
            r.iter.to_string(),
            r.winner.map(|i| (i + 1).to_string()).unwrap_or_default(),
            r.potential.value().to_string(),
        ];
        rec.extend(r.disutilities.iter().map(|d| d.value().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
