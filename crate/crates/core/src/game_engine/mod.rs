//! Tenant pricing game: device participation responses, tenant disutility,
//! best-response pricing, improvement dynamics and equilibrium checks.

mod curve;
pub mod dynamics;
pub mod kkt;
pub mod tenant;
pub mod verify;

use serde::{Deserialize, Serialize};

use crate::convergence_bound::{disutility, BoundValue};
use crate::error::{Error, Result};

pub use dynamics::{
    grid_minimum, potential, run_prince, run_prince_grid, select_winner, write_game_trace,
    GameTrace, GameTraceRow, GridOutcome, PrinceOptions, PrinceOutcome,
};
pub use kkt::{
    device_best_response, device_response, device_utility, kkt_residuals, DeviceResponse,
    KktResiduals,
};
pub use tenant::{price_floors, tenant_best_response, tenant_disutility, BestResponseOptions};
pub use verify::{verify_equilibrium, EquilibriumReport, TenantCheck};

/// A tenant as it enters the pricing game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTenant {
    pub budget: f64,
    /// `8 L I / mu^2`.
    pub alpha: f64,
    /// Synchronization cycles that fit in the deadline.
    pub cycles: usize,
    /// Aggregation weight of each device.
    pub weights: Vec<f64>,
    /// Gradient bound of each device.
    pub g_sq: Vec<f64>,
}

impl GameTenant {
    /// Per-device coefficient `(alpha / K) a_j^2 G_j^2` of `(1 - q_j) / q_j`.
    pub fn coefficients(&self) -> Vec<f64> {
        let s = self.alpha / self.cycles as f64;
        self.weights
            .iter()
            .zip(&self.g_sq)
            .map(|(a, g)| s * a * a * g)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDevice {
    /// Cost coefficient per tenant.
    pub costs: Vec<f64>,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub tenants: Vec<GameTenant>,
    pub devices: Vec<GameDevice>,
    /// Minimum participation a tenant secures on every device holding its data.
    pub q_floor: f64,
}

/// Prices `P[i][j]` offered by tenant `i` to device `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingProfile {
    pub prices: Vec<Vec<f64>>,
}

/// Participation levels `q[i][j]` of device `j` in tenant `i`'s job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationProfile {
    pub levels: Vec<Vec<f64>>,
}

impl PricingProfile {
    /// Every tenant splits its budget evenly over all devices.
    pub fn uniform(game: &Game) -> Self {
        let n = game.num_devices() as f64;
        Self {
            prices: game
                .tenants
                .iter()
                .map(|t| {
                    let mut row = vec![t.budget / n; game.num_devices()];
                    dynamics::fit_budget(&mut row, t.budget);
                    row
                })
                .collect(),
        }
    }

    pub fn with_row(&self, tenant: usize, row: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.prices[tenant] = row;
        out
    }

    pub fn column(&self, device: usize) -> Vec<f64> {
        self.prices.iter().map(|r| r[device]).collect()
    }

    /// Nonnegative prices within every budget, allowing `slack` of rounding.
    pub fn is_feasible(&self, game: &Game, slack: f64) -> bool {
        self.prices.len() == game.num_tenants()
            && self.prices.iter().zip(&game.tenants).all(|(row, t)| {
                row.len() == game.num_devices()
                    && row.iter().all(|p| *p >= 0.0 && p.is_finite())
                    && row.iter().sum::<f64>() <= t.budget * (1.0 + slack)
            })
    }
}

impl ParticipationProfile {
    pub fn column(&self, device: usize) -> Vec<f64> {
        self.levels.iter().map(|r| r[device]).collect()
    }
}

impl Game {
    pub fn num_tenants(&self) -> usize {
        self.tenants.len()
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_tenants();
        let n = self.num_devices();
        if m == 0 || n == 0 {
            return Err(Error::InvalidScenario("game needs tenants and devices".into()));
        }
        if !(self.q_floor > 0.0 && self.q_floor < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "participation floor {} outside (0, 1)",
                self.q_floor
            )));
        }
        for (i, t) in self.tenants.iter().enumerate() {
            if t.weights.len() != n || t.g_sq.len() != n {
                return Err(Error::InvalidTenant {
                    tenant: i,
                    reason: format!("expected {n} device weights and gradient bounds"),
                });
            }
            if !(t.budget > 0.0) || t.cycles == 0 || !(t.alpha >= 0.0) {
                return Err(Error::InvalidTenant {
                    tenant: i,
                    reason: "budget and cycle count must be positive".into(),
                });
            }
            if t.weights.iter().chain(&t.g_sq).any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidTenant {
                    tenant: i,
                    reason: "negative weight or gradient bound".into(),
                });
            }
        }
        for (j, d) in self.devices.iter().enumerate() {
            if d.costs.len() != m || d.costs.iter().any(|c| !(*c > 0.0)) || !(d.exponent >= 1.0) {
                return Err(Error::InvalidDevice {
                    device: j,
                    reason: format!("need {m} positive costs and exponent >= 1"),
                });
            }
        }
        Ok(())
    }

    pub fn device_levels(&self, prices: &PricingProfile, device: usize) -> Vec<f64> {
        let d = &self.devices[device];
        device_best_response(&prices.column(device), &d.costs, d.exponent)
    }

    /// Every device's best response to the price profile.
    pub fn responses(&self, prices: &PricingProfile) -> ParticipationProfile {
        let mut levels = vec![vec![0.0; self.num_devices()]; self.num_tenants()];
        for j in 0..self.num_devices() {
            for (i, q) in self.device_levels(prices, j).into_iter().enumerate() {
                levels[i][j] = q;
            }
        }
        ParticipationProfile { levels }
    }

    pub fn disutility(&self, tenant: usize, q: &ParticipationProfile) -> BoundValue {
        let t = &self.tenants[tenant];
        disutility(t.alpha, t.cycles, &t.weights, &t.g_sq, &q.levels[tenant])
            .expect("validated game and best-response levels")
    }

    pub fn disutilities(&self, q: &ParticipationProfile) -> Vec<BoundValue> {
        (0..self.num_tenants()).map(|i| self.disutility(i, q)).collect()
    }
}
