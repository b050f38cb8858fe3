//! Experiment configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::PolicyKind;
use crate::convergence_bound::ScheduleRule;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    #[default]
    Quadratic,
    SplitMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub tenants: usize,
    pub devices: usize,
    /// Layers per model.
    pub layers: usize,
    pub sync_interval: usize,
    pub workload: WorkloadKind,
    /// Device compute, GFLOPs/s.
    pub compute_gflops: [f64; 2],
    pub downlink_mbps: [f64; 2],
    pub uplink_mbps: [f64; 2],
    /// Device power draw, W; mapped linearly to cost coefficients.
    pub watts: [f64; 2],
    pub cost_per_watt: f64,
    /// Per-tenant multiplier on the cost coefficient.
    pub tenant_cost_scale: [f64; 2],
    pub cost_exponent: f64,
    /// Edge server capacity shared evenly by the tenants, TFLOPs/s.
    pub server_tflops: f64,
    /// Mean samples per device; sizes follow `rank^-power_law_exponent`.
    pub samples_per_device: f64,
    pub power_law_exponent: f64,
    /// Forward cost per sample per layer, GFLOPs; scaled per tenant.
    pub layer_gflops: [f64; 2],
    /// Activation size per sample at the first layer, Mbit.
    pub activation_mbit: f64,
    pub layer_param_mbit: f64,
    pub agg_time: f64,
    /// Budget per device; a tenant's budget is this times the device count.
    pub budget_per_device: [f64; 2],
    /// Deadlines are set to fit this many cycles under the time-optimal split.
    pub target_cycles: [usize; 2],
    /// Quadratic: parameters per layer.
    pub params_per_layer: usize,
    pub curvature: [f64; 2],
    /// Spread of device targets around the tenant's centre.
    pub target_spread: f64,
    /// Range of each tenant centre coordinate.
    pub centre_range: f64,
    /// Split MLP: input, hidden and output widths.
    pub mlp_input: usize,
    pub mlp_hidden: usize,
    pub mlp_output: usize,
    /// Nominal constants for the MLP workload, where they are not computable.
    pub mlp_smoothness: f64,
    pub mlp_strong_convexity: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tenants: 4,
            devices: 100,
            layers: 6,
            sync_interval: 2,
            workload: WorkloadKind::Quadratic,
            compute_gflops: [1567.0, 3100.0],
            downlink_mbps: [50.0, 250.0],
            uplink_mbps: [17.0, 83.0],
            watts: [20.0, 40.0],
            cost_per_watt: 0.01,
            tenant_cost_scale: [0.5, 1.5],
            cost_exponent: 2.0,
            server_tflops: 330.32,
            samples_per_device: 40.0,
            power_law_exponent: 1.2,
            layer_gflops: [2.0, 6.0],
            activation_mbit: 8.0,
            layer_param_mbit: 64.0,
            agg_time: 0.0,
            budget_per_device: [0.1, 0.3],
            target_cycles: [50, 150],
            params_per_layer: 2,
            curvature: [0.5, 2.0],
            target_spread: 1.0,
            centre_range: 2.0,
            mlp_input: 4,
            mlp_hidden: 6,
            mlp_output: 2,
            mlp_smoothness: 4.0,
            mlp_strong_convexity: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub q_floor: f64,
    pub eps_improve: f64,
    pub max_iterations: usize,
    pub fallback_starts: usize,
    pub backtrack_steps: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            q_floor: 1e-3,
            eps_improve: 1e-6,
            max_iterations: 10_000,
            fallback_starts: 64,
            backtrack_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub schedule: ScheduleRule,
    /// Loss target as a multiple of the optimal global loss.
    pub target_factor: f64,
    /// Warm-up rounds for gradient estimates on the MLP workload.
    pub warmup_rounds: usize,
    pub safety_factor: f64,
    pub parallel: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            schedule: ScheduleRule::Standard,
            target_factor: 1.05,
            warmup_rounds: 20,
            safety_factor: 1.2,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub unbiasedness: f64,
    pub kkt: f64,
    pub equilibrium_probes: usize,
    pub monte_carlo_seeds: usize,
    pub variance_draws: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            unbiasedness: 1e-12,
            kkt: 1e-8,
            equilibrium_probes: 1000,
            monte_carlo_seeds: 100,
            variance_draws: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub tenants: Vec<usize>,
    pub devices: Vec<usize>,
    pub policies: Vec<PolicyKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tenants: vec![2, 4],
            devices: vec![20, 50, 100],
            policies: vec![PolicyKind::Prince, PolicyKind::Fair, PolicyKind::Msda, PolicyKind::Fedpeft],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            policy: PolicyKind::Prince,
            scenario: ScenarioConfig::default(),
            game: GameConfig::default(),
            simulation: SimulationSection::default(),
            tolerances: Tolerances::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            message: e.message().to_string()
                + &e
                    .span()
                    .map(|s| format!(" (at byte {})", s.start))
                    .unwrap_or_default(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let fail = |field: &str, msg: &str| {
            Err(Error::Config {
                path: origin.to_string(),
                message: format!("{field}: {msg}"),
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                "schema_version",
                &format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        let s = &self.scenario;
        if s.tenants == 0 {
            return fail("scenario.tenants", "must be at least 1");
        }
        if s.devices == 0 {
            return fail("scenario.devices", "must be at least 1");
        }
        if s.layers < 2 {
            return fail("scenario.layers", "must be at least 2");
        }
        if s.sync_interval == 0 {
            return fail("scenario.sync_interval", "must be at least 1");
        }
        for (name, r, positive) in [
            ("scenario.compute_gflops", s.compute_gflops, true),
            ("scenario.downlink_mbps", s.downlink_mbps, true),
            ("scenario.uplink_mbps", s.uplink_mbps, true),
            ("scenario.watts", s.watts, true),
            ("scenario.tenant_cost_scale", s.tenant_cost_scale, true),
            ("scenario.layer_gflops", s.layer_gflops, false),
            ("scenario.budget_per_device", s.budget_per_device, true),
            ("scenario.curvature", s.curvature, true),
        ] {
            if !range_ok(r) || (positive && !(r[0] > 0.0)) {
                return fail(name, "need a finite [low, high] range with low <= high (and low > 0)");
            }
        }
        if s.target_cycles[0] == 0 || s.target_cycles[0] > s.target_cycles[1] {
            return fail("scenario.target_cycles", "need 1 <= low <= high");
        }
        if !(s.cost_per_watt > 0.0) {
            return fail("scenario.cost_per_watt", "must be positive");
        }
        if !(s.cost_exponent >= 1.0) {
            return fail("scenario.cost_exponent", "must be at least 1");
        }
        if !(s.server_tflops > 0.0) {
            return fail("scenario.server_tflops", "must be positive");
        }
        if !(s.samples_per_device >= 1.0) {
            return fail("scenario.samples_per_device", "must be at least 1");
        }
        if !(s.power_law_exponent >= 0.0) {
            return fail("scenario.power_law_exponent", "must be nonnegative");
        }
        if s.params_per_layer == 0 || s.mlp_input == 0 || s.mlp_hidden == 0 || s.mlp_output == 0 {
            return fail("scenario", "layer widths must be positive");
        }
        if !(s.mlp_strong_convexity > 0.0 && s.mlp_strong_convexity <= s.mlp_smoothness) {
            return fail("scenario.mlp_strong_convexity", "need 0 < value <= mlp_smoothness");
        }
        let g = &self.game;
        if !(g.q_floor > 0.0 && g.q_floor < 1.0) {
            return fail("game.q_floor", "must lie in (0, 1)");
        }
        if !(g.eps_improve > 0.0) {
            return fail("game.eps_improve", "must be positive");
        }
        if !(self.simulation.target_factor >= 1.0) {
            return fail("simulation.target_factor", "must be at least 1");
        }
        if self.simulation.warmup_rounds == 0 {
            return fail("simulation.warmup_rounds", "must be at least 1");
        }
        Ok(())
    }
}
