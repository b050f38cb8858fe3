//! Random scenarios drawn from the configured parameter ranges.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Config, GameConfig, SimulationSection, Tolerances, WorkloadKind};
use crate::baselines::{fedpeft_plan, PolicyKind};
use crate::convergence_bound::{
    estimate_gradient_stats, exact_quadratic_stats, BoundParams, LrSchedule,
};
use crate::error::{Error, Result};
use crate::game_engine::{Game, GameDevice, GameTenant};
use crate::rng;
use crate::sfl_engine::{
    data_weights, run_simulation, Activation, Matrix, MlpWorkload, ModelLayout, Participant,
    QuadraticWorkload, SimulationConfig, Workload,
};
use crate::system_model::{
    cycles_within_deadline, eligible_devices, cycle_time, DeviceSpec, LayerProfile, SplitPlan,
    TenantSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub policy: PolicyKind,
    pub workload_kind: WorkloadKind,
    pub tenants: Vec<TenantSpec>,
    pub devices: Vec<DeviceSpec>,
    /// `workloads[i][j]`: device `j`'s local objective for tenant `i`.
    pub workloads: Vec<Vec<Workload>>,
    /// Starting global model of each tenant.
    pub initial: Vec<Vec<f64>>,
    pub game: GameConfig,
    pub simulation: SimulationSection,
    pub tolerances: Tolerances,
}

fn uniform(r: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        r.random_range(range[0]..range[1])
    }
}

/// Sizes proportional to `rank^-exponent` over a random rank order, scaled to
/// `total` and rounded, at least one sample each.
pub fn power_law_sizes(r: &mut ChaCha8Rng, n: usize, total: f64, exponent: f64) -> Vec<f64> {
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(r);
    let norm: f64 = (1..=n).map(|k| (k as f64).powf(-exponent)).sum();
    ranks
        .iter()
        .map(|&k| (total * (k as f64).powf(-exponent) / norm).round().max(1.0))
        .collect()
}

fn layer_profiles(r: &mut ChaCha8Rng, cfg: &super::config::ScenarioConfig) -> Vec<LayerProfile> {
    let h = cfg.layers;
    (1..=h)
        .map(|n| {
            let fwd = uniform(r, cfg.layer_gflops) * 1e9;
            let act = cfg.activation_mbit * 1e6 * (h - n + 1) as f64 / h as f64;
            LayerProfile {
                forward_flops: fwd,
                backward_flops: 2.0 * fwd,
                activation_bits: act,
                gradient_bits: act,
                param_bits: cfg.layer_param_mbit * 1e6,
            }
        })
        .collect()
}

fn mlp_params(r: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Vec<f64> {
    let n: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw a complete scenario. The same `(config, seed)` always yields the same
/// scenario.
pub fn generate_scenario(config: &Config, seed: u64) -> Result<Scenario> {
    config.validate("<config>")?;
    let cfg = &config.scenario;
    let m = cfg.tenants;
    let n = cfg.devices;

    let mut dr = rng::stream(seed, 1);
    let mut devices: Vec<DeviceSpec> = (0..n)
        .map(|j| {
            let compute = uniform(&mut dr, cfg.compute_gflops) * 1e9;
            let downlink = uniform(&mut dr, cfg.downlink_mbps) * 1e6;
            let uplink = uniform(&mut dr, cfg.uplink_mbps) * 1e6;
            let watts = uniform(&mut dr, cfg.watts);
            DeviceSpec {
                id: j,
                compute,
                uplink,
                downlink,
                data_sizes: vec![0.0; m],
                cost_coeff: vec![watts * cfg.cost_per_watt; m],
                cost_exponent: cfg.cost_exponent,
            }
        })
        .collect();

    let mut tenants = Vec::with_capacity(m);
    let mut workloads = Vec::with_capacity(m);
    let mut initial = Vec::with_capacity(m);
    for i in 0..m {
        let mut r = rng::stream(seed, 100 + i as u64);
        let layers = layer_profiles(&mut r, cfg);
        let cost_scale = uniform(&mut r, cfg.tenant_cost_scale);
        let budget = uniform(&mut r, cfg.budget_per_device) * n as f64;
        let target_cycles = r.random_range(cfg.target_cycles[0]..=cfg.target_cycles[1]);
        let sizes = power_law_sizes(&mut r, n, cfg.samples_per_device * n as f64, cfg.power_law_exponent);
        for (d, &size) in devices.iter_mut().zip(&sizes) {
            d.data_sizes[i] = size;
            d.cost_coeff[i] *= cost_scale;
        }

        let (tenant_workloads, init, smoothness, strong_convexity) = match cfg.workload {
            WorkloadKind::Quadratic => {
                let dim = cfg.params_per_layer * cfg.layers;
                let layout = ModelLayout::even(dim, cfg.layers)?;
                let centre: Vec<f64> = (0..dim)
                    .map(|_| r.random_range(-cfg.centre_range..=cfg.centre_range))
                    .collect();
                let mut ws = Vec::with_capacity(n);
                for &size in &sizes {
                    let target = centre
                        .iter()
                        .map(|c| c + cfg.target_spread * r.sample::<f64, _>(StandardNormal))
                        .collect();
                    let curvature = (0..dim).map(|_| uniform(&mut r, cfg.curvature)).collect();
                    ws.push(QuadraticWorkload::new(target, curvature, size, layout.clone())?);
                }
                let a = data_weights(&sizes)?;
                let init = vec![0.0; dim];
                let stats = exact_quadratic_stats(&ws, &a, &init, None)?;
                (
                    ws.into_iter().map(Workload::Quadratic).collect::<Vec<_>>(),
                    init,
                    stats.smoothness,
                    stats.strong_convexity,
                )
            }
            WorkloadKind::SplitMlp => {
                let mut dims = vec![cfg.mlp_input];
                dims.extend(std::iter::repeat_n(cfg.mlp_hidden, cfg.layers - 1));
                dims.push(cfg.mlp_output);
                let teacher = mlp_params(&mut r, &dims, 0.5);
                let mut ws = Vec::with_capacity(n);
                for &size in &sizes {
                    let rows = size as usize;
                    let inputs: Vec<Vec<f64>> = (0..rows)
                        .map(|_| (0..cfg.mlp_input).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
                        .collect();
                    let inputs = Matrix::from_rows(&inputs)?;
                    let placeholder = Matrix::zeros(rows, cfg.mlp_output);
                    let probe = MlpWorkload::new(dims.clone(), Activation::Tanh, inputs.clone(), placeholder)?;
                    let out = probe.forward(&teacher, 1, probe.num_layers(), &inputs)?.output;
                    let mut labels = out.clone();
                    labels
                        .data
                        .iter_mut()
                        .for_each(|y| *y += 0.1 * r.sample::<f64, _>(StandardNormal));
                    ws.push(Workload::SplitMlp(MlpWorkload::new(
                        dims.clone(),
                        Activation::Tanh,
                        inputs,
                        labels,
                    )?));
                }
                let init = mlp_params(&mut r, &dims, 0.3);
                (ws, init, cfg.mlp_smoothness, cfg.mlp_strong_convexity)
            }
        };

        let mut tenant = TenantSpec {
            id: i,
            layers,
            budget,
            deadline: 1.0,
            server_capacity: cfg.server_tflops * 1e12 / m as f64,
            sync_interval: cfg.sync_interval,
            agg_time: cfg.agg_time,
            smoothness,
            strong_convexity,
        };
        let mut probe = tenant.clone();
        probe.id = 0;
        let view = devices_for(&devices, i);
        let plan = SplitPlan::optimal(std::slice::from_ref(&probe), &view);
        let t = cycle_time(&probe, &eligible_devices(&probe, &view), &plan)?;
        tenant.deadline = (target_cycles as f64 + 0.5) * t;
        tenant.validate()?;
        tenants.push(tenant);
        workloads.push(tenant_workloads);
        initial.push(init);
    }
    for d in &devices {
        d.validate(m)?;
    }
    Ok(Scenario {
        seed,
        policy: config.policy,
        workload_kind: cfg.workload,
        tenants,
        devices,
        workloads,
        initial,
        game: config.game.clone(),
        simulation: config.simulation.clone(),
        tolerances: config.tolerances.clone(),
    })
}

/// Device views where tenant `i` appears as tenant 0, for single-tenant
/// planning before all tenants exist.
fn devices_for(devices: &[DeviceSpec], i: usize) -> Vec<DeviceSpec> {
    devices
        .iter()
        .map(|d| DeviceSpec {
            data_sizes: vec![d.data_sizes[i]],
            cost_coeff: vec![d.cost_coeff[i]],
            ..d.clone()
        })
        .collect()
}

impl Scenario {
    pub fn num_tenants(&self) -> usize {
        self.tenants.len()
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// SHA-256 of the JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn weights(&self, tenant: usize) -> Result<Vec<f64>> {
        data_weights(
            &self
                .devices
                .iter()
                .map(|d| d.data_for(tenant))
                .collect::<Vec<_>>(),
        )
    }

    pub fn split_plan(&self, policy: PolicyKind) -> SplitPlan {
        match policy {
            PolicyKind::Fedpeft => fedpeft_plan(&self.tenants, &self.devices),
            _ => SplitPlan::optimal(&self.tenants, &self.devices),
        }
    }

    pub fn cycles(&self, plan: &SplitPlan) -> Result<Vec<usize>> {
        self.tenants
            .iter()
            .map(|t| cycles_within_deadline(t, &self.devices, plan))
            .collect()
    }

    pub fn schedule(&self, tenant: usize) -> LrSchedule {
        let t = &self.tenants[tenant];
        LrSchedule::new(t.smoothness, t.strong_convexity, t.sync_interval, self.simulation.schedule)
    }

    /// Bound constants of one tenant plus its optimum where it is known:
    /// exact for quadratic devices, estimated from a warm-up run otherwise.
    pub fn bound_params(&self, tenant: usize) -> Result<(BoundParams, Option<Vec<f64>>)> {
        let a = self.weights(tenant)?;
        let t = &self.tenants[tenant];
        match self.workload_kind {
            WorkloadKind::Quadratic => {
                let qs: Vec<QuadraticWorkload> = self.workloads[tenant]
                    .iter()
                    .map(|w| match w {
                        Workload::Quadratic(q) => Ok(q.clone()),
                        Workload::SplitMlp(_) => Err(Error::InvalidScenario(
                            "mixed workload kinds".into(),
                        )),
                    })
                    .collect::<Result<_>>()?;
                let stats = exact_quadratic_stats(&qs, &a, &self.initial[tenant], None)?;
                Ok((stats.bound_params(&a, t.sync_interval), Some(stats.optimum)))
            }
            WorkloadKind::SplitMlp => {
                let n = self.num_devices();
                let w = self.simulation.warmup_rounds;
                let participants: Vec<Participant> = self.workloads[tenant]
                    .iter()
                    .map(|w| Participant {
                        workload: w.clone(),
                        cut: 1,
                    })
                    .collect();
                let cfg = SimulationConfig {
                    cycles: w.div_ceil(t.sync_interval),
                    seed: rng::derive_seed(self.seed, 500 + tenant as u64),
                    sync_interval: t.sync_interval,
                    schedule: self.schedule(tenant),
                    initial: self.initial[tenant].clone(),
                    reference_optimum: None,
                    record_gradients: true,
                    parallel: self.simulation.parallel,
                };
                let run = run_simulation(&participants, &a, &vec![1.0; n], &cfg)?;
                let obs: Vec<_> = run.traces.iter().flat_map(|c| c.gradients.iter().copied()).collect();
                let (g_sq, sigma_sq) = estimate_gradient_stats(&obs, n, w, self.simulation.safety_factor)?;
                Ok((
                    BoundParams {
                        smoothness: t.smoothness,
                        strong_convexity: t.strong_convexity,
                        sync_interval: t.sync_interval,
                        g_sq,
                        sigma_sq,
                        weights: a,
                        init_dist_sq: 0.0,
                        f_star: 0.0,
                        f_min: vec![0.0; n],
                        steps_per_sample: 1.0,
                    },
                    None,
                ))
            }
        }
    }

    /// The pricing game under the given cycle counts and bound constants.
    pub fn game(&self, cycles: &[usize], params: &[BoundParams]) -> Game {
        Game {
            tenants: self
                .tenants
                .iter()
                .zip(cycles)
                .zip(params)
                .map(|((t, &k), p)| GameTenant {
                    budget: t.budget,
                    alpha: p.terms().alpha,
                    cycles: k,
                    weights: p.weights.clone(),
                    g_sq: p.g_sq.clone(),
                })
                .collect(),
            devices: self
                .devices
                .iter()
                .map(|d| GameDevice {
                    costs: d.cost_coeff.clone(),
                    exponent: d.cost_exponent,
                })
                .collect(),
            q_floor: self.game.q_floor,
        }
    }
}
