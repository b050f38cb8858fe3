use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_bias_resilient, global_loss};
use super::channel::link;
use super::model::{assemble_device_model, ModelState};
use super::protocol::train_round;
use super::workload::{norm_sq, Workload};
use crate::convergence_bound::LrSchedule;
use crate::error::{Error, Result};
use crate::rng;

/// Independent Bernoulli draw per device; returns the included indices in
/// ascending order.
pub fn draw_participation_with(q: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    q.iter()
        .enumerate()
        .filter_map(|(j, &qj)| {
            let u: f64 = rng.random();
            (u < qj).then_some(j)
        })
        .collect()
}

pub fn draw_participation(q: &[f64], seed: u64) -> Vec<usize> {
    draw_participation_with(q, &mut rng::stream(seed, 0))
}

/// A device as seen by one tenant's training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub workload: Workload,
    pub cut: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub cycles: usize,
    pub seed: u64,
    pub sync_interval: usize,
    pub schedule: LrSchedule,
    pub initial: Vec<f64>,
    /// Point the per-cycle squared distance is measured against.
    pub reference_optimum: Option<Vec<f64>>,
    /// Record gradient statistics before every local round.
    pub record_gradients: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientObservation {
    pub device: usize,
    pub grad_norm_sq: f64,
    pub sample_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub cycle: usize,
    pub participants: Vec<usize>,
    /// Global loss after this cycle's aggregation.
    pub loss: f64,
    pub gamma: f64,
    pub dist_sq: Option<f64>,
    #[serde(skip)]
    pub gradients: Vec<GradientObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub initial_loss: f64,
    pub traces: Vec<CycleTrace>,
    pub final_params: Vec<f64>,
}

impl SimulationResult {
    /// First cycle whose loss is at or below `target`.
    pub fn cycles_to_loss(&self, target: f64) -> Option<usize> {
        if self.initial_loss <= target {
            return Some(0);
        }
        self.traces.iter().find(|t| t.loss <= target).map(|t| t.cycle)
    }

    pub fn final_loss(&self) -> f64 {
        self.traces.last().map_or(self.initial_loss, |t| t.loss)
    }
}

fn local_training(
    device: &Participant,
    id: usize,
    global: &[f64],
    rounds: usize,
    gamma: f64,
    record: bool,
) -> Result<(ModelState, Vec<GradientObservation>)> {
    let layout = device.workload.layout();
    let start = ModelState::new(global.to_vec(), layout, device.cut)?;
    let (mut dev, mut srv) = start.split();
    let (mut de, mut se) = link();
    let mut obs = Vec::new();
    for round in 1..=rounds {
        if record {
            let params = [dev.params.as_slice(), srv.params.as_slice()].concat();
            let (g, v) = device.workload.gradient_statistics(&params)?;
            obs.push(GradientObservation {
                device: id,
                grad_norm_sq: g,
                sample_variance: v,
            });
        }
        let (d, s, _) = train_round(&device.workload, &dev, &srv, id, round, gamma, &mut de, &mut se)?;
        dev = d;
        srv = s;
    }
    Ok((assemble_device_model(&dev, &srv, layout)?, obs))
}

/// Bias-resilient split training: each cycle draws participants, runs
/// `sync_interval` split rounds on every participant starting from the
/// current global model, and aggregates with `a_j / q_j` reweighting.
pub fn run_simulation(
    devices: &[Participant],
    a: &[f64],
    q: &[f64],
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    if devices.is_empty() || devices.len() != a.len() || devices.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "{} devices, {} weights and {} participation levels",
            devices.len(),
            a.len(),
            q.len()
        )));
    }
    if config.cycles == 0 || config.sync_interval == 0 {
        return Err(Error::InvalidArgument(
            "cycles and sync interval must be at least 1".into(),
        ));
    }
    for (j, (&qj, &aj)) in q.iter().zip(a).enumerate() {
        if !(0.0..=1.0).contains(&qj) {
            return Err(Error::InvalidArgument(format!(
                "participation level {qj} of device {j} outside [0, 1]"
            )));
        }
        if aj > 0.0 && qj == 0.0 {
            return Err(Error::DivisionGuard { device: j, q: qj });
        }
    }
    let layout = devices[0].workload.layout().clone();
    if devices.iter().any(|d| d.workload.layout() != &layout) {
        return Err(Error::InvalidArgument("devices disagree on the model layout".into()));
    }
    let workloads: Vec<Workload> = devices.iter().map(|d| d.workload.clone()).collect();

    let mut global = ModelState::new(config.initial.clone(), &layout, layout.num_layers())?;
    let initial_loss = global_loss(&global.params, &workloads, a)?;
    let mut draws = rng::stream(config.seed, 1);
    let mut traces = Vec::with_capacity(config.cycles);

    for k in 1..=config.cycles {
        let gamma = config.schedule.gamma(k);
        let participants = draw_participation_with(q, &mut draws);
        let active: Vec<usize> = participants.iter().copied().filter(|&j| a[j] > 0.0).collect();
        let run = |&j: &usize| {
            local_training(
                &devices[j],
                j,
                &global.params,
                config.sync_interval,
                gamma,
                config.record_gradients,
            )
            .map(|r| (j, r))
        };
        let results: Vec<_> = if config.parallel {
            active.par_iter().map(run).collect::<Result<_>>()?
        } else {
            active.iter().map(run).collect::<Result<_>>()?
        };
        let mut updates = BTreeMap::new();
        let mut gradients = Vec::new();
        for (j, (m, obs)) in results {
            updates.insert(j, m.with_cut(layout.num_layers())?);
            gradients.extend(obs);
        }
        global = aggregate_bias_resilient(&global, &updates, q, a)?;
        if global.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericalDivergence(format!(
                "global model became non-finite in cycle {k}"
            )));
        }
        let loss = global_loss(&global.params, &workloads, a)?;
        let dist_sq = config.reference_optimum.as_ref().map(|w| {
            let d: Vec<f64> = global.params.iter().zip(w).map(|(x, y)| x - y).collect();
            norm_sq(&d)
        });
        traces.push(CycleTrace {
            cycle: k,
            participants,
            loss,
            gamma,
            dist_sq,
            gradients,
        });
    }
    Ok(SimulationResult {
        initial_loss,
        traces,
        final_params: global.params,
    })
}

pub const CYCLE_TRACE_HEADER: [&str; 5] = ["cycle", "participants_count", "loss", "gamma", "dist_sq"];

/// One CSV row per cycle; `dist_sq` is empty when no reference was given.
pub fn write_cycle_trace<W: Write>(traces: &[CycleTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CYCLE_TRACE_HEADER)?;
    for t in traces {
        w.write_record([
            t.cycle.to_string(),
            t.participants.len().to_string(),
            t.loss.to_string(),
            t.gamma.to_string(),
            t.dist_sq.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convergence_bound::{LrSchedule, ScheduleRule};
    use crate::sfl_engine::model::ModelLayout;
    use crate::sfl_engine::workload::QuadraticWorkload;

    fn quad_device(target: Vec<f64>, curvature: Vec<f64>) -> Participant {
        let layout = ModelLayout::even(target.len(), 2).unwrap();
        Participant {
            workload: Workload::Quadratic(
                QuadraticWorkload::new(target, curvature, 10.0, layout).unwrap(),
            ),
            cut: 1,
        }
    }

    fn config(cycles: usize, sync: usize, l: f64, mu: f64) -> SimulationConfig {
        SimulationConfig {
            cycles,
            seed: 5,
            sync_interval: sync,
            schedule: LrSchedule::new(l, mu, sync, ScheduleRule::Standard),
            initial: vec![0.0; 2],
            reference_optimum: None,
            record_gradients: false,
            parallel: false,
        }
    }

    #[test]
    fn certain_draws() {
        assert_eq!(draw_participation(&[1.0; 4], 3), vec![0, 1, 2, 3]);
        assert!(draw_participation(&[0.0; 4], 3).is_empty());
    }

    #[test]
    fn inclusion_frequency_matches_level() {
        let mut r = rng::stream(11, 0);
        let q = [0.3, 0.9];
        let n = 10_000;
        let mut hits = [0usize; 2];
        for _ in 0..n {
            for j in draw_participation_with(&q, &mut r) {
                hits[j] += 1;
            }
        }
        assert!((hits[0] as f64 / n as f64 - 0.3).abs() < 0.02);
        assert!((hits[1] as f64 / n as f64 - 0.9).abs() < 0.02);
    }

    #[test]
    fn single_device_follows_gradient_descent() {
        let t = vec![1.0, -2.0];
        let h = vec![2.0, 0.5];
        let dev = quad_device(t.clone(), h.clone());
        let cfg = config(30, 1, 2.0, 0.5);
        let res = run_simulation(&[dev], &[1.0], &[1.0], &cfg).unwrap();
        let mut w = [0.0, 0.0];
        for tr in &res.traces {
            let g = cfg.schedule.gamma(tr.cycle);
            for k in 0..2 {
                w[k] -= g * h[k] * (w[k] - t[k]);
            }
        }
        for (a, b) in res.final_params.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let devs = vec![
            quad_device(vec![1.0, 0.0], vec![1.0, 1.0]),
            quad_device(vec![0.0, 2.0], vec![2.0, 1.0]),
        ];
        let mut cfg = config(20, 2, 2.0, 1.0);
        let a = [0.5, 0.5];
        let q = [0.4, 0.7];
        let r1 = run_simulation(&devs, &a, &q, &cfg).unwrap();
        cfg.parallel = true;
        let r2 = run_simulation(&devs, &a, &q, &cfg).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn zero_level_for_data_holder_is_rejected() {
        let devs = vec![quad_device(vec![1.0, 0.0], vec![1.0, 1.0])];
        let cfg = config(2, 1, 1.0, 1.0);
        assert!(matches!(
            run_simulation(&devs, &[1.0], &[0.0], &cfg),
            Err(Error::DivisionGuard { .. })
        ));
    }

    #[test]
    fn trace_csv_has_documented_header() {
        let devs = vec![quad_device(vec![1.0, 0.0], vec![1.0, 1.0])];
        let mut cfg = config(3, 1, 1.0, 1.0);
        cfg.reference_optimum = Some(vec![1.0, 0.0]);
        let res = run_simulation(&devs, &[1.0], &[1.0], &cfg).unwrap();
        let mut buf = Vec::new();
        write_cycle_trace(&res.traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cycle,participants_count,loss,gamma,dist_sq"));
        assert_eq!(lines.count(), 3);
    }
}
