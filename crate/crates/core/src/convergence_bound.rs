//! Learning-rate schedule, the optimality-gap bound and the constants it is
//! built from.

use std::cmp::Ordering;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sfl_engine::workload::{norm_sq, QuadraticWorkload};
use crate::sfl_engine::GradientObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleRule {
    /// `kappa = max(8L, mu * I)`.
    #[default]
    Standard,
    /// `kappa = max(8L, mu, I)`.
    LiteralMax,
}

/// `gamma_k = 2 / (kappa + mu * k)` for cycle `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub sync_interval: usize,
    pub rule: ScheduleRule,
}

impl LrSchedule {
    pub fn new(smoothness: f64, strong_convexity: f64, sync_interval: usize, rule: ScheduleRule) -> Self {
        Self {
            smoothness,
            strong_convexity,
            sync_interval,
            rule,
        }
    }

    pub fn kappa(&self) -> f64 {
        let l8 = 8.0 * self.smoothness;
        let i = self.sync_interval as f64;
        match self.rule {
            ScheduleRule::Standard => l8.max(self.strong_convexity * i),
            ScheduleRule::LiteralMax => l8.max(self.strong_convexity).max(i),
        }
    }

    pub fn gamma(&self, k: usize) -> f64 {
        2.0 / (self.kappa() + self.strong_convexity * k as f64)
    }
}

/// A bound or disutility value that may be unbounded.
///
/// `unbounded` counts the terms that diverged (a data-holding device with
/// zero participation); `finite` sums the rest. Ordering is lexicographic, so
/// removing a divergent term is always an improvement and the order is total.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BoundValue {
    pub unbounded: usize,
    pub finite: f64,
}

impl BoundValue {
    pub fn finite(v: f64) -> Self {
        Self {
            unbounded: 0,
            finite: v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.unbounded == 0
    }

    /// The value as a float, `+inf` when unbounded.
    pub fn value(&self) -> f64 {
        if self.is_finite() {
            self.finite
        } else {
            f64::INFINITY
        }
    }

    /// `self` is below `other` by more than `eps`.
    pub fn improves_on(&self, other: &Self, eps: f64) -> bool {
        match self.unbounded.cmp(&other.unbounded) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => other.finite - self.finite > eps,
        }
    }

    pub fn scale(self, s: f64) -> Self {
        Self {
            unbounded: self.unbounded,
            finite: self.finite * s,
        }
    }
}

impl Add for BoundValue {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            unbounded: self.unbounded + rhs.unbounded,
            finite: self.finite + rhs.finite,
        }
    }
}

impl std::iter::Sum for BoundValue {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl PartialEq for BoundValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for BoundValue {}

impl PartialOrd for BoundValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BoundValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.unbounded
            .cmp(&other.unbounded)
            .then(self.finite.total_cmp(&other.finite))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub sync_interval: usize,
    pub g_sq: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub weights: Vec<f64>,
    pub init_dist_sq: f64,
    /// Global loss at the full-participation optimum.
    pub f_star: f64,
    /// Minimum of each device's local loss.
    pub f_min: Vec<f64>,
    /// Local steps per sample; enters only the per-cycle variance bound.
    pub steps_per_sample: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= self.smoothness) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                self.strong_convexity, self.smoothness
            )));
        }
        if self.sync_interval == 0 {
            return Err(Error::InvalidArgument("sync interval must be at least 1".into()));
        }
        if self.g_sq.len() != n || self.sigma_sq.len() != n || self.f_min.len() != n {
            return Err(Error::InvalidArgument("per-device vectors differ in length".into()));
        }
        if self
            .g_sq
            .iter()
            .chain(&self.sigma_sq)
            .chain(&self.weights)
            .any(|v| !(*v >= 0.0))
            || !(self.init_dist_sq >= 0.0)
        {
            return Err(Error::InvalidArgument("negative magnitude in bound parameters".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {s}, not 1")));
        }
        Ok(())
    }

    pub fn schedule(&self, rule: ScheduleRule) -> LrSchedule {
        LrSchedule::new(self.smoothness, self.strong_convexity, self.sync_interval, rule)
    }

    pub fn terms(&self) -> BoundTerms {
        bound_terms(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub alpha: f64,
    pub beta: f64,
    pub a0: f64,
    pub a1: f64,
}

pub fn bound_terms(p: &BoundParams) -> BoundTerms {
    let l = p.smoothness;
    let mu = p.strong_convexity;
    let i = p.sync_interval as f64;
    let alpha = 8.0 * l * i / (mu * mu);
    let a0 = p
        .weights
        .iter()
        .zip(&p.sigma_sq)
        .map(|(a, s)| a * a * s)
        .sum::<f64>()
        + 8.0
            * p.weights
                .iter()
                .zip(&p.g_sq)
                .map(|(a, g)| a * g)
                .sum::<f64>()
            * (i - 1.0)
            * (i - 1.0);
    let a1 = p.f_star - p.weights.iter().zip(&p.f_min).map(|(a, f)| a * f).sum::<f64>();
    let beta = 2.0 * l / (mu * mu) * a0
        + 12.0 * l * l / (mu * mu * i) * a1
        + 4.0 * l * l / (mu * i) * p.init_dist_sq;
    BoundTerms { alpha, beta, a0, a1 }
}

/// `sum_j (1 - q_j) a_j^2 G_j^2 / q_j`, unbounded for each device with
/// `q_j = 0` and `a_j G_j > 0`.
pub fn participation_penalty(weights: &[f64], g_sq: &[f64], q: &[f64]) -> Result<BoundValue> {
    if weights.len() != q.len() || g_sq.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights, {} gradient bounds and {} participation levels",
            weights.len(),
            g_sq.len(),
            q.len()
        )));
    }
    let mut out = BoundValue::default();
    for ((&a, &g), &qj) in weights.iter().zip(g_sq).zip(q) {
        if !(0.0..=1.0).contains(&qj) {
            return Err(Error::InvalidArgument(format!(
                "participation level {qj} outside [0, 1]"
            )));
        }
        let c = a * a * g;
        if c == 0.0 {
            continue;
        }
        if qj == 0.0 {
            out.unbounded += 1;
        } else {
            out.finite += (1.0 - qj) * c / qj;
        }
    }
    Ok(out)
}

/// `(1/K) (alpha * penalty(q) + beta)`.
pub fn optimality_gap_bound(p: &BoundParams, q: &[f64], cycles: usize) -> Result<BoundValue> {
    if cycles == 0 {
        return Err(Error::InvalidArgument("need at least one cycle".into()));
    }
    let t = bound_terms(p);
    let pen = participation_penalty(&p.weights, &p.g_sq, q)?;
    Ok(BoundValue {
        unbounded: pen.unbounded,
        finite: (t.alpha * pen.finite + t.beta) / cycles as f64,
    })
}

/// The participation-dependent part of the bound, `(alpha/K) penalty(q)`,
/// which is all a tenant's pricing can influence.
pub fn disutility(alpha: f64, cycles: usize, weights: &[f64], g_sq: &[f64], q: &[f64]) -> Result<BoundValue> {
    if cycles == 0 {
        return Err(Error::InvalidArgument("need at least one cycle".into()));
    }
    Ok(participation_penalty(weights, g_sq, q)?.scale(alpha / cycles as f64))
}

/// `4 gamma^2 E^2 sum_j (1 - q_j) a_j^2 G_j^2 / q_j`, the bound on the
/// expected squared deviation of one aggregation from full participation.
pub fn aggregation_variance_bound(
    gamma: f64,
    steps: f64,
    weights: &[f64],
    g_sq: &[f64],
    q: &[f64],
) -> Result<BoundValue> {
    Ok(participation_penalty(weights, g_sq, q)?.scale(4.0 * gamma * gamma * steps * steps))
}

/// Closed-form constants for a set of quadratic devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticStats {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub optimum: Vec<f64>,
    pub f_star: f64,
    pub f_min: Vec<f64>,
    pub g_sq: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub init_dist_sq: f64,
    /// Radius around the optimum over which `g_sq` bounds the gradients.
    pub trust_radius: f64,
}

impl QuadraticStats {
    pub fn bound_params(&self, weights: &[f64], sync_interval: usize) -> BoundParams {
        BoundParams {
            smoothness: self.smoothness,
            strong_convexity: self.strong_convexity,
            sync_interval,
            g_sq: self.g_sq.clone(),
            sigma_sq: self.sigma_sq.clone(),
            weights: weights.to_vec(),
            init_dist_sq: self.init_dist_sq,
            f_star: self.f_star,
            f_min: self.f_min.clone(),
            steps_per_sample: 1.0,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact smoothness, strong convexity, optimum and gradient bounds.
///
/// The gradient bound of device `j` is the supremum of its gradient norm over
/// the ball of radius `trust_radius` around the weighted optimum. Without an
/// explicit radius, twice the largest of the initial distance and the
/// distances to each local target is used.
pub fn exact_quadratic_stats(
    workloads: &[QuadraticWorkload],
    weights: &[f64],
    initial: &[f64],
    trust_radius: Option<f64>,
) -> Result<QuadraticStats> {
    let first = workloads
        .first()
        .ok_or_else(|| Error::InvalidWorkload("no devices".into()))?;
    let d = first.target.len();
    if weights.len() != workloads.len() {
        return Err(Error::InvalidArgument("one weight per device required".into()));
    }
    if initial.len() != d || workloads.iter().any(|w| w.target.len() != d) {
        return Err(Error::InvalidWorkload("devices disagree on the model size".into()));
    }
    for w in workloads {
        if w.curvature.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidWorkload("curvature must be positive definite".into()));
        }
    }
    let smoothness = workloads
        .iter()
        .flat_map(|w| w.curvature.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let strong_convexity = workloads
        .iter()
        .flat_map(|w| w.curvature.iter().copied())
        .fold(f64::INFINITY, f64::min);

    let mut optimum = vec![0.0; d];
    for k in 0..d {
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, &a) in workloads.iter().zip(weights) {
            num += a * w.curvature[k] * w.target[k];
            den += a * w.curvature[k];
        }
        if !(den > 0.0) {
            return Err(Error::InvalidArgument("weights must have positive mass".into()));
        }
        optimum[k] = num / den;
    }
    let f_star = workloads
        .iter()
        .zip(weights)
        .map(|(w, a)| a * w.loss(&optimum))
        .sum();
    let init_dist_sq = {
        let diff: Vec<f64> = initial.iter().zip(&optimum).map(|(x, y)| x - y).collect();
        norm_sq(&diff)
    };
    let spread = workloads
        .iter()
        .map(|w| dist(&w.target, &optimum))
        .fold(0.0, f64::max);
    let radius = trust_radius.unwrap_or(2.0 * (init_dist_sq.sqrt() + spread));
    let g_sq = workloads
        .iter()
        .map(|w| {
            let h = w.curvature.iter().copied().fold(0.0, f64::max);
            let r = radius + dist(&w.target, &optimum);
            h * h * r * r
        })
        .collect();
    Ok(QuadraticStats {
        smoothness,
        strong_convexity,
        optimum,
        f_star,
        f_min: vec![0.0; workloads.len()],
        g_sq,
        sigma_sq: vec![0.0; workloads.len()],
        init_dist_sq,
        trust_radius: radius,
    })
}

pub const DEFAULT_WARMUP_ROUNDS: usize = 20;
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.2;

/// Per-device `(G^2, sigma^2)` from recorded warm-up rounds: the largest
/// observed squared gradient norm times `safety`, and the largest observed
/// per-sample gradient variance.
pub fn estimate_gradient_stats(
    observations: &[GradientObservation],
    devices: usize,
    warmup: usize,
    safety: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut count = vec![0usize; devices];
    let mut g_sq = vec![0.0f64; devices];
    let mut sigma_sq = vec![0.0f64; devices];
    for o in observations {
        if o.device >= devices {
            return Err(Error::InvalidDevice {
                device: o.device,
                reason: format!("only {devices} devices"),
            });
        }
        count[o.device] += 1;
        g_sq[o.device] = g_sq[o.device].max(o.grad_norm_sq);
        sigma_sq[o.device] = sigma_sq[o.device].max(o.sample_variance);
    }
    if let Some((device, &have)) = count.iter().enumerate().find(|(_, c)| **c < warmup) {
        return Err(Error::InsufficientData {
            device,
            needed: warmup,
            have,
        });
    }
    g_sq.iter_mut().for_each(|g| *g *= safety);
    Ok((g_sq, sigma_sq))
}
