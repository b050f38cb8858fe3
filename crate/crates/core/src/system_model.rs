//! Tenants, devices and the split-training time model.
//!
//! All quantities use base units: FLOPs, FLOPs/s, bits, bits/s and seconds.
//! Layers are numbered from 1; a cut at layer `s` places layers `1..=s` on the
//! device and `s+1..=H` on the edge server.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer cost profile of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    /// Forward propagation cost per sample (FLOPs).
    pub forward_flops: f64,
    /// Backward propagation cost per sample (FLOPs).
    pub backward_flops: f64,
    /// Size of the activations this layer emits per sample (bits).
    pub activation_bits: f64,
    /// Size of the gradients flowing back into this layer's output per sample (bits).
    pub gradient_bits: f64,
    /// Size of this layer's parameters (bits).
    pub param_bits: f64,
}

impl LayerProfile {
    pub fn uniform(flops: f64, transfer_bits: f64, param_bits: f64) -> Self {
        Self {
            forward_flops: flops,
            backward_flops: 2.0 * flops,
            activation_bits: transfer_bits,
            gradient_bits: transfer_bits,
            param_bits,
        }
    }

    fn compute_flops(&self) -> f64 {
        self.forward_flops + self.backward_flops
    }
}

/// One split-federated-learning tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantSpec {
    pub id: usize,
    pub layers: Vec<LayerProfile>,
    /// Payment budget.
    pub budget: f64,
    /// Fine-tuning deadline (seconds).
    pub deadline: f64,
    /// Edge-server capacity provisioned for this tenant (FLOPs/s).
    pub server_capacity: f64,
    /// Training rounds per synchronization cycle.
    pub sync_interval: usize,
    /// Time spent on global aggregation per cycle (seconds).
    #[serde(default)]
    pub agg_time: f64,
    pub smoothness: f64,
    pub strong_convexity: f64,
}

impl TenantSpec {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_param_bits(&self) -> f64 {
        self.layers.iter().map(|l| l.param_bits).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidTenant {
                tenant: self.id,
                reason: reason.to_string(),
            })
        };
        if self.layers.len() < 2 {
            return bad("a model needs at least two layers");
        }
        for l in &self.layers {
            let fields = [
                l.forward_flops,
                l.backward_flops,
                l.activation_bits,
                l.gradient_bits,
                l.param_bits,
            ];
            if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad("layer profile entries must be finite and non-negative");
            }
        }
        if !(self.budget > 0.0) {
            return bad("budget must be positive");
        }
        if !(self.deadline > 0.0) {
            return bad("deadline must be positive");
        }
        if !(self.server_capacity > 0.0) {
            return bad("server capacity must be positive");
        }
        if self.sync_interval == 0 {
            return bad("sync interval must be at least one round");
        }
        if !(self.agg_time >= 0.0) {
            return bad("aggregation time must be non-negative");
        }
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= self.smoothness) {
            return bad("need 0 < strong_convexity <= smoothness");
        }
        Ok(())
    }
}

/// One edge device shared by all tenants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: usize,
    /// Local compute capacity (FLOPs/s).
    pub compute: f64,
    /// Upload rate (bits/s).
    pub uplink: f64,
    /// Download rate (bits/s).
    pub downlink: f64,
    /// Local sample count for each tenant, indexed by tenant id.
    pub data_sizes: Vec<f64>,
    /// Cost coefficient for each tenant, indexed by tenant id.
    pub cost_coeff: Vec<f64>,
    /// Convexity exponent of the participation cost.
    pub cost_exponent: f64,
}

impl DeviceSpec {
    pub fn data_for(&self, tenant: usize) -> f64 {
        self.data_sizes.get(tenant).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, tenants: usize) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidDevice {
                device: self.id,
                reason,
            })
        };
        if !(self.compute > 0.0) {
            return bad("compute capacity must be positive".into());
        }
        if !(self.uplink > 0.0 && self.downlink > 0.0) {
            return bad("link rates must be positive".into());
        }
        if self.data_sizes.len() != tenants || self.cost_coeff.len() != tenants {
            return bad(format!(
                "expected {tenants} per-tenant entries, got {} data sizes and {} cost coefficients",
                self.data_sizes.len(),
                self.cost_coeff.len()
            ));
        }
        if self.data_sizes.iter().any(|d| !(*d >= 0.0)) {
            return bad("data sizes must be non-negative".into());
        }
        if self.cost_coeff.iter().any(|c| !(*c > 0.0)) {
            return bad("cost coefficients must be positive".into());
        }
        if !(self.cost_exponent >= 1.0) {
            return bad("cost exponent must be at least 1".into());
        }
        Ok(())
    }
}

/// A cut position. Layers `1..=layer` run on the device.
///
/// Game-mode cuts lie in `1..H`; `layer == H` keeps the whole model on the
/// device and is only produced by [`Cut::whole_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cut(usize);

impl Cut {
    pub fn split(tenant: &TenantSpec, layer: usize) -> Result<Self> {
        let h = tenant.num_layers();
        if layer >= 1 && layer < h {
            Ok(Cut(layer))
        } else {
            Err(Error::InvalidCut { cut: layer, layers: h })
        }
    }

    pub fn whole_model(tenant: &TenantSpec) -> Self {
        Cut(tenant.num_layers())
    }

    pub fn layer(self) -> usize {
        self.0
    }

    pub fn is_whole_model(self, tenant: &TenantSpec) -> bool {
        self.0 == tenant.num_layers()
    }

    fn check(self, tenant: &TenantSpec) -> Result<()> {
        if self.0 >= 1 && self.0 <= tenant.num_layers() {
            Ok(())
        } else {
            Err(Error::InvalidCut {
                cut: self.0,
                layers: tenant.num_layers(),
            })
        }
    }
}

/// Cut layer for every (tenant, device) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    cuts: Vec<Vec<Cut>>,
}

impl SplitPlan {
    pub fn new(cuts: Vec<Vec<Cut>>) -> Self {
        Self { cuts }
    }

    /// Time-optimal cut for every pair.
    pub fn optimal(tenants: &[TenantSpec], devices: &[DeviceSpec]) -> Self {
        let cuts = tenants
            .iter()
            .map(|t| devices.iter().map(|d| optimal_cut(d, t)).collect())
            .collect();
        Self { cuts }
    }

    pub fn cut(&self, tenant: usize, device: usize) -> Cut {
        self.cuts[tenant][device]
    }

    pub fn tenant_cuts(&self, tenant: usize) -> &[Cut] {
        &self.cuts[tenant]
    }
}

/// Parameter bits on the device side and the server side of a cut.
pub fn split_sizes(tenant: &TenantSpec, layer: usize) -> Result<(f64, f64)> {
    let cut = Cut::split(tenant, layer)?;
    Ok(side_sizes(tenant, cut))
}

fn side_sizes(tenant: &TenantSpec, cut: Cut) -> (f64, f64) {
    let (dev, srv) = tenant.layers.split_at(cut.layer());
    (
        dev.iter().map(|l| l.param_bits).sum(),
        srv.iter().map(|l| l.param_bits).sum(),
    )
}

/// Communication time of one synchronization cycle: activation upload and
/// gradient download for `I` rounds plus the device-side model exchange.
/// Without a split only the model exchange remains.
pub fn comm_time(device: &DeviceSpec, tenant: &TenantSpec, cut: Cut) -> Result<f64> {
    cut.check(tenant)?;
    if !(device.uplink > 0.0 && device.downlink > 0.0) {
        return Err(Error::InvalidDevice {
            device: device.id,
            reason: "link rates must be positive".into(),
        });
    }
    let (device_bits, _) = side_sizes(tenant, cut);
    let (up_stream, down_stream) = if cut.is_whole_model(tenant) {
        (0.0, 0.0)
    } else {
        let layer = &tenant.layers[cut.layer() - 1];
        let rounds_data = tenant.sync_interval as f64 * device.data_for(tenant.id);
        (
            rounds_data * layer.activation_bits,
            rounds_data * layer.gradient_bits,
        )
    };
    Ok((up_stream + device_bits) / device.uplink + (down_stream + device_bits) / device.downlink)
}

/// Device-side compute time of one training round.
pub fn device_compute_time(device: &DeviceSpec, tenant: &TenantSpec, cut: Cut) -> Result<f64> {
    cut.check(tenant)?;
    let flops: f64 = tenant.layers[..cut.layer()]
        .iter()
        .map(LayerProfile::compute_flops)
        .sum();
    Ok(device.data_for(tenant.id) * flops / device.compute)
}

/// Server-side compute time of one training round for this device's stream.
pub fn server_compute_time(device: &DeviceSpec, tenant: &TenantSpec, cut: Cut) -> Result<f64> {
    cut.check(tenant)?;
    let flops: f64 = tenant.layers[cut.layer()..]
        .iter()
        .map(LayerProfile::compute_flops)
        .sum();
    if flops == 0.0 {
        return Ok(0.0);
    }
    Ok(device.data_for(tenant.id) * flops / tenant.server_capacity)
}

/// `I * (T^C + T^S) + T^com` for one device.
pub fn device_cycle_time(device: &DeviceSpec, tenant: &TenantSpec, cut: Cut) -> Result<f64> {
    let rounds = tenant.sync_interval as f64;
    Ok(rounds
        * (device_compute_time(device, tenant, cut)? + server_compute_time(device, tenant, cut)?)
        + comm_time(device, tenant, cut)?)
}

/// Wall time of one synchronization cycle over `devices`; the slowest device
/// sets the pace.
pub fn cycle_time(tenant: &TenantSpec, devices: &[&DeviceSpec], plan: &SplitPlan) -> Result<f64> {
    if devices.is_empty() {
        return Err(Error::InvalidArgument(
            "cycle time needs at least one device".into(),
        ));
    }
    let mut slowest = 0.0_f64;
    for d in devices {
        slowest = slowest.max(device_cycle_time(d, tenant, plan.cut(tenant.id, d.id))?);
    }
    Ok(tenant.agg_time + slowest)
}

/// Devices holding data for `tenant`.
pub fn eligible_devices<'a>(tenant: &TenantSpec, devices: &'a [DeviceSpec]) -> Vec<&'a DeviceSpec> {
    devices
        .iter()
        .filter(|d| d.data_for(tenant.id) > 0.0)
        .collect()
}

/// Number of whole synchronization cycles that fit in the deadline, planned
/// against the slowest eligible device.
pub fn cycles_within_deadline(
    tenant: &TenantSpec,
    devices: &[DeviceSpec],
    plan: &SplitPlan,
) -> Result<usize> {
    let eligible = eligible_devices(tenant, devices);
    let t = cycle_time(tenant, &eligible, plan)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cycle time must be positive, got {t}"
        )));
    }
    let k = (tenant.deadline / t).floor();
    if k < 1.0 {
        return Err(Error::InfeasibleDeadline {
            deadline: tenant.deadline,
            cycle_time: t,
        });
    }
    Ok(k as usize)
}

/// Cut in `1..H` minimizing the per-cycle time of this device; ties go to the
/// shallower cut.
pub fn optimal_cut(device: &DeviceSpec, tenant: &TenantSpec) -> Cut {
    let mut best = Cut(1);
    let mut best_time = f64::INFINITY;
    for layer in 1..tenant.num_layers() {
        let cut = Cut(layer);
        let t = device_cycle_time(device, tenant, cut).unwrap_or(f64::INFINITY);
        if t < best_time {
            best = cut;
            best_time = t;
        }
    }
    best
}
