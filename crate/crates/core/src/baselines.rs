//! Comparison policies sharing the same engines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_engine::ParticipationProfile;
use crate::system_model::{Cut, DeviceSpec, SplitPlan, TenantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Improvement dynamics over tenant prices.
    #[default]
    Prince,
    /// Budget split in proportion to data quantity.
    Fair,
    /// Budget split evenly.
    Msda,
    /// Prince pricing with the whole model trained on the device.
    Fedpeft,
    /// Every device participates with certainty.
    #[serde(alias = "full_participation")]
    Full,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Prince,
        PolicyKind::Fair,
        PolicyKind::Msda,
        PolicyKind::Fedpeft,
        PolicyKind::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Prince => "prince",
            PolicyKind::Fair => "fair",
            PolicyKind::Msda => "msda",
            PolicyKind::Fedpeft => "fedpeft",
            PolicyKind::Full => "full",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prince" => Ok(PolicyKind::Prince),
            "fair" => Ok(PolicyKind::Fair),
            "msda" => Ok(PolicyKind::Msda),
            "fedpeft" => Ok(PolicyKind::Fedpeft),
            "full" | "full_participation" => Ok(PolicyKind::Full),
            other => Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// `P_j = B a_j` with `a_j` the device's share of the tenant's data.
pub fn fair_pricing(tenant: &TenantSpec, devices: &[DeviceSpec]) -> Result<Vec<f64>> {
    let total: f64 = devices.iter().map(|d| d.data_for(tenant.id)).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "tenant {} has no data on any device",
            tenant.id
        )));
    }
    Ok(devices
        .iter()
        .map(|d| tenant.budget * d.data_for(tenant.id) / total)
        .collect())
}

/// `P_j = B / N`.
pub fn msda_pricing(tenant: &TenantSpec, devices: &[DeviceSpec]) -> Result<Vec<f64>> {
    if devices.is_empty() {
        return Err(Error::InvalidScenario("no devices".into()));
    }
    Ok(vec![tenant.budget / devices.len() as f64; devices.len()])
}

/// Every device trains the whole model.
pub fn fedpeft_plan(tenants: &[TenantSpec], devices: &[DeviceSpec]) -> SplitPlan {
    SplitPlan::new(
        tenants
            .iter()
            .map(|t| vec![Cut::whole_model(t); devices.len()])
            .collect(),
    )
}

pub fn full_participation_policy(tenants: usize, devices: usize) -> ParticipationProfile {
    ParticipationProfile {
        levels: vec![vec![1.0; devices]; tenants],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::{server_compute_time, LayerProfile};

    fn tenant(budget: f64) -> TenantSpec {
        TenantSpec {
            id: 0,
            layers: vec![LayerProfile::uniform(1e9, 8e6, 8e7); 3],
            budget,
            deadline: 1e6,
            server_capacity: 1e12,
            sync_interval: 2,
            agg_time: 0.0,
            smoothness: 1.0,
            strong_convexity: 0.5,
        }
    }

    fn device(id: usize, data: f64) -> DeviceSpec {
        DeviceSpec {
            id,
            compute: 2e12,
            uplink: 5e7,
            downlink: 1e8,
            data_sizes: vec![data],
            cost_coeff: vec![0.3],
            cost_exponent: 2.0,
        }
    }

    #[test]
    fn fair_is_proportional_to_data() {
        let p = fair_pricing(&tenant(4.0), &[device(0, 3.0), device(1, 1.0)]).unwrap();
        assert_eq!(p, vec![3.0, 1.0]);
        let p = fair_pricing(&tenant(4.0), &[device(0, 2.0), device(1, 2.0)]).unwrap();
        assert_eq!(p, vec![2.0, 2.0]);
        assert!(fair_pricing(&tenant(4.0), &[device(0, 0.0)]).is_err());
    }

    #[test]
    fn msda_is_even() {
        let devs: Vec<_> = (0..5).map(|j| device(j, 1.0)).collect();
        assert_eq!(msda_pricing(&tenant(10.0), &devs).unwrap(), vec![2.0; 5]);
        assert_eq!(msda_pricing(&tenant(10.0), &devs[..1]).unwrap(), vec![10.0]);
    }

    #[test]
    fn fedpeft_keeps_the_model_on_device() {
        let t = tenant(1.0);
        let d = device(0, 10.0);
        let plan = fedpeft_plan(&[t.clone()], &[d.clone()]);
        assert!(plan.cut(0, 0).is_whole_model(&t));
        assert_eq!(server_compute_time(&d, &t, plan.cut(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("full_participation".parse::<PolicyKind>().unwrap(), PolicyKind::Full);
    }
}
