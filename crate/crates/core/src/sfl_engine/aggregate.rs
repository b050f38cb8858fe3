use std::collections::BTreeMap;

use super::model::ModelState;
use super::workload::Workload;
use crate::error::{Error, Result};

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: format!("{expected} parameters"),
            got: got.to_string(),
        })
    }
}

/// `w = w_prev + sum_{j in U} (a_j / q_j) (w_j - w_prev)`.
///
/// `updates` is keyed by device index into `q` and `a`; the reduction runs in
/// ascending device order so the result is reproducible bit for bit.
pub fn aggregate_bias_resilient(
    prev_global: &ModelState,
    updates: &BTreeMap<usize, ModelState>,
    q: &[f64],
    a: &[f64],
) -> Result<ModelState> {
    let mut out = prev_global.clone();
    for (&j, w) in updates {
        let qj = *q.get(j).ok_or_else(|| Error::InvalidDevice {
            device: j,
            reason: "no participation level".into(),
        })?;
        let aj = *a.get(j).ok_or_else(|| Error::InvalidDevice {
            device: j,
            reason: "no aggregation weight".into(),
        })?;
        if !(qj > 0.0) {
            return Err(Error::DivisionGuard { device: j, q: qj });
        }
        check_len(prev_global.params.len(), w.params.len())?;
        let scale = aj / qj;
        for ((o, wj), wp) in out.params.iter_mut().zip(&w.params).zip(&prev_global.params) {
            *o += scale * (wj - wp);
        }
    }
    Ok(out)
}

/// Plain weighted average `sum_j a_j w_j` over all devices.
pub fn aggregate_full(updates: &[ModelState], a: &[f64]) -> Result<ModelState> {
    let first = updates
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to aggregate".into()))?;
    if updates.len() != a.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} weights",
            updates.len(),
            a.len()
        )));
    }
    let mut out = first.clone();
    out.params.iter_mut().for_each(|p| *p = 0.0);
    for (w, &aj) in updates.iter().zip(a) {
        check_len(out.params.len(), w.params.len())?;
        for (o, v) in out.params.iter_mut().zip(&w.params) {
            *o += aj * v;
        }
    }
    Ok(out)
}

/// `sum_j a_j F_j(w)`.
pub fn global_loss(params: &[f64], workloads: &[Workload], a: &[f64]) -> Result<f64> {
    if workloads.len() != a.len() {
        return Err(Error::InvalidArgument(format!(
            "{} workloads but {} weights",
            workloads.len(),
            a.len()
        )));
    }
    let mut total = 0.0;
    for (w, &aj) in workloads.iter().zip(a) {
        if aj != 0.0 {
            total += aj * w.loss(params)?;
        }
    }
    Ok(total)
}

/// `a_j = D_j / sum D`.
pub fn data_weights(data_sizes: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = data_sizes.iter().sum();
    if !(total > 0.0) || data_sizes.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument(
            "data sizes must be nonnegative with a positive total".into(),
        ));
    }
    Ok(data_sizes.iter().map(|d| d / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfl_engine::model::ModelLayout;

    fn state(p: Vec<f64>) -> ModelState {
        let layout = ModelLayout::even(p.len(), 2).unwrap();
        ModelState::new(p, &layout, 1).unwrap()
    }

    #[test]
    fn full_participation_collapses_to_weighted_average() {
        let prev = state(vec![0.0, 1.0, 2.0]);
        let models = vec![
            state(vec![1.0, 1.0, 1.0]),
            state(vec![3.0, -1.0, 0.0]),
            state(vec![0.5, 2.0, 4.0]),
        ];
        let a = [0.2, 0.3, 0.5];
        let updates: BTreeMap<_, _> = models.iter().cloned().enumerate().collect();
        let br = aggregate_bias_resilient(&prev, &updates, &[1.0; 3], &a).unwrap();
        let full = aggregate_full(&models, &a).unwrap();
        for (x, y) in br.params.iter().zip(&full.params) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_participation_keeps_previous_model() {
        let prev = state(vec![0.3, -0.7]);
        let out = aggregate_bias_resilient(&prev, &BTreeMap::new(), &[0.5], &[1.0]).unwrap();
        assert_eq!(out, prev);
    }

    #[test]
    fn zero_participation_level_is_guarded() {
        let prev = state(vec![0.0, 0.0]);
        let updates = BTreeMap::from([(0, state(vec![1.0, 1.0]))]);
        assert!(matches!(
            aggregate_bias_resilient(&prev, &updates, &[0.0], &[1.0]),
            Err(Error::DivisionGuard { device: 0, .. })
        ));
    }

    #[test]
    fn full_average_edge_cases() {
        let m = state(vec![1.0, 2.0]);
        let out = aggregate_full(&[m.clone(), m.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(out.params, m.params);
        let other = state(vec![9.0, 9.0]);
        let out = aggregate_full(&[m.clone(), other], &[1.0, 0.0]).unwrap();
        assert_eq!(out.params, m.params);
    }

    #[test]
    fn weights_follow_data_sizes() {
        let a = data_weights(&[3.0, 1.0, 0.0]).unwrap();
        assert_eq!(a, vec![0.75, 0.25, 0.0]);
        assert!(data_weights(&[0.0, 0.0]).is_err());
    }
}
