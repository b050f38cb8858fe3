//! The per-round device/server exchange.
//!
//! 1. the device runs its layers and emits cut-layer activations;
//! 2. activations and labels travel to the server;
//! 3. the server finishes the forward pass, takes one gradient step on its
//!    layers and back-propagates to the cut;
//! 4. cut-layer gradients travel back;
//! 5. the device back-propagates them through its layers and steps.
//!
//! For the quadratic workload the "activations" are the device-side
//! coordinates themselves, so the handoff is exercised even though the loss
//! is separable.

use super::channel::{Endpoint, Frame};
use super::model::{Side, SubModel};
use super::workload::{Matrix, Workload};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceForward {
    pub activations: Matrix,
    pub labels: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerStep {
    /// Loss before the update.
    pub loss: f64,
    pub cut_gradients: Matrix,
    pub server_side: SubModel,
}

fn expect_side(m: &SubModel, side: Side) -> Result<()> {
    if m.side == side {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: format!("{side:?}-side submodel"),
            got: format!("{:?}-side submodel", m.side),
        })
    }
}

fn row(data: Vec<f64>) -> Matrix {
    Matrix {
        rows: 1,
        cols: data.len(),
        data,
    }
}

/// Step 1.
pub fn device_forward(workload: &Workload, device_side: &SubModel) -> Result<DeviceForward> {
    expect_side(device_side, Side::Device)?;
    match workload {
        Workload::Quadratic(q) => {
            let p = q.layout.prefix_len(device_side.cut);
            if device_side.params.len() != p {
                return Err(Error::Shape {
                    expected: format!("{p} device-side parameters"),
                    got: device_side.params.len().to_string(),
                });
            }
            Ok(DeviceForward {
                activations: row(device_side.params.clone()),
                labels: Matrix {
                    rows: 2,
                    cols: q.target.len(),
                    data: [q.target.as_slice(), q.curvature.as_slice()].concat(),
                },
            })
        }
        Workload::SplitMlp(m) => {
            let cache = m.forward(&device_side.params, 1, device_side.cut, &m.inputs)?;
            Ok(DeviceForward {
                activations: cache.output,
                labels: m.labels.clone(),
            })
        }
    }
}

/// Step 3.
pub fn server_step(
    workload: &Workload,
    server_side: &SubModel,
    activations: &Matrix,
    labels: &Matrix,
    gamma: f64,
) -> Result<ServerStep> {
    expect_side(server_side, Side::Server)?;
    let cut = server_side.cut;
    let (loss, server_grads, cut_gradients) = match workload {
        Workload::Quadratic(q) => {
            let d = q.layout.total();
            let p = q.layout.prefix_len(cut);
            if activations.shape() != (1, p) || labels.shape() != (2, d) {
                return Err(Error::Shape {
                    expected: format!("1x{p} activations and 2x{d} labels"),
                    got: format!(
                        "{}x{} activations and {}x{} labels",
                        activations.rows, activations.cols, labels.rows, labels.cols
                    ),
                });
            }
            if server_side.params.len() != d - p {
                return Err(Error::Shape {
                    expected: format!("{} server-side parameters", d - p),
                    got: server_side.params.len().to_string(),
                });
            }
            let (target, curvature) = labels.data.split_at(d);
            let full: Vec<f64> = activations
                .data
                .iter()
                .chain(&server_side.params)
                .copied()
                .collect();
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(d);
            for k in 0..d {
                let e = full[k] - target[k];
                loss += 0.5 * curvature[k] * e * e;
                grad.push(curvature[k] * e);
            }
            let server_grads = grad.split_off(p);
            (loss, server_grads, row(grad))
        }
        Workload::SplitMlp(m) => {
            let h = m.num_layers();
            if cut >= h {
                return Err(Error::Shape {
                    expected: "a server side with at least one layer".into(),
                    got: format!("cut at {cut} of {h}"),
                });
            }
            if activations.cols != m.dims[cut] {
                return Err(Error::Shape {
                    expected: format!("{} activation columns", m.dims[cut]),
                    got: activations.cols.to_string(),
                });
            }
            let cache = m.forward(&server_side.params, cut + 1, h, activations)?;
            let (loss, out_grad) = m.loss_and_output_grad(&cache.output, labels)?;
            let (grads, cut_grad) = m.backward(&server_side.params, &cache, &out_grad)?;
            (loss, grads, cut_grad)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NumericalDivergence(format!(
            "server loss became {loss}"
        )));
    }
    let mut updated = server_side.clone();
    for (w, g) in updated.params.iter_mut().zip(&server_grads) {
        *w -= gamma * g;
    }
    Ok(ServerStep {
        loss,
        cut_gradients,
        server_side: updated,
    })
}

/// Step 5.
pub fn device_step(
    workload: &Workload,
    device_side: &SubModel,
    cut_gradients: &Matrix,
    gamma: f64,
) -> Result<SubModel> {
    expect_side(device_side, Side::Device)?;
    let grads = match workload {
        Workload::Quadratic(_) => {
            if cut_gradients.shape() != (1, device_side.params.len()) {
                return Err(Error::Shape {
                    expected: format!("1x{} cut gradients", device_side.params.len()),
                    got: format!("{}x{}", cut_gradients.rows, cut_gradients.cols),
                });
            }
            cut_gradients.data.clone()
        }
        Workload::SplitMlp(m) => {
            let cache = m.forward(&device_side.params, 1, device_side.cut, &m.inputs)?;
            if cut_gradients.shape() != cache.output.shape() {
                return Err(Error::Shape {
                    expected: format!("{}x{} cut gradients", cache.output.rows, cache.output.cols),
                    got: format!("{}x{}", cut_gradients.rows, cut_gradients.cols),
                });
            }
            m.backward(&device_side.params, &cache, cut_gradients)?.0
        }
    };
    let mut updated = device_side.clone();
    for (w, g) in updated.params.iter_mut().zip(&grads) {
        *w -= gamma * g;
    }
    Ok(updated)
}

/// One training round of one device: Steps 1-5 across the link. When the
/// server side is empty the device trains the whole model locally.
pub fn train_round(
    workload: &Workload,
    device_side: &SubModel,
    server_side: &SubModel,
    device_id: usize,
    round: usize,
    gamma: f64,
    device_end: &mut Endpoint,
    server_end: &mut Endpoint,
) -> Result<(SubModel, SubModel, f64)> {
    if server_side.is_empty() {
        let loss = workload.loss(&device_side.params)?;
        if !loss.is_finite() {
            return Err(Error::NumericalDivergence(format!("local loss became {loss}")));
        }
        let g = workload.gradient(&device_side.params)?;
        let mut updated = device_side.clone();
        for (w, g) in updated.params.iter_mut().zip(&g) {
            *w -= gamma * g;
        }
        return Ok((updated, server_side.clone(), loss));
    }

    let fwd = device_forward(workload, device_side)?;
    device_end.send(&Frame::Activations {
        device: device_id,
        round,
        activations: fwd.activations,
        labels: fwd.labels,
    })?;

    let (activations, labels) = match server_end.recv()? {
        Frame::Activations {
            activations,
            labels,
            round: r,
            ..
        } if r == round => (activations, labels),
        other => {
            return Err(Error::Channel(format!(
                "server expected activations for round {round}, got {other:?}"
            )))
        }
    };
    let step = server_step(workload, server_side, &activations, &labels, gamma)?;
    server_end.send(&Frame::CutGradients {
        device: device_id,
        round,
        gradients: step.cut_gradients,
    })?;

    let gradients = match device_end.recv()? {
        Frame::CutGradients {
            gradients,
            round: r,
            ..
        } if r == round => gradients,
        other => {
            return Err(Error::Channel(format!(
                "device expected gradients for round {round}, got {other:?}"
            )))
        }
    };
    let device_next = device_step(workload, device_side, &gradients, gamma)?;
    Ok((device_next, step.server_side, step.loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfl_engine::channel::link;
    use crate::sfl_engine::model::{ModelLayout, ModelState};
    use crate::sfl_engine::workload::{Activation, MlpWorkload, QuadraticWorkload};

    fn quad() -> Workload {
        let layout = ModelLayout::new(vec![2, 1, 2]).unwrap();
        Workload::Quadratic(
            QuadraticWorkload::new(
                vec![1.0, -2.0, 0.5, 3.0, 0.0],
                vec![1.0, 2.0, 0.5, 1.5, 3.0],
                4.0,
                layout,
            )
            .unwrap(),
        )
    }

    fn mlp() -> Workload {
        let inputs =
            Matrix::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.3, 0.8]]).unwrap();
        let labels = Matrix::from_rows(&[vec![1.0], vec![-0.5], vec![0.2]]).unwrap();
        Workload::SplitMlp(
            MlpWorkload::new(vec![2, 3, 2, 1], Activation::Tanh, inputs, labels).unwrap(),
        )
    }

    fn start(w: &Workload, cut: usize) -> ModelState {
        let n = w.layout().total();
        let p = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) / 4.0).collect();
        ModelState::new(p, w.layout(), cut).unwrap()
    }

    #[test]
    fn zero_step_leaves_both_sides_unchanged() {
        for w in [quad(), mlp()] {
            let m = start(&w, 1);
            let (d, s) = m.split();
            let fwd = device_forward(&w, &d).unwrap();
            let step = server_step(&w, &s, &fwd.activations, &fwd.labels, 0.0).unwrap();
            assert_eq!(step.server_side, s);
            let d2 = device_step(&w, &d, &step.cut_gradients, 0.0).unwrap();
            assert_eq!(d2, d);
        }
    }

    #[test]
    fn quadratic_server_step_descends() {
        let w = quad();
        let m = start(&w, 2);
        let (d, s) = m.split();
        let fwd = device_forward(&w, &d).unwrap();
        let step = server_step(&w, &s, &fwd.activations, &fwd.labels, 0.05).unwrap();
        let before = w.loss(&m.params).unwrap();
        let after = w
            .loss(&[d.params.clone(), step.server_side.params.clone()].concat())
            .unwrap();
        assert!(after <= before);
        assert!((step.loss - before).abs() < 1e-12);
    }

    #[test]
    fn server_cut_gradient_matches_finite_differences() {
        let w = mlp();
        let m = start(&w, 1);
        let (d, s) = m.split();
        let fwd = device_forward(&w, &d).unwrap();
        let step = server_step(&w, &s, &fwd.activations, &fwd.labels, 0.0).unwrap();
        let Workload::SplitMlp(net) = &w else { unreachable!() };
        let server_loss = |a: &Matrix| {
            let c = net.forward(&s.params, 2, 3, a).unwrap();
            net.loss_and_output_grad(&c.output, &fwd.labels).unwrap().0
        };
        let h = 1e-6;
        for i in 0..fwd.activations.data.len() {
            let mut up = fwd.activations.clone();
            let mut dn = fwd.activations.clone();
            up.data[i] += h;
            dn.data[i] -= h;
            let fd = (server_loss(&up) - server_loss(&dn)) / (2.0 * h);
            let g = step.cut_gradients.data[i];
            assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "{i}: {fd} vs {g}");
        }
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        for w in [quad(), mlp()] {
            let m = start(&w, 1);
            let (d, _) = m.split();
            let bad = Matrix::zeros(7, 7);
            assert!(matches!(
                device_step(&w, &d, &bad, 0.1),
                Err(Error::Shape { .. })
            ));
        }
    }

    #[test]
    fn divergent_loss_is_reported() {
        let w = quad();
        let m = start(&w, 1);
        let (d, s) = m.split();
        let mut fwd = device_forward(&w, &d).unwrap();
        fwd.activations.data[0] = f64::INFINITY;
        assert!(matches!(
            server_step(&w, &s, &fwd.activations, &fwd.labels, 0.1),
            Err(Error::NumericalDivergence(_))
        ));
    }

    #[test]
    fn round_over_link_equals_direct_gradient_step() {
        for w in [quad(), mlp()] {
            for cut in 1..w.layout().num_layers() {
                let m = start(&w, cut);
                let (d, s) = m.split();
                let (mut de, mut se) = link();
                let (d2, s2, _) = train_round(&w, &d, &s, 0, 1, 0.1, &mut de, &mut se).unwrap();
                let g = w.gradient(&m.params).unwrap();
                let joined = [d2.params, s2.params].concat();
                for ((a, p), g) in joined.iter().zip(&m.params).zip(&g) {
                    assert!((a - (p - 0.1 * g)).abs() < 1e-12);
                }
            }
        }
    }
}
