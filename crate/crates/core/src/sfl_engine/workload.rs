//! Synthetic local workloads: a separable strongly convex quadratic and a
//! small fully connected network that can be cut between any two layers.

use serde::{Deserialize, Serialize};

use super::model::ModelLayout;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                expected: format!("rows of length {cols}"),
                got: "ragged rows".into(),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn expect_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.shape() == (rows, cols) {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", self.rows, self.cols),
            })
        }
    }
}

/// `F(w) = 1/2 * sum_k h_k (w_k - t_k)^2` with diagonal curvature `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticWorkload {
    pub target: Vec<f64>,
    pub curvature: Vec<f64>,
    /// Nominal sample count; only used for aggregation weights.
    pub data_size: f64,
    pub layout: ModelLayout,
}

impl QuadraticWorkload {
    pub fn new(
        target: Vec<f64>,
        curvature: Vec<f64>,
        data_size: f64,
        layout: ModelLayout,
    ) -> Result<Self> {
        if target.len() != curvature.len() || target.len() != layout.total() {
            return Err(Error::InvalidWorkload(format!(
                "target ({}), curvature ({}) and layout ({}) sizes differ",
                target.len(),
                curvature.len(),
                layout.total()
            )));
        }
        if curvature.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidWorkload(
                "curvature must be positive definite".into(),
            ));
        }
        if !(data_size > 0.0) {
            return Err(Error::InvalidWorkload("data size must be positive".into()));
        }
        Ok(Self {
            target,
            curvature,
            data_size,
            layout,
        })
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.target)
            .zip(&self.curvature)
            .map(|((w, t), h)| h * (w - t) * (w - t))
            .sum::<f64>()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.target)
            .zip(&self.curvature)
            .map(|((w, t), h)| h * (w - t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network with squared-error loss averaged over the local
/// dataset. Hidden layers apply `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWorkload {
    /// Widths `d_0 .. d_H`; layer `n` maps `d_{n-1}` to `d_n`.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub inputs: Matrix,
    pub labels: Matrix,
    layout: ModelLayout,
}

/// Intermediate values of a forward pass over a range of layers.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    first: usize,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    pub output: Matrix,
}

impl MlpWorkload {
    pub fn new(
        dims: Vec<usize>,
        activation: Activation,
        inputs: Matrix,
        labels: Matrix,
    ) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidWorkload(
                "an MLP needs at least two layers".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidWorkload("layer widths must be positive".into()));
        }
        if inputs.rows == 0 {
            return Err(Error::InvalidWorkload("empty dataset".into()));
        }
        inputs.expect_shape(inputs.rows, dims[0])?;
        labels.expect_shape(inputs.rows, *dims.last().unwrap())?;
        let layout = ModelLayout::new(dims.windows(2).map(|w| w[0] * w[1] + w[1]).collect())?;
        Ok(Self {
            dims,
            activation,
            inputs,
            labels,
            layout,
        })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn samples(&self) -> usize {
        self.inputs.rows
    }

    /// Forward through layers `first..=last` whose parameters are packed in
    /// `params`.
    pub fn forward(
        &self,
        params: &[f64],
        first: usize,
        last: usize,
        input: &Matrix,
    ) -> Result<ForwardCache> {
        input.expect_shape(input.rows, self.dims[first - 1])?;
        let expected: usize = self.layout.layer_sizes()[first - 1..last].iter().sum();
        if params.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} parameters for layers {first}..={last}"),
                got: params.len().to_string(),
            });
        }
        let h = self.num_layers();
        let mut offset = 0;
        let mut inputs = Vec::with_capacity(last - first + 1);
        let mut pre = Vec::with_capacity(last - first + 1);
        let mut current = input.clone();
        for n in first..=last {
            let (din, dout) = (self.dims[n - 1], self.dims[n]);
            let w = &params[offset..offset + din * dout];
            let b = &params[offset + din * dout..offset + din * dout + dout];
            offset += din * dout + dout;
            let mut z = Matrix::zeros(current.rows, dout);
            for r in 0..current.rows {
                let x = current.row(r);
                let zr = z.row_mut(r);
                for o in 0..dout {
                    let wr = &w[o * din..(o + 1) * din];
                    zr[o] = b[o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let a = if n < h {
                Matrix {
                    rows: z.rows,
                    cols: z.cols,
                    data: z.data.iter().map(|&v| self.activation.apply(v)).collect(),
                }
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok(ForwardCache {
            first,
            inputs,
            pre,
            output: current,
        })
    }

    /// Back-propagate `grad_out` (gradient w.r.t. the cache output) through
    /// the cached layers. Returns parameter gradients packed like the
    /// parameters and the gradient w.r.t. the cached input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        grad_out: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        grad_out.expect_shape(cache.output.rows, cache.output.cols)?;
        let h = self.num_layers();
        let first = cache.first;
        let last = first + cache.pre.len() - 1;
        let sizes = &self.layout.layer_sizes()[first - 1..last];
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in sizes {
            offsets.push(acc);
            acc += s;
        }
        let mut grads = vec![0.0; params.len()];
        let mut upstream = grad_out.clone();
        for n in (first..=last).rev() {
            let k = n - first;
            let (din, dout) = (self.dims[n - 1], self.dims[n]);
            let z = &cache.pre[k];
            let x = &cache.inputs[k];
            let mut dz = upstream;
            if n < h {
                for (g, &zv) in dz.data.iter_mut().zip(&z.data) {
                    *g *= self.activation.derivative(zv);
                }
            }
            let off = offsets[k];
            let w = &params[off..off + din * dout];
            {
                let (gw, gb) = grads[off..off + din * dout + dout].split_at_mut(din * dout);
                for r in 0..dz.rows {
                    let dzr = dz.row(r);
                    let xr = x.row(r);
                    for o in 0..dout {
                        let d = dzr[o];
                        gb[o] += d;
                        for (g, xv) in gw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                            *g += d * xv;
                        }
                    }
                }
            }
            let mut dx = Matrix::zeros(dz.rows, din);
            for r in 0..dz.rows {
                let dzr = dz.row(r).to_vec();
                let dxr = dx.row_mut(r);
                for (o, d) in dzr.iter().enumerate() {
                    for (g, wv) in dxr.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                        *g += d * wv;
                    }
                }
            }
            upstream = dx;
        }
        Ok((grads, upstream))
    }

    /// Mean squared-error loss and its gradient w.r.t. the network output.
    pub fn loss_and_output_grad(&self, output: &Matrix, labels: &Matrix) -> Result<(f64, Matrix)> {
        labels.expect_shape(output.rows, output.cols)?;
        let n = output.rows as f64;
        let mut loss = 0.0;
        let mut grad = Matrix::zeros(output.rows, output.cols);
        for ((g, o), y) in grad.data.iter_mut().zip(&output.data).zip(&labels.data) {
            let e = o - y;
            loss += 0.5 * e * e;
            *g = e / n;
        }
        Ok((loss / n, grad))
    }

    pub fn loss(&self, params: &[f64]) -> Result<f64> {
        let cache = self.forward(params, 1, self.num_layers(), &self.inputs)?;
        Ok(self.loss_and_output_grad(&cache.output, &self.labels)?.0)
    }

    pub fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(params, 1, self.num_layers(), &self.inputs)?;
        let (_, g) = self.loss_and_output_grad(&cache.output, &self.labels)?;
        Ok(self.backward(params, &cache, &g)?.0)
    }

    fn sample_gradient(&self, params: &[f64], r: usize) -> Result<Vec<f64>> {
        let x = Matrix {
            rows: 1,
            cols: self.inputs.cols,
            data: self.inputs.row(r).to_vec(),
        };
        let y = Matrix {
            rows: 1,
            cols: self.labels.cols,
            data: self.labels.row(r).to_vec(),
        };
        let cache = self.forward(params, 1, self.num_layers(), &x)?;
        let (_, g) = self.loss_and_output_grad(&cache.output, &y)?;
        Ok(self.backward(params, &cache, &g)?.0)
    }
}

/// A device's local objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    Quadratic(QuadraticWorkload),
    SplitMlp(MlpWorkload),
}

impl Workload {
    pub fn layout(&self) -> &ModelLayout {
        match self {
            Workload::Quadratic(q) => &q.layout,
            Workload::SplitMlp(m) => m.layout(),
        }
    }

    /// `D_{i,j}`, the sample count driving the aggregation weight.
    pub fn data_size(&self) -> f64 {
        match self {
            Workload::Quadratic(q) => q.data_size,
            Workload::SplitMlp(m) => m.samples() as f64,
        }
    }

    pub fn loss(&self, params: &[f64]) -> Result<f64> {
        match self {
            Workload::Quadratic(q) => {
                check_len(params, q.layout.total())?;
                Ok(q.loss(params))
            }
            Workload::SplitMlp(m) => m.loss(params),
        }
    }

    pub fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        match self {
            Workload::Quadratic(q) => {
                check_len(params, q.layout.total())?;
                Ok(q.gradient(params))
            }
            Workload::SplitMlp(m) => m.gradient(params),
        }
    }

    /// Squared norm of the full-batch gradient and the mean squared deviation
    /// of per-sample gradients from it.
    pub fn gradient_statistics(&self, params: &[f64]) -> Result<(f64, f64)> {
        match self {
            Workload::Quadratic(q) => {
                check_len(params, q.layout.total())?;
                Ok((norm_sq(&q.gradient(params)), 0.0))
            }
            Workload::SplitMlp(m) => {
                let per_sample = (0..m.samples())
                    .map(|r| m.sample_gradient(params, r))
                    .collect::<Result<Vec<_>>>()?;
                let n = per_sample.len() as f64;
                let mut mean = vec![0.0; params.len()];
                for g in &per_sample {
                    for (m, v) in mean.iter_mut().zip(g) {
                        *m += v / n;
                    }
                }
                let var = per_sample
                    .iter()
                    .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum::<f64>()
                    / n;
                Ok((norm_sq(&mean), var))
            }
        }
    }
}

fn check_len(params: &[f64], n: usize) -> Result<()> {
    if params.len() == n {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: format!("{n} parameters"),
            got: params.len().to_string(),
        })
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
