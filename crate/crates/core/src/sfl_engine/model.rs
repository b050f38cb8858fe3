use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter counts per layer; defines how a flat vector splits into layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    layer_sizes: Vec<usize>,
}

impl ModelLayout {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidWorkload(
                "a split model needs at least two layers".into(),
            ));
        }
        Ok(Self { layer_sizes })
    }

    /// Split `dim` parameters into `layers` nearly equal blocks.
    pub fn even(dim: usize, layers: usize) -> Result<Self> {
        if layers == 0 || dim < layers {
            return Err(Error::InvalidWorkload(format!(
                "cannot split {dim} parameters into {layers} nonempty layers"
            )));
        }
        let base = dim / layers;
        let extra = dim % layers;
        Self::new((0..layers).map(|n| base + usize::from(n < extra)).collect())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn total(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn offsets(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layer_sizes
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }

    /// Number of parameters in layers `1..=cut`.
    pub fn prefix_len(&self, cut: usize) -> usize {
        self.layer_sizes[..cut].iter().sum()
    }

    pub fn check_cut(&self, cut: usize) -> Result<()> {
        if cut >= 1 && cut <= self.num_layers() {
            Ok(())
        } else {
            Err(Error::InvalidCut {
                cut,
                layers: self.num_layers(),
            })
        }
    }
}

/// A full model and the cut at which it is split between device and server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub cut: usize,
    pub layer_offsets: Vec<Range<usize>>,
}

impl ModelState {
    pub fn new(params: Vec<f64>, layout: &ModelLayout, cut: usize) -> Result<Self> {
        layout.check_cut(cut)?;
        if params.len() != layout.total() {
            return Err(Error::Shape {
                expected: format!("{} parameters", layout.total()),
                got: format!("{}", params.len()),
            });
        }
        Ok(Self {
            params,
            cut,
            layer_offsets: layout.offsets(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_offsets.len()
    }

    fn boundary(&self) -> usize {
        self.layer_offsets[self.cut - 1].end
    }

    /// Same parameters re-split at another cut.
    pub fn with_cut(&self, cut: usize) -> Result<Self> {
        if cut == 0 || cut > self.num_layers() {
            return Err(Error::InvalidCut {
                cut,
                layers: self.num_layers(),
            });
        }
        let mut out = self.clone();
        out.cut = cut;
        Ok(out)
    }

    /// Separate into the device-side and server-side submodels.
    pub fn split(&self) -> (SubModel, SubModel) {
        let b = self.boundary();
        let h = self.num_layers();
        (
            SubModel {
                side: Side::Device,
                cut: self.cut,
                num_layers: h,
                params: self.params[..b].to_vec(),
            },
            SubModel {
                side: Side::Server,
                cut: self.cut,
                num_layers: h,
                params: self.params[b..].to_vec(),
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Device,
    Server,
}

/// One half of a split model: layers `1..=cut` (device) or `cut+1..=H` (server).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModel {
    pub side: Side,
    pub cut: usize,
    pub num_layers: usize,
    pub params: Vec<f64>,
}

impl SubModel {
    /// 1-based layer indices held by this side.
    pub fn layers(&self) -> Range<usize> {
        match self.side {
            Side::Device => 1..self.cut + 1,
            Side::Server => self.cut + 1..self.num_layers + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Pair a device-side submodel with its server-side counterpart into one
/// device model.
pub fn assemble_device_model(
    device_side: &SubModel,
    server_side: &SubModel,
    layout: &ModelLayout,
) -> Result<ModelState> {
    if device_side.side != Side::Device || server_side.side != Side::Server {
        return Err(Error::Assembly(
            "expected a device-side and a server-side submodel".into(),
        ));
    }
    if device_side.cut != server_side.cut {
        return Err(Error::Assembly(format!(
            "device side cut at {} but server side cut at {}",
            device_side.cut, server_side.cut
        )));
    }
    if device_side.num_layers != layout.num_layers()
        || server_side.num_layers != layout.num_layers()
    {
        return Err(Error::Assembly("layer count disagrees with layout".into()));
    }
    let expected = layout.prefix_len(device_side.cut);
    if device_side.params.len() != expected
        || server_side.params.len() != layout.total() - expected
    {
        return Err(Error::Assembly(format!(
            "submodel sizes {} + {} do not match the layout split {} + {}",
            device_side.params.len(),
            server_side.params.len(),
            expected,
            layout.total() - expected
        )));
    }
    let mut params = Vec::with_capacity(layout.total());
    params.extend_from_slice(&device_side.params);
    params.extend_from_slice(&server_side.params);
    ModelState::new(params, layout, device_side.cut)
}
