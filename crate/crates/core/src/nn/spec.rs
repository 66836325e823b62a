use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a network. Dense and Conv layers are ReLU-activated;
/// `SoftmaxOutput` is an affine map to class logits followed by softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Per-element `x * w + b`, shape preserving. Starts as the identity;
    /// the trainer sets it to standardize the inputs.
    Scale,
    Dense { units: usize },
    /// Valid (unpadded), stride-1 convolution over `[height, width, channels]`.
    Conv { kernel_h: usize, kernel_w: usize, filters: usize },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill a
    /// window are dropped.
    MaxPool { pool_h: usize, pool_w: usize },
    Flatten,
    SoftmaxOutput { classes: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[len]` for dense inputs, `[height, width, channels]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Resolved shapes and parameter offsets of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Offset of the layer's weights in the flat parameter vector.
    pub offset: usize,
    pub weights: usize,
    pub biases: usize,
}

impl LayerPlan {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn param_len(&self) -> usize {
        self.weights + self.biases
    }

    /// Inputs feeding one output unit.
    pub fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => self.in_len(),
            LayerSpec::Conv { kernel_h, kernel_w, .. } => kernel_h * kernel_w * self.in_shape[2],
            _ => 0,
        }
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl NetworkSpec {
    /// Checks the shape chain and lays out parameters.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(shape_err(format!("invalid input shape {:?}", self.input_shape)));
        }
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { .. }) => {}
            _ => return Err(shape_err("the last layer must be SoftmaxOutput".into())),
        }
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::SoftmaxOutput { .. }))
            .count();
        if softmaxes != 1 {
            return Err(shape_err(format!("expected exactly one SoftmaxOutput, found {softmaxes}")));
        }

        let mut shape = self.input_shape.clone();
        let mut offset = 0;
        let mut plans = Vec::with_capacity(self.layers.len());
        for (i, &spec) in self.layers.iter().enumerate() {
            let (out_shape, weights, biases) = match spec {
                LayerSpec::Scale => {
                    let n = shape.iter().product();
                    (shape.clone(), n, n)
                }
                LayerSpec::Dense { units } | LayerSpec::SoftmaxOutput { classes: units } => {
                    if shape.len() != 1 {
                        return Err(shape_err(format!(
                            "layer {i}: dense layer needs a flat input, got {shape:?}"
                        )));
                    }
                    if units == 0 {
                        return Err(shape_err(format!("layer {i}: zero units")));
                    }
                    (vec![units], units * shape[0], units)
                }
                LayerSpec::Conv {
                    kernel_h,
                    kernel_w,
                    filters,
                } => {
                    if shape.len() != 3 {
                        return Err(shape_err(format!(
                            "layer {i}: convolution needs [h, w, c] input, got {shape:?}"
                        )));
                    }
                    if kernel_h == 0 || kernel_w == 0 || filters == 0 || kernel_h > shape[0] || kernel_w > shape[1] {
                        return Err(shape_err(format!(
                            "layer {i}: {kernel_h}x{kernel_w} kernel does not fit {shape:?}"
                        )));
                    }
                    (
                        vec![shape[0] - kernel_h + 1, shape[1] - kernel_w + 1, filters],
                        kernel_h * kernel_w * shape[2] * filters,
                        filters,
                    )
                }
                LayerSpec::MaxPool { pool_h, pool_w } => {
                    if shape.len() != 3 || pool_h == 0 || pool_w == 0 {
                        return Err(shape_err(format!("layer {i}: cannot pool {shape:?}")));
                    }
                    let out = vec![shape[0] / pool_h, shape[1] / pool_w, shape[2]];
                    if out[0] == 0 || out[1] == 0 {
                        return Err(shape_err(format!(
                            "layer {i}: {pool_h}x{pool_w} pooling underflows {shape:?}"
                        )));
                    }
                    (out, 0, 0)
                }
                LayerSpec::Flatten => (vec![shape.iter().product()], 0, 0),
            };
            plans.push(LayerPlan {
                spec,
                in_shape: shape.clone(),
                out_shape: out_shape.clone(),
                offset,
                weights,
                biases,
            });
            offset += weights + biases;
            shape = out_shape;
        }
        Ok(plans)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.plan()?.iter().map(LayerPlan::param_len).sum())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) => *classes,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvNetConfig {
    pub filters1: usize,
    pub filters2: usize,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        Self {
            filters1: 8,
            filters2: 16,
        }
    }
}

/// Two convolution + 2x1 max-pool stages and a softmax classifier over a
/// `rows x cols` feature image. The first kernel spans all columns.
pub fn build_conv_net(rows: usize, cols: usize, n_classes: usize, cfg: ConvNetConfig) -> Result<NetworkSpec> {
    if n_classes < 2 {
        return Err(shape_err(format!("need at least 2 classes, got {n_classes}")));
    }
    let spec = NetworkSpec {
        input_shape: vec![rows, cols, 1],
        layers: vec![
            LayerSpec::Conv {
                kernel_h: 3,
                kernel_w: cols,
                filters: cfg.filters1,
            },
            LayerSpec::MaxPool { pool_h: 2, pool_w: 1 },
            LayerSpec::Conv {
                kernel_h: 3,
                kernel_w: 1,
                filters: cfg.filters2,
            },
            LayerSpec::MaxPool { pool_h: 2, pool_w: 1 },
            LayerSpec::Flatten,
            LayerSpec::SoftmaxOutput { classes: n_classes },
        ],
    };
    spec.plan()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcNetConfig {
    /// Hidden widths for 256-long inputs.
    pub hidden: Vec<usize>,
    /// Extra leading layer for 512-long inputs.
    pub wide_extra: usize,
}

impl Default for FcNetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![200, 100, 50],
            wide_extra: 300,
        }
    }
}

/// The same network behind a [`LayerSpec::Scale`] input layer.
pub fn with_input_scale(mut spec: NetworkSpec) -> NetworkSpec {
    if spec.layers.first() != Some(&LayerSpec::Scale) {
        spec.layers.insert(0, LayerSpec::Scale);
    }
    spec
}

pub fn build_fc_net(input_dim: usize, n_classes: usize, cfg: &FcNetConfig) -> Result<NetworkSpec> {
    if n_classes < 2 {
        return Err(shape_err(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut layers = Vec::new();
    if input_dim > 256 {
        layers.push(LayerSpec::Dense { units: cfg.wide_extra });
    }
    layers.extend(cfg.hidden.iter().map(|&units| LayerSpec::Dense { units }));
    layers.push(LayerSpec::SoftmaxOutput { classes: n_classes });
    let spec = NetworkSpec {
        input_shape: vec![input_dim],
        layers,
    };
    spec.plan()?;
    Ok(spec)
}
