use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn;
use crate::error::{shape_err, Error, Result};
use crate::structured::{
    add_channel_bias,
    decompose_conv_layer, decompose_linear, forward_decomposed, forward_linear, linear_cfg,
    load_layer, pool_features, save_layer, structure_matrix, DecomposedLayer, StructuredConfig,
};
use crate::tensor::{conv, linear, sum_pool3d, ConvGeometry, SplitMix64, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyLayer {
    /// Standard, grouped or depthwise convolution. `cfg` describes one
    /// `(C/groups)×N×N` kernel.
    Conv {
        out_channels: usize,
        kernel: usize,
        geom: ConvGeometry,
        cfg: StructuredConfig,
    },
    Relu,
    GlobalAvgPool,
    /// Fully-connected layer with structure parameter `r` on its rows.
    Linear { out_features: usize, r: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    /// `C×H×W`
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<ToyLayer>,
}

impl ToyModelSpec {
    /// Default student: two structured 3×3 convolutions, pooling and a
    /// structured classifier.
    pub fn student() -> Self {
        let same = ConvGeometry::new(1, 1, 1);
        let down = ConvGeometry::new(2, 1, 1);
        Self {
            input: [3, 8, 8],
            classes: 4,
            layers: vec![
                ToyLayer::Conv {
                    out_channels: 8,
                    kernel: 3,
                    geom: same,
                    cfg: StructuredConfig { channels: 3, size: 3, c: 2, n: 2 },
                },
                ToyLayer::Relu,
                ToyLayer::Conv {
                    out_channels: 16,
                    kernel: 3,
                    geom: down,
                    cfg: StructuredConfig { channels: 8, size: 3, c: 4, n: 2 },
                },
                ToyLayer::Relu,
                ToyLayer::GlobalAvgPool,
                ToyLayer::Linear { out_features: 4, r: 8 },
            ],
        }
    }

    /// Unstructured network that labels the toy data.
    pub fn teacher() -> Self {
        Self {
            input: [3, 8, 8],
            classes: 4,
            layers: vec![
                ToyLayer::Conv {
                    out_channels: 8,
                    kernel: 3,
                    geom: ConvGeometry::new(1, 1, 1),
                    cfg: StructuredConfig::identity(3, 3),
                },
                ToyLayer::Relu,
                ToyLayer::Conv {
                    out_channels: 8,
                    kernel: 3,
                    geom: ConvGeometry::new(2, 1, 1),
                    cfg: StructuredConfig::identity(8, 3),
                },
                ToyLayer::Relu,
                ToyLayer::GlobalAvgPool,
                ToyLayer::Linear { out_features: 4, r: 8 },
            ],
        }
    }

    /// Checks that shapes chain and returns the input shape of every layer
    /// followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input.to_vec();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidConfig(format!("empty input {shape:?}")));
        }
        let mut shapes = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::ConstraintViolation { layer: i, message: msg };
            shape = match layer {
                ToyLayer::Conv { out_channels, kernel, geom, cfg } => {
                    let &[c, h, w] = shape.as_slice() else {
                        return Err(bad(format!("convolution needs a feature map, got {shape:?}")));
                    };
                    geom.validate()?;
                    cfg.validate().map_err(|e| bad(e.to_string()))?;
                    if c % geom.groups != 0 || out_channels % geom.groups != 0 || *out_channels == 0 {
                        return Err(bad(format!(
                            "{c} -> {out_channels} channels with {} groups",
                            geom.groups
                        )));
                    }
                    if cfg.channels != c / geom.groups || cfg.size != *kernel {
                        return Err(bad(format!(
                            "{cfg:?} does not describe a {}×{kernel}×{kernel} kernel",
                            c / geom.groups
                        )));
                    }
                    let (ho, wo) = geom.output_hw((h, w), (*kernel, *kernel))?;
                    vec![*out_channels, ho, wo]
                }
                ToyLayer::Relu => shape,
                ToyLayer::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(bad(format!("pooling needs a feature map, got {shape:?}")));
                    }
                    vec![shape[0]]
                }
                ToyLayer::Linear { out_features, r } => {
                    let &[q] = shape.as_slice() else {
                        return Err(bad(format!("linear layer needs a vector, got {shape:?}")));
                    };
                    if *r == 0 || *r > q || *out_features == 0 {
                        return Err(bad(format!("R = {r} with {q} inputs")));
                    }
                    vec![*out_features]
                }
            };
            shapes.push(shape.clone());
        }
        if shape != [self.classes] {
            return Err(Error::InvalidConfig(format!(
                "network ends in {shape:?}, expected {} logits",
                self.classes
            )));
        }
        Ok(shapes)
    }
}

/// Trainable parameters of one conv or linear layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    /// Full weights `W`, structured or not.
    Dense { weight: Tensor, bias: Tensor },
    /// Structured coefficients `α`; the effective weights are `A·α`.
    Alpha { alpha: Tensor, bias: Tensor },
}

impl Params {
    pub fn bias(&self) -> &Tensor {
        match self {
            Params::Dense { bias, .. } | Params::Alpha { bias, .. } => bias,
        }
    }

    fn main(&self) -> &Tensor {
        match self {
            Params::Dense { weight, .. } => weight,
            Params::Alpha { alpha, .. } => alpha,
        }
    }

    fn parts_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        match self {
            Params::Dense { weight, bias } => (weight, bias),
            Params::Alpha { alpha, bias } => (alpha, bias),
        }
    }
}

/// Anything that maps an input to class logits.
pub trait Classifier {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    spec: ToyModelSpec,
    /// One entry per layer; `None` for parameter-free layers.
    params: Vec<Option<Params>>,
}

/// Per-layer gradients, aligned with [`ToyModel::params`].
pub(crate) type Grads = Vec<Option<(Tensor, Tensor)>>;

fn uniform(rng: &mut SplitMix64, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| bound * rng.next_signed())
}

impl ToyModel {
    /// Kaiming-uniform weights and zero biases. With `structured` set, conv
    /// and linear layers hold `α` instead of full weights; `α` is scaled so
    /// that the composed weights have comparable output variance.
    pub fn init(spec: ToyModelSpec, structured: bool, rng: &mut SplitMix64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let params = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let (rows, cfg) = match layer {
                    ToyLayer::Conv { out_channels, cfg, .. } => (*out_channels, *cfg),
                    ToyLayer::Linear { out_features, r } => {
                        (*out_features, linear_cfg(shapes[i][0], *r))
                    }
                    _ => return None,
                };
                let bias = Tensor::zeros(&[rows]);
                let is_conv = matches!(layer, ToyLayer::Conv { .. });
                Some(if structured {
                    let (pc, ps, _) = cfg.pool_dims();
                    let bound = (6.0 / (cfg.num_basis() * pc * ps * ps) as f64).sqrt();
                    let shape = if is_conv {
                        vec![rows, cfg.c, cfg.n, cfg.n]
                    } else {
                        vec![rows, cfg.c]
                    };
                    Params::Alpha { alpha: uniform(rng, &shape, bound), bias }
                } else {
                    let bound = (6.0 / cfg.kernel_len() as f64).sqrt();
                    let shape = if is_conv {
                        vec![rows, cfg.channels, cfg.size, cfg.size]
                    } else {
                        vec![rows, cfg.channels]
                    };
                    Params::Dense { weight: uniform(rng, &shape, bound), bias }
                })
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ToyModelSpec, params: Vec<Option<Params>>) -> Result<Self> {
        let shapes = spec.shapes()?;
        if params.len() != spec.layers.len() {
            return Err(shape_err(format!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        let model = Self { spec, params };
        for (i, (layer, p)) in model.spec.layers.iter().zip(&model.params).enumerate() {
            let expected = match (layer, p) {
                (ToyLayer::Conv { out_channels, cfg, .. }, Some(Params::Dense { .. })) => {
                    vec![*out_channels, cfg.channels, cfg.size, cfg.size]
                }
                (ToyLayer::Conv { out_channels, cfg, .. }, Some(Params::Alpha { .. })) => {
                    vec![*out_channels, cfg.c, cfg.n, cfg.n]
                }
                (ToyLayer::Linear { out_features, .. }, Some(Params::Dense { .. })) => {
                    vec![*out_features, shapes[i][0]]
                }
                (ToyLayer::Linear { out_features, r }, Some(Params::Alpha { .. })) => {
                    vec![*out_features, *r]
                }
                (ToyLayer::Relu | ToyLayer::GlobalAvgPool, None) => continue,
                _ => {
                    return Err(Error::ConstraintViolation {
                        layer: i,
                        message: "parameters do not match layer kind".into(),
                    })
                }
            };
            let p = p.as_ref().expect("matched above");
            p.main().expect_shape(&expected)?;
            p.bias().expect_shape(&expected[..1])?;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    /// Structure config of every trainable layer, in order.
    pub fn cfgs(&self) -> Vec<StructuredConfig> {
        let shapes = self.spec.shapes().expect("validated");
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                ToyLayer::Conv { cfg, .. } => Some(*cfg),
                ToyLayer::Linear { r, .. } => Some(linear_cfg(shapes[i][0], *r)),
                _ => None,
            })
            .collect()
    }

    fn layer_cfg(&self, idx: usize) -> StructuredConfig {
        match &self.spec.layers[idx] {
            ToyLayer::Conv { cfg, .. } => *cfg,
            ToyLayer::Linear { r, .. } => {
                linear_cfg(self.spec.shapes().expect("validated")[idx][0], *r)
            }
            _ => unreachable!("parameter-free layer"),
        }
    }

    /// Full weights of every trainable layer, composing `A·α` where needed.
    pub fn effective_weights(&self) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
            .map(|(i, p)| match p {
                Params::Dense { weight, .. } => Ok(weight.clone()),
                Params::Alpha { alpha, .. } => {
                    let cfg = self.layer_cfg(i);
                    let w = structure_matrix(&cfg)?.compose_rows(alpha.data())?;
                    let mut shape = vec![alpha.shape()[0]];
                    if matches!(self.spec.layers[i], ToyLayer::Conv { .. }) {
                        shape.extend(cfg.kernel_shape());
                    } else {
                        shape.push(cfg.channels);
                    }
                    Tensor::new(shape, w)
                }
            })
            .collect()
    }

    /// Forward pass keeping what the backward pass needs: the input of every
    /// layer, plus the pooled input of structured layers.
    fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<(Tensor, Option<Tensor>)>)> {
        let mut cache = Vec::with_capacity(self.spec.layers.len());
        let mut h = x.clone();
        for (layer, p) in self.spec.layers.iter().zip(&self.params) {
            let (out, pooled) = match (layer, p) {
                (ToyLayer::Conv { geom, .. }, Some(Params::Dense { weight, bias })) => {
                    let mut y = conv(&h, weight, geom)?;
                    add_channel_bias(&mut y, bias);
                    (y, None)
                }
                (ToyLayer::Conv { geom, cfg, .. }, Some(Params::Alpha { alpha, bias })) => {
                    let pooled = sum_pool3d(&h, cfg.pool_dims(), &pool_geom(geom))?;
                    let mut y = conv(&pooled, alpha, &small_geom(geom))?;
                    add_channel_bias(&mut y, bias);
                    (y, Some(pooled))
                }
                (ToyLayer::Linear { .. }, Some(Params::Dense { weight, bias })) => {
                    let mut y = linear(weight, &h)?;
                    nn::add_vector(&mut y, bias)?;
                    (y, None)
                }
                (ToyLayer::Linear { r, .. }, Some(Params::Alpha { alpha, bias })) => {
                    let pooled = pool_features(&h, h.len() - r + 1)?;
                    let mut y = linear(alpha, &pooled)?;
                    nn::add_vector(&mut y, bias)?;
                    (y, Some(pooled))
                }
                (ToyLayer::Relu, _) => (nn::relu(&h), None),
                (ToyLayer::GlobalAvgPool, _) => (nn::global_avg_pool(&h), None),
                _ => unreachable!("validated in from_params"),
            };
            cache.push((std::mem::replace(&mut h, out), pooled));
        }
        Ok((h, cache))
    }

    /// Cross-entropy of one sample and the gradient of every parameter.
    pub(crate) fn loss_and_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Grads)> {
        let (logits, cache) = self.forward_cached(x)?;
        let (loss, mut dy) = nn::softmax_cross_entropy(&logits, label);
        let mut grads: Grads = vec![None; self.params.len()];
        for (i, (layer, (input, pooled))) in self.spec.layers.iter().zip(&cache).enumerate().rev() {
            let need_dx = i > 0;
            dy = match (layer, &self.params[i]) {
                (ToyLayer::Conv { geom, .. }, Some(Params::Dense { weight, .. })) => {
                    let (dw, dx) = nn::conv_backward(input, weight, &dy, geom, need_dx);
                    grads[i] = Some((dw, nn::channel_sums(&dy)));
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (ToyLayer::Conv { geom, cfg, .. }, Some(Params::Alpha { alpha, .. })) => {
                    let pooled = pooled.as_ref().expect("cached");
                    let (da, dp) = nn::conv_backward(pooled, alpha, &dy, &small_geom(geom), need_dx);
                    grads[i] = Some((da, nn::channel_sums(&dy)));
                    match dp {
                        Some(dp) => nn::sum_pool_backward(input.shape(), cfg.pool_dims(), &pool_geom(geom), &dp),
                        None => break,
                    }
                }
                (ToyLayer::Linear { .. }, Some(Params::Dense { weight, .. })) => {
                    let (dw, dx) = nn::linear_backward(input, weight, &dy);
                    grads[i] = Some((dw, dy));
                    dx
                }
                (ToyLayer::Linear { r, .. }, Some(Params::Alpha { alpha, .. })) => {
                    let pooled = pooled.as_ref().expect("cached");
                    let (da, dp) = nn::linear_backward(pooled, alpha, &dy);
                    grads[i] = Some((da, dy));
                    nn::pool1d_backward(input.len(), input.len() - r + 1, &dp)
                }
                (ToyLayer::Relu, _) => nn::relu_backward(input, &dy),
                (ToyLayer::GlobalAvgPool, _) => nn::global_avg_pool_backward(input.shape(), &dy),
                _ => unreachable!("validated in from_params"),
            };
        }
        Ok((loss, grads))
    }

    /// `θ ← θ − lr·g` for every parameter.
    pub(crate) fn apply(&mut self, grads: &Grads, lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let (Some(p), Some((gw, gb))) = (p.as_mut(), g) {
                let (w, b) = p.parts_mut();
                w.data_mut().iter_mut().zip(gw.data()).for_each(|(v, g)| *v -= lr * g);
                b.data_mut().iter_mut().zip(gb.data()).for_each(|(v, g)| *v -= lr * g);
            }
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.logits(x)?.data()))
    }
}

impl Classifier for ToyModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.spec.input)?;
        Ok(self.forward_cached(x)?.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn pool_geom(geom: &ConvGeometry) -> ConvGeometry {
    ConvGeometry { stride: [1, 1], ..*geom }
}

fn small_geom(geom: &ConvGeometry) -> ConvGeometry {
    ConvGeometry { padding: [0, 0], ..*geom }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Layer(DecomposedLayer),
    Relu,
    GlobalAvgPool,
}

/// A toy network with every conv and linear layer replaced by sum-pooling
/// plus a small layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedModel {
    pub input: [usize; 3],
    pub stages: Vec<Stage>,
}

impl DecomposedModel {
    /// Decomposition residual of every decomposed layer, in order.
    pub fn residuals(&self) -> Vec<f64> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Layer(l) => Some(l.max_residual()),
                _ => None,
            })
            .collect()
    }

    /// Writes `model.json` listing the stages plus one `layer_{i}` directory
    /// per decomposed layer.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let kinds: Vec<&str> = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| -> Result<&str> {
                Ok(match s {
                    Stage::Layer(l) => {
                        save_layer(l, &dir.join(format!("layer_{i}")))?;
                        "layer"
                    }
                    Stage::Relu => "relu",
                    Stage::GlobalAvgPool => "global_avg_pool",
                })
            })
            .collect::<Result<_>>()?;
        let doc = serde_json::json!({ "input": self.input, "stages": kinds });
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            input: [usize; 3],
            stages: Vec<String>,
        }
        let doc: Doc = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        let stages = doc
            .stages
            .iter()
            .enumerate()
            .map(|(i, kind)| match kind.as_str() {
                "layer" => Ok(Stage::Layer(load_layer(&dir.join(format!("layer_{i}")))?)),
                "relu" => Ok(Stage::Relu),
                "global_avg_pool" => Ok(Stage::GlobalAvgPool),
                other => Err(Error::InvalidConfig(format!("unknown stage {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { input: doc.input, stages })
    }
}

impl Classifier for DecomposedModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input)?;
        let mut h = x.clone();
        for stage in &self.stages {
            h = match stage {
                Stage::Layer(DecomposedLayer::Conv(l)) => forward_decomposed(&h, l)?,
                Stage::Layer(DecomposedLayer::Linear(l)) => forward_linear(&h, l)?,
                Stage::Relu => nn::relu(&h),
                Stage::GlobalAvgPool => nn::global_avg_pool(&h),
            };
        }
        Ok(h)
    }
}

/// Replaces every conv and linear layer by its structured decomposition.
/// Fails on the first layer whose residual exceeds `residual_tol`.
pub fn decompose_model(model: &ToyModel, residual_tol: f64) -> Result<DecomposedModel> {
    let weights = model.effective_weights()?;
    let mut weights = weights.into_iter();
    let stages = model
        .spec
        .layers
        .iter()
        .zip(&model.params)
        .enumerate()
        .map(|(i, (layer, p))| {
            let name = |e: Error| match e {
                Error::ResidualExceeded { location, residual, tolerance } => Error::ResidualExceeded {
                    location: format!("layer {i}, {location}"),
                    residual,
                    tolerance,
                },
                other => other,
            };
            Ok(match layer {
                ToyLayer::Conv { geom, cfg, .. } => {
                    let w = weights.next().expect("one weight per trainable layer");
                    let bias = p.as_ref().map(Params::bias);
                    Stage::Layer(DecomposedLayer::Conv(
                        decompose_conv_layer(&w, cfg, geom, bias, residual_tol).map_err(name)?,
                    ))
                }
                ToyLayer::Linear { r, .. } => {
                    let w = weights.next().expect("one weight per trainable layer");
                    let bias = p.as_ref().map(Params::bias);
                    Stage::Layer(DecomposedLayer::Linear(
                        decompose_linear(&w, *r, bias, residual_tol).map_err(name)?,
                    ))
                }
                ToyLayer::Relu => Stage::Relu,
                ToyLayer::GlobalAvgPool => Stage::GlobalAvgPool,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DecomposedModel { input: model.spec.input, stages })
}
