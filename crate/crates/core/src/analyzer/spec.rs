use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structured::{linear_cfg, StructuredConfig};
use crate::tensor::ConvGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    /// Depthwise: `cout` channels, one `1×N×N` kernel each.
    Dwconv,
    /// Pointwise `1×1` convolution.
    Pwconv,
    /// Fully connected `P×Q`, stored as `cout = P`, `cin = Q`, `c = R`.
    Linear,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dwconv => "dwconv",
            LayerKind::Pwconv => "pwconv",
            LayerKind::Linear => "linear",
        }
    }
}

/// One layer of a network description, with its input size resolved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: LayerKind,
    pub c_out: usize,
    /// Kernel depth as written in the tables; 1 for depthwise layers.
    pub c_in: usize,
    pub k: usize,
    pub c: usize,
    pub n: usize,
    /// Groups are set to `c_out` for depthwise layers.
    pub geom: ConvGeometry,
    pub input_hw: (usize, usize),
}

impl LayerSpec {
    /// Structure of a single kernel (a single row for linear layers).
    pub fn cfg(&self) -> StructuredConfig {
        match self.kind {
            LayerKind::Linear => linear_cfg(self.c_in, self.c),
            _ => StructuredConfig { channels: self.c_in, size: self.k, c: self.c, n: self.n },
        }
    }

    /// Channels of the incoming feature map.
    pub fn input_channels(&self) -> usize {
        match self.kind {
            LayerKind::Dwconv => self.c_out,
            _ => self.c_in,
        }
    }

    pub fn output_hw(&self) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::Linear => Ok((1, 1)),
            _ => self.geom.output_hw(self.input_hw, (self.k, self.k)),
        }
    }

    fn violation(&self, message: impl Into<String>) -> Error {
        Error::ConstraintViolation { layer: self.index, message: message.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_out == 0 || self.c_in == 0 || self.k == 0 {
            return Err(self.violation("zero dimension"));
        }
        if self.c == 0 || self.c > self.c_in {
            return Err(self.violation(format!("c = {} outside 1..={}", self.c, self.c_in)));
        }
        if self.n == 0 || self.n > self.k {
            return Err(self.violation(format!("n = {} outside 1..={}", self.n, self.k)));
        }
        match self.kind {
            LayerKind::Pwconv | LayerKind::Linear if self.k != 1 => {
                return Err(self.violation(format!("{} layer with k = {}", self.kind.as_str(), self.k)));
            }
            LayerKind::Dwconv if self.c_in != 1 => {
                return Err(self.violation(format!("depthwise layer with cin = {}", self.c_in)));
            }
            _ => {}
        }
        self.geom.validate().map_err(|e| self.violation(e.to_string()))?;
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(self.violation("empty input"));
        }
        self.output_hw().map_err(|e| self.violation(e.to_string()))?;
        Ok(())
    }
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    idx: Option<usize>,
    name: Option<String>,
    kind: LayerKind,
    cout: usize,
    cin: usize,
    #[serde(default = "one")]
    k: usize,
    c: usize,
    #[serde(default = "one")]
    n: usize,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    pad: usize,
    #[serde(default = "one")]
    dilation: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    input_size: Option<(usize, usize)>,
    layers: Vec<RawLayer>,
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

/// Parses a network description: either a JSON array of layer objects
/// `{kind, cout, cin, k, c, n, stride, pad, dilation}` (plus optional `idx`
/// and `name`), or an object `{input_size: [H, W], layers: [...]}`.
///
/// Spatial sizes are propagated from `input_hw`, falling back to the file's
/// `input_size`. A linear layer resets the spatial size to `1×1`.
pub fn parse_network_str(text: &str, input_hw: Option<(usize, usize)>) -> Result<Vec<LayerSpec>> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let (file_hw, raw) = if trimmed.starts_with('{') {
        let net: RawNetwork = serde_json::from_str(text).map_err(parse_error)?;
        (net.input_size, net.layers)
    } else {
        (None, serde_json::from_str::<Vec<RawLayer>>(text).map_err(parse_error)?)
    };
    if raw.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let mut hw = input_hw
        .or(file_hw)
        .ok_or_else(|| Error::InvalidConfig("no input size given".into()))?;
    let mut layers = Vec::with_capacity(raw.len());
    for (pos, r) in raw.into_iter().enumerate() {
        let groups = if r.kind == LayerKind::Dwconv { r.cout.max(1) } else { 1 };
        let layer = LayerSpec {
            index: r.idx.unwrap_or(pos + 1),
            name: r.name,
            kind: r.kind,
            c_out: r.cout,
            c_in: r.cin,
            k: r.k,
            c: r.c,
            n: r.n,
            geom: ConvGeometry {
                stride: [r.stride; 2],
                padding: [r.pad; 2],
                dilation: [r.dilation; 2],
                groups,
            },
            input_hw: if r.kind == LayerKind::Linear { (1, 1) } else { hw },
        };
        layer.validate()?;
        hw = layer.output_hw()?;
        layers.push(layer);
    }
    Ok(layers)
}

pub fn parse_network_spec(path: &Path, input_hw: Option<(usize, usize)>) -> Result<Vec<LayerSpec>> {
    parse_network_str(&fs::read_to_string(path)?, input_hw)
}
