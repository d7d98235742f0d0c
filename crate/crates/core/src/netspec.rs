//! Network topology, shape inference, weight footprints and NVM/SRAM placement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shipped default topology.
pub const DEFAULT_NETWORK_CFG: &str = include_str!("../../../data/default_network.cfg");

/// Scratchpad reserved in the global buffer, in bytes.
pub const DEFAULT_SCRATCH_BYTES: u64 = 4_200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub size: u32,
    pub stride: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        filter_h: u32,
        filter_w: u32,
        in_channels: u32,
        out_channels: u32,
        stride: u32,
        padding: u32,
    },
    FullyConnected {
        in_dim: u64,
        out_dim: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
    pub pool: Option<Pool>,
}

impl LayerSpec {
    pub fn conv(name: &str, filter: (u32, u32), channels: (u32, u32), stride: u32, padding: u32) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv {
                filter_h: filter.0,
                filter_w: filter.1,
                in_channels: channels.0,
                out_channels: channels.1,
                stride,
                padding,
            },
            activation: Activation::Relu,
            pool: None,
        }
    }

    pub fn fc(name: &str, in_dim: u64, out_dim: u64) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::FullyConnected { in_dim, out_dim },
            activation: Activation::Relu,
            pool: None,
        }
    }

    pub fn with_pool(mut self, size: u32, stride: u32) -> Self {
        self.pool = Some(Pool { size, stride });
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    pub fn weight_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv {
                filter_h,
                filter_w,
                in_channels,
                out_channels,
                ..
            } => filter_h as u64 * filter_w as u64 * in_channels as u64 * out_channels as u64,
            LayerKind::FullyConnected { in_dim, out_dim } => in_dim * out_dim,
        }
    }

    /// One bias per output unit.
    pub fn bias_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { out_channels, .. } => out_channels as u64,
            LayerKind::FullyConnected { out_dim, .. } => out_dim,
        }
    }

    /// Row label used in cost tables, with fused activation and pooling.
    pub fn report_label(&self) -> String {
        let mut label = self.name.clone();
        if self.activation == Activation::Relu {
            label.push_str("+ReLU");
        }
        if self.pool.is_some() {
            label.push_str("+Maxpool");
        }
        label
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("layer {}: {what}", self.name)));
        match self.kind {
            LayerKind::Conv {
                filter_h,
                filter_w,
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                if filter_h == 0 || filter_w == 0 {
                    return bad("filter dims must be >= 1");
                }
                if stride == 0 {
                    return bad("stride must be >= 1");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be >= 1");
                }
            }
            LayerKind::FullyConnected { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return bad("in_dim and out_dim must be >= 1");
                }
                if self.pool.is_some() {
                    return bad("pooling is only supported on conv layers");
                }
            }
        }
        if let Some(p) = self.pool {
            if p.size == 0 || p.stride == 0 {
                return bad("pool size and stride must be >= 1");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shape {
    Map { h: u64, w: u64, c: u64 },
    Vector(u64),
}

impl Shape {
    pub fn elements(&self) -> u64 {
        match *self {
            Shape::Map { h, w, c } => h * w * c,
            Shape::Vector(n) => n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Map { h, w, c } => write!(f, "{h}x{w}x{c}"),
            Shape::Vector(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_h: u64,
    pub input_w: u64,
    pub input_channels: u64,
    pub layers: Vec<LayerSpec>,
    pub weight_precision_bits: u32,
    pub actions: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    height: u64,
    width: u64,
    channels: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    name: String,
    kind: String,
    filter: Option<[u32; 2]>,
    channels: Option<[u32; 2]>,
    stride: Option<u32>,
    padding: Option<u32>,
    dims: Option<[u64; 2]>,
    activation: Option<Activation>,
    pool: Option<Pool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    weight_precision_bits: Option<u32>,
    actions: Option<u64>,
    input: Option<RawInput>,
    #[serde(rename = "layer")]
    layers: Vec<RawLayer>,
}

impl RawLayer {
    fn into_spec(self) -> Result<LayerSpec> {
        let missing = |field: &str| Error::Config(format!("layer {}: missing `{field}`", self.name));
        let kind = match self.kind.as_str() {
            "conv" => {
                let [fh, fw] = self.filter.ok_or_else(|| missing("filter"))?;
                let [cin, cout] = self.channels.ok_or_else(|| missing("channels"))?;
                LayerKind::Conv {
                    filter_h: fh,
                    filter_w: fw,
                    in_channels: cin,
                    out_channels: cout,
                    stride: self.stride.unwrap_or(1),
                    padding: self.padding.unwrap_or(0),
                }
            }
            "fc" => {
                let [i, o] = self.dims.ok_or_else(|| missing("dims"))?;
                LayerKind::FullyConnected { in_dim: i, out_dim: o }
            }
            other => {
                return Err(Error::Config(format!(
                    "layer {}: unknown kind `{other}` (expected conv or fc)",
                    self.name
                )))
            }
        };
        Ok(LayerSpec {
            name: self.name,
            kind,
            activation: self.activation.unwrap_or(Activation::Relu),
            pool: self.pool,
        })
    }
}

impl NetworkSpec {
    pub fn default_network() -> Self {
        Self::from_toml_str(DEFAULT_NETWORK_CFG).expect("shipped network config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawNetwork = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let input = raw.input.unwrap_or(RawInput {
            height: 224,
            width: 224,
            channels: 3,
        });
        let layers = raw
            .layers
            .into_iter()
            .map(RawLayer::into_spec)
            .collect::<Result<Vec<_>>>()?;
        let net = NetworkSpec {
            input_h: input.height,
            input_w: input.width,
            input_channels: input.channels,
            layers,
            weight_precision_bits: raw.weight_precision_bits.unwrap_or(16),
            actions: raw.actions.unwrap_or(5),
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks per-layer invariants, the shape chain and the action count.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if self.weight_precision_bits == 0 {
            return Err(Error::Config("weight_precision_bits must be >= 1".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if self.layers[..i].iter().any(|p| p.name == l.name) {
                return Err(Error::Config(format!("duplicate layer name {}", l.name)));
            }
        }
        let shapes = infer_shapes(self)?;
        let out = shapes.last().map(|s| s.output.elements()).unwrap_or(0);
        if out != self.actions {
            return Err(Error::Config(format!(
                "final layer {} produces {out} outputs but the action space has {}",
                self.layers.last().unwrap().name,
                self.actions
            )));
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn fc_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.is_conv()).count()
    }

    fn bytes(&self, count: u64) -> u64 {
        (count * self.weight_precision_bits as u64).div_ceil(8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub filter_h: u64,
    pub filter_w: u64,
    pub in_channels: u64,
    pub out_channels: u64,
    pub stride: u64,
    pub padding: u64,
    pub in_h: u64,
    pub in_w: u64,
    pub out_h: u64,
    pub out_w: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub spec: LayerSpec,
    pub input: Shape,
    /// Output before pooling.
    pub conv_output: Shape,
    pub output: Shape,
    pub macs: u64,
    pub weights: u64,
    pub biases: u64,
}

impl LayerShape {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match (self.spec.kind, self.input, self.conv_output) {
            (
                LayerKind::Conv {
                    filter_h,
                    filter_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                },
                Shape::Map { h: in_h, w: in_w, .. },
                Shape::Map { h: out_h, w: out_w, .. },
            ) => Some(ConvGeometry {
                filter_h: filter_h as u64,
                filter_w: filter_w as u64,
                in_channels: in_channels as u64,
                out_channels: out_channels as u64,
                stride: stride as u64,
                padding: padding as u64,
                in_h,
                in_w,
                out_h,
                out_w,
            }),
            _ => None,
        }
    }

    pub fn fc_dims(&self) -> Option<(u64, u64)> {
        match self.spec.kind {
            LayerKind::FullyConnected { in_dim, out_dim } => Some((in_dim, out_dim)),
            _ => None,
        }
    }
}

/// Output length of a sliding window along one axis.
pub fn window_output(len: u64, window: u64, stride: u64, padding: u64) -> Option<u64> {
    let padded = len + 2 * padding;
    if window == 0 || stride == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Walks the layer chain and derives per-layer shapes and MAC counts.
pub fn infer_shapes(net: &NetworkSpec) -> Result<Vec<LayerShape>> {
    let mut current = Shape::Map {
        h: net.input_h,
        w: net.input_w,
        c: net.input_channels,
    };
    let mut prev_name = "input".to_string();
    let mut out = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mismatch = |detail: String| Error::ShapeMismatch {
            prev: prev_name.clone(),
            next: layer.name.clone(),
            detail,
        };
        let (conv_output, macs) = match layer.kind {
            LayerKind::Conv {
                filter_h,
                filter_w,
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                let Shape::Map { h, w, c } = current else {
                    return Err(mismatch(format!("conv layer needs a feature map, got vector {current}")));
                };
                if c != in_channels as u64 {
                    return Err(mismatch(format!("{c} channels produced, {in_channels} expected")));
                }
                let oh = window_output(h, filter_h as u64, stride as u64, padding as u64);
                let ow = window_output(w, filter_w as u64, stride as u64, padding as u64);
                let (Some(oh), Some(ow)) = (oh, ow) else {
                    return Err(mismatch(format!(
                        "filter {filter_h}x{filter_w} larger than padded input {h}x{w}"
                    )));
                };
                let co = out_channels as u64;
                let macs = oh * ow * co * filter_h as u64 * filter_w as u64 * in_channels as u64;
                (Shape::Map { h: oh, w: ow, c: co }, macs)
            }
            LayerKind::FullyConnected { in_dim, out_dim } => {
                if current.elements() != in_dim {
                    return Err(mismatch(format!(
                        "{} values produced ({current}), in_dim is {in_dim}",
                        current.elements()
                    )));
                }
                (Shape::Vector(out_dim), in_dim * out_dim)
            }
        };
        let output = match (layer.pool, conv_output) {
            (Some(p), Shape::Map { h, w, c }) => {
                let ph = window_output(h, p.size as u64, p.stride as u64, 0);
                let pw = window_output(w, p.size as u64, p.stride as u64, 0);
                match (ph, pw) {
                    (Some(ph), Some(pw)) => Shape::Map { h: ph, w: pw, c },
                    _ => return Err(mismatch(format!("pool window {} larger than {h}x{w}", p.size))),
                }
            }
            (_, s) => s,
        };
        out.push(LayerShape {
            spec: layer.clone(),
            input: current,
            conv_output,
            output,
            macs,
            weights: layer.weight_count(),
            biases: layer.bias_count(),
        });
        current = output;
        prev_name = layer.name.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFootprint {
    pub name: String,
    pub weight_bytes: u64,
    pub bias_bytes: u64,
}

impl LayerFootprint {
    pub fn total_bytes(&self) -> u64 {
        self.weight_bytes + self.bias_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub layers: Vec<LayerFootprint>,
}

impl Footprint {
    pub fn total_bytes(&self) -> u64 {
        self.layers.iter().map(LayerFootprint::total_bytes).sum()
    }

    pub fn layer_bytes(&self, name: &str) -> Option<u64> {
        self.layers.iter().find(|l| l.name == name).map(LayerFootprint::total_bytes)
    }

    /// Sum over the named layers; unknown names contribute nothing.
    pub fn group_bytes(&self, names: &[&str]) -> u64 {
        names.iter().filter_map(|n| self.layer_bytes(n)).sum()
    }
}

pub fn weight_footprint(net: &NetworkSpec) -> Footprint {
    Footprint {
        layers: net
            .layers
            .iter()
            .map(|l| LayerFootprint {
                name: l.name.clone(),
                weight_bytes: net.bytes(l.weight_count()),
                bias_bytes: net.bytes(l.bias_count()),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrainingPolicy {
    E2E,
    LastK(usize),
}

impl TrainingPolicy {
    pub fn last_k(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("LastK requires k >= 1".into()));
        }
        Ok(TrainingPolicy::LastK(k))
    }

    /// Per-layer trainable mask; rejects k outside 1..=number of FC layers.
    pub fn trainable_mask(&self, net: &NetworkSpec) -> Result<Vec<bool>> {
        let n = net.layers.len();
        match *self {
            TrainingPolicy::E2E => Ok(vec![true; n]),
            TrainingPolicy::LastK(k) => {
                let fc = net.fc_layer_count();
                if k == 0 || k > fc {
                    return Err(Error::Config(format!(
                        "LastK({k}) invalid: network has {fc} FC layers"
                    )));
                }
                if net.layers[n - k..].iter().any(LayerSpec::is_conv) {
                    return Err(Error::Config(format!(
                        "LastK({k}) would train a conv layer"
                    )));
                }
                Ok((0..n).map(|i| i >= n - k).collect())
            }
        }
    }
}

impl fmt::Display for TrainingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainingPolicy::E2E => f.write_str("E2E"),
            TrainingPolicy::LastK(k) => write!(f, "L{k}"),
        }
    }
}

impl From<TrainingPolicy> for String {
    fn from(p: TrainingPolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for TrainingPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for TrainingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "e2e" {
            return Ok(TrainingPolicy::E2E);
        }
        let digits = t
            .strip_prefix("last")
            .or_else(|| t.strip_prefix('l'))
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))?;
        let k: usize = digits
            .parse()
            .map_err(|_| Error::Config(format!("unknown policy `{s}`")))?;
        TrainingPolicy::last_k(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Location {
    Nvm,
    Sram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerPlacement {
    pub name: String,
    pub location: Location,
    pub trainable: bool,
    pub bytes: u64,
}

impl LayerPlacement {
    /// Trainable but left in NVM: every update costs NVM writes.
    pub fn nvm_trainable(&self) -> bool {
        self.trainable && self.location == Location::Nvm
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlacementMap {
    pub layers: Vec<LayerPlacement>,
    pub sram_weight_bytes: u64,
    pub gradient_buffer_bytes: u64,
    pub scratch_bytes: u64,
    pub sram_total_bytes: u64,
    pub nvm_total_bytes: u64,
}

impl PlacementMap {
    pub fn get(&self, name: &str) -> Option<&LayerPlacement> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &LayerPlacement> {
        self.layers.iter().filter(|l| l.nvm_trainable())
    }
}

/// How much SRAM to reserve for weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SramBudget {
    Bytes(u64),
    /// Exactly the trainable footprint for LastK, nothing for E2E.
    SizedToPolicy,
}

impl SramBudget {
    pub fn resolve(&self, net: &NetworkSpec, policy: TrainingPolicy) -> Result<u64> {
        match *self {
            SramBudget::Bytes(b) => Ok(b),
            SramBudget::SizedToPolicy => match policy {
                TrainingPolicy::E2E => Ok(0),
                TrainingPolicy::LastK(_) => {
                    let mask = policy.trainable_mask(net)?;
                    let fp = weight_footprint(net);
                    Ok(fp
                        .layers
                        .iter()
                        .zip(mask)
                        .filter(|(_, t)| *t)
                        .map(|(l, _)| l.total_bytes())
                        .sum())
                }
            },
        }
    }
}

/// Places trainable layers in SRAM, latest layer first, while they fit the budget.
pub fn assign_placement(
    net: &NetworkSpec,
    policy: TrainingPolicy,
    sram_weight_budget: u64,
    scratch_bytes: u64,
) -> Result<PlacementMap> {
    let mask = policy.trainable_mask(net)?;
    let fp = weight_footprint(net);
    if sram_weight_budget == 0 {
        if let TrainingPolicy::LastK(_) = policy {
            let need: u64 = fp
                .layers
                .iter()
                .zip(&mask)
                .filter(|(_, t)| **t)
                .map(|(l, _)| l.total_bytes())
                .sum();
            return Err(Error::Capacity(format!(
                "{policy} needs {need} bytes of SRAM for trainable weights, budget is 0 (shortfall {need} bytes)"
            )));
        }
    }
    let mut locations = vec![Location::Nvm; net.layers.len()];
    let mut used = 0u64;
    for i in (0..net.layers.len()).rev() {
        if !mask[i] {
            continue;
        }
        let b = fp.layers[i].total_bytes();
        if used + b <= sram_weight_budget {
            locations[i] = Location::Sram;
            used += b;
        }
    }
    let layers: Vec<LayerPlacement> = fp
        .layers
        .iter()
        .zip(mask.iter().zip(&locations))
        .map(|(l, (t, loc))| LayerPlacement {
            name: l.name.clone(),
            location: *loc,
            trainable: *t,
            bytes: l.total_bytes(),
        })
        .collect();
    let sram_weight_bytes = used;
    let gradient_buffer_bytes: u64 = layers
        .iter()
        .filter(|l| l.trainable && l.location == Location::Sram)
        .map(|l| l.bytes)
        .sum();
    let nvm_total_bytes = fp.total_bytes() - sram_weight_bytes;
    Ok(PlacementMap {
        layers,
        sram_weight_bytes,
        gradient_buffer_bytes,
        scratch_bytes,
        sram_total_bytes: sram_weight_bytes + gradient_buffer_bytes + scratch_bytes,
        nvm_total_bytes,
    })
}

pub fn trainable_fraction(net: &NetworkSpec, policy: TrainingPolicy) -> Result<f64> {
    let mask = policy.trainable_mask(net)?;
    let fp = weight_footprint(net);
    let trainable: u64 = fp
        .layers
        .iter()
        .zip(mask)
        .filter(|(_, t)| *t)
        .map(|(l, _)| l.total_bytes())
        .sum();
    Ok(trainable as f64 / fp.total_bytes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_network_parses_and_chains() {
        let net = NetworkSpec::default_network();
        let shapes = infer_shapes(&net).unwrap();
        assert_eq!(shapes.len(), 10);
        assert_eq!(shapes[0].conv_output, Shape::Map { h: 54, w: 54, c: 96 });
        assert_eq!(shapes[4].output, Shape::Map { h: 6, w: 6, c: 256 });
        assert_eq!(shapes[9].output, Shape::Vector(5));
    }

    #[test]
    fn conv1_weight_bytes() {
        let net = NetworkSpec::default_network();
        let fp = weight_footprint(&net);
        assert_eq!(net.layers[0].weight_count(), 34_848);
        assert_eq!(fp.layers[0].weight_bytes, 69_696);
    }

    #[test]
    fn policy_parse_roundtrip() {
        for s in ["e2e", "L2", "l3", "last4"] {
            let p: TrainingPolicy = s.parse().unwrap();
            let again: TrainingPolicy = p.to_string().parse().unwrap();
            assert_eq!(p, again);
        }
        assert!("l0".parse::<TrainingPolicy>().is_err());
        assert!("bogus".parse::<TrainingPolicy>().is_err());
    }

    #[test]
    fn chain_mismatch_names_both_layers() {
        let mut net = NetworkSpec::default_network();
        net.layers[6] = LayerSpec::fc("FC2", 1000, 4288);
        match net.validate() {
            Err(Error::ShapeMismatch { prev, next, .. }) => {
                assert_eq!(prev, "FC1");
                assert_eq!(next, "FC2");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn wrong_action_count_rejected() {
        let mut net = NetworkSpec::default_network();
        net.actions = 4;
        assert!(matches!(net.validate(), Err(Error::Config(_))));
    }
}
