//! Layer-to-array mapping: row-stationary conv plans, FC tile grids, and the
//! im2col route used for conv backprop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::{LayerShape, Location, PlacementMap, Pool, Shape, TrainingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfSplit {
    pub weights: f64,
    pub inputs: f64,
    pub psums: f64,
}

impl Default for RfSplit {
    fn default() -> Self {
        RfSplit {
            weights: 0.35,
            inputs: 0.50,
            psums: 0.15,
        }
    }
}

/// Segment width used for Type III mappings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Type3Width {
    /// Widest segment that covers the output rows without exceeding the set's share of columns.
    #[default]
    Auto,
    #[serde(rename = "fixed-3x10")]
    Fixed3x10,
    #[serde(rename = "fixed-3x13")]
    Fixed3x13,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeArrayConfig {
    pub rows: u64,
    pub cols: u64,
    pub macs_per_pe: u64,
    pub comparators_per_pe: u64,
    pub rf_bytes: u64,
    /// Width of each PE-to-PE link.
    pub link_bits: u64,
    /// Wires from the global buffer into the first PE row.
    pub gbuf_row_links: u64,
    pub nvm_io_lanes: u64,
    pub nvm_io_bandwidth_bits_per_s: f64,
    pub rf_split: RfSplit,
    pub type3_width: Type3Width,
}

impl Default for PeArrayConfig {
    fn default() -> Self {
        PeArrayConfig {
            rows: 32,
            cols: 32,
            macs_per_pe: 8,
            comparators_per_pe: 8,
            rf_bytes: 4608,
            link_bits: 128,
            gbuf_row_links: 4096,
            nvm_io_lanes: 1024,
            nvm_io_bandwidth_bits_per_s: 2.0e9,
            rf_split: RfSplit::default(),
            type3_width: Type3Width::Auto,
        }
    }
}

impl PeArrayConfig {
    pub fn total_pes(&self) -> u64 {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("macs_per_pe", self.macs_per_pe),
            ("comparators_per_pe", self.comparators_per_pe),
            ("rf_bytes", self.rf_bytes),
            ("link_bits", self.link_bits),
            ("gbuf_row_links", self.gbuf_row_links),
            ("nvm_io_lanes", self.nvm_io_lanes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("pe_array.{name} must be >= 1")));
            }
        }
        if !(self.nvm_io_bandwidth_bits_per_s > 0.0) {
            return Err(Error::Config("pe_array.nvm_io_bandwidth_bits_per_s must be > 0".into()));
        }
        let s = self.rf_split;
        if [s.weights, s.inputs, s.psums].iter().any(|v| !(*v > 0.0)) || s.weights + s.inputs + s.psums > 1.0 + 1e-9 {
            return Err(Error::Config("pe_array.rf_split shares must be positive and sum to <= 1".into()));
        }
        Ok(())
    }

    fn rf_weight_bytes(&self) -> u64 {
        (self.rf_bytes as f64 * self.rf_split.weights).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    ForwardConv,
    ForwardFC,
    ForwardPool,
    BackwardFC,
    BackwardConvGEMM,
}

impl Phase {
    pub fn is_forward(&self) -> bool {
        matches!(self, Phase::ForwardConv | Phase::ForwardFC | Phase::ForwardPool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MappingType {
    TypeI,
    TypeII,
    TypeIII,
    FCGrid,
    FCTransposedGrid,
    OuterProduct,
    Comparator,
}

/// Bits moved during one pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PassTraffic {
    /// Stationary operands loaded into the RFs.
    pub weight_bits: u64,
    /// Streamed operands (activations, gradient vectors).
    pub input_bits: u64,
    /// Running partial sums read back from the global buffer.
    pub psum_read_bits: u64,
    pub output_bits: u64,
    pub inter_pe_bits: u64,
}

/// Per-channel view of a pass, as reported by the `plan` command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelTraffic {
    pub gbuf_to_rf: u64,
    pub rf_to_gbuf: u64,
    pub inter_pe: u64,
    pub nvm_to_gbuf: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCycles {
    pub load: u64,
    pub compute: u64,
    pub drain: u64,
}

impl StageCycles {
    pub fn total(&self) -> u64 {
        self.load + self.compute + self.drain
    }
}

/// ReLU / max-pool work fused onto a layer's output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ComparatorWork {
    pub ops: u64,
    pub cycles: u64,
}

/// im2col expansion of a conv input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Im2col {
    /// filter_h * filter_w * in_channels
    pub rows: u64,
    /// out_h * out_w
    pub cols: u64,
}

impl Im2col {
    pub fn elements(&self) -> u64 {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingPlan {
    pub layer: String,
    pub label: String,
    pub phase: Phase,
    pub mapping_type: MappingType,
    pub sets: u64,
    pub segments_per_set: u64,
    pub segment_rows: u64,
    pub segment_cols: u64,
    pub active_pes: u64,
    /// PEs kept powered for the pass: every column of each occupied row.
    pub powered_pes: u64,
    pub passes: u64,
    pub input_rows_per_pass: u64,
    pub channel_splits: u64,
    /// Output elements one pass covers (per split round).
    pub outputs_per_pass: u64,
    pub exact_outputs: u64,
    /// Fraction of the issued capacity doing useful work.
    pub utilization: f64,
    pub macs: u64,
    pub per_pass: PassTraffic,
    pub stages: StageCycles,
    /// One-off cycles (pipeline fill, expansion, comparator work).
    pub extra_cycles: u64,
    pub weight_source: Location,
    /// Output is accumulated into an existing buffer (read-modify-write).
    pub accumulate: bool,
    pub comparator: ComparatorWork,
    pub expansion: Option<Im2col>,
    /// Updated weights written back once per iteration.
    pub writeback_bits: u64,
    pub weight_gradient: Option<Box<MappingPlan>>,
}

impl MappingPlan {
    pub fn cycles(&self) -> u64 {
        self.passes * self.stages.total() + self.extra_cycles
    }

    /// Cycles including the weight-gradient sub-plan.
    pub fn total_cycles(&self) -> u64 {
        self.cycles() + self.weight_gradient.as_ref().map_or(0, |p| p.total_cycles())
    }

    pub fn traffic(&self) -> ChannelTraffic {
        let t = self.per_pass;
        ChannelTraffic {
            gbuf_to_rf: t.weight_bits + t.input_bits + t.psum_read_bits,
            rf_to_gbuf: t.output_bits,
            inter_pe: t.inter_pe_bits,
            nvm_to_gbuf: if self.weight_source == Location::Nvm { t.weight_bits } else { 0 },
        }
    }

    fn with_source(mut self, source: Location) -> Self {
        self.weight_source = source;
        if let Some(g) = self.weight_gradient.take() {
            self.weight_gradient = Some(Box::new(g.with_source(source)));
        }
        self
    }
}

fn cdiv(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn precision_bytes(bits: u32) -> u64 {
    (bits as u64).div_ceil(8)
}

/// Ops and cycles for ReLU plus optional pooling over a conv output.
fn comparator_work(out: Shape, relu: bool, pool: Option<Pool>, pe: &PeArrayConfig) -> ComparatorWork {
    let mut ops = if relu { out.elements() } else { 0 };
    if let (Some(p), Shape::Map { h, w, c }) = (pool, out) {
        let ph = (h.saturating_sub(p.size as u64)) / p.stride as u64 + 1;
        let pw = (w.saturating_sub(p.size as u64)) / p.stride as u64 + 1;
        ops += ph * pw * c * ((p.size as u64).pow(2) - 1);
    }
    let cycles = if ops == 0 { 0 } else { cdiv(ops, pe.total_pes() * pe.comparators_per_pe) };
    ComparatorWork { ops, cycles }
}

pub fn plan_conv_forward(layer: &LayerShape, pe: &PeArrayConfig, bits: u32) -> Result<MappingPlan> {
    let g = layer.conv_geometry().ok_or_else(|| Error::Unmappable {
        layer: layer.name().to_string(),
        reason: "not a conv layer".into(),
    })?;
    let unmappable = |reason: String| Error::Unmappable {
        layer: layer.name().to_string(),
        reason,
    };
    if g.filter_h > pe.rows {
        return Err(unmappable(format!(
            "filter height {} exceeds {} PE rows",
            g.filter_h, pe.rows
        )));
    }
    let b = precision_bytes(bits);
    let bits = bits as u64;
    let padded_w = g.in_w + 2 * g.padding;
    let row_bytes = |ch: u64| (g.filter_w * ch + padded_w * ch) * b;
    if row_bytes(1) > pe.rf_bytes {
        return Err(unmappable(format!(
            "a single-channel filter row plus input row needs {} bytes, RF holds {}",
            row_bytes(1),
            pe.rf_bytes
        )));
    }
    let channel_splits = cdiv(row_bytes(g.in_channels), pe.rf_bytes);
    let ch_per_split = cdiv(g.in_channels, channel_splits);

    let full_width = g.out_h.min(pe.cols);
    let sets_fit = pe.cols / full_width;
    let (mapping_type, sets) = if channel_splits == 1 {
        (MappingType::TypeI, 1)
    } else if sets_fit < 2 {
        (MappingType::TypeII, 1)
    } else {
        (MappingType::TypeIII, sets_fit.min(channel_splits))
    };
    let segment_cols = match (mapping_type, pe.type3_width) {
        (MappingType::TypeIII, Type3Width::Auto) => g.out_h.min(pe.cols / sets),
        (MappingType::TypeIII, Type3Width::Fixed3x10) => 10.min(pe.cols / sets),
        (MappingType::TypeIII, Type3Width::Fixed3x13) => 13.min(pe.cols / sets),
        _ => full_width,
    };
    let segments = (pe.rows / g.filter_h).min(g.out_channels);

    let filter_row_bytes = g.filter_w * ch_per_split * b;
    let channels_per_segment = (pe.rf_weight_bytes() / filter_row_bytes)
        .min(cdiv(g.out_channels, segments))
        .max(1);
    let capacity = segment_cols * segments * channels_per_segment;
    let work = g.out_h * g.out_channels;
    let split_rounds = if mapping_type == MappingType::TypeIII {
        cdiv(channel_splits, sets)
    } else {
        channel_splits
    };
    let tiles = cdiv(work, capacity);
    let passes = tiles * split_rounds;

    let active_pes = sets * segments * g.filter_h * segment_cols;
    let powered_pes = segments * g.filter_h * pe.cols;
    let input_rows_per_pass = (segment_cols - 1) * g.stride + g.filter_h;

    let weight_bits = sets * segments * g.filter_h * g.filter_w * ch_per_split * channels_per_segment * bits;
    let input_bits = sets * input_rows_per_pass * padded_w * ch_per_split * bits;
    let output_bits = segments * segment_cols * g.out_w * channels_per_segment * bits;
    let merge_bits = if mapping_type == MappingType::TypeIII {
        (sets - 1) * output_bits
    } else {
        0
    };
    let inter_pe_bits = weight_bits * (segment_cols - 1)
        + input_bits * (g.filter_h - 1)
        + sets * output_bits * (g.filter_h - 1)
        + merge_bits;

    let load = segments * g.filter_h * cdiv(g.filter_w * ch_per_split * channels_per_segment * bits, pe.link_bits)
        + cdiv(input_bits, pe.gbuf_row_links);
    let macs_per_pass =
        sets * segments * segment_cols * g.out_w * g.filter_w * g.filter_h * ch_per_split * channels_per_segment;
    let compute = cdiv(macs_per_pass, active_pes * pe.macs_per_pe);
    let mut drain = cdiv(output_bits, pe.gbuf_row_links);
    if mapping_type == MappingType::TypeIII {
        drain += cdiv(g.out_w * channels_per_segment * bits, pe.link_bits) + segment_cols;
    }

    let comparator = comparator_work(
        layer.conv_output,
        layer.spec.activation == crate::netspec::Activation::Relu,
        layer.spec.pool,
        pe,
    );

    Ok(MappingPlan {
        layer: layer.name().to_string(),
        label: layer.spec.report_label(),
        phase: Phase::ForwardConv,
        mapping_type,
        sets,
        segments_per_set: segments,
        segment_rows: g.filter_h,
        segment_cols,
        active_pes,
        powered_pes,
        passes,
        input_rows_per_pass,
        channel_splits,
        outputs_per_pass: capacity * g.out_w,
        exact_outputs: work * g.out_w,
        utilization: work as f64 / (tiles * capacity) as f64,
        macs: layer.macs,
        per_pass: PassTraffic {
            weight_bits,
            input_bits,
            psum_read_bits: 0,
            output_bits,
            inter_pe_bits,
        },
        stages: StageCycles { load, compute, drain },
        extra_cycles: pe.rows + comparator.cycles,
        weight_source: Location::Nvm,
        accumulate: false,
        comparator,
        expansion: None,
        writeback_bits: 0,
        weight_gradient: None,
    })
}

/// Shared tile geometry for an `rows_in x cols_out` matrix on the array.
struct Tiling {
    r: u64,
    c: u64,
    tiles: u64,
}

fn tiling(in_dim: u64, out_dim: u64, pe: &PeArrayConfig) -> Tiling {
    Tiling {
        r: in_dim.min(pe.rows),
        c: out_dim.min(pe.cols),
        tiles: cdiv(in_dim, pe.rows) * cdiv(out_dim, pe.cols),
    }
}

#[allow(clippy::too_many_arguments)]
fn grid_plan(
    layer: &str,
    label: &str,
    phase: Phase,
    mapping_type: MappingType,
    in_dim: u64,
    out_dim: u64,
    vectors: u64,
    pe: &PeArrayConfig,
    bits: u64,
) -> MappingPlan {
    let t = tiling(in_dim, out_dim, pe);
    let (r, c) = (t.r, t.c);
    let active = r * c;
    let weight_load = cdiv(r * c * bits, pe.gbuf_row_links);
    let macs_bound = cdiv(vectors * r * c, active * pe.macs_per_pe);

    let (per_pass, stages, accumulate) = match mapping_type {
        MappingType::OuterProduct => {
            // one activation and one gradient element per PE, products stream out
            let act = cdiv(r * bits, pe.link_bits);
            let grad = cdiv(c * bits, pe.link_bits);
            let interval = act.max(grad).max(1);
            (
                PassTraffic {
                    weight_bits: 0,
                    input_bits: vectors * (r + c) * bits,
                    psum_read_bits: 0,
                    output_bits: r * c * bits,
                    inter_pe_bits: vectors * (r * (c - 1) + c * (r - 1)) * bits,
                },
                StageCycles {
                    load: act + grad,
                    compute: macs_bound.max(1 + (vectors - 1) * interval),
                    drain: cdiv(r * c * bits, pe.gbuf_row_links),
                },
                true,
            )
        }
        _ => {
            // stream dimension enters along one edge, results leave along the other
            let (stream_len, result_len) = if mapping_type == MappingType::FCTransposedGrid {
                (c, r)
            } else {
                (r, c)
            };
            let vl = cdiv(stream_len * bits, pe.link_bits);
            let pr = cdiv(result_len * bits, pe.gbuf_row_links);
            let dr = cdiv(result_len * bits, pe.link_bits);
            let interval = vl.max(pr).max(dr).max(1);
            (
                PassTraffic {
                    weight_bits: r * c * bits,
                    input_bits: vectors * stream_len * bits,
                    psum_read_bits: vectors * result_len * bits,
                    output_bits: vectors * result_len * bits,
                    inter_pe_bits: vectors * (r * (c - 1) + c * (r - 1)) * bits,
                },
                StageCycles {
                    load: weight_load + vl + pr,
                    compute: macs_bound.max(1 + (vectors - 1) * interval),
                    drain: dr,
                },
                false,
            )
        }
    };
    let capacity = if mapping_type == MappingType::OuterProduct { r * c } else { vectors * r * c };
    MappingPlan {
        layer: layer.to_string(),
        label: label.to_string(),
        phase,
        mapping_type,
        sets: 1,
        segments_per_set: 1,
        segment_rows: r,
        segment_cols: c,
        active_pes: active,
        powered_pes: active,
        passes: t.tiles,
        input_rows_per_pass: 0,
        channel_splits: 1,
        outputs_per_pass: capacity,
        exact_outputs: if mapping_type == MappingType::OuterProduct {
            in_dim * out_dim
        } else {
            vectors * in_dim * out_dim
        },
        utilization: (in_dim * out_dim) as f64 / (t.tiles * r * c) as f64,
        macs: vectors * in_dim * out_dim,
        per_pass,
        stages,
        extra_cycles: 0,
        weight_source: Location::Nvm,
        accumulate,
        comparator: ComparatorWork::default(),
        expansion: None,
        writeback_bits: 0,
        weight_gradient: None,
    }
}

fn fc_dims(layer: &LayerShape) -> Result<(u64, u64)> {
    layer.fc_dims().ok_or_else(|| Error::Unmappable {
        layer: layer.name().to_string(),
        reason: "not a fully connected layer".into(),
    })
}

pub fn plan_fc_forward(layer: &LayerShape, pe: &PeArrayConfig, bits: u32) -> Result<MappingPlan> {
    let (i, o) = fc_dims(layer)?;
    let mut plan = grid_plan(
        layer.name(),
        &layer.spec.report_label(),
        Phase::ForwardFC,
        MappingType::FCGrid,
        i,
        o,
        1,
        pe,
        bits as u64,
    );
    plan.comparator = comparator_work(
        layer.output,
        layer.spec.activation == crate::netspec::Activation::Relu,
        None,
        pe,
    );
    plan.extra_cycles = pe.rows + plan.comparator.cycles;
    Ok(plan)
}

/// Transposed-grid product for the input gradient, plus an outer-product
/// sub-plan for the weight gradient.
pub fn plan_fc_backward(layer: &LayerShape, pe: &PeArrayConfig, bits: u32) -> Result<MappingPlan> {
    let (i, o) = fc_dims(layer)?;
    let bits = bits as u64;
    let label = layer.spec.report_label();
    let mut plan = grid_plan(
        layer.name(),
        &label,
        Phase::BackwardFC,
        MappingType::FCTransposedGrid,
        i,
        o,
        1,
        pe,
        bits,
    );
    plan.extra_cycles = pe.rows;
    plan.writeback_bits = (i * o + o) * bits;
    let outer = grid_plan(layer.name(), &label, Phase::BackwardFC, MappingType::OuterProduct, i, o, 1, pe, bits);
    plan.weight_gradient = Some(Box::new(outer));
    Ok(plan)
}

/// Conv backprop through im2col: both gradients become matrix products over
/// the expanded input.
pub fn plan_conv_backward_gemm(
    layer: &LayerShape,
    pe: &PeArrayConfig,
    bits: u32,
    policy: TrainingPolicy,
) -> Result<MappingPlan> {
    if let TrainingPolicy::LastK(_) = policy {
        return Err(Error::PolicyViolation(format!(
            "conv layer {} is frozen under {policy}; conv backprop only runs end-to-end",
            layer.name()
        )));
    }
    let g = layer.conv_geometry().ok_or_else(|| Error::Unmappable {
        layer: layer.name().to_string(),
        reason: "not a conv layer".into(),
    })?;
    let bits = bits as u64;
    let expansion = Im2col {
        rows: g.filter_h * g.filter_w * g.in_channels,
        cols: g.out_h * g.out_w,
    };
    let label = layer.spec.report_label();
    let mut plan = grid_plan(
        layer.name(),
        &label,
        Phase::BackwardConvGEMM,
        MappingType::FCTransposedGrid,
        expansion.rows,
        g.out_channels,
        expansion.cols,
        pe,
        bits,
    );
    // expanded matrix written to and read back from the scratch buffer
    plan.extra_cycles = pe.rows + 2 * cdiv(expansion.elements() * bits, pe.gbuf_row_links);
    plan.expansion = Some(expansion);
    plan.writeback_bits = (layer.weights + layer.biases) * bits;
    let outer = grid_plan(
        layer.name(),
        &label,
        Phase::BackwardConvGEMM,
        MappingType::OuterProduct,
        expansion.rows,
        g.out_channels,
        expansion.cols,
        pe,
        bits,
    );
    plan.weight_gradient = Some(Box::new(outer));
    Ok(plan)
}

/// Standalone max-pool layer: comparator passes only, no weights.
pub fn plan_pool(name: &str, input: Shape, pool: Pool, pe: &PeArrayConfig, bits: u32) -> Result<MappingPlan> {
    let Shape::Map { h, w, c } = input else {
        return Err(Error::Unmappable {
            layer: name.to_string(),
            reason: "pooling needs a feature map".into(),
        });
    };
    let (Some(ph), Some(pw)) = (
        crate::netspec::window_output(h, pool.size as u64, pool.stride as u64, 0),
        crate::netspec::window_output(w, pool.size as u64, pool.stride as u64, 0),
    ) else {
        return Err(Error::Unmappable {
            layer: name.to_string(),
            reason: format!("pool window {} larger than {h}x{w}", pool.size),
        });
    };
    let bits = bits as u64;
    let cmp = comparator_work(input, false, Some(pool), pe);
    let in_bits = input.elements() * bits;
    let out = ph * pw * c;
    Ok(MappingPlan {
        layer: name.to_string(),
        label: format!("{name}+Maxpool"),
        phase: Phase::ForwardPool,
        mapping_type: MappingType::Comparator,
        sets: 1,
        segments_per_set: 1,
        segment_rows: pe.rows,
        segment_cols: pe.cols,
        active_pes: pe.total_pes().min(out.max(1)),
        powered_pes: pe.total_pes(),
        passes: 1,
        input_rows_per_pass: h,
        channel_splits: 1,
        outputs_per_pass: out,
        exact_outputs: out,
        utilization: 1.0,
        macs: 0,
        per_pass: PassTraffic {
            weight_bits: 0,
            input_bits: in_bits,
            psum_read_bits: 0,
            output_bits: out * bits,
            inter_pe_bits: 0,
        },
        stages: StageCycles {
            load: cdiv(in_bits, pe.gbuf_row_links),
            compute: cmp.cycles.max(1),
            drain: cdiv(out * bits, pe.gbuf_row_links),
        },
        extra_cycles: 0,
        weight_source: Location::Sram,
        accumulate: false,
        comparator: ComparatorWork { ops: cmp.ops, cycles: 0 },
        expansion: None,
        writeback_bits: 0,
        weight_gradient: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Plans every layer for the forward pass, or the trainable layers in
/// reverse order for the backward pass.
pub fn plan_phase(
    shapes: &[LayerShape],
    policy: TrainingPolicy,
    placement: &PlacementMap,
    direction: Direction,
    pe: &PeArrayConfig,
    bits: u32,
) -> Result<Vec<MappingPlan>> {
    let source = |name: &str| placement.get(name).map_or(Location::Nvm, |p| p.location);
    match direction {
        Direction::Forward => shapes
            .iter()
            .map(|s| {
                let plan = if s.spec.is_conv() {
                    plan_conv_forward(s, pe, bits)?
                } else {
                    plan_fc_forward(s, pe, bits)?
                };
                Ok(plan.with_source(source(s.name())))
            })
            .collect(),
        Direction::Backward => shapes
            .iter()
            .rev()
            .filter(|s| placement.get(s.name()).is_some_and(|p| p.trainable))
            .map(|s| {
                let plan = if s.spec.is_conv() {
                    plan_conv_backward_gemm(s, pe, bits, policy)?
                } else {
                    plan_fc_backward(s, pe, bits)?
                };
                Ok(plan.with_source(source(s.name())))
            })
            .collect(),
    }
}
