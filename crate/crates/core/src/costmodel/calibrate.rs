use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{layer_cost, ComputeEnergyParams, CostReport, HardwareSpec, MemoryTechParams, ReferenceTable};
use crate::error::{Error, Result};
use crate::mapper::{plan_phase, Direction, MappingPlan};
use crate::netspec::{assign_placement, infer_shapes, NetworkSpec, PlacementMap, SramBudget, TrainingPolicy};

/// Rows the fit is anchored on; the first one is reproduced exactly.
pub const ANCHORS: [(&str, &str); 4] = [
    ("forward", "CONV1"),
    ("forward", "FC1"),
    ("forward", "FC5"),
    ("backward", "FC2"),
];

/// Lower bound for fitted SRAM energies, joules per bit.
pub const SRAM_ENERGY_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FreeParam {
    ClockFrequency,
    MacEnergy,
    SramEnergy,
    StaticPower,
}

impl FreeParam {
    pub const ALL: [FreeParam; 4] = [
        FreeParam::ClockFrequency,
        FreeParam::MacEnergy,
        FreeParam::SramEnergy,
        FreeParam::StaticPower,
    ];
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreeParam::ClockFrequency => "clock",
            FreeParam::MacEnergy => "mac",
            FreeParam::SramEnergy => "sram",
            FreeParam::StaticPower => "static",
        })
    }
}

impl From<FreeParam> for String {
    fn from(p: FreeParam) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for FreeParam {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for FreeParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clock" => Ok(FreeParam::ClockFrequency),
            "mac" => Ok(FreeParam::MacEnergy),
            "sram" => Ok(FreeParam::SramEnergy),
            "static" => Ok(FreeParam::StaticPower),
            other => Err(Error::Config(format!(
                "unknown free parameter `{other}` (expected clock, mac, sram, static)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub layer: String,
    pub phase: String,
    pub anchor: bool,
    pub model_latency_ms: f64,
    pub reference_latency_ms: f64,
    pub model_energy_mj: f64,
    pub reference_energy_mj: f64,
}

impl ResidualRow {
    pub fn latency_error(&self) -> f64 {
        self.model_latency_ms / self.reference_latency_ms - 1.0
    }

    pub fn energy_error(&self) -> f64 {
        self.model_energy_mj / self.reference_energy_mj - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub memory: MemoryTechParams,
    pub compute: ComputeEnergyParams,
    pub free: Vec<FreeParam>,
    pub rows: Vec<ResidualRow>,
    pub baseline_rows: Vec<ResidualRow>,
    /// Sum of squared anchor residuals (ms and mJ) before the fit.
    pub baseline_score: f64,
    pub fitted_score: f64,
    pub warning: Option<String>,
}

/// Placement the reference table was measured under: the last three layers
/// live in SRAM, everything else in NVM, and every layer has a backward row.
pub fn reference_placement(net: &NetworkSpec, hw: &HardwareSpec) -> Result<PlacementMap> {
    let budget = SramBudget::SizedToPolicy.resolve(net, TrainingPolicy::LastK(3))?;
    assign_placement(net, TrainingPolicy::E2E, budget, hw.scratch_bytes)
}

struct ModelRow {
    phase: &'static str,
    layer: String,
    plan: MappingPlan,
}

fn model_rows(net: &NetworkSpec, hw: &HardwareSpec) -> Result<Vec<ModelRow>> {
    let shapes = infer_shapes(net)?;
    let placement = reference_placement(net, hw)?;
    let bits = net.weight_precision_bits;
    let mut rows = Vec::new();
    for (phase, dir) in [("forward", Direction::Forward), ("backward", Direction::Backward)] {
        for plan in plan_phase(&shapes, TrainingPolicy::E2E, &placement, dir, &hw.pe, bits)? {
            rows.push(ModelRow {
                phase,
                layer: plan.layer.clone(),
                plan,
            });
        }
    }
    Ok(rows)
}

fn cost_of(row: &ModelRow, bits: u32, mem: &MemoryTechParams, comp: &ComputeEnergyParams) -> Result<CostReport> {
    layer_cost(&row.plan, bits, mem, comp)
}

fn residuals(
    reference: &ReferenceTable,
    rows: &[ModelRow],
    bits: u32,
    mem: &MemoryTechParams,
    comp: &ComputeEnergyParams,
) -> Result<Vec<ResidualRow>> {
    let mut out = Vec::new();
    for r in reference.rows.iter().filter(|r| !r.is_total()) {
        let m = rows
            .iter()
            .find(|m| m.phase == r.phase && m.layer == r.base_name())
            .ok_or_else(|| Error::Comparison(format!("no model row for {}/{}", r.phase, r.layer)))?;
        let c = cost_of(m, bits, mem, comp)?;
        out.push(ResidualRow {
            layer: r.layer.clone(),
            phase: r.phase.clone(),
            anchor: ANCHORS.iter().any(|(p, l)| *p == r.phase && *l == r.base_name()),
            model_latency_ms: c.latency * 1e3,
            reference_latency_ms: r.latency_ms,
            model_energy_mj: c.energy * 1e3,
            reference_energy_mj: r.energy_mj,
        });
    }
    Ok(out)
}

fn score(rows: &[ResidualRow]) -> f64 {
    rows.iter()
        .filter(|r| r.anchor)
        .map(|r| {
            (r.model_latency_ms - r.reference_latency_ms).powi(2) + (r.model_energy_mj - r.reference_energy_mj).powi(2)
        })
        .sum()
}

/// Least squares `min |A x - y|^2` subject to `x >= 0` and optionally `c.x = d`,
/// by enumerating which variables sit at zero.
fn bounded_least_squares(a: &DMatrix<f64>, y: &DVector<f64>, eq: Option<(&DVector<f64>, f64)>) -> Option<DVector<f64>> {
    let m = a.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = idx.len();
        let sub = a.select_columns(&idx);
        let ata = sub.transpose() * &sub;
        let aty = sub.transpose() * y;
        let sol = match eq {
            Some((c, d)) => {
                let cs = DVector::from_iterator(k, idx.iter().map(|&j| c[j]));
                if cs.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let mut kkt = DMatrix::zeros(k + 1, k + 1);
                kkt.view_mut((0, 0), (k, k)).copy_from(&ata);
                for i in 0..k {
                    kkt[(i, k)] = cs[i];
                    kkt[(k, i)] = cs[i];
                }
                let mut rhs = DVector::zeros(k + 1);
                rhs.rows_mut(0, k).copy_from(&aty);
                rhs[k] = d;
                match kkt.lu().solve(&rhs) {
                    Some(s) => s.rows(0, k).into_owned(),
                    None => continue,
                }
            }
            None => match ata.lu().solve(&aty) {
                Some(s) => s,
                None => continue,
            },
        };
        if sol.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            continue;
        }
        let mut full = DVector::zeros(m);
        for (i, &j) in idx.iter().enumerate() {
            full[j] = sol[i];
        }
        let obj = (a * &full - y).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, full));
        }
    }
    best.map(|(_, x)| x)
}

/// Fits the free parameters to the anchor rows and reports residuals for
/// every row of the reference table.
pub fn calibrate(
    reference: &ReferenceTable,
    net: &NetworkSpec,
    hw: &HardwareSpec,
    free: &[FreeParam],
) -> Result<Calibration> {
    let mut free_list: Vec<FreeParam> = Vec::new();
    for f in free {
        if !free_list.contains(f) {
            free_list.push(*f);
        }
    }
    hw.memory.validate()?;
    hw.compute.validate()?;
    let bits = net.weight_precision_bits;
    let rows = model_rows(net, hw)?;
    let baseline_rows = residuals(reference, &rows, bits, &hw.memory, &hw.compute)?;
    let baseline_score = score(&baseline_rows);

    let anchor_rows: Vec<(&ModelRow, f64, f64)> = ANCHORS
        .iter()
        .map(|(phase, layer)| {
            let m = rows
                .iter()
                .find(|m| m.phase == *phase && m.layer == *layer)
                .ok_or_else(|| Error::Comparison(format!("network has no {phase} row for anchor {layer}")))?;
            let r = reference
                .row(phase, layer)
                .ok_or_else(|| Error::Comparison(format!("reference has no {phase} row for anchor {layer}")))?;
            Ok((m, r.latency_ms * 1e-3, r.energy_mj * 1e-3))
        })
        .collect::<Result<_>>()?;

    let mut mem = hw.memory;
    let mut comp = hw.compute;

    if free_list.contains(&FreeParam::ClockFrequency) {
        let (m, lat_ref, _) = anchor_rows[0];
        let c = cost_of(m, bits, &mem, &comp)?;
        let cycles = m.plan.total_cycles() as f64;
        let fixed = c.latency - cycles / mem.clock_frequency;
        if lat_ref <= fixed {
            return Err(Error::Parameter(format!(
                "anchor latency {lat_ref:e} s does not exceed the fixed latency {fixed:e} s"
            )));
        }
        mem.clock_frequency = cycles / (lat_ref - fixed);
    }

    let energy_vars: Vec<FreeParam> = free_list
        .iter()
        .copied()
        .filter(|f| *f != FreeParam::ClockFrequency)
        .collect();
    if !energy_vars.is_empty() {
        let lower: Vec<f64> = energy_vars
            .iter()
            .map(|f| if *f == FreeParam::SramEnergy { SRAM_ENERGY_FLOOR } else { 0.0 })
            .collect();
        // E = base + sum_j theta_j x_j, with the free terms removed from base
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (m, _, e_ref) in &anchor_rows {
            let c = cost_of(m, bits, &mem, &comp)?;
            let mut base = c.energy;
            let mut x = Vec::new();
            for f in &energy_vars {
                match f {
                    FreeParam::MacEnergy => {
                        base -= c.macs as f64 * comp.mac_energy;
                        x.push(c.macs as f64);
                    }
                    FreeParam::SramEnergy => {
                        base -= c.traffic.sram_read * mem.sram_read_energy + c.traffic.sram_write * mem.sram_write_energy;
                        x.push(c.traffic.sram_read + c.traffic.sram_write);
                    }
                    FreeParam::StaticPower => {
                        base -= c.pe_seconds * comp.pe_static_power;
                        x.push(c.pe_seconds);
                    }
                    FreeParam::ClockFrequency => unreachable!(),
                }
            }
            xs.push(x);
            ys.push(e_ref - base);
        }
        // shift to zero lower bounds and normalise columns
        let k = energy_vars.len();
        let scale: Vec<f64> = (0..k)
            .map(|j| xs.iter().map(|x| x[j].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE))
            .collect();
        let shifted: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (0..k).map(|j| x[j] * lower[j]).sum::<f64>()) * 1e3)
            .collect();
        let a = DMatrix::from_fn(xs.len() - 1, k, |i, j| xs[i + 1][j] / scale[j]);
        let y = DVector::from_iterator(xs.len() - 1, shifted[1..].iter().copied());
        let c = DVector::from_fn(k, |j, _| xs[0][j] / scale[j]);
        let phi = bounded_least_squares(&a, &y, Some((&c, shifted[0])))
            .or_else(|| {
                let all_a = DMatrix::from_fn(xs.len(), k, |i, j| xs[i][j] / scale[j]);
                let all_y = DVector::from_iterator(xs.len(), shifted.iter().copied());
                bounded_least_squares(&all_a, &all_y, None)
            })
            .unwrap_or_else(|| DVector::zeros(k));
        for (j, f) in energy_vars.iter().enumerate() {
            let theta = lower[j] + phi[j] / scale[j] * 1e-3;
            match f {
                FreeParam::MacEnergy => comp.mac_energy = theta,
                FreeParam::SramEnergy => {
                    mem.sram_read_energy = theta;
                    mem.sram_write_energy = theta;
                }
                FreeParam::StaticPower => comp.pe_static_power = theta,
                FreeParam::ClockFrequency => unreachable!(),
            }
        }
    }

    let fitted_rows = residuals(reference, &rows, bits, &mem, &comp)?;
    let fitted_score = score(&fitted_rows);
    let warning = (fitted_score > baseline_score * (1.0 + 1e-9) + 1e-15).then(|| {
        format!("fit did not improve anchor residuals (baseline {baseline_score:.6}, fitted {fitted_score:.6})")
    });
    Ok(Calibration {
        memory: mem,
        compute: comp,
        free: free_list,
        rows: fitted_rows,
        baseline_rows,
        baseline_score,
        fitted_score,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_ls_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_row_slice(&[2.0, 3.0, 5.0]);
        let x = bounded_least_squares(&a, &y, None).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bounded_ls_clamps_negative_direction() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_row_slice(&[-1.0, 4.0]);
        let x = bounded_least_squares(&a, &y, None).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn equality_is_honoured() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, 1.0]);
        let c = DVector::from_row_slice(&[1.0, 1.0]);
        let x = bounded_least_squares(&a, &y, Some((&c, 4.0))).unwrap();
        assert!((x[0] + x[1] - 4.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12);
    }
}
