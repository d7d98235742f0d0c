use std::path::Path;

use serde::Serialize;

use super::PerImageCost;
use crate::error::{Error, Result};
use crate::netspec::{NetworkSpec, TrainingPolicy};

pub const DEFAULT_REFERENCE_CSV: &str = include_str!("../../../../data/fig12_reference.csv");

const HEADER: [&str; 7] = [
    "layer",
    "phase",
    "latency_ms",
    "active_pe",
    "power_mw",
    "energy_mj",
    "nvm_write",
];

/// Relative slack on the power check, on top of print rounding.
pub const POWER_TOLERANCE: f64 = 0.015;
/// Absolute slack on total-row sums.
pub const TOTAL_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub layer: String,
    pub phase: String,
    pub latency_ms: f64,
    pub active_pe: u64,
    pub power_mw: f64,
    pub energy_mj: f64,
    pub nvm_write: Option<bool>,
}

impl ReferenceRow {
    pub fn is_total(&self) -> bool {
        self.layer == "total"
    }

    /// Layer name without fused-op suffixes ("FC2+ReLU" -> "FC2").
    pub fn base_name(&self) -> &str {
        self.layer.split('+').next().unwrap_or(&self.layer)
    }

    fn id(&self) -> String {
        format!("{}/{}", self.phase, self.layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceTable {
    pub rows: Vec<ReferenceRow>,
}

/// Half a unit in the last printed place.
fn half_ulp(v: f64) -> f64 {
    let s = format!("{v}");
    let decimals = s.split_once('.').map_or(0, |(_, d)| d.len());
    0.5 * 10f64.powi(-(decimals as i32))
}

fn parse_f64(field: &str, row: &str, col: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::DataIntegrity {
        row: row.to_string(),
        detail: format!("column {col}: `{field}` is not a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::DataIntegrity {
            row: row.to_string(),
            detail: format!("column {col}: {v} must be finite and >= 0"),
        });
    }
    Ok(v)
}

impl ReferenceTable {
    pub fn shipped() -> Self {
        Self::from_csv_str(DEFAULT_REFERENCE_CSV).expect("shipped reference table is consistent")
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Config(format!("reference table: {e}")))?;
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Config(format!(
                "reference table header must be `{}`",
                HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("reference table line {}: {e}", i + 2)))?;
            let id = format!("line {}", i + 2);
            let layer = rec[0].trim().to_string();
            let phase = rec[1].trim().to_string();
            if phase != "forward" && phase != "backward" {
                return Err(Error::DataIntegrity {
                    row: id,
                    detail: format!("phase `{phase}` must be forward or backward"),
                });
            }
            let active_pe = rec[3].trim().parse().map_err(|_| Error::DataIntegrity {
                row: id.clone(),
                detail: format!("active_pe `{}` is not a count", &rec[3]),
            })?;
            let nvm_write = match rec[6].trim() {
                "" => None,
                "Yes" => Some(true),
                "No" => Some(false),
                other => {
                    return Err(Error::DataIntegrity {
                        row: id,
                        detail: format!("nvm_write `{other}` must be Yes, No or empty"),
                    })
                }
            };
            rows.push(ReferenceRow {
                latency_ms: parse_f64(&rec[2], &id, "latency_ms")?,
                active_pe,
                power_mw: parse_f64(&rec[4], &id, "power_mw")?,
                energy_mj: parse_f64(&rec[5], &id, "energy_mj")?,
                layer,
                phase,
                nvm_write,
            });
        }
        let table = ReferenceTable { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.rows.iter().filter(|r| !r.is_total()) {
            if r.latency_ms <= 0.0 {
                return Err(Error::DataIntegrity {
                    row: r.id(),
                    detail: "latency must be > 0".into(),
                });
            }
            let (l, e, p) = (r.latency_ms, r.energy_mj, r.power_mw);
            let (hl, he, hp) = (half_ulp(l), half_ulp(e), half_ulp(p));
            let lo = (e - he) / (l + hl) * 1e3 * (1.0 - POWER_TOLERANCE);
            let hi = (e + he) / (l - hl).max(f64::MIN_POSITIVE) * 1e3 * (1.0 + POWER_TOLERANCE);
            if p + hp < lo || p - hp > hi {
                return Err(Error::DataIntegrity {
                    row: r.id(),
                    detail: format!(
                        "power {p} mW inconsistent with {e} mJ / {l} ms = {:.1} mW",
                        e / l * 1e3
                    ),
                });
            }
        }
        for phase in ["forward", "backward"] {
            let body: Vec<&ReferenceRow> = self.rows.iter().filter(|r| r.phase == phase && !r.is_total()).collect();
            let totals: Vec<&ReferenceRow> = self.rows.iter().filter(|r| r.phase == phase && r.is_total()).collect();
            let total = match totals.as_slice() {
                [t] => *t,
                [] => {
                    return Err(Error::DataIntegrity {
                        row: format!("{phase}/total"),
                        detail: "missing total row".into(),
                    })
                }
                _ => {
                    return Err(Error::DataIntegrity {
                        row: format!("{phase}/total"),
                        detail: "more than one total row".into(),
                    })
                }
            };
            if body.is_empty() {
                return Err(Error::DataIntegrity {
                    row: total.id(),
                    detail: "total row without layer rows".into(),
                });
            }
            let lat: f64 = body.iter().map(|r| r.latency_ms).sum();
            let en: f64 = body.iter().map(|r| r.energy_mj).sum();
            for (name, sum, stated) in [("latency_ms", lat, total.latency_ms), ("energy_mj", en, total.energy_mj)] {
                if (sum - stated).abs() > TOTAL_TOLERANCE + 1e-9 {
                    return Err(Error::DataIntegrity {
                        row: total.id(),
                        detail: format!("{name} total {stated} differs from column sum {sum}"),
                    });
                }
            }
            let n = body.len() as f64;
            let pe_mean = body.iter().map(|r| r.active_pe as f64).sum::<f64>() / n;
            let p_mean = body.iter().map(|r| r.power_mw).sum::<f64>() / n;
            if (pe_mean - total.active_pe as f64).abs() > 0.5 + 1e-9 {
                return Err(Error::DataIntegrity {
                    row: total.id(),
                    detail: format!("active_pe {} differs from row mean {pe_mean}", total.active_pe),
                });
            }
            if (p_mean - total.power_mw).abs() > half_ulp(total.power_mw) + 1e-9 {
                return Err(Error::DataIntegrity {
                    row: total.id(),
                    detail: format!("power_mw {} differs from row mean {p_mean}", total.power_mw),
                });
            }
        }
        Ok(())
    }

    pub fn total(&self, phase: &str) -> Option<&ReferenceRow> {
        self.rows.iter().find(|r| r.phase == phase && r.is_total())
    }

    pub fn row(&self, phase: &str, layer: &str) -> Option<&ReferenceRow> {
        self.rows
            .iter()
            .find(|r| r.phase == phase && !r.is_total() && r.base_name() == layer)
    }

    /// Per-image training cost straight from the table: the forward total plus
    /// the backward rows of the layers the policy trains.
    pub fn per_image(&self, policy: TrainingPolicy, net: &NetworkSpec) -> Result<PerImageCost> {
        let mask = policy.trainable_mask(net)?;
        let fwd = self
            .total("forward")
            .ok_or_else(|| Error::Comparison("reference table has no forward total".into()))?;
        let (mut latency, mut energy) = (fwd.latency_ms, fwd.energy_mj);
        for (layer, trainable) in net.layers.iter().zip(mask) {
            if !trainable {
                continue;
            }
            let r = self.row("backward", &layer.name).ok_or_else(|| {
                Error::Comparison(format!("reference table has no backward row for {}", layer.name))
            })?;
            latency += r.latency_ms;
            energy += r.energy_mj;
        }
        Ok(PerImageCost {
            policy,
            latency: latency * 1e-3,
            energy: energy * 1e-3,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            let nvm = match r.nvm_write {
                None => "",
                Some(true) => "Yes",
                Some(false) => "No",
            };
            w.write_record([
                r.layer.clone(),
                r.phase.clone(),
                format!("{}", r.latency_ms),
                r.active_pe.to_string(),
                format!("{}", r.power_mw),
                format!("{}", r.energy_mj),
                nvm.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn load_reference_table(path: &Path) -> Result<ReferenceTable> {
    let text = std::fs::read_to_string(path)?;
    ReferenceTable::from_csv_str(&text)
}
