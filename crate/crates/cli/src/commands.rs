use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nvmrl_core::costmodel::{
    calibrate, compare_per_image, fps_sweep, iteration_cost, load_reference_table, network_cost, CostReport,
    FreeParam, PerImageCost, ReferenceTable,
};
use nvmrl_core::envelope::velocity_table;
use nvmrl_core::mapper::{plan_phase, Direction, MappingPlan};
use nvmrl_core::netspec::{assign_placement, infer_shapes, weight_footprint, PlacementMap};
use nvmrl_core::rl::run_experiment;
use nvmrl_core::{HardwareSpec, NetworkSpec, TrainingPolicy};

use crate::config::{BatchRange, RunConfig};
use crate::output::{Cell, Format, Table};
use crate::{note, Cli, CliError, Command};

const DEFAULT_POLICIES: [TrainingPolicy; 4] = [
    TrainingPolicy::E2E,
    TrainingPolicy::LastK(2),
    TrainingPolicy::LastK(3),
    TrainingPolicy::LastK(4),
];
const DEFAULT_SWEEP: BatchRange = BatchRange { start: 1, end: 32 };
const ONE: BatchRange = BatchRange { start: 1, end: 1 };

/// What a subcommand hands back for writing.
enum Output {
    Table(Table),
    Raw(String),
}

/// Settings after merging flags over the config file over defaults.
struct Ctx {
    cfg: RunConfig,
    format: Format,
    out: Option<PathBuf>,
    /// Explicit list from a flag or the config file.
    policies: Option<Vec<TrainingPolicy>>,
    batch: Option<BatchRange>,
    seed: Option<u64>,
    /// `Some(None)` selects the shipped table.
    reference: Option<Option<PathBuf>>,
}

impl Ctx {
    fn policies(&self) -> Vec<TrainingPolicy> {
        self.policies.clone().unwrap_or_else(|| DEFAULT_POLICIES.to_vec())
    }

    fn single_batch(&self) -> Result<u64, CliError> {
        self.batch.unwrap_or(ONE).single()
    }

    fn reference_table(&self) -> Result<ReferenceTable, CliError> {
        match &self.reference {
            Some(Some(p)) => load_reference(p),
            _ => Ok(ReferenceTable::shipped()),
        }
    }
}

fn placement(net: &NetworkSpec, hw: &HardwareSpec, policy: TrainingPolicy) -> Result<PlacementMap, CliError> {
    let budget = hw.sram_weight_budget.resolve(net, policy)?;
    Ok(assign_placement(net, policy, budget, hw.scratch_bytes)?)
}

fn load_reference(p: &Path) -> Result<ReferenceTable, CliError> {
    if !p.exists() {
        return Err(CliError::Config(format!("reference table {} does not exist", p.display())));
    }
    Ok(load_reference_table(p)?)
}

fn io_error(target: &str, e: std::io::Error) -> CliError {
    CliError::Core(nvmrl_core::Error::Io(std::io::Error::new(e.kind(), format!("cannot write {target}: {e}"))))
}

fn ms(v: f64) -> Cell {
    Cell::Num(v * 1e3, 4)
}

fn mj(v: f64) -> Cell {
    Cell::Num(v * 1e3, 3)
}

fn pct(v: f64) -> Cell {
    Cell::Num(v * 100.0, 2)
}

fn count(v: f64) -> Cell {
    Cell::Num(v, 0)
}

pub(crate) fn execute(
    cli: Cli,
    env_config: Option<PathBuf>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let g = cli.global;
    let cfg = match g.config.or(env_config) {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    let reference = match g.reference {
        Some(p) if p.is_empty() => Some(None),
        Some(p) => Some(Some(PathBuf::from(p))),
        None => cfg.reference.clone().map(Some),
    };
    let ctx = Ctx {
        format: g.format.or(cfg.format).unwrap_or_default(),
        out: g.out.or_else(|| cfg.out.clone()),
        policies: g.policies.or_else(|| cfg.policies.clone()),
        batch: g.batch.or(cfg.batch),
        seed: g.seed.or(cfg.seed),
        reference,
        cfg,
    };
    if ctx.policies.as_ref().is_some_and(Vec::is_empty) {
        return Err(CliError::Config("policy list is empty".into()));
    }

    let output = match cli.command {
        Command::Shapes => shapes(&ctx)?,
        Command::Plan { policy } => plan(&ctx, policy, stderr)?,
        Command::Cost { policy } => cost(&ctx, policy)?,
        Command::Compare => compare(&ctx, stderr)?,
        Command::Sweep => sweep(&ctx)?,
        Command::Envelope { fps } => envelope(&ctx, fps)?,
        Command::Calibrate { free, write_hw } => calibrate_cmd(&ctx, free, write_hw, stderr)?,
        Command::TrainToy {
            meta_steps,
            fine_tune_steps,
            summary,
        } => train_toy(&ctx, meta_steps, fine_tune_steps, summary)?,
        Command::CheckReference { path, emit } => check_reference(&ctx, path, emit)?,
    };

    let write = |w: &mut dyn Write| match &output {
        Output::Table(t) => t.write(ctx.format, w),
        Output::Raw(s) => w.write_all(s.as_bytes()),
    };
    match &ctx.out {
        Some(p) => {
            let target = p.display().to_string();
            let file = File::create(p).map_err(|e| io_error(&target, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(&target, e))
        }
        None => write(stdout).and_then(|_| stdout.flush()).map_err(|e| io_error("stdout", e)),
    }
}

fn shapes(ctx: &Ctx) -> Result<Output, CliError> {
    let net = ctx.cfg.network()?;
    let shapes = infer_shapes(&net)?;
    let fp = weight_footprint(&net);
    let mut t = Table::new(&[
        "layer", "input", "output", "macs", "weights", "biases", "weight_bytes", "bias_bytes", "total_mb",
    ]);
    for (s, f) in shapes.iter().zip(&fp.layers) {
        t.push(vec![
            Cell::text(s.name()),
            Cell::text(format!("{:?}", s.input)),
            Cell::text(format!("{:?}", s.output)),
            Cell::Int(s.macs),
            Cell::Int(s.weights),
            Cell::Int(s.biases),
            Cell::Int(f.weight_bytes),
            Cell::Int(f.bias_bytes),
            Cell::Num(f.total_bytes() as f64 / 1e6, 3),
        ]);
    }
    t.push(vec![
        Cell::text("total"),
        Cell::Empty,
        Cell::Empty,
        Cell::Int(shapes.iter().map(|s| s.macs).sum()),
        Cell::Int(shapes.iter().map(|s| s.weights).sum()),
        Cell::Int(shapes.iter().map(|s| s.biases).sum()),
        Cell::Int(fp.layers.iter().map(|l| l.weight_bytes).sum()),
        Cell::Int(fp.layers.iter().map(|l| l.bias_bytes).sum()),
        Cell::Num(fp.total_bytes() as f64 / 1e6, 3),
    ]);
    Ok(Output::Table(t))
}

fn plan_row(p: &MappingPlan, t: &mut Table) {
    let c = p.traffic();
    t.push(vec![
        Cell::text(&p.layer),
        Cell::text(if p.phase.is_forward() { "forward" } else { "backward" }),
        Cell::text(format!("{:?}", p.mapping_type)),
        Cell::Int(p.sets),
        Cell::Int(p.segments_per_set),
        Cell::Int(p.segment_rows),
        Cell::Int(p.segment_cols),
        Cell::Int(p.active_pes),
        Cell::Int(p.passes),
        Cell::Int(p.input_rows_per_pass),
        Cell::Int(p.channel_splits),
        Cell::text(format!("{:?}", p.weight_source).to_lowercase()),
        Cell::Int(c.gbuf_to_rf),
        Cell::Int(c.rf_to_gbuf),
        Cell::Int(c.inter_pe),
        Cell::Int(c.nvm_to_gbuf),
    ]);
}

fn plan(ctx: &Ctx, policy: Option<TrainingPolicy>, stderr: &mut dyn Write) -> Result<Output, CliError> {
    let policy = policy.unwrap_or(TrainingPolicy::E2E);
    let net = ctx.cfg.network()?;
    let hw = ctx.cfg.hardware()?;
    let shapes = infer_shapes(&net)?;
    let place = placement(&net, &hw, policy)?;
    let bits = net.weight_precision_bits;
    let fwd = plan_phase(&shapes, policy, &place, Direction::Forward, &hw.pe, bits)?;
    let bwd = plan_phase(&shapes, policy, &place, Direction::Backward, &hw.pe, bits)?;
    let reference = ctx.reference_table()?;

    let mut t = Table::new(&[
        "layer",
        "phase",
        "mapping_type",
        "sets",
        "segments",
        "segment_rows",
        "segment_cols",
        "active_pes",
        "passes",
        "input_rows_per_pass",
        "channel_splits",
        "weight_source",
        "gbuf_to_rf_bits",
        "rf_to_gbuf_bits",
        "inter_pe_bits",
        "nvm_to_gbuf_bits",
    ]);
    for p in fwd.iter().chain(&bwd) {
        plan_row(p, &mut t);
        let phase = if p.phase.is_forward() { "forward" } else { "backward" };
        if let Some(r) = reference.row(phase, &p.layer) {
            if r.active_pe != p.active_pes {
                note(
                    stderr,
                    &format!(
                        "{} {phase} active PEs {} from the mapping geometry differ from {} in the reference table",
                        p.layer, p.active_pes, r.active_pe
                    ),
                );
            }
        }
    }
    Ok(Output::Table(t))
}

fn cost_row(t: &mut Table, layer: &str, phase: &str, r: Option<&CostReport>, latency: f64, energy: f64, fps: Option<f64>) {
    t.push(vec![
        Cell::text(layer),
        Cell::text(phase),
        ms(latency),
        mj(energy),
        Cell::opt(r.map(|r| r.avg_power * 1e3), 3),
        r.map_or(Cell::Empty, |r| Cell::Int(r.active_pes)),
        r.map_or(Cell::Empty, |r| Cell::Int(r.macs)),
        r.map_or(Cell::Empty, |r| count(r.traffic.nvm_read)),
        r.map_or(Cell::Empty, |r| count(r.traffic.nvm_write)),
        Cell::opt(fps, 3),
    ]);
}

fn cost(ctx: &Ctx, policy: Option<TrainingPolicy>) -> Result<Output, CliError> {
    let policy = policy.unwrap_or(TrainingPolicy::E2E);
    let n = ctx.single_batch()?;
    let net = ctx.cfg.network()?;
    let hw = ctx.cfg.hardware()?;
    let place = placement(&net, &hw, policy)?;
    let layers = network_cost(&net, policy, &place, &hw)?;
    let total = iteration_cost(&net, policy, n, &place, &hw)?;

    let mut t = Table::new(&[
        "layer",
        "phase",
        "latency_ms",
        "energy_mj",
        "power_mw",
        "active_pes",
        "macs",
        "nvm_read_bits",
        "nvm_write_bits",
        "fps",
    ]);
    for r in layers.forward.iter().chain(&layers.backward) {
        cost_row(&mut t, &r.layer, &r.phase, Some(r), r.latency, r.energy, None);
    }
    let f = &total.per_image_forward;
    let b = &total.per_image_backward;
    let u = &total.weight_update;
    cost_row(&mut t, "total", "forward", None, f.latency, f.energy, None);
    cost_row(&mut t, "total", "backward", None, b.latency, b.energy, None);
    cost_row(&mut t, "total", "update", None, u.latency, u.energy, None);
    t.push(vec![
        Cell::text("total"),
        Cell::text(format!("iteration (N={n})")),
        ms(total.iteration_latency),
        mj(total.iteration_energy),
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        count(n as f64 * (f.traffic.nvm_read + b.traffic.nvm_read) + u.traffic.nvm_read),
        count(total.nvm_write_bits),
        Cell::Num(total.fps, 3),
    ]);
    Ok(Output::Table(t))
}

fn compare(ctx: &Ctx, stderr: &mut dyn Write) -> Result<Output, CliError> {
    let net = ctx.cfg.network()?;
    let (source, entries) = match &ctx.reference {
        Some(_) => {
            let table = ctx.reference_table()?;
            let e = ctx
                .policies()
                .iter()
                .map(|&p| table.per_image(p, &net))
                .collect::<Result<Vec<_>, _>>()?;
            ("reference", e)
        }
        None => {
            let n = ctx.single_batch()?;
            let hw = ctx.cfg.hardware()?;
            let e = ctx
                .policies()
                .iter()
                .map(|&p| {
                    let place = placement(&net, &hw, p)?;
                    let c = iteration_cost(&net, p, n, &place, &hw)?;
                    Ok(PerImageCost {
                        policy: p,
                        latency: c.per_image_latency(),
                        energy: c.per_image_energy(),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("model", e)
        }
    };
    let reductions = compare_per_image(&entries)?;
    let mut t = Table::new(&[
        "policy",
        "source",
        "latency_ms",
        "energy_mj",
        "latency_reduction_pct",
        "energy_reduction_pct",
    ]);
    for r in &reductions {
        t.push(vec![
            Cell::text(r.policy.to_string()),
            Cell::text(source),
            ms(r.latency),
            mj(r.energy),
            pct(r.latency_reduction),
            pct(r.energy_reduction),
        ]);
    }
    if source == "reference" {
        if let Some(r) = reductions.iter().find(|r| r.policy == TrainingPolicy::LastK(4)) {
            note(
                stderr,
                &format!(
                    "L4 saves {:.2}% latency and {:.2}% energy here; the pair usually quoted as \
                     \"79.4% latency (83.45% energy)\" has the two labels transposed",
                    r.latency_reduction * 100.0,
                    r.energy_reduction * 100.0
                ),
            );
        }
    }
    Ok(Output::Table(t))
}

fn sweep(ctx: &Ctx) -> Result<Output, CliError> {
    let net = ctx.cfg.network()?;
    let hw = ctx.cfg.hardware()?;
    let b = ctx.batch.unwrap_or(DEFAULT_SWEEP);
    let points = fps_sweep(&net, &ctx.policies(), b.start..=b.end, &hw)?;
    let mut t = Table::new(&["policy", "batch", "fps", "iteration_latency_ms"]);
    for p in points {
        t.push(vec![
            Cell::text(p.policy.to_string()),
            Cell::Int(p.batch),
            Cell::Num(p.fps, 3),
            ms(p.iteration_latency),
        ]);
    }
    Ok(Output::Table(t))
}

fn envelope(ctx: &Ctx, fps: Option<Vec<f64>>) -> Result<Output, CliError> {
    let settings = &ctx.cfg.envelope;
    let given = fps.unwrap_or_else(|| settings.fps.clone());
    let sources: Vec<(String, f64)> = if given.is_empty() {
        let net = ctx.cfg.network()?;
        let hw = ctx.cfg.hardware()?;
        let n = ctx.single_batch()?;
        ctx.policies()
            .iter()
            .map(|&p| {
                let place = placement(&net, &hw, p)?;
                Ok((p.to_string(), iteration_cost(&net, p, n, &place, &hw)?.fps))
            })
            .collect::<Result<_, CliError>>()?
    } else {
        given.into_iter().map(|f| ("given".to_string(), f)).collect()
    };
    let envs: Vec<(String, f64)> = settings.environments.iter().map(|e| (e.name.clone(), e.d_min)).collect();
    let mut t = Table::new(&["source", "environment", "fps", "d_min_m", "max_velocity_mps", "frame_distance_m"]);
    for (label, f) in &sources {
        for row in velocity_table(&[*f], &envs, settings.frames_to_react)? {
            t.push(vec![
                Cell::text(label),
                Cell::text(row.environment),
                Cell::Num(row.fps, 3),
                Cell::Num(row.d_min, 3),
                Cell::Num(row.max_velocity, 3),
                Cell::Num(row.frame_distance, 3),
            ]);
        }
    }
    Ok(Output::Table(t))
}

fn calibrate_cmd(
    ctx: &Ctx,
    free: Option<Vec<String>>,
    write_hw: Option<PathBuf>,
    stderr: &mut dyn Write,
) -> Result<Output, CliError> {
    let free: Vec<FreeParam> = match free {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
        None => ctx.cfg.calibrate.free.clone(),
    };
    let net = ctx.cfg.network()?;
    let hw = ctx.cfg.hardware()?;
    let reference = ctx.reference_table()?;
    let cal = calibrate(&reference, &net, &hw, &free)?;

    let mut t = Table::new(&[
        "layer",
        "phase",
        "anchor",
        "model_latency_ms",
        "reference_latency_ms",
        "latency_error_pct",
        "model_energy_mj",
        "reference_energy_mj",
        "energy_error_pct",
    ]);
    for r in &cal.rows {
        t.push(vec![
            Cell::text(&r.layer),
            Cell::text(&r.phase),
            Cell::Bool(r.anchor),
            Cell::Num(r.model_latency_ms, 4),
            Cell::Num(r.reference_latency_ms, 4),
            pct(r.latency_error()),
            Cell::Num(r.model_energy_mj, 3),
            Cell::Num(r.reference_energy_mj, 3),
            pct(r.energy_error()),
        ]);
    }
    let names: Vec<String> = cal.free.iter().map(|f| f.to_string()).collect();
    note(
        stderr,
        &format!(
            "fitted [{}]: clock {:.4e} Hz, mac {:.4e} J, sram read/write {:.4e}/{:.4e} J/bit, static {:.4e} W; \
             score {:.4} -> {:.4}",
            names.join(","),
            cal.memory.clock_frequency,
            cal.compute.mac_energy,
            cal.memory.sram_read_energy,
            cal.memory.sram_write_energy,
            cal.compute.pe_static_power,
            cal.baseline_score,
            cal.fitted_score
        ),
    );
    if let Some(w) = &cal.warning {
        note(stderr, w);
    }
    if let Some(path) = write_hw {
        let fitted = HardwareSpec {
            memory: cal.memory,
            compute: cal.compute,
            ..hw
        };
        std::fs::write(&path, fitted.to_toml_string()).map_err(|e| io_error(&path.display().to_string(), e))?;
        note(stderr, &format!("wrote fitted hardware spec to {}", path.display()));
    }
    Ok(Output::Table(t))
}

fn train_toy(
    ctx: &Ctx,
    meta_steps: Option<usize>,
    fine_tune_steps: Option<usize>,
    summary: bool,
) -> Result<Output, CliError> {
    let mut exp = ctx.cfg.train_toy.clone();
    if let Some(s) = ctx.seed {
        exp.seeds = vec![s];
    }
    if let Some(p) = &ctx.policies {
        exp.policies = p.clone();
    }
    if let Some(n) = meta_steps {
        exp.meta_steps = n;
    }
    if let Some(n) = fine_tune_steps {
        exp.fine_tune_steps = n;
    }
    exp.validate()?;
    let runs = run_experiment(&exp)?;

    let t = if summary {
        let mut t = Table::new(&["policy", "seed", "final_third_reward", "final_third_slope", "sfd"]);
        for r in &runs {
            t.push(vec![
                Cell::text(r.policy.to_string()),
                Cell::Int(r.seed),
                Cell::opt(r.final_third_reward, 6),
                Cell::opt(r.log.final_third_slope(), 8),
                Cell::opt(r.sfd, 3),
            ]);
        }
        t
    } else {
        let mut t = Table::new(&["policy", "seed", "iteration", "cumulative_reward", "return", "sfd"]);
        for r in &runs {
            for m in r.log.metric_rows() {
                t.push(vec![
                    Cell::text(r.policy.to_string()),
                    Cell::Int(r.seed),
                    Cell::Int(m.iteration as u64),
                    Cell::Num(m.cumulative_reward, 6),
                    Cell::opt(m.episode_return, 6),
                    Cell::opt(m.sfd, 3),
                ]);
            }
        }
        t
    };
    Ok(Output::Table(t))
}

fn check_reference(ctx: &Ctx, path: Option<PathBuf>, emit: bool) -> Result<Output, CliError> {
    let table = match path {
        Some(p) => load_reference(&p)?,
        None => ctx.reference_table()?,
    };
    if emit {
        return Ok(match ctx.format {
            Format::Csv => Output::Raw(table.to_csv_string()),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&table.rows).map_err(|e| CliError::Config(e.to_string()))?;
                s.push('\n');
                Output::Raw(s)
            }
        });
    }
    let mut t = Table::new(&["phase", "rows", "latency_ms", "energy_mj", "sum_latency_ms", "sum_energy_mj"]);
    for phase in ["forward", "backward"] {
        let Some(total) = table.total(phase) else { continue };
        let rows: Vec<_> = table.rows.iter().filter(|r| r.phase == phase && !r.is_total()).collect();
        t.push(vec![
            Cell::text(phase),
            Cell::Int(rows.len() as u64),
            Cell::Num(total.latency_ms, 4),
            Cell::Num(total.energy_mj, 3),
            Cell::Num(rows.iter().map(|r| r.latency_ms).sum(), 4),
            Cell::Num(rows.iter().map(|r| r.energy_mj).sum(), 3),
        ]);
    }
    Ok(Output::Table(t))
}
