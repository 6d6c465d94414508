//! `acrom`: file-based pipeline driver.
//!
//! Every stage reads its inputs from and writes its outputs to the `--out`
//! directory, plus a `<command>_manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use acrom::diag::{
    infsup_constant, mode_divergences, principal_angle, DivergenceProjector, ErrorReport, ForceFunctional,
};
use acrom::io::{self, parse_config, PipelineConfig, Reference};
use acrom::mesh::{generate_offset_cylinder_mesh, load_mesh, save_mesh};
use acrom::offline::{load_state, run_offline_with, FemSystem, FlowState, InitialState, SnapshotSet};
use acrom::pod::{compute_pod, Field, PodBasis};
use acrom::rom::{
    build_reduced_model, dt_refinement_study, project_state, run_rom, steps_in_window, ReferenceFields, RomTrajectory,
};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

const MESH: &str = "mesh.txt";
const SNAPSHOTS: &str = "snapshots.bin";
const BASIS_U: &str = "basis_velocity.bin";
const BASIS_P: &str = "basis_pressure.bin";
const TRAJECTORY: &str = "rom_trajectory.bin";
const REPORT_DIR: &str = "report";

/// CSV files gathered by `acrom report`.
const BUNDLE: [&str; 9] = [
    "offline_traces.csv",
    "offline_residuals.csv",
    "snapshot_divergence.csv",
    "pod_eigenvalues.csv",
    "rom_traces.csv",
    "angles.csv",
    "mode_divergence.csv",
    "convergence.csv",
    "convergence_orders.csv",
];

#[derive(Parser, Debug)]
#[command(name = "acrom", version, about = "Artificial-compression ROM pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "acrom_out")]
    out: PathBuf,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the offset-cylinder mesh.
    Mesh,
    /// Run the full-order scheme and store snapshots.
    Offline,
    /// Compute velocity and pressure POD bases.
    Pod,
    /// Run the reduced model over the snapshot window.
    Rom,
    /// Principal angle and inf-sup constant against the mode count.
    Angles,
    /// Time-step refinement study of the reduced model.
    Convergence,
    /// Collect all CSV outputs into one bundle.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Offline => "offline",
            Command::Pod => "pod",
            Command::Rom => "rom",
            Command::Angles => "angles",
            Command::Convergence => "convergence",
            Command::Report => "report",
        }
    }
}

/// Errors reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<acrom::Error>() {
        Some(acrom::Error::Config(_) | acrom::Error::UnknownKey { .. } | acrom::Error::MissingKey(_)) => 2,
        _ => 1,
    }
}

/// Inputs, outputs and parameters of one command run.
struct Manifest {
    command: &'static str,
    config: Option<(PathBuf, String)>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    parameters: serde_json::Map<String, Value>,
}

impl Manifest {
    fn new(command: &'static str, config: Option<&Path>) -> Result<Self> {
        let config = match config {
            Some(p) => Some((p.to_path_buf(), io::hash_file(p)?)),
            None => None,
        };
        Ok(Self {
            command,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            parameters: serde_json::Map::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_name(path), io::hash_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_name(path), io::hash_file(path)?);
        Ok(())
    }

    fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }

    fn write(&self, out: &Path, seconds: f64) -> Result<()> {
        let doc = json!({
            "command": self.command,
            "config": self.config.as_ref().map(|c| c.0.display().to_string()),
            "config_hash": self.config.as_ref().map(|c| c.1.clone()),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "parameters": self.parameters,
            "wall_clock_seconds": seconds,
        });
        let path = out.join(format!("{}_manifest.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

struct Ctx {
    out: PathBuf,
    config_path: Option<PathBuf>,
    config: PipelineConfig,
}

impl Ctx {
    fn upstream(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        if !path.exists() {
            return Err(UsageError(format!(
                "missing upstream artifact {} (produced by `acrom {producer}`)",
                path.display()
            ))
            .into());
        }
        Ok(path)
    }

    fn system(&self, manifest: &mut Manifest) -> Result<FemSystem<f64>> {
        let path = self.upstream(MESH, "mesh")?;
        manifest.input(&path)?;
        Ok(FemSystem::new(load_mesh::<f64>(&path)?))
    }

    fn snapshots(&self, manifest: &mut Manifest) -> Result<SnapshotSet<f64>> {
        let path = self.upstream(SNAPSHOTS, "offline")?;
        manifest.input(&path)?;
        Ok(SnapshotSet::load(&path)?)
    }

    fn bases(&self, system: &FemSystem<f64>, manifest: &mut Manifest) -> Result<(PodBasis<f64>, PodBasis<f64>)> {
        let pu = self.upstream(BASIS_U, "pod")?;
        let pp = self.upstream(BASIS_P, "pod")?;
        manifest.input(&pu)?;
        manifest.input(&pp)?;
        Ok((PodBasis::load(&pu, system)?, PodBasis::load(&pp, system)?))
    }

    fn csv(&self, manifest: &mut Manifest, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let path = self.out.join(name);
        io::write_csv(&path, columns, rows)?;
        manifest.output(&path)
    }
}

fn cmd_mesh(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let cfg = ctx.config.require_mesh()?;
    let d = &cfg.domain;
    let mesh = generate_offset_cylinder_mesh(d.r1, d.r2, d.c1, d.c2, cfg.h)?;
    let path = ctx.out.join(MESH);
    save_mesh(&mesh, &path)?;
    m.output(&path)?;
    for (k, v) in [("h", cfg.h), ("r1", d.r1), ("r2", d.r2), ("c1", d.c1), ("c2", d.c2)] {
        m.param(k, num(v));
    }
    m.param("vertices", mesh.n_vertices());
    m.param("triangles", mesh.n_triangles());
    m.param("max_diameter", num(mesh.max_diameter()));
    info!("mesh: {} vertices, {} triangles", mesh.n_vertices(), mesh.n_triangles());
    Ok(())
}

fn cmd_offline(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let cfg = ctx.config.require_offline()?;
    let system = ctx.system(m)?;
    let initial = match &cfg.initial_state {
        InitialState::Rest => None,
        InitialState::FromFile(path) => {
            m.input(path)?;
            Some(load_state(path)?)
        }
    };
    let set = run_offline_with(&system, cfg, initial)?;
    let path = ctx.out.join(SNAPSHOTS);
    set.save(&path)?;
    m.output(&path)?;

    let rom = ctx.config.rom_run().model;
    let forces = ForceFunctional::new(&system, rom.include_nu, rom.nu)?;
    let div = DivergenceProjector::new(&system)?;
    let mut traces = Vec::with_capacity(set.n_snapshots());
    for n in 0..set.n_snapshots() {
        let (u, p) = (&set.velocity[n], &set.pressure[n]);
        let (drag, lift) = forces.evaluate(&system, u, p);
        traces.push(vec![
            set.times[n],
            acrom::diag::kinetic_energy(&system, u),
            drag,
            lift,
            div.norm(u)?,
        ]);
    }
    ctx.csv(
        m,
        "offline_traces.csv",
        &["time", "energy", "drag", "lift", "divergence_norm"],
        &traces,
    )?;
    let residuals: Vec<Vec<f64>> = set
        .energy_residuals
        .iter()
        .enumerate()
        .map(|(n, &r)| vec![cfg.time(n + 1), r])
        .collect();
    ctx.csv(m, "offline_residuals.csv", &["time", "energy_residual"], &residuals)?;
    let last = div.apply(&set.final_state.u)?;
    let verts = system.mesh.vertices();
    let samples: Vec<Vec<f64>> = (0..system.n_p())
        .map(|k| vec![verts[k][0], verts[k][1], last[k].abs()])
        .collect();
    ctx.csv(m, "snapshot_divergence.csv", &["x", "y", "divergence"], &samples)?;

    for (k, v) in cfg.echo() {
        m.param(&k, v);
    }
    let max_res = set.energy_residuals.iter().cloned().fold(0.0, f64::max);
    m.param("steps", set.steps_done);
    m.param("snapshots", set.n_snapshots());
    m.param("max_energy_residual", num(max_res));
    info!(
        "offline: {} steps, {} snapshots, max energy residual {max_res:e}",
        set.steps_done,
        set.n_snapshots()
    );
    Ok(())
}

fn cmd_pod(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let cfg = *ctx.config.require_pod()?;
    let system = ctx.system(m)?;
    let set = ctx.snapshots(m)?;
    let source = io::hash_file(ctx.out.join(SNAPSHOTS))?;
    let mut eig = Vec::new();
    for (field, r, name) in [
        (Field::Velocity, cfg.r_velocity, BASIS_U),
        (Field::Pressure, cfg.r_pressure, BASIS_P),
    ] {
        let mut basis = compute_pod(&set, &system, field, r)?;
        basis.source_hash = source.clone();
        let path = ctx.out.join(name);
        basis.save(&path)?;
        m.output(&path)?;
        m.param(&format!("{}_modes", field.as_str()), r);
        m.param(&format!("{}_rank", field.as_str()), basis.rank);
        m.param(&format!("{}_modes_999", field.as_str()), basis.modes_for_energy(0.999));
        info!("pod: {} basis R={r} (rank {})", field.as_str(), basis.rank);
        eig.push(basis.eigenvalues);
    }
    let rows: Vec<Vec<f64>> = (0..eig[0].len())
        .map(|i| vec![(i + 1) as f64, eig[0][i], eig[1][i]])
        .collect();
    ctx.csv(m, "pod_eigenvalues.csv", &["index", "velocity", "pressure"], &rows)
}

fn snapshot_index(set: &SnapshotSet<f64>, t: f64) -> Result<usize> {
    set.times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or_else(|| UsageError(format!("no snapshot at t = {t}; window ends must be snapshot times")).into())
}

fn cmd_rom(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let run = ctx.config.rom_run();
    let system = ctx.system(m)?;
    let set = ctx.snapshots(m)?;
    let (ub, pb) = ctx.bases(&system, m)?;
    let t_start = run.t_start.unwrap_or(set.times[0]);
    let t_end = run.t_end.unwrap_or(set.times[set.n_snapshots() - 1]);
    let start = snapshot_index(&set, t_start)?;
    let steps = steps_in_window(t_start, t_end, run.model.dt)?;
    let model = build_reduced_model(&ub, &pb, &system, &run.model)?;
    let state = FlowState {
        u: set.velocity[start].clone(),
        p: set.pressure[start].clone(),
    };
    let (a_u, a_p) = project_state(&ub, &pb, &state)?;
    let traj = run_rom(&model, a_u, a_p, t_start, steps)?;
    let path = ctx.out.join(TRAJECTORY);
    traj.save(&path)?;
    m.output(&path)?;
    ctx.csv(
        m,
        "rom_traces.csv",
        &RomTrajectory::<f64>::CSV_COLUMNS,
        &traj.csv_rows(),
    )?;
    m.param("r", model.r());
    m.param("m", model.m());
    m.param("dt", num(run.model.dt));
    m.param("t_start", num(t_start));
    m.param("t_end", num(t_end));
    m.param("solve_path", run.model.solve_path.as_str());
    m.param("include_nu", run.model.include_nu);
    m.param("max_energy_residual", num(traj.max_energy_residual()));
    m.param("max_linear_residual", num(traj.max_linear_residual()));
    info!(
        "rom: R={} M={}, {steps} steps, max energy residual {:e}",
        model.r(),
        model.m(),
        traj.max_energy_residual()
    );
    Ok(())
}

fn cmd_angles(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let system = ctx.system(m)?;
    let (ub, pb) = ctx.bases(&system, m)?;
    let limit = ub.r().min(pb.r());
    let max_modes = ctx.config.angles.map_or(limit, |a| a.max_modes.min(limit));
    if max_modes == 0 {
        return Err(UsageError("angles need at least one velocity and one pressure mode".into()).into());
    }
    let mut rows = Vec::with_capacity(max_modes);
    for n in 1..=max_modes {
        let (u, p) = (ub.truncate(n)?, pb.truncate(n)?);
        let rep = principal_angle(&u, &p, &system)?;
        let beta = infsup_constant(&u, &p, &system)?;
        rows.push(vec![
            n as f64,
            rep.alpha,
            rep.alpha * rep.alpha,
            rep.theta1,
            beta,
            rep.divergence_rank as f64,
        ]);
    }
    ctx.csv(
        m,
        "angles.csv",
        &["modes", "alpha", "alpha_sq", "theta1", "beta", "divergence_rank"],
        &rows,
    )?;

    let shown = ub.r().min(4);
    let div = mode_divergences(&ub.truncate(shown)?, &system)?;
    let verts = system.mesh.vertices();
    let samples: Vec<Vec<f64>> = (0..system.n_p())
        .map(|k| {
            let mut row = vec![verts[k][0], verts[k][1]];
            row.extend((0..shown).map(|j| div[(k, j)].abs()));
            row
        })
        .collect();
    let names: Vec<String> = (1..=shown).map(|j| format!("mode_{j}")).collect();
    let mut columns = vec!["x", "y"];
    columns.extend(names.iter().map(String::as_str));
    ctx.csv(m, "mode_divergence.csv", &columns, &samples)?;
    m.param("max_modes", max_modes);
    info!("angles: swept R = M = 1..={max_modes}");
    Ok(())
}

fn cmd_convergence(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let cfg = ctx.config.require_convergence()?.clone();
    let model_cfg = ctx.config.rom_run().model;
    let system = ctx.system(m)?;
    let set = ctx.snapshots(m)?;
    let (ub, pb) = ctx.bases(&system, m)?;
    let t_start = cfg.t_start.unwrap_or(set.times[0]);
    let t_end = cfg.t_end.unwrap_or(set.times[set.n_snapshots() - 1]);
    let model = build_reduced_model(&ub, &pb, &system, &model_cfg)?;
    let report: ErrorReport = match cfg.reference {
        Reference::Snapshots => {
            m.param("reference", "snapshots");
            dt_refinement_study(&model, &ub, &pb, (&set).into(), (t_start, t_end), &cfg.dts)?
        }
        Reference::Rom(dt) => {
            m.param("reference", format!("rom dt={dt:e}"));
            let start = snapshot_index(&set, t_start)?;
            let state = FlowState {
                u: set.velocity[start].clone(),
                p: set.pressure[start].clone(),
            };
            let (a_u, a_p) = project_state(&ub, &pb, &state)?;
            let fine = run_rom(
                &model.with_dt(dt),
                a_u,
                a_p,
                t_start,
                steps_in_window(t_start, t_end, dt)?,
            )?;
            let velocity = fine.reconstruct_velocity(&ub);
            let pressure = fine.reconstruct_pressure(&pb);
            let reference = ReferenceFields {
                times: &fine.times,
                velocity: &velocity,
                pressure: &pressure,
            };
            dt_refinement_study(&model, &ub, &pb, reference, (t_start, t_end), &cfg.dts)?
        }
    };
    ctx.csv(m, "convergence.csv", &ErrorReport::CSV_COLUMNS, &report.rows())?;
    let orders = [report.velocity_order, report.pressure_order];
    ctx.csv(
        m,
        "convergence_orders.csv",
        &["velocity_order", "pressure_order"],
        &[orders.iter().map(|o| o.unwrap_or(f64::NAN)).collect()],
    )?;
    if orders.iter().any(Option::is_none) {
        warn!("convergence: fitted order undefined (fewer than two usable ladder points)");
    }
    m.param("dts", cfg.dts.iter().map(|&d| num(d)).collect::<Vec<_>>());
    m.param("t_start", num(t_start));
    m.param("t_end", num(t_end));
    m.param("velocity_order", report.velocity_order.map_or(Value::Null, num));
    m.param("pressure_order", report.pressure_order.map_or(Value::Null, num));
    m.param("order_defined", orders.iter().all(Option::is_some));
    info!(
        "convergence: velocity order {:?}, pressure order {:?}",
        report.velocity_order, report.pressure_order
    );
    Ok(())
}

fn last_value(path: &Path, column: &str, reduce: fn(f64, f64) -> f64) -> Result<f64> {
    if !path.exists() {
        return Ok(f64::NAN);
    }
    let (header, rows) = io::read_csv(path)?;
    let Some(c) = header.iter().position(|h| h == column) else {
        return Ok(f64::NAN);
    };
    Ok(rows
        .iter()
        .map(|r| r[c])
        .fold(f64::NAN, |a, b| if a.is_nan() { b } else { reduce(a, b) }))
}

fn cmd_report(ctx: &Ctx, m: &mut Manifest) -> Result<()> {
    let dir = ctx.out.join(REPORT_DIR);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut copied = Vec::new();
    for name in BUNDLE {
        let src = ctx.out.join(name);
        if src.exists() {
            m.input(&src)?;
            let dst = dir.join(name);
            std::fs::copy(&src, &dst).with_context(|| format!("copying {}", src.display()))?;
            copied.push(name);
        }
    }
    if copied.is_empty() {
        return Err(UsageError(format!("no CSV outputs found in {}", ctx.out.display())).into());
    }
    let out = &ctx.out;
    let summary = vec![
        last_value(&out.join("offline_residuals.csv"), "energy_residual", f64::max)?,
        last_value(&out.join("rom_traces.csv"), "energy_residual", f64::max)?,
        last_value(&out.join("offline_traces.csv"), "divergence_norm", f64::max)?,
        last_value(&out.join("angles.csv"), "alpha", |_, b| b)?,
        last_value(&out.join("angles.csv"), "beta", |_, b| b)?,
        last_value(&out.join("convergence_orders.csv"), "velocity_order", |_, b| b)?,
        last_value(&out.join("convergence_orders.csv"), "pressure_order", |_, b| b)?,
    ];
    let path = dir.join("summary.csv");
    io::write_csv(
        &path,
        &[
            "max_offline_energy_residual",
            "max_rom_energy_residual",
            "max_divergence_norm",
            "alpha",
            "beta",
            "velocity_order",
            "pressure_order",
        ],
        &[summary],
    )?;
    m.output(&path)?;
    m.param("bundle", copied);
    info!("report: bundle written to {}", dir.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ACROM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("ACROM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let config = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(UsageError(format!("config file {} does not exist", p.display())).into());
            }
            parse_config(p)?
        }
        None if matches!(cli.command, Command::Report | Command::Angles) => PipelineConfig::default(),
        None => return Err(UsageError(format!("`acrom {}` requires --config", cli.command.name())).into()),
    };
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx {
        out: cli.out.clone(),
        config_path: cli.config.clone(),
        config,
    };
    let clock = Instant::now();
    let mut manifest = Manifest::new(cli.command.name(), ctx.config_path.as_deref())?;
    match cli.command {
        Command::Mesh => cmd_mesh(&ctx, &mut manifest),
        Command::Offline => cmd_offline(&ctx, &mut manifest),
        Command::Pod => cmd_pod(&ctx, &mut manifest),
        Command::Rom => cmd_rom(&ctx, &mut manifest),
        Command::Angles => cmd_angles(&ctx, &mut manifest),
        Command::Convergence => cmd_convergence(&ctx, &mut manifest),
        Command::Report => cmd_report(&ctx, &mut manifest),
    }?;
    manifest.write(&ctx.out, clock.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("acrom {}: {err:#}", cli.command.name());
            ExitCode::from(exit_code(&err))
        }
    }
}
