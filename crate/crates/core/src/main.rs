use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use rayon::prelude::*;

use neurodiffuse::checkpoint::checkpoint;
use neurodiffuse::config::{Figure, RunConfig, Subcommand};
use neurodiffuse::constitutive::ModelSpec;
use neurodiffuse::csd::metrics::SNAPSHOT_TIME;
use neurodiffuse::csd::{refinement_sweep, run_csd, sorted_field, CsdModel, CsdOutcome, PressureWidthRule, WaveMetrics};
use neurodiffuse::report::{self, sci, Cell, PerfReport, SweepTable};
use neurodiffuse::splitting::{SchemeConfig, Trajectory};
use neurodiffuse::state::TissueState;
use neurodiffuse::verification::{run_mms, ManufacturedCase, Norm};
use neurodiffuse::Error;

/// Worker-count override for sweep and MMS jobs.
const WORKERS_ENV: &str = "NEURODIFFUSE_WORKERS";

#[derive(Parser)]
#[command(name = "neurodiffuse", version, about = "1D electrodiffusion and osmosis simulator for brain tissue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Manufactured-solution convergence tables.
    Mms {
        #[command(flatten)]
        common: Common,
        /// zero_flow or full.
        #[arg(long)]
        case: Option<String>,
        /// PDE time stepper.
        #[arg(long)]
        pde: Option<String>,
    },
    /// Zero-flow CSD run or refinement sweep.
    Csd {
        #[command(flatten)]
        common: Common,
        /// Sweep grid, e.g. `--sweep N=1000,2000 dt=12.5ms,6.25ms`.
        #[arg(long, num_args = 1..)]
        sweep: Vec<String>,
    },
    /// Full-model CSD run or refinement sweep.
    CsdFull {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        sweep: Vec<String>,
    },
    /// Timing and memory report over a grid of N.
    Perf {
        #[command(flatten)]
        common: Common,
    },
    /// x/y series for the figure layouts.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// 2, 3a, 5 or 6a.
        #[arg(long)]
        figure: Option<String>,
    },
    /// One perf cell in a fresh process; prints a JSON report.
    #[command(hide = true)]
    PerfCell {
        #[arg(long)]
        config_json: PathBuf,
        #[arg(long)]
        n: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Mode(_) => 2,
        Error::Io(_) | Error::Restore(_) => 4,
        _ => 3,
    }
}

fn build_config(sub: Subcommand, common: &Common, extra: &[(String, String)]) -> neurodiffuse::Result<RunConfig> {
    let mut cfg = RunConfig::defaults(sub);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: cannot read: {e}", path.display())))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for (k, v) in extra {
        cfg.set(k, v, "command line")?;
    }
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {s}: expected key=value")))?;
        cfg.set(k.trim(), v, &format!("--set {s}"))?;
    }
    if let Ok(w) = std::env::var(WORKERS_ENV) {
        cfg.set("workers", &w, WORKERS_ENV)?;
    }
    cfg.out = common.out.clone();
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_pairs(sweep: &[String]) -> neurodiffuse::Result<Vec<(String, String)>> {
    sweep
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--sweep {s}: expected N=... or dt=...")))?;
            match k {
                "N" | "n" => Ok(("sweep.n".to_string(), v.to_string())),
                "dt" => Ok(("sweep.dt".to_string(), v.to_string())),
                _ => Err(Error::Config(format!("--sweep {s}: unknown grid axis '{k}'"))),
            }
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PerfCell { config_json, n } => perf_cell(&config_json, n),
        command => dispatch(command),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> neurodiffuse::Result<u8> {
    let cfg = match &command {
        Command::Mms { common, case, pde } => {
            let mut extra = Vec::new();
            if let Some(c) = case {
                extra.push(("case".to_string(), c.clone()));
            }
            if let Some(p) = pde {
                extra.push(("pde".to_string(), p.clone()));
            }
            build_config(Subcommand::Mms, common, &extra)?
        }
        Command::Csd { common, sweep } => build_config(Subcommand::Csd, common, &sweep_pairs(sweep)?)?,
        Command::CsdFull { common, sweep } => build_config(Subcommand::CsdFull, common, &sweep_pairs(sweep)?)?,
        Command::Perf { common } => build_config(Subcommand::Perf, common, &[])?,
        Command::PlotData { common, figure } => {
            let extra: Vec<(String, String)> = figure.iter().map(|f| ("figure".to_string(), f.clone())).collect();
            build_config(Subcommand::PlotData, common, &extra)?
        }
        Command::PerfCell { .. } => unreachable!("handled before dispatch"),
    };
    if let Some(w) = cfg.workers {
        // Fails only if the global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    fs::create_dir_all(&cfg.out)?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(cfg.out.join("config.json"), resolved)?;
    match cfg.subcommand {
        Subcommand::Mms => mms(&cfg),
        Subcommand::Csd | Subcommand::CsdFull => {
            if cfg.sweep_n.is_empty() {
                csd_single(&cfg)
            } else {
                csd_sweep(&cfg)
            }
        }
        Subcommand::Perf => perf(&cfg),
        Subcommand::PlotData => plot_data(&cfg),
    }
}

fn mms(cfg: &RunConfig) -> neurodiffuse::Result<u8> {
    let case = ManufacturedCase::new(cfg.case)?;
    let table = run_mms(&case, &cfg.scheme, &cfg.mms)?;
    let names: Vec<String> = table
        .rows
        .iter()
        .find_map(|r| r.as_ref().ok())
        .map(|r| r.errors.iter().map(|e| e.name.clone()).collect())
        .unwrap_or_default();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let stem = format!("mms_{}_{}", cfg.case.name(), cfg.scheme.pde.name());
    fs::write(cfg.out.join(format!("{stem}.csv")), table.to_csv(&names))?;
    let text = format!("{}\n{}", table.render(&names, Norm::L2), table.render(&names, Norm::H1));
    fs::write(cfg.out.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    let records = cfg.out.join(format!("{stem}.jsonl"));
    let _ = fs::remove_file(&records);
    for row in &table.rows {
        report::append_record(&records, row)?;
    }
    let failed = table.rows.iter().filter(|r| r.is_err()).count();
    if failed == table.rows.len() {
        return Err(Error::Verification("every refinement level failed".into()));
    }
    Ok(0)
}

fn setup(cfg: &RunConfig, scheme: &SchemeConfig) -> neurodiffuse::Result<neurodiffuse::csd::CsdSetup> {
    let mut s = cfg.model.setup(scheme, cfg.conventions)?;
    s.trigger = cfg.trigger;
    Ok(s)
}

fn write_metrics(dir: &Path, m: &WaveMetrics) -> neurodiffuse::Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(dir.join("metrics.json"), text)?;
    Ok(())
}

fn print_metrics(m: &WaveMetrics, rule: PressureWidthRule) {
    let show = |v: Option<f64>| v.map_or("not detected".to_string(), sci);
    println!("speed (mm/min)       {}", show(m.speed));
    println!("width (mm)           {}", show(m.width));
    println!("duration (s)         {}", show(m.duration));
    println!("max phi_n (mV)       {}", sci(m.max_phi_n * 1e3));
    println!("min phi_e (mV)       {}", sci(m.min_phi_e * 1e3));
    if !m.min_pressure.is_empty() {
        println!("pressure width (mm)  {}", show(pressure_width(m, rule)));
        let kpa: Vec<String> = m.min_pressure.iter().map(|p| sci(p * 1e-3)).collect();
        println!("min pressures (kPa)  {}", kpa.join(" "));
        println!("glial speed (um/s)   {}", show(m.max_glial_speed.map(|v| v * 1e6)));
    }
}

fn pressure_width(m: &WaveMetrics, rule: PressureWidthRule) -> Option<f64> {
    match rule {
        PressureWidthRule::Literal => m.pressure_width,
        PressureWidthRule::Complement => m.pressure_width_complement,
    }
}

fn csd_single(cfg: &RunConfig) -> neurodiffuse::Result<u8> {
    let s = setup(cfg, &cfg.scheme)?;
    let spec = s.spec.clone();
    let out = run_csd(s, &cfg.scheme, cfg.triggered)?;
    write_metrics(&cfg.out, &out.metrics)?;
    let peaks: Vec<Vec<f64>> = out.tracker.peaks.iter().map(|p| vec![p.t, p.x * 1e3, p.phi * 1e3]).collect();
    fs::write(cfg.out.join("peaks.csv"), report::render_rows(&["t_s", "x_mm", "phi_n_mV"], &peaks))?;
    let probe: Vec<Vec<f64>> = out.tracker.probe.iter().map(|(t, k)| vec![*t, *k]).collect();
    fs::write(cfg.out.join("probe_k_e.csv"), report::render_rows(&["t_s", "K_e_mM"], &probe))?;
    let meta = serde_json::to_string_pretty(&out.trajectory.meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(cfg.out.join("run_meta.json"), meta)?;
    if cfg.write_checkpoint {
        checkpoint(&out.trajectory, &spec, cfg.out.join("trajectory.ndif"))?;
    }
    print_metrics(&out.metrics, cfg.pressure_width);
    Ok(0)
}

fn csd_sweep(cfg: &RunConfig) -> neurodiffuse::Result<u8> {
    let mut base = cfg.scheme.clone();
    base.sample_interval = Some(base.sample_interval.unwrap_or(0.5));
    if cfg.trigger != neurodiffuse::membrane::TriggerParams::csd_default() || !cfg.triggered {
        return Err(Error::Config("sweeps use the reference trigger; drop trigger.* and triggered".into()));
    }
    let sweep = refinement_sweep(cfg.model, &base, cfg.conventions, &cfg.sweep_n, &cfg.sweep_dt)?;
    let records = cfg.out.join("sweep.jsonl");
    let _ = fs::remove_file(&records);
    for c in &sweep.cells {
        report::append_record(&records, c)?;
    }
    let rule = cfg.pressure_width;
    let mut quantities: Vec<(&str, Box<dyn Fn(&WaveMetrics) -> Option<f64>>)> = vec![
        ("speed_mm_per_min", Box::new(|m: &WaveMetrics| m.speed)),
        ("width_mm", Box::new(|m: &WaveMetrics| m.width)),
        ("duration_s", Box::new(|m: &WaveMetrics| m.duration)),
    ];
    if cfg.model == CsdModel::Full {
        quantities.push(("pressure_width_mm", Box::new(move |m: &WaveMetrics| pressure_width(m, rule))));
    }
    for (name, f) in &quantities {
        let cells = (0..sweep.ns.len())
            .map(|i| {
                (0..sweep.dts.len())
                    .map(|j| match &sweep.cell(i, j).metrics {
                        None => Cell::Failed,
                        Some(m) => f(m).map_or(Cell::Missing, Cell::Value),
                    })
                    .collect()
            })
            .collect();
        let t = SweepTable {
            quantity: name.to_string(),
            ns: sweep.ns.clone(),
            dts: sweep.dts.clone(),
            cells,
        };
        let text = t.render();
        fs::write(cfg.out.join(format!("{name}.csv")), &text)?;
        print!("{text}");
    }
    for c in sweep.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell N={} dt={}: {}", c.n, sci(c.dt), c.error.as_deref().unwrap_or(""));
    }
    if sweep.cells.iter().all(|c| c.metrics.is_none()) {
        eprintln!("error: every sweep cell failed");
        return Ok(3);
    }
    Ok(0)
}

fn perf(cfg: &RunConfig) -> neurodiffuse::Result<u8> {
    let json = cfg.out.join("perf_config.json");
    let text = serde_json::to_string(cfg).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(&json, text)?;
    let exe = std::env::current_exe()?;
    let records = cfg.out.join("perf.jsonl");
    let _ = fs::remove_file(&records);
    let mut rows = Vec::new();
    for &n in &cfg.perf_n {
        let out = std::process::Command::new(&exe)
            .arg("perf-cell")
            .arg("--config-json")
            .arg(&json)
            .arg("--n")
            .arg(n.to_string())
            .output()?;
        if !out.status.success() {
            eprintln!("perf N={n} failed: {}", String::from_utf8_lossy(&out.stderr).trim());
            continue;
        }
        let rep: PerfReport = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::InvalidArgument(format!("perf N={n}: bad report: {e}")))?;
        report::append_record(&records, &rep)?;
        rows.push(rep.row());
    }
    let table = report::render_rows(&PerfReport::HEADER, &rows);
    fs::write(cfg.out.join("perf.csv"), &table)?;
    print!("{table}");
    Ok(if rows.is_empty() { 3 } else { 0 })
}

/// Runs one perf cell in this process and prints its report as JSON.
fn perf_cell(config_json: &Path, n: usize) -> neurodiffuse::Result<u8> {
    let baseline = report::memory_mib().map_or(0.0, |m| m.0);
    let text = fs::read_to_string(config_json)?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let scheme = SchemeConfig {
        n_cells: n,
        ..cfg.scheme.clone()
    };
    let s = setup(&cfg, &scheme)?;
    let dofs = s.layout.dofs.num_dofs();
    let out = run_csd(s, &scheme, cfg.triggered)?;
    let peak = report::memory_mib().map_or(0.0, |m| m.1) - baseline;
    let rep = PerfReport::from_meta(n, dofs, &out.trajectory.meta, peak);
    println!("{}", serde_json::to_string(&rep).map_err(|e| Error::InvalidArgument(e.to_string()))?);
    Ok(0)
}

/// Snapshot closest to time t.
fn snapshot_at(tr: &Trajectory, t: f64) -> &TissueState {
    tr.states
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .expect("trajectory holds at least one snapshot")
}

/// x in mm and a transformed field from a snapshot.
fn series(s: &TissueState, f: usize, scale: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ys) = sorted_field(s, f);
    (xs.iter().map(|x| x * 1e3).collect(), ys.into_iter().map(scale).collect())
}

fn snapshot_panels(dir: &Path, spec: &ModelSpec, s: &TissueState, initial: &TissueState, prefix: &str) -> neurodiffuse::Result<()> {
    let l = &s.layout;
    let ecs = l.ecs();
    let tag = format!("{prefix}_t{}s", (s.t * 1e3).round() / 1e3);
    let comps: Vec<usize> = if prefix == "fig2" { vec![ecs] } else { (0..=ecs).collect() };
    for &r in &comps {
        for k in 0..l.num_ions {
            let f = l.conc_field(r, k);
            let name = l.field_name(spec, f);
            let (x, y) = series(s, f, |v| v);
            report::write_series(&dir.join(format!("{tag}_{name}.csv")), "x_mm", &format!("{name}_mM"), &x, &y)?;
        }
    }
    for r in 0..=ecs {
        let f = l.phi_field(r);
        let name = l.field_name(spec, f);
        let (x, y) = series(s, f, |v| v * 1e3);
        report::write_series(&dir.join(format!("{tag}_{name}.csv")), "x_mm", &format!("{name}_mV"), &x, &y)?;
    }
    for r in 0..=ecs {
        let (x, y, name) = if r < ecs {
            let f = l.alpha_field(r);
            let (xs, a) = sorted_field(s, f);
            let (_, a0) = sorted_field(initial, f);
            let y: Vec<f64> = a.iter().zip(&a0).map(|(a, b)| 100.0 * (a - b) / b).collect();
            (xs, y, l.field_name(spec, f))
        } else {
            let f = l.phi_field(ecs);
            let (xs, _) = sorted_field(s, f);
            let y: Vec<f64> = xs
                .iter()
                .map(|&x| 100.0 * (s.ecs_alpha_at(x) - initial.ecs_alpha_at(x)) / initial.ecs_alpha_at(x))
                .collect();
            (xs, y, format!("alpha_{}", spec.compartments[ecs].label))
        };
        let x: Vec<f64> = x.iter().map(|v| v * 1e3).collect();
        report::write_series(&dir.join(format!("{tag}_d{name}.csv")), "x_mm", &format!("d{name}_percent"), &x, &y)?;
    }
    if let Some(f) = l.pressure_field() {
        let (x, y) = series(s, f, |v| v * 1e-3);
        report::write_series(&dir.join(format!("{tag}_p_e.csv")), "x_mm", "p_e_kPa", &x, &y)?;
    }
    Ok(())
}

fn plot_data(cfg: &RunConfig) -> neurodiffuse::Result<u8> {
    let dir = cfg.out.join(cfg.figure.name());
    fs::create_dir_all(&dir)?;
    match cfg.figure {
        Figure::Snapshots | Figure::FullSnapshots => {
            let s = setup(cfg, &cfg.scheme)?;
            let spec = s.spec.clone();
            let initial = s.state.clone();
            let out = run_csd(s, &cfg.scheme, cfg.triggered)?;
            let times: Vec<f64> = if cfg.figure == Figure::Snapshots { cfg.times.clone() } else { vec![SNAPSHOT_TIME] };
            for t in times {
                let snap = snapshot_at(&out.trajectory, t);
                snapshot_panels(&dir, &spec, snap, &initial, cfg.figure.name())?;
            }
            write_metrics(&dir, &out.metrics)?;
            Ok(0)
        }
        Figure::SweepPotential | Figure::SweepPressure => {
            if cfg.sweep_n.is_empty() {
                return Err(Error::Config(format!("figure {} needs sweep.n and sweep.dt", cfg.figure.name())));
            }
            let jobs: Vec<(usize, f64)> = cfg
                .sweep_n
                .iter()
                .flat_map(|&n| cfg.sweep_dt.iter().map(move |&dt| (n, dt)))
                .collect();
            let results: Vec<((usize, f64), neurodiffuse::Result<CsdOutcome>)> = jobs
                .par_iter()
                .map(|&(n, dt)| {
                    let scheme = SchemeConfig {
                        n_cells: n,
                        dt,
                        ..cfg.scheme.clone()
                    };
                    ((n, dt), setup(cfg, &scheme).and_then(|s| run_csd(s, &scheme, cfg.triggered)))
                })
                .collect();
            let mut ok = 0;
            for ((n, dt), r) in results {
                let name = format!("N{n}_dt{}ms", (dt * 1e6).round() / 1e3);
                match r {
                    Ok(o) => {
                        ok += 1;
                        let snap = snapshot_at(&o.trajectory, SNAPSHOT_TIME);
                        let l = &snap.layout;
                        let path = dir.join(format!("{}_{name}.csv", cfg.figure.name()));
                        if cfg.figure == Figure::SweepPotential {
                            let (x, y) = series(snap, l.phi_field(0), |v| v * 1e3);
                            report::write_series(&path, "x_mm", "phi_n_mV", &x, &y)?;
                        } else {
                            let f = l.pressure_field().ok_or_else(|| Error::Mode("pressure needs the full model".into()))?;
                            let (x, y) = series(snap, f, |v| v * 1e-3);
                            report::write_series(&path, "x_mm", "p_e_kPa", &x, &y)?;
                        }
                    }
                    Err(e) => eprintln!("cell N={n} dt={}: {e}", sci(dt)),
                }
            }
            Ok(if ok == 0 { 3 } else { 0 })
        }
    }
}
