//! `sktlab`: run simulations, ensembles and structure checks from a JSON config.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 solver failure.
//! Errors are reported on stderr as a single JSON object.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use skt_core::estimators::epsilon_consistency_study;
use skt_core::grid::{FieldKind, GridField};
use skt_core::io::{
    fmt_f64, parse_config, write_csv, write_record_snapshots, write_timeseries, ParsedConfig, RunManifest, WallClock,
};
use skt_core::noise::{check_a4, check_a5};
use skt_core::simulator::{entropy_balance_report, run_ensemble, run_path};
use skt_core::SktError;

#[derive(Parser)]
#[command(name = "sktlab", version, about = "Stochastic SKT cross-diffusion laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Seed of the noise generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path: time series, snapshots and manifest.
    Simulate(Common),
    /// Simulate independent paths and aggregate them.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: usize,
    },
    /// Validate the coefficients and measure the noise structure constants.
    CheckStructure(Common),
    /// Compare runs over a decreasing list of regularization strengths.
    EpsStudy {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, non-increasing.
        #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3")]
        eps_list: Vec<f64>,
    },
    /// Per-step Itô decomposition of the entropy (every step is saved).
    EntropyReport(Common),
}

fn exit_code(e: &SktError) -> u8 {
    if e.is_solver_failure() {
        3
    } else if matches!(e.root(), SktError::Io(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string(), "exit_code": code}));
            ExitCode::from(code)
        }
    }
}

fn load(common: &Common) -> Result<ParsedConfig, SktError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| SktError::Io(format!("{}: {e}", common.config.display())))?;
    parse_config(&text, common.config.parent())
}

struct Session {
    out: PathBuf,
    started: Instant,
    started_unix: f64,
    files: Vec<PathBuf>,
}

impl Session {
    fn new(out: &Path) -> Result<Self, SktError> {
        fs::create_dir_all(out)?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Ok(Self { out: out.to_path_buf(), started: Instant::now(), started_unix, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.files.push(PathBuf::from(name));
        p
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), SktError> {
        let p = self.path(name);
        fs::write(p, serde_json::to_string_pretty(value).expect("serializable") + "\n")?;
        Ok(())
    }

    fn finish(self, command: &str, parsed: &ParsedConfig, seed: u64, paths: Option<usize>) -> Result<(), SktError> {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: parsed.hash.clone(),
            seed,
            paths,
            config: parsed.resolved.clone(),
            outputs: RunManifest::list_outputs(&self.out, &self.files)?,
            wall_clock: WallClock {
                started_unix: self.started_unix,
                elapsed_seconds: self.started.elapsed().as_secs_f64(),
            },
        };
        manifest.write(&self.out)?;
        Ok(())
    }
}

fn run(command: Command) -> Result<(), SktError> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Ensemble { common, paths } => ensemble(&common, paths),
        Command::CheckStructure(c) => check_structure(&c),
        Command::EpsStudy { common, eps_list } => eps_study(&common, &eps_list),
        Command::EntropyReport(c) => entropy_report(&c),
    }
}

fn simulate(c: &Common) -> Result<(), SktError> {
    let parsed = load(c)?;
    let mut s = Session::new(&c.out)?;
    let rec = run_path(&parsed.config, c.seed)?;
    write_timeseries(&s.path("timeseries.csv"), &rec)?;
    for f in write_record_snapshots(&c.out.join("snapshots"), &rec)? {
        s.files.push(f);
    }
    let summary = json!({
        "steps": parsed.config.n_steps(),
        "final_time": rec.times.last(),
        "min_density": rec.min_u.iter().cloned().fold(f64::INFINITY, f64::min),
        "mass_drift": skt_core::PathRecord::relative_mass_drift(&rec.mass),
        "v_mass_drift": skt_core::PathRecord::relative_mass_drift(&rec.v_mass),
        "dissipation_bound_violations": rec.bound_violations,
        "clipped_values": rec.clipped,
        "noise_modes": rec.k_modes,
    });
    s.write_json("summary.json", &summary)?;
    s.finish("simulate", &parsed, c.seed, None)
}

fn ensemble(c: &Common, paths: usize) -> Result<(), SktError> {
    let parsed = load(c)?;
    let n = parsed.config.params().n();
    let mut s = Session::new(&c.out)?;
    let stats = run_ensemble(&parsed.config, paths, c.seed)?;

    let mut header = vec!["path".to_string(), "sup_H".into(), "dissipation_integral".into()];
    header.extend((1..=n).map(|i| format!("mass_increment_{i}")));
    header.push("min_u".into());
    header.push("newton_iters".into());
    let rows: Vec<Vec<String>> = stats
        .summaries
        .iter()
        .map(|p| {
            let mut r = vec![p.path_index.to_string(), fmt_f64(p.sup_entropy), fmt_f64(p.dissipation_integral)];
            r.extend(p.mass_increment.iter().map(|x| fmt_f64(*x)));
            r.push(fmt_f64(p.min_u));
            r.push(p.newton_iters.to_string());
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&s.path("paths.csv"), &h, &rows)?;

    let row = |name: String, st: &skt_core::simulator::SummaryStats| {
        vec![name, fmt_f64(st.mean), fmt_f64(st.variance), fmt_f64(st.max)]
    };
    let mut agg = vec![row("sup_H".into(), &stats.sup_entropy), row("dissipation_integral".into(), &stats.dissipation_integral)];
    for (i, st) in stats.mass_increment.iter().enumerate() {
        agg.push(row(format!("mass_increment_{}", i + 1), st));
    }
    write_csv(&s.path("aggregate.csv"), &["quantity", "mean", "variance", "max"], &agg)?;
    s.finish("ensemble", &parsed, c.seed, Some(paths))
}

fn check_structure(c: &Common) -> Result<(), SktError> {
    let parsed = load(c)?;
    let cfg = &parsed.config;
    let params = cfg.params();
    let mut s = Session::new(&c.out)?;
    let rec = run_path(cfg, c.seed)?;
    let nc = cfg.grid().len();
    let n = params.n();

    // Consecutive trajectory states plus constant states spanning three decades.
    let snaps = rec.snapshots();
    let mut pairs: Vec<(GridField, GridField)> =
        snaps.windows(2).map(|w| (w[0].u.clone(), w[1].u.clone())).collect();
    let constant = |x: f64| GridField::constant(FieldKind::Density, n, nc, x);
    for k in 0..10 {
        let a = 10f64.powf(k as f64 * 0.3);
        pairs.push((constant(a)?, constant(a * 1.5)?));
    }
    let a4 = check_a4(cfg.noise(), params, &pairs)?;
    let a5 = if snaps.len() >= 2 { Some(check_a5(cfg.noise(), params, &rec)?) } else { None };
    let report = json!({
        "pi": params.pi(),
        "mode": params.mode(),
        "detailed_balance_residual": params.detailed_balance_residual(),
        "noise": {
            "family": cfg.noise().family(),
            "rho": cfg.noise().rho(),
            "K": cfg.noise().k_modes(),
            "tail_fraction": cfg.noise().tail_fraction(),
            "sup_energy": cfg.noise().sup_energy(),
        },
        "a4": a4,
        "a5": a5.map(|r| json!({"ratio1_max": r.ratio1_max, "ratio2_max": r.ratio2_max, "c_h": r.c_h()})),
    });
    s.write_json("structure.json", &report)?;
    s.finish("check-structure", &parsed, c.seed, None)
}

fn eps_study(c: &Common, eps: &[f64]) -> Result<(), SktError> {
    let parsed = load(c)?;
    let mut s = Session::new(&c.out)?;
    let study = epsilon_consistency_study(&parsed.config, eps, c.seed)?;
    let rows: Vec<Vec<String>> = (0..study.epsilons.len())
        .map(|k| {
            vec![
                fmt_f64(study.epsilons[k]),
                study.successive_differences.get(k).map_or(String::new(), |d| fmt_f64(*d)),
                fmt_f64(study.residue[k]),
                fmt_f64(study.residue_bound[k]),
                fmt_f64(study.sup_entropy[k]),
            ]
        })
        .collect();
    write_csv(
        &s.path("eps_study.csv"),
        &["epsilon", "l2_diff_to_next", "residue", "residue_bound", "sup_H"],
        &rows,
    )?;
    let mut parsed = parsed;
    parsed.resolved["eps_list"] = json!(eps);
    parsed.hash = skt_core::io::canonical_hash(&parsed.resolved);
    s.finish("eps-study", &parsed, c.seed, None)
}

fn entropy_report(c: &Common) -> Result<(), SktError> {
    let mut parsed = load(c)?;
    parsed.config = parsed.config.with_save_every(1)?;
    parsed.resolved["save_every"] = json!(1);
    parsed.hash = skt_core::io::canonical_hash(&parsed.resolved);
    let mut s = Session::new(&c.out)?;
    let rec = run_path(&parsed.config, c.seed)?;
    let rep = entropy_balance_report(&parsed.config, &rec)?;
    write_timeseries(&s.path("timeseries.csv"), &rec)?;
    let rows: Vec<Vec<String>> = rep
        .steps
        .iter()
        .map(|b| {
            vec![
                fmt_f64(b.t),
                fmt_f64(b.delta_h),
                fmt_f64(b.dissipation),
                fmt_f64(b.martingale),
                fmt_f64(b.ito_correction),
                fmt_f64(b.residual),
                fmt_f64(b.bound_total),
                b.bound_violations.to_string(),
            ]
        })
        .collect();
    write_csv(
        &s.path("entropy_balance.csv"),
        &["t", "delta_H", "dissipation", "martingale", "ito_correction", "residual", "bound_total", "bound_violations"],
        &rows,
    )?;
    s.finish("entropy-report", &parsed, c.seed, None)
}
