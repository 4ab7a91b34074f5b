//! `geoshape`: train constellations, sweep launch power, calibrate the
//! nonlinear interference model.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geoshape_core::channel::{calibrate_nlin, ModelKind, NlinCoefficients};
use geoshape_core::config::{parse_power_list, RunConfig};
use geoshape_core::metrics::{evaluate_model, write_sweep_csv, Source, SweepRow};
use geoshape_core::ssf::{calibration_points, run_transmission};
use geoshape_core::trainer::train;
use geoshape_core::Constellation;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use manifest::ManifestWriter;

#[derive(Parser)]
#[command(name = "geoshape", version, about = "Learned geometric constellation shaping for fiber links")]
struct Cli {
    /// Key-value config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set link.n_spans=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a constellation with the autoencoder.
    Train(TrainArgs),
    /// Evaluate constellations over a launch-power sweep.
    Sweep(SweepArgs),
    /// Fit the nonlinear interference coefficients to split-step runs.
    CalibrateNlin(CalibrateArgs),
    /// Write a square QAM constellation file.
    Qam(QamArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Gn,
    Nlin,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Eval {
    Model,
    Ssf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    /// Constellation order.
    #[arg(long = "M")]
    order: Option<usize>,
    /// Learn the launch power together with the constellation.
    #[arg(long)]
    joint_power: bool,
    /// Coefficient JSON from `calibrate-nlin`.
    #[arg(long)]
    kappa: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// `start:step:stop` in dBm (inclusive) or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    powers: String,
    #[arg(long, num_args = 1.., required = true)]
    constellations: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "model")]
    eval: Vec<Eval>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    kappa: Option<PathBuf>,
    /// Base seed; point `i` uses `seed ^ i`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Coefficient JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QamArgs {
    #[arg(long = "M")]
    order: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<geoshape_core::Error> for Failure {
    fn from(e: geoshape_core::Error) -> Self {
        Failure::Domain(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::Sweep(a) => cmd_sweep(cfg, a),
        Command::CalibrateNlin(a) => cmd_calibrate(cfg, a),
        Command::Qam(a) => cmd_qam(a),
    }
}

fn set(cfg: &mut RunConfig, key: &str, value: impl ToString) -> Result<(), Failure> {
    cfg.set(key, &value.to_string()).map_err(usage)
}

fn apply_model_flags(cfg: &mut RunConfig, model: Option<Model>, kappa: &Option<PathBuf>) -> Result<(), Failure> {
    if let Some(m) = model {
        set(cfg, "model.kind", if matches!(m, Model::Gn) { "gn" } else { "nlin" })?;
    }
    if let Some(path) = kappa {
        // Stored absolute so the manifest snapshot works from any directory.
        let path = std::path::absolute(path).map_err(usage)?;
        for k in ["model.kappa0", "model.kappa1", "model.kappa2"] {
            set(cfg, k, "none")?;
        }
        set(cfg, "model.kappa_file", path.display())?;
    }
    Ok(())
}

fn require_coefficients(cfg: &RunConfig) -> Result<NlinCoefficients> {
    cfg.coefficients()?.ok_or_else(|| {
        let kind = match cfg.model.kind {
            ModelKind::Gn => "gn",
            ModelKind::Nlin => "nlin",
        };
        anyhow!(
            "the {kind} model needs nonlinear coefficients but none were given; \
             run `geoshape calibrate-nlin --out kappa.json` and pass `--kappa kappa.json` \
             (or set model.kappa_file)"
        )
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn side_manifest(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn thread_pool(jobs: Option<u64>) -> Result<rayon::ThreadPool> {
    let n = match jobs {
        Some(n) => n as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), Failure> {
    apply_model_flags(&mut cfg, a.model, &a.kappa)?;
    if let Some(p) = a.power_dbm {
        set(&mut cfg, "model.launch_power_dbm", p)?;
    }
    if let Some(m) = a.order {
        set(&mut cfg, "train.order", m)?;
    }
    if a.joint_power {
        set(&mut cfg, "train.joint_power", true)?;
    }
    if let Some(s) = a.seed {
        set(&mut cfg, "train.seed", s)?;
    }
    cfg.validate().map_err(usage)?;
    let coeffs = require_coefficients(&cfg)?;
    let tc = cfg.train_config(coeffs)?;

    create_dir(&a.out)?;
    let const_path = a.out.join("constellation.json");
    let trace_path = a.out.join("trace.csv");
    let mut m = ManifestWriter::start(
        &a.out.join("manifest.json"),
        "train",
        cfg.to_text(),
        cfg.train.seed,
        vec![const_path.clone(), trace_path.clone()],
    )?;
    let outcome = (|| -> Result<()> {
        let r = train(&tc)?;
        r.constellation.save(&const_path)?;
        let f = std::fs::File::create(&trace_path)?;
        r.write_trace_csv(std::io::BufWriter::new(f))?;
        let mo = r.constellation.moments();
        m.record("final_launch_power_dbm", r.final_launch_power_dbm);
        m.record("iterations", r.trace.len());
        m.record("stopped_early", r.stopped_early);
        m.record("final_loss", r.trace.last().map_or(f64::NAN, |t| t.loss));
        m.record("mu4", mo.mu4);
        m.record("mu6", mo.mu6);
        eprintln!(
            "trained M={} in {} iterations: loss {:.4}, mu4 {:.4}, launch power {:.3} dBm",
            tc.order,
            r.trace.len(),
            r.tail_loss(100),
            mo.mu4,
            r.final_launch_power_dbm
        );
        Ok(())
    })();
    m.finish(&outcome)?;
    Ok(outcome?)
}

struct Job<'a> {
    name: String,
    constellation: &'a Constellation,
    power_dbm: f64,
    source: Source,
    seed: u64,
}

fn cmd_sweep(mut cfg: RunConfig, a: SweepArgs) -> Result<(), Failure> {
    let powers = parse_power_list(&a.powers).map_err(usage)?;
    apply_model_flags(&mut cfg, a.model, &a.kappa)?;
    if let Some(s) = a.seed {
        set(&mut cfg, "ssf.seed", s)?;
    }
    cfg.validate().map_err(usage)?;
    let mut sources: Vec<Source> = Vec::new();
    for e in &a.eval {
        let s = if *e == Eval::Model { Source::Model } else { Source::Ssf };
        if !sources.contains(&s) {
            sources.push(s);
        }
    }
    let model = if sources.contains(&Source::Model) {
        Some(cfg.channel_model(require_coefficients(&cfg)?)?)
    } else {
        None
    };
    let mut loaded = Vec::new();
    for path in &a.constellations {
        let c = Constellation::load(path).with_context(|| format!("loading constellation {}", path.display()))?;
        let name = path.file_stem().map_or("constellation".into(), |s| s.to_string_lossy().into_owned());
        loaded.push((name, c));
    }

    create_dir(&a.out)?;
    let csv_path = a.out.join("sweep.csv");
    let base = cfg.ssf.seed;
    let mut m = ManifestWriter::start(&a.out.join("manifest.json"), "sweep", cfg.to_text(), base, vec![csv_path.clone()])?;
    let outcome = (|| -> Result<()> {
        let mut jobs = Vec::new();
        for (name, c) in &loaded {
            for &p in &powers {
                for &source in &sources {
                    let seed = base ^ jobs.len() as u64;
                    jobs.push(Job { name: name.clone(), constellation: c, power_dbm: p, source, seed });
                }
            }
        }
        let ssf = cfg.ssf_config();
        let n_spans = cfg.link.n_spans;
        let mi_samples = cfg.eval.mi_samples;
        let rows: Vec<SweepRow> = thread_pool(a.jobs)?.install(|| {
            jobs.par_iter()
                .map(|j| {
                    let mo = j.constellation.moments();
                    let point = match j.source {
                        Source::Model => {
                            let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
                            let model = model.as_ref().expect("model checked above").with_power_dbm(j.power_dbm);
                            evaluate_model(j.constellation, &model, mi_samples, &mut rng)
                                .map(|e| (e.snr_eff_db, e.mi.mi_bits_per_4d))
                        }
                        Source::Ssf => {
                            let cfg = geoshape_core::ssf::SsfConfig { seed: j.seed, ..ssf.clone() };
                            run_transmission(j.constellation, &cfg, n_spans, j.power_dbm)
                                .map(|r| (r.snr_eff_db, r.mi.mi_bits_per_4d))
                        }
                    };
                    let (snr, mi, error) = match point {
                        Ok((s, i)) => (Some(s), Some(i), None),
                        Err(e) => (None, None, Some(e.to_string())),
                    };
                    SweepRow {
                        constellation: j.name.clone(),
                        power_dbm: j.power_dbm,
                        snr_eff_db: snr,
                        mi_bit_4d: mi,
                        mu4: mo.mu4,
                        mu6: mo.mu6,
                        source: j.source,
                        error,
                    }
                })
                .collect()
        });
        let f = std::fs::File::create(&csv_path)?;
        write_sweep_csv(&rows, std::io::BufWriter::new(f))?;
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        m.record("rows", rows.len());
        m.record("failed_rows", failed);
        if failed > 0 {
            eprintln!("warning: {failed} of {} sweep points failed; see the error column", rows.len());
        }
        Ok(())
    })();
    m.finish(&outcome)?;
    Ok(outcome?)
}

fn cmd_calibrate(mut cfg: RunConfig, a: CalibrateArgs) -> Result<(), Failure> {
    if let Some(s) = a.seed {
        set(&mut cfg, "ssf.seed", s)?;
    }
    // Calibration isolates the nonlinear interference.
    set(&mut cfg, "ssf.enable_ase", false)?;
    cfg.validate().map_err(usage)?;
    let constellations = cfg
        .calib
        .orders
        .iter()
        .map(|&m| Constellation::qam(m))
        .collect::<geoshape_core::Result<Vec<_>>>()?;

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut m = ManifestWriter::start(&side_manifest(&a.out), "calibrate-nlin", cfg.to_text(), cfg.ssf.seed, vec![a.out.clone()])?;
    let outcome = (|| -> Result<()> {
        let ssf = cfg.ssf_config();
        let points = thread_pool(a.jobs)?
            .install(|| calibration_points(&constellations, &cfg.calib.powers_dbm, &ssf, cfg.link.n_spans))?;
        let fit = calibrate_nlin(&points)?;
        fit.save(&a.out)?;
        m.record("kappa0", fit.kappa0);
        m.record("kappa1", fit.kappa1);
        m.record("kappa2", fit.kappa2);
        m.record("fit_residual", fit.fit_residual);
        m.record("points", serde_json::to_value(&points)?);
        eprintln!(
            "kappa = ({:e}, {:e}, {:e}) 1/mW^2, relative residual {:.4}",
            fit.kappa0, fit.kappa1, fit.kappa2, fit.fit_residual
        );
        if fit.kappa1 <= 0.0 {
            eprintln!("warning: kappa1 <= 0; the fit shows no modulation dependence");
        }
        Ok(())
    })();
    m.finish(&outcome)?;
    Ok(outcome?)
}

fn cmd_qam(a: QamArgs) -> Result<(), Failure> {
    let c = Constellation::qam(a.order).map_err(usage)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let m = ManifestWriter::start(&side_manifest(&a.out), "qam", String::new(), 0, vec![a.out.clone()])?;
    let outcome = c.save(&a.out).map_err(anyhow::Error::from);
    m.finish(&outcome)?;
    Ok(outcome.with_context(|| format!("writing {}", a.out.display()))?)
}
