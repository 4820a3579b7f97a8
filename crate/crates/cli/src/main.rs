//! `gsmefb`: dataset generation, training, evaluation sweeps and baselines.
//!
//! Exit codes: 0 success, 1 usage/configuration/I/O error, 2 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use gsmefb_core::baseline_omp::{BaselineSetup, SCHEME_LABEL};
use gsmefb_core::channel::{generate_dataset_seeded, write_dataset};
use gsmefb_core::config::RunConfig;
use gsmefb_core::rate::{average_rate, summarize, LinkParams, RateReport};
use gsmefb_core::rng::derive_seed;
use gsmefb_core::trainer::{self, load_run, run_dirs, TestSet, TrainOptions};
use gsmefb_core::{Error, Result};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_HEADER: &str = "axis_value,mi_amp_phase,mi_spatial,rate,mc_stderr,scheme";
const MODEL_SCHEME: &str = "GsmEFBNet";

#[derive(Parser)]
#[command(name = "gsmefb", version, about = "GSM hybrid beamforming with learned pilots and CSI feedback")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true, env = "GSMEFB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Bits,
    Snr,
}

#[derive(Subcommand)]
enum Command {
    /// Write a channel dataset in the binary dataset format.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `channel.rng_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model into a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in total.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate trained runs across feedback sizes or SNRs.
    Sweep {
        /// A run directory, or a directory of run directories.
        #[arg(long)]
        checkpoint_set: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated; write `--values=-5,0,5` when the list starts negative.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// OMP channel estimation with SVD beamforming, with and without quantized feedback.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate at these SNRs (dB) instead of the configured one.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr_values: Vec<f64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn preamble(seeds: &[u64], config: &RunConfig) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let cfg = serde_json::to_string(config).expect("config serializes");
    format!(
        "# schema_version={}\n# seed={}\n# config={}\n{}\n",
        RESULTS_SCHEMA_VERSION,
        seeds.join(";"),
        cfg,
        RESULTS_HEADER
    )
}

fn row(out: &mut String, axis_value: &str, r: &RateReport, scheme: &str) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        axis_value, r.mi_amp_phase, r.mi_spatial, r.total, r.mc_stderr, scheme
    );
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

fn gen_data(config: Option<&Path>, count: usize, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut run = load_config(config)?;
    if let Some(s) = seed {
        run.channel.rng_seed = s;
    }
    let data = generate_dataset_seeded::<f64>(&run.channel, count, run.channel.rng_seed)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data)?;
    fs::write(out, buf)?;
    let meta = serde_json::json!({
        "schema_version": RESULTS_SCHEMA_VERSION,
        "seed": run.channel.rng_seed,
        "count": count,
        "channel": run.channel,
    });
    let mut side = out.as_os_str().to_owned();
    side.push(".json");
    fs::write(PathBuf::from(side), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn train(config: Option<&Path>, out_dir: &Path, resume: bool, stop_after: Option<usize>, quiet: bool) -> Result<()> {
    let run = match (config, resume) {
        (None, true) => RunConfig::load(&out_dir.join(trainer::CONFIG_FILE))?,
        _ => load_config(config)?,
    };
    let opts = TrainOptions {
        resume,
        stop_after,
        verbose: !quiet,
    };
    let out = trainer::train::<f64>(&run, Some(out_dir), &opts)?;
    if !quiet {
        let s = &out.summary;
        eprintln!(
            "initial rate {:.4}, random baseline {:.4}, final rate {:.4}",
            s.initial.total,
            s.random_baseline.total,
            s.final_rate.map_or(f64::NAN, |r| r.total)
        );
    }
    Ok(())
}

fn evaluate_dir(dir: &Path, snr_db: Option<f64>) -> Result<(RunConfig, RateReport)> {
    let (run, net, _) = load_run::<f64>(dir)?;
    let link = snr_db.map_or_else(|| run.train.link(), LinkParams::from_snr_db);
    let test = TestSet::generate(&run, run.train.test_size)?;
    let r = trainer::evaluate(&net, &test, &link, &run.train)?;
    Ok((run, r))
}

fn sweep(set: &Path, axis: Axis, values: &[f64], out: &Path) -> Result<()> {
    let dirs = run_dirs(set)?;
    if dirs.is_empty() {
        return Err(Error::config(format!("no run directories under {}", set.display())));
    }
    let mut text = String::new();
    match axis {
        Axis::Bits => {
            let mut runs = Vec::new();
            for d in &dirs {
                runs.push((RunConfig::load(&d.join(trainer::CONFIG_FILE))?, d.clone()));
            }
            let missing: Vec<String> = values
                .iter()
                .filter(|&&b| !runs.iter().any(|(r, _)| r.model.feedback_bits as f64 == b))
                .map(|b| fmt_value(*b))
                .collect();
            if !missing.is_empty() {
                return Err(Error::config(format!(
                    "no trained checkpoint for feedback bits {} under {}",
                    missing.join(", "),
                    set.display()
                )));
            }
            let mut seeds = Vec::new();
            let mut rows = Vec::new();
            for &b in values {
                let mut reports = Vec::new();
                for (r, d) in runs.iter().filter(|(r, _)| r.model.feedback_bits as f64 == b) {
                    reports.push(evaluate_dir(d, None)?.1);
                    seeds.push(r.train.seed);
                }
                rows.push((b, summarize(&reports)));
            }
            text.push_str(&preamble(&seeds, &runs[0].0));
            for (b, r) in rows {
                row(&mut text, &fmt_value(b), &r, MODEL_SCHEME);
            }
        }
        Axis::Snr => {
            if dirs.len() != 1 {
                return Err(Error::config(format!(
                    "the snr axis evaluates one checkpoint; {} contains {}",
                    set.display(),
                    dirs.len()
                )));
            }
            let mut body = String::new();
            let mut cfg = None;
            for &snr in values {
                let (run, r) = evaluate_dir(&dirs[0], Some(snr))?;
                row(&mut body, &fmt_value(snr), &r, MODEL_SCHEME);
                cfg = Some(run);
            }
            let run = cfg.expect("values is nonempty");
            text.push_str(&preamble(&[run.train.seed], &run));
            text.push_str(&body);
        }
    }
    fs::write(out, text)?;
    Ok(())
}

fn baseline_report(run: &RunConfig, setup: &BaselineSetup<f64>, test: &TestSet<f64>, link: &LinkParams, bits: Option<usize>) -> Result<RateReport> {
    let hbs = (0..test.len())
        .into_par_iter()
        .map(|i| setup.beamformer(&test.channels[i], &test.noise(i, link), link.noise_var, bits))
        .collect::<Result<Vec<_>>>()?;
    let seed = derive_seed(run.train.seed, &[0x6d63]);
    average_rate(&hbs, &test.channels, link, run.train.eval_mc_samples, seed)
}

fn baseline(config: Option<&Path>, out: &Path, snr_values: &[f64]) -> Result<()> {
    let run = load_config(config)?;
    let setup = BaselineSetup::<f64>::new(&run)?;
    let size = if run.baseline.test_size > 0 {
        run.baseline.test_size
    } else {
        run.train.test_size
    };
    let test = TestSet::generate(&run, size)?;
    let snrs: Vec<f64> = if snr_values.is_empty() {
        vec![run.train.snr_db]
    } else {
        snr_values.to_vec()
    };
    let mut text = preamble(&[run.train.seed], &run);
    for &snr in &snrs {
        let link = LinkParams::from_snr_db(snr);
        // bits axis rows at the configured SNR, snr axis rows otherwise
        let axis = |bits: Option<usize>| match (snr_values.is_empty(), bits) {
            (true, Some(b)) => b.to_string(),
            (true, None) => "inf".to_string(),
            (false, _) => fmt_value(snr),
        };
        if run.baseline.infinite_feedback {
            let r = baseline_report(&run, &setup, &test, &link, None)?;
            row(&mut text, &axis(None), &r, &format!("{SCHEME_LABEL} infinite-feedback"));
        }
        for &b in &run.baseline.feedback_bits {
            let r = baseline_report(&run, &setup, &test, &link, Some(b))?;
            row(&mut text, &axis(Some(b)), &r, &format!("{SCHEME_LABEL} scalar-quantized B={b}"));
        }
    }
    fs::write(out, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData { config, count, out, seed } => gen_data(config.as_deref(), count, &out, seed),
        Command::Train {
            config,
            out_dir,
            resume,
            stop_after,
            quiet,
        } => train(config.as_deref(), &out_dir, resume, stop_after, quiet),
        Command::Sweep {
            checkpoint_set,
            axis,
            values,
            out,
        } => sweep(&checkpoint_set, axis, &values, &out),
        Command::Baseline { config, out, snr_values } => baseline(config.as_deref(), &out, &snr_values),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
