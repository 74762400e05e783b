use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afddim::harness::{
    self, check_claim, utilization_table, DetectorId, ExperimentConfig, TrainingJob, PUBLISHED_CLAIMS,
};
use afddim::infotheory::{mi_curve, Prior};
use afddim::poweralloc::solve;
use afddim::{AllocationProblem, Constellation};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "afddim", version, about = "AF relay chains as diffusion: simulation, training, and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write results.csv, timing.csv and plot data.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output`, then `results`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Detectors to run, replacing the config's list. Repeatable.
        #[arg(long = "detector")]
        detectors: Vec<DetectorId>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train a learned denoiser and write its checkpoint and loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "model")]
        out: PathBuf,
    },
    /// Solve a relay power allocation problem.
    Alloc {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mutual information of the collapsed channel, in bits.
    Mi {
        /// Constellation orders (comma separated).
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 16, 64])]
        m: Vec<usize>,
        /// SNR grid in dB (comma separated).
        #[arg(long = "snr-db", value_delimiter = ',', allow_hyphen_values = true,
              default_values_t = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])]
        snr_db: Vec<f64>,
    },
    /// Signaling-overhead utilization table and the reference thresholds.
    Util {
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 12, 16, 20, 32, 64])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 16, 64, 256])]
        m: Vec<usize>,
        #[arg(long = "b-csi", value_delimiter = ',', default_values_t = [80u32, 96])]
        b_csi: Vec<u32>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            detectors,
            steps,
            trials,
        } => simulate(&config, seed, out, detectors, steps, trials),
        Command::Train { config, seed, out } => train(config.as_deref(), seed, &out),
        Command::Alloc { config } => alloc(&config),
        Command::Mi { m, snr_db } => mi(&m, &snr_db),
        Command::Util { n, m, b_csi } => util(&n, &m, &b_csi),
    }
}

fn simulate(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    detectors: Vec<DetectorId>,
    steps: Option<usize>,
    trials: Option<usize>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if !detectors.is_empty() {
        cfg.detectors = detectors;
    }
    if steps.is_some() {
        cfg.reverse_steps = steps;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    // Checkpoint paths are relative to the config file.
    let base = path.parent().unwrap_or(Path::new("."));
    for p in cfg.models.values_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.validate()?;
    let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let models = cfg.load_models()?;
    let rows = harness::run_experiment(&cfg, &models)?;
    harness::emit_csv(&rows, out.join("results.csv"))?;
    harness::emit_timing_csv(&rows, out.join("timing.csv"))?;
    let plots = harness::emit_plotdata(&rows, out.join("plotdata"))?;

    for r in &rows {
        if r.is_ok() {
            println!(
                "M={:<3} N={:<3} H={:<2} snr={:>5} dB {:<12} mse={:.4e} ser={:.4e} ber={:.4e}",
                r.m, r.n, r.h, r.snr_db, r.detector, r.mse, r.ser, r.ber
            );
        } else {
            println!(
                "M={:<3} N={:<3} H={:<2} snr={:>5} dB {:<12} {}",
                r.m, r.n, r.h, r.snr_db, r.detector, r.status
            );
        }
    }
    println!(
        "wrote {} rows and {} plot files to {}",
        rows.len(),
        plots.len(),
        out.display()
    );
    Ok(())
}

fn train(path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut job = match path {
        Some(p) => TrainingJob::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainingJob::default(),
    };
    if let Some(s) = seed {
        job.seed = s;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = job.run()?;

    let ckpt = out.join(format!("mlp_m{}.ckpt", job.m));
    outcome.model.save(&ckpt)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in outcome.report.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, harness::format_float(*l)));
    }
    let log_path = out.join("loss.csv");
    std::fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;

    for (i, l) in outcome.report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2} loss {l:.5}", i + 1);
    }
    println!(
        "held-out eps-MSE {:.5} (exact Bayes {:.5}, ratio {:.3})",
        outcome.validation_mse,
        outcome.validation_bayes_mse,
        outcome.validation_mse / outcome.validation_bayes_mse
    );
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocFile {
    c: Vec<f64>,
    p_total: f64,
    p_max: Option<Vec<f64>>,
}

fn alloc(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: AllocFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let problem = match f.p_max {
        Some(caps) => AllocationProblem::new(f.c, f.p_total, caps)?,
        None => AllocationProblem::uncapped(f.c, f.p_total)?,
    };
    let r = solve(&problem)?;
    println!("relay  c            p            cap");
    for (t, ((c, p), cap)) in problem.c.iter().zip(&r.p).zip(&problem.p_max).enumerate() {
        let mark = if p >= cap { " (capped)" } else { "" };
        println!("{t:<6} {c:<12.6} {p:<12.8} {cap}{mark}");
    }
    println!("multiplier   {:.10e}", r.mu);
    println!("objective    {:.10}", r.objective);
    println!("kkt residual {:.3e}", r.kkt_residual);
    Ok(())
}

fn mi(orders: &[usize], snr_db: &[f64]) -> Result<()> {
    if snr_db.windows(2).any(|w| w[1] <= w[0]) {
        bail!("--snr-db must be strictly increasing");
    }
    let gammas: Vec<f64> = snr_db.iter().map(|&d| 10f64.powf(d / 10.0)).collect();
    let to_bits = std::f64::consts::LOG2_E;
    let mut columns = vec![("gaussian".to_string(), mi_curve(Prior::Gaussian, &gammas)?)];
    for &m in orders {
        let c = Constellation::square_qam(m)?;
        columns.push((format!("qam{m}"), mi_curve(Prior::Discrete(&c), &gammas)?));
    }
    print!("{:>8}", "snr_db");
    for (name, _) in &columns {
        print!(" {name:>10}");
    }
    println!();
    for (i, d) in snr_db.iter().enumerate() {
        print!("{d:>8.2}");
        for (_, v) in &columns {
            print!(" {:>10.6}", v[i] * to_bits);
        }
        println!();
    }
    Ok(())
}

fn util(ns: &[usize], ms: &[usize], budgets: &[u32]) -> Result<()> {
    for &m in ms {
        Constellation::square_qam(m)?;
    }
    if ns.contains(&0) {
        bail!("block sizes must be >= 1");
    }
    println!("{:>6} {:>5} {:>4} {:>8}", "b_csi", "m", "n", "eta");
    for e in utilization_table(ns, ms, budgets) {
        println!("{:>6} {:>5} {:>4} {:>8.4}", e.b_csi, e.m, e.n, e.eta);
    }
    println!();
    for claim in PUBLISHED_CLAIMS {
        for &b in budgets {
            let c = check_claim(claim, b);
            let verdict = if c.holds { "holds" } else { "NOT REPRODUCED" };
            println!(
                "claim eta>={} for N>={} at M={}: B_CSI={b} gives eta={:.4} at N={} -> {verdict} (first N meeting it: {})",
                claim.target, claim.n_min, claim.m, c.eta_at_n_min, claim.n_min, c.n_required
            );
        }
    }
    Ok(())
}
