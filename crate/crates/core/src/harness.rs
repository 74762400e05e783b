//! Experiment sweeps over `(M, N, H, SNR)`, Monte-Carlo orchestration, and
//! result emission.
//!
//! Every trial draws from its own RNG stream derived from
//! `(seed, grid index, trial index)` and results are merged in trial order, so
//! a configuration and seed determine every emitted byte regardless of thread
//! count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Distance, Fading, HopConfig, QuantizerConfig, SnrAxis};
use crate::denoise::{
    bayes_epsilon, generate_training_set, train, ChainSpace, DenoiserQuery, MlpDenoiser, TrainConfig, TrainReport,
};
use crate::detect::{ddim_decode, ml_decode, DetectorConfig};
use crate::rng::stream;
use crate::signal::{draw_block, tally_errors, Constellation, ErrorTally};
use crate::{Error, Result};

pub const DEFAULT_TRIALS: usize = 400;
pub const DEFAULT_TRAINING_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    #[serde(rename = "ml")]
    Ml,
    #[serde(rename = "ddim-bayes")]
    DdimBayes,
    #[serde(rename = "ddim-learned")]
    DdimLearned,
}

impl DetectorId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorId::Ml => "ml",
            DetectorId::DdimBayes => "ddim-bayes",
            DetectorId::DdimLearned => "ddim-learned",
        }
    }
}

impl std::str::FromStr for DetectorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(DetectorId::Ml),
            "ddim-bayes" => Ok(DetectorId::DdimBayes),
            "ddim-learned" => Ok(DetectorId::DdimLearned),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

impl std::fmt::Display for DetectorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    AwgnOnly,
    Rician,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::AwgnOnly => "awgn_only",
            Regime::Rician => "rician",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RicianParams {
    pub k_db: f64,
    pub distance_m: (f64, f64),
    pub path_loss_exponent: f64,
    pub ref_loss_db: f64,
}

impl Default for RicianParams {
    fn default() -> Self {
        Self {
            k_db: 15.0,
            distance_m: (1.0, 2.0),
            path_loss_exponent: 2.0,
            ref_loss_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub h: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub detectors: Vec<DetectorId>,
    /// Reverse steps; defaults to the hop count of each grid point.
    pub reverse_steps: Option<usize>,
    pub snr_axis: SnrAxis,
    pub quantization: Option<QuantizerConfig>,
    pub rician: RicianParams,
    pub relay_power_cap: f64,
    /// Learned-denoiser checkpoints keyed by constellation order.
    pub models: BTreeMap<String, PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::AwgnOnly,
            m: vec![4, 16, 64],
            n: vec![64],
            h: vec![10],
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: DEFAULT_TRIALS,
            seed: 0,
            detectors: vec![DetectorId::Ml, DetectorId::DdimBayes],
            reverse_steps: None,
            snr_axis: SnrAxis::EndToEnd,
            quantization: None,
            rician: RicianParams::default(),
            relay_power_cap: 1.0,
            models: BTreeMap::new(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str| Err(Error::Config(format!("sweep axis `{name}` is empty")));
        if self.m.is_empty() {
            return empty("m");
        }
        if self.n.is_empty() {
            return empty("n");
        }
        if self.h.is_empty() {
            return empty("h");
        }
        if self.snr_db.is_empty() {
            return empty("snr_db");
        }
        if self.detectors.is_empty() {
            return empty("detectors");
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        for &m in &self.m {
            Constellation::square_qam(m)?;
        }
        if self.n.contains(&0) || self.h.contains(&0) {
            return Err(Error::Config("block side and hop count must be >= 1".into()));
        }
        if self.reverse_steps == Some(0) {
            return Err(Error::Config("reverse_steps must be >= 1".into()));
        }
        if let Some(q) = &self.quantization {
            q.validate()?;
        }
        if !(self.relay_power_cap.is_finite() && self.relay_power_cap > 0.0) {
            return Err(Error::Config("relay_power_cap must be > 0".into()));
        }
        self.hop_template(1.0).validate()
    }

    pub fn hop_template(&self, noise_variance: f64) -> HopConfig {
        match self.regime {
            Regime::AwgnOnly => HopConfig {
                power_cap: self.relay_power_cap,
                ..HopConfig::awgn(noise_variance)
            },
            Regime::Rician => {
                let r = &self.rician;
                HopConfig {
                    fading: Fading::Rician { k_db: r.k_db },
                    distance_m: Distance::Uniform {
                        min: r.distance_m.0,
                        max: r.distance_m.1,
                    },
                    path_loss_exponent: r.path_loss_exponent,
                    ref_loss_db: r.ref_loss_db,
                    noise_variance,
                    power_cap: self.relay_power_cap,
                }
            }
        }
    }

    /// Loads every configured checkpoint.
    pub fn load_models(&self) -> Result<BTreeMap<usize, Arc<MlpDenoiser>>> {
        self.models
            .iter()
            .map(|(k, path)| {
                let m: usize = k
                    .parse()
                    .map_err(|_| Error::Config(format!("model key {k:?} is not a constellation order")))?;
                Ok((m, Arc::new(MlpDenoiser::load(path)?)))
            })
            .collect()
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &n in &self.n {
                for &h in &self.h {
                    for &snr_db in &self.snr_db {
                        out.push(GridPoint { m, n, h, snr_db });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
    pub h: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub regime: Regime,
    pub m: usize,
    pub n: usize,
    pub h: usize,
    pub snr_db: f64,
    pub detector: DetectorId,
    pub steps: usize,
    pub mse: f64,
    pub ser: f64,
    pub ber: f64,
    pub snr_eq_mean: f64,
    pub trials: usize,
    /// `ok`, or `skipped: <reason>`.
    pub status: String,
    /// Summed decode time; excluded from the CSV so that output stays
    /// reproducible.
    pub wall_time_ms: f64,
    /// Raw counts behind the rates.
    pub tally: ErrorTally,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

struct TrialOutcome {
    tallies: Vec<ErrorTally>,
    times_ms: Vec<f64>,
    snr_eq: f64,
}

/// Runs every grid point with every configured detector.
pub fn run_experiment(cfg: &ExperimentConfig, models: &BTreeMap<usize, Arc<MlpDenoiser>>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (gi, point) in cfg.grid().into_iter().enumerate() {
        rows.extend(run_grid_point(cfg, gi as u64, point, models)?);
    }
    Ok(rows)
}

fn skipped_rows(cfg: &ExperimentConfig, point: GridPoint, steps: usize, reason: &str) -> Vec<ResultRow> {
    cfg.detectors
        .iter()
        .map(|&d| skipped_row(cfg, point, d, steps, reason))
        .collect()
}

fn skipped_row(cfg: &ExperimentConfig, point: GridPoint, detector: DetectorId, steps: usize, reason: &str) -> ResultRow {
    ResultRow {
        regime: cfg.regime,
        m: point.m,
        n: point.n,
        h: point.h,
        snr_db: point.snr_db,
        detector,
        steps,
        mse: f64::NAN,
        ser: f64::NAN,
        ber: f64::NAN,
        snr_eq_mean: f64::NAN,
        trials: 0,
        status: format!("skipped: {reason}"),
        wall_time_ms: 0.0,
        tally: ErrorTally::default(),
    }
}

pub fn run_grid_point(
    cfg: &ExperimentConfig,
    grid_index: u64,
    point: GridPoint,
    models: &BTreeMap<usize, Arc<MlpDenoiser>>,
) -> Result<Vec<ResultRow>> {
    let constellation = Constellation::square_qam(point.m)?;
    let steps = cfg.reverse_steps.unwrap_or(point.h);
    let mut hops = vec![cfg.hop_template(1.0); point.h];
    if let Err(e) = channel::calibrate_noise(&mut hops, channel::db_to_linear(point.snr_db), cfg.snr_axis, 1.0) {
        return Ok(skipped_rows(cfg, point, steps, &e.to_string()));
    }

    // None marks a detector that cannot run at this grid point.
    let detectors: Vec<(DetectorId, Option<DetectorConfig>)> = cfg
        .detectors
        .iter()
        .map(|&d| {
            let dc = match d {
                DetectorId::Ml => None,
                DetectorId::DdimBayes => Some(DetectorConfig::exact_bayes(constellation.clone(), steps)),
                DetectorId::DdimLearned => models
                    .get(&point.m)
                    .map(|model| DetectorConfig::learned(constellation.clone(), model.clone(), steps)),
            };
            (d, dc)
        })
        .collect();
    let runnable: Vec<bool> = detectors
        .iter()
        .map(|(d, dc)| *d == DetectorId::Ml || dc.is_some())
        .collect();

    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialOutcome> {
            let mut rng = stream(cfg.seed, &[grid_index, trial as u64]);
            let block = draw_block(&constellation, point.n, &mut rng)?;
            let out = channel::propagate_chain(&block, &hops, &mut rng)?;
            let stats = match &cfg.quantization {
                Some(q) => channel::quantize_stats(&out.stats, q)?,
                None => out.stats,
            };
            let mut tallies = Vec::with_capacity(detectors.len());
            let mut times_ms = Vec::with_capacity(detectors.len());
            for ((id, dc), &ok) in detectors.iter().zip(&runnable) {
                if !ok {
                    tallies.push(ErrorTally::default());
                    times_ms.push(0.0);
                    continue;
                }
                let start = Instant::now();
                let estimate = match (id, dc) {
                    (DetectorId::Ml, _) => ml_decode(&out.block, &stats, &constellation)?,
                    (_, Some(dc)) => ddim_decode(&out.block, &stats, dc)?,
                    (_, None) => unreachable!("non-runnable detectors are skipped"),
                };
                times_ms.push(start.elapsed().as_secs_f64() * 1e3);
                tallies.push(tally_errors(&block, &estimate, &constellation)?);
            }
            Ok(TrialOutcome {
                tallies,
                times_ms,
                snr_eq: out.stats.snr_eq(),
            })
        })
        .collect::<Result<_>>()?;

    let snr_eq_mean = outcomes.iter().map(|o| o.snr_eq).sum::<f64>() / outcomes.len() as f64;
    let rows = detectors
        .iter()
        .enumerate()
        .map(|(k, (id, _))| {
            if !runnable[k] {
                return skipped_row(cfg, point, *id, steps, &format!("no learned model for M={}", point.m));
            }
            let mut tally = ErrorTally::default();
            let mut time = 0.0;
            for o in &outcomes {
                tally.merge(&o.tallies[k]);
                time += o.times_ms[k];
            }
            let r = tally.report();
            ResultRow {
                regime: cfg.regime,
                m: point.m,
                n: point.n,
                h: point.h,
                snr_db: point.snr_db,
                detector: *id,
                steps: if *id == DetectorId::Ml { 0 } else { steps },
                mse: r.mse,
                ser: r.ser,
                ber: r.ber,
                snr_eq_mean,
                trials: cfg.trials,
                status: "ok".into(),
                wall_time_ms: time,
                tally,
            }
        })
        .collect();
    Ok(rows)
}

/// Offline training recipe for the learned denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingJob {
    pub m: usize,
    pub regime: Regime,
    pub hops: usize,
    /// End-to-end SNR range of the training chains, in dB.
    pub snr_db_range: (f64, f64),
    pub samples: usize,
    pub validation_samples: usize,
    pub seed: u64,
    pub rician: RicianParams,
    pub relay_power_cap: f64,
    pub train: TrainConfig,
}

impl Default for TrainingJob {
    fn default() -> Self {
        Self {
            m: 4,
            regime: Regime::AwgnOnly,
            hops: 10,
            snr_db_range: (0.0, 20.0),
            samples: DEFAULT_TRAINING_SAMPLES,
            validation_samples: 400,
            seed: 0,
            rician: RicianParams::default(),
            relay_power_cap: 1.0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: MlpDenoiser,
    pub report: TrainReport,
    /// Held-out ε-MSE of the trained network and of the exact posterior.
    pub validation_mse: f64,
    pub validation_bayes_mse: f64,
}

impl TrainingJob {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let job: Self = toml::from_str(s)?;
        Constellation::square_qam(job.m)?;
        if job.hops == 0 || job.samples == 0 {
            return Err(Error::Config("hops and samples must be >= 1".into()));
        }
        Ok(job)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn chain_space(&self) -> ChainSpace {
        let exp = ExperimentConfig {
            regime: self.regime,
            rician: self.rician,
            relay_power_cap: self.relay_power_cap,
            ..Default::default()
        };
        ChainSpace {
            hops: self.hops,
            template: exp.hop_template(1.0),
            snr_db_range: self.snr_db_range,
            axis: SnrAxis::EndToEnd,
        }
    }

    pub fn run(&self) -> Result<TrainingOutcome> {
        let constellation = Constellation::square_qam(self.m)?;
        let space = self.chain_space();
        let mut rng = stream(self.seed, &[0]);
        let data = generate_training_set(&space, &constellation, self.samples, &mut rng)?;
        let mut model = MlpDenoiser::new(&constellation, &mut rng);
        let report = train(&mut model, &data, &self.train, &mut rng)?;

        let mut vrng = stream(self.seed, &[1]);
        let (mut net, mut bayes) = (0.0, 0.0);
        let n = self.validation_samples.max(1);
        let held_out = generate_training_set(&space, &constellation, n, &mut vrng)?;
        for s in &held_out {
            let q = DenoiserQuery::at_level(s.x_t, s.abar_t, s.t);
            net += (model.forward_at(&q) - s.target_eps).norm_sqr();
            if q.sigma_t > 0.0 {
                bayes += (bayes_epsilon(&q, &constellation)? - s.target_eps).norm_sqr();
            }
        }
        Ok(TrainingOutcome {
            model,
            report,
            validation_mse: net / n as f64,
            validation_bayes_mse: bayes / n as f64,
        })
    }
}

/// Column order of the results CSV.
pub const CSV_HEADER: [&str; 13] = [
    "regime",
    "m",
    "n",
    "h",
    "snr_db",
    "detector",
    "steps",
    "mse",
    "ser",
    "ber",
    "snr_eq_mean",
    "trials",
    "status",
];

/// Nine significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn row_record(r: &ResultRow) -> Vec<String> {
    vec![
        r.regime.as_str().to_string(),
        r.m.to_string(),
        r.n.to_string(),
        r.h.to_string(),
        format_float(r.snr_db),
        r.detector.as_str().to_string(),
        r.steps.to_string(),
        format_float(r.mse),
        format_float(r.ser),
        format_float(r.ber),
        format_float(r.snr_eq_mean),
        r.trials.to_string(),
        r.status.clone(),
    ]
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to emit".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(row_record(r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = csv_string(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a results CSV. Timing and raw counts are not stored and come back
/// zeroed.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let bad = |what: &str| Error::Config(format!("bad CSV field `{what}`"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(|| bad(CSV_HEADER[i]));
        let float = |i: usize| -> Result<f64> { f(i)?.parse().map_err(|_| bad(CSV_HEADER[i])) };
        let int = |i: usize| -> Result<usize> { f(i)?.parse().map_err(|_| bad(CSV_HEADER[i])) };
        let regime = match f(0)? {
            "awgn_only" => Regime::AwgnOnly,
            "rician" => Regime::Rician,
            _ => return Err(bad("regime")),
        };
        rows.push(ResultRow {
            regime,
            m: int(1)?,
            n: int(2)?,
            h: int(3)?,
            snr_db: float(4)?,
            detector: f(5)?.parse()?,
            steps: int(6)?,
            mse: float(7)?,
            ser: float(8)?,
            ber: float(9)?,
            snr_eq_mean: float(10)?,
            trials: int(11)?,
            status: f(12)?.to_string(),
            wall_time_ms: 0.0,
            tally: ErrorTally::default(),
        });
    }
    Ok(rows)
}

/// Per-row decode timing, kept apart from the reproducible results.
pub fn emit_timing_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["m", "n", "h", "snr_db", "detector", "wall_time_ms"])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.n.to_string(),
            r.h.to_string(),
            format_float(r.snr_db),
            r.detector.to_string(),
            format!("{:.3}", r.wall_time_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Snr,
    M,
    N,
    H,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Snr => "snr",
            Axis::M => "m",
            Axis::N => "n",
            Axis::H => "h",
        }
    }

    fn x(self, r: &ResultRow) -> f64 {
        match self {
            Axis::Snr => r.snr_db,
            Axis::M => r.m as f64,
            Axis::N => r.n as f64,
            Axis::H => r.h as f64,
        }
    }

    /// Label of the series a row belongs to: every other coordinate.
    fn series(self, r: &ResultRow) -> String {
        let mut parts = Vec::new();
        if self != Axis::M {
            parts.push(format!("M={}", r.m));
        }
        if self != Axis::N {
            parts.push(format!("N={}", r.n));
        }
        if self != Axis::H {
            parts.push(format!("H={}", r.h));
        }
        if self != Axis::Snr {
            parts.push(format!("snr_db={}", r.snr_db));
        }
        parts.push(format!("detector={}", r.detector));
        parts.join(" ")
    }
}

/// Writes one gnuplot-style data file per (metric, swept axis) pair, with one
/// index block per series. Axes with a single value are not plotted. Returns
/// the written paths.
pub fn emit_plotdata(rows: &[ResultRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to emit".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let distinct = |f: &dyn Fn(&ResultRow) -> f64| {
        let mut v: Vec<u64> = ok.iter().map(|r| f(r).to_bits()).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let axes: Vec<Axis> = [Axis::Snr, Axis::M, Axis::N, Axis::H]
        .into_iter()
        .filter(|a| distinct(&|r| a.x(r)) > 1)
        .collect();

    type Metric = (&'static str, fn(&ResultRow) -> f64);
    let metrics: [Metric; 3] = [("mse", |r| r.mse), ("ser", |r| r.ser), ("ber", |r| r.ber)];
    let mut written = Vec::new();
    for axis in axes {
        for (name, metric) in metrics {
            let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &ok {
                series.entry(axis.series(r)).or_default().push((axis.x(r), metric(r)));
            }
            let mut text = format!("# {name} vs {}\n", axis.name());
            for (label, mut pts) in series {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let _ = writeln!(text, "# series {label}");
                for (x, y) in pts {
                    let _ = writeln!(text, "{} {}", format_float(x), format_float(y));
                }
                text.push_str("\n\n");
            }
            let path = dir.join(format!("{name}_vs_{}.dat", axis.name()));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Payload fraction `N²k / (N²k + B_CSI)` with `k = log2 M`.
pub fn utilization(n: usize, m: usize, b_csi: u32) -> f64 {
    let payload = (n * n) as f64 * (m as f64).log2();
    payload / (payload + b_csi as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationEntry {
    pub n: usize,
    pub m: usize,
    pub b_csi: u32,
    pub eta: f64,
}

pub fn utilization_table(ns: &[usize], ms: &[usize], budgets: &[u32]) -> Vec<UtilizationEntry> {
    let mut out = Vec::new();
    for &b_csi in budgets {
        for &m in ms {
            for &n in ns {
                out.push(UtilizationEntry {
                    n,
                    m,
                    b_csi,
                    eta: utilization(n, m, b_csi),
                });
            }
        }
    }
    out
}

/// A published threshold: `η ≥ target` for every `N ≥ n_min` at order `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationClaim {
    pub m: usize,
    pub n_min: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaimCheck {
    pub claim: UtilizationClaim,
    pub b_csi: u32,
    /// η at `N = n_min`; η grows with N so this is the worst case.
    pub eta_at_n_min: f64,
    pub holds: bool,
    /// Smallest N meeting the target at this budget.
    pub n_required: usize,
}

/// The two thresholds quoted for the 80–96 bit CSI budget.
pub const PUBLISHED_CLAIMS: [UtilizationClaim; 2] = [
    UtilizationClaim {
        m: 16,
        n_min: 20,
        target: 0.95,
    },
    UtilizationClaim {
        m: 256,
        n_min: 12,
        target: 0.95,
    },
];

pub fn check_claim(claim: UtilizationClaim, b_csi: u32) -> ClaimCheck {
    let eta = utilization(claim.n_min, claim.m, b_csi);
    let n_required = (1..)
        .find(|&n| utilization(n, claim.m, b_csi) >= claim.target)
        .expect("utilization tends to one");
    ClaimCheck {
        claim,
        b_csi,
        eta_at_n_min: eta,
        holds: eta >= claim.target,
        n_required,
    }
}
