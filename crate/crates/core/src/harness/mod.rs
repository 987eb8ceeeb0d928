//! Seeded Monte Carlo experiments over the schemes, with CSV/JSON outputs.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentSpec, Mode, Scheme, SweepVar, DEFAULT_TRIALS};

use crate::afp::{self, ConvergenceTrace};
use crate::baselines;
use crate::decentral::{self, LogEntry, OverheadReport};
use crate::error::{Error, Result};
use crate::scenario::{self, ChannelRealization, SystemParams};
use crate::sigmodel;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of Monte Carlo trial `trial`. It does not depend on the sweep value,
/// so every sweep point sees the same draws where dimensions allow.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(trial as u64))
}

/// Independent sub-seed `tag` of a trial seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(SPLITMIX_GAMMA)))
}

const PLACEMENT_TAG: u64 = 1;
const CHANNEL_TAG: u64 = 2;
const RANDOM_BASELINE_TAG: u64 = 3;

/// Placement and channel of one trial.
pub fn realize(params: &SystemParams, seed: u64) -> Result<ChannelRealization> {
    let placement = scenario::draw_placement(params, derive_seed(seed, PLACEMENT_TAG))?;
    scenario::draw_channel(params, &placement, derive_seed(seed, CHANNEL_TAG))
}

/// Seed handed to the Local Random transform of a trial.
pub fn random_transform_seed(seed: u64) -> u64 {
    derive_seed(seed, RANDOM_BASELINE_TAG)
}

/// Result of one scheme on one channel.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub sum_rate: f64,
    pub trace: Option<ConvergenceTrace>,
    pub overhead: Option<OverheadReport>,
    pub messages: Option<Vec<LogEntry>>,
}

/// Runs `scheme` on a realization.
pub fn run_scheme(
    scheme: Scheme,
    chan: &ChannelRealization,
    params: &SystemParams,
    afp_cfg: &afp::AfpConfig,
    mode: Mode,
    seed: u64,
) -> Result<SchemeOutcome> {
    let n = params.reduced_dim;
    let c_f = params.fronthaul_capacity;
    let rseed = random_transform_seed(seed);
    match scheme {
        Scheme::Baseline(kind) => {
            let sol = baselines::baseline_solution(kind, chan, n, c_f, rseed)?;
            Ok(SchemeOutcome {
                sum_rate: sigmodel::sum_rate(&sol, chan),
                trace: None,
                overhead: None,
                messages: None,
            })
        }
        Scheme::Afp(init) => {
            let start = baselines::baseline_solution(init, chan, n, c_f, rseed)?;
            match mode {
                Mode::Centralized => {
                    let (sol, trace) = afp::run_afp(chan, c_f, &start, afp_cfg)?;
                    Ok(SchemeOutcome {
                        sum_rate: sigmodel::sum_rate(&sol, chan),
                        trace: Some(trace),
                        overhead: None,
                        messages: None,
                    })
                }
                Mode::Decentralized => {
                    let run = decentral::run_decentralized(chan, c_f, &start, afp_cfg)?;
                    Ok(SchemeOutcome {
                        sum_rate: sigmodel::sum_rate(&run.solution, chan),
                        trace: Some(run.trace),
                        overhead: Some(run.overhead),
                        messages: Some(run.log),
                    })
                }
            }
        }
    }
}

/// All schemes of one (sweep value, trial) pair.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    /// `None` when the realization itself could not be drawn.
    pub channel_digest: Option<u64>,
    /// Indexed like `spec.schemes`.
    pub outcomes: Vec<std::result::Result<SchemeOutcome, String>>,
}

pub fn run_trial(spec: &ExperimentSpec, sweep_value: f64, trial: usize) -> TrialRecord {
    let seed = trial_seed(spec.base_seed, trial);
    let mut rec = TrialRecord {
        sweep_value,
        trial,
        seed,
        channel_digest: None,
        outcomes: Vec::with_capacity(spec.schemes.len()),
    };
    let prepared = spec
        .params_for(sweep_value)
        .and_then(|params| realize(&params, seed).map(|chan| (params, chan)));
    match prepared {
        Err(e) => {
            let msg = e.to_string();
            rec.outcomes = spec.schemes.iter().map(|_| Err(msg.clone())).collect();
        }
        Ok((params, chan)) => {
            rec.channel_digest = Some(chan.digest());
            for &scheme in &spec.schemes {
                let out = run_scheme(scheme, &chan, &params, &spec.afp, spec.mode, seed).map_err(|e| e.to_string());
                if let Err(e) = &out {
                    log::error!("{scheme}, {} = {sweep_value}, trial {trial}: {e}", spec.sweep_var);
                }
                rec.outcomes.push(out);
            }
        }
    }
    rec
}

/// Mean and standard error of one (scheme, sweep value) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub mean_sum_rate: f64,
    pub stderr: f64,
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
}

/// Mean A-FP trace of one (scheme, sweep value) cell. Shorter traces are
/// extended with their final value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrace {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub sum_rate: Vec<f64>,
    pub elapsed_s: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct AggregateResult {
    pub cells: Vec<CellSummary>,
    pub traces: Vec<MeanTrace>,
    /// Ordered by sweep value index, then trial.
    pub records: Vec<TrialRecord>,
}

impl AggregateResult {
    pub fn failed_trials(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.outcomes.iter().any(|o| o.is_err()))
            .count()
    }

    pub fn cell(&self, scheme: Scheme, sweep_value: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.sweep_value == sweep_value)
    }
}

/// Sample mean and standard error (sample std / √n; 0 for n < 2).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn mean_padded(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let total: f64 = series
                .iter()
                .map(|s| s.get(t).or(s.last()).copied().unwrap_or(0.0))
                .sum();
            total / series.len() as f64
        })
        .collect()
}

fn aggregate(spec: &ExperimentSpec, records: Vec<TrialRecord>) -> AggregateResult {
    let mut cells = Vec::new();
    let mut traces = Vec::new();
    for &v in &spec.sweep_values {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.sweep_value == v).collect();
        for (s, &scheme) in spec.schemes.iter().enumerate() {
            let ok: Vec<&SchemeOutcome> = rows.iter().filter_map(|r| r.outcomes[s].as_ref().ok()).collect();
            let rates: Vec<f64> = ok.iter().map(|o| o.sum_rate).collect();
            let (mean, se) = mean_stderr(&rates);
            cells.push(CellSummary {
                scheme,
                sweep_value: v,
                mean_sum_rate: mean,
                stderr: se,
                trials: rates.len(),
                failures: rows.len() - rates.len(),
            });
            if scheme.is_afp() && !ok.is_empty() {
                let found: Vec<&ConvergenceTrace> = ok.iter().filter_map(|o| o.trace.as_ref()).collect();
                let rate_series: Vec<Vec<f64>> = found
                    .iter()
                    .map(|t| t.records.iter().map(|r| r.sum_rate).collect())
                    .collect();
                let time_series: Vec<Vec<f64>> = found
                    .iter()
                    .map(|t| t.records.iter().map(|r| r.elapsed_s).collect())
                    .collect();
                traces.push(MeanTrace {
                    scheme,
                    sweep_value: v,
                    sum_rate: mean_padded(&rate_series),
                    elapsed_s: mean_padded(&time_series),
                    trials: found.len(),
                });
            }
        }
    }
    AggregateResult { cells, traces, records }
}

/// Runs every (sweep value, trial) pair in parallel; results keep spec order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<AggregateResult> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .sweep_values
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs.par_iter().map(|&(v, t)| run_trial(spec, v, t)).collect();
    Ok(aggregate(spec, records))
}

/// Written to `manifest.json`; `spec` alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub spec: ExperimentSpec,
    /// Seed of trial t at index t.
    pub trial_seeds: Vec<u64>,
}

impl Manifest {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME").to_string(),
            version: ARTIFACT_VERSION.to_string(),
            spec: spec.clone(),
            trial_seeds: (0..spec.trials).map(|t| trial_seed(spec.base_seed, t)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn summary_csv(spec: &ExperimentSpec, result: &AggregateResult) -> String {
    let mut s = String::from("scheme,sweep_var,sweep_value,mean_sum_rate,stderr,trials\n");
    for c in &result.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.scheme, spec.sweep_var, c.sweep_value, c.mean_sum_rate, c.stderr, c.trials
        );
    }
    s
}

fn trace_csv(result: &AggregateResult, scheme: Scheme) -> String {
    let mut s = String::from("sweep_value,outer_iter,mean_sum_rate,trials\n");
    for t in result.traces.iter().filter(|t| t.scheme == scheme) {
        for (i, r) in t.sum_rate.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", t.sweep_value, i, r, t.trials);
        }
    }
    s
}

fn timing_csv(result: &AggregateResult, scheme: Scheme) -> String {
    let mut s = String::from("sweep_value,outer_iter,mean_elapsed_s,trials\n");
    for t in result.traces.iter().filter(|t| t.scheme == scheme) {
        for (i, e) in t.elapsed_s.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", t.sweep_value, i, e, t.trials);
        }
    }
    s
}

fn trials_csv(spec: &ExperimentSpec, result: &AggregateResult) -> String {
    let mut s = String::from("sweep_value,trial,seed,channel_digest,scheme,sum_rate,outer_iters,error\n");
    for r in &result.records {
        let digest = r.channel_digest.map_or(String::new(), |d| format!("{d:016x}"));
        for (scheme, o) in spec.schemes.iter().zip(&r.outcomes) {
            let (rate, iters, err) = match o {
                Ok(o) => (
                    o.sum_rate.to_string(),
                    o.trace
                        .as_ref()
                        .map_or(String::new(), |t| t.outer_iterations().to_string()),
                    String::new(),
                ),
                Err(e) => (String::new(), String::new(), e.replace([',', '\n'], ";")),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.sweep_value, r.trial, r.seed, digest, scheme, rate, iters, err
            );
        }
    }
    s
}

fn overhead_csv(spec: &ExperimentSpec, result: &AggregateResult) -> String {
    let mut s = String::from(
        "scheme,sweep_value,trial,outer_iters,uplink_per_ap_iter,downlink_per_ap_iter,total_uplink,total_downlink\n",
    );
    for r in &result.records {
        for (scheme, o) in spec.schemes.iter().zip(&r.outcomes) {
            let Ok(SchemeOutcome {
                overhead: Some(ov),
                trace: Some(t),
                ..
            }) = o
            else {
                continue;
            };
            let (up, down) = ov
                .constant_per_iteration()
                .map_or((String::new(), String::new()), |(u, d)| (u.to_string(), d.to_string()));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                scheme,
                r.sweep_value,
                r.trial,
                t.outer_iterations(),
                up,
                down,
                ov.total_uplink,
                ov.total_downlink
            );
        }
    }
    s
}

/// Writes summary, trace, timing, per-trial and manifest files into
/// `spec.out_dir` and returns the paths written.
pub fn emit_outputs(result: &AggregateResult, spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let dir = &spec.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("summary.csv".into(), summary_csv(spec, result))?;
    for &scheme in spec.schemes.iter().filter(|s| s.is_afp()) {
        put(format!("trace_{scheme}.csv"), trace_csv(result, scheme))?;
        put(format!("timing_{scheme}.csv"), timing_csv(result, scheme))?;
    }
    put("trials.csv".into(), trials_csv(spec, result))?;
    if spec.mode == Mode::Decentralized && spec.schemes.iter().any(|s| s.is_afp()) {
        put("overhead.csv".into(), overhead_csv(spec, result))?;
        // full message log of the first successful A-FP trial
        let first = result.records.iter().find_map(|r| {
            r.outcomes
                .iter()
                .find_map(|o| o.as_ref().ok().and_then(|o| o.messages.as_ref()))
        });
        if let Some(log) = first {
            let mut buf = Vec::new();
            decentral::write_message_log(log, &mut buf)?;
            put("messages.csv".into(), String::from_utf8_lossy(&buf).into_owned())?;
        }
    }
    put(
        "manifest.json".into(),
        serde_json::to_string_pretty(&Manifest::new(spec))?,
    )?;
    Ok(written)
}

/// Error category to process exit code: 1 configuration, 3 I/O, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Serde(_) => 1,
        Error::Io(_) => 3,
        _ => 2,
    }
}
