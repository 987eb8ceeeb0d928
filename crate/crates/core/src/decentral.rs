//! Decentralized A-FP: AP nodes and a CPU node with isolated state that
//! exchange payloads over an ordered in-process queue, plus the message
//! ledger that books every exchanged complex scalar.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afp::{
    self, assemble_coefficients, cpu_aux, cross_ap_terms, local_sigma, own_terms, update_ap, AfpConfig,
    ConvergenceTrace, LocalCov, TraceRecord,
};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64};
use crate::scenario::{ChannelRealization, Fnv64};
use crate::sigmodel::{self, ApProcessing, ApReport, StackedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Uplink => "AP->CPU",
            Direction::Downlink => "CPU->AP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PayloadKind {
    WhVectors,
    WwhMatrix,
    OmegaMatrix,
    ThetaWhScalars,
    GammaScalars,
    ThetaSubvectors,
    CrossApScalars,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::WhVectors => "WH_vectors",
            PayloadKind::WwhMatrix => "WWH_matrix",
            PayloadKind::OmegaMatrix => "Omega_matrix",
            PayloadKind::ThetaWhScalars => "thetaWH_scalars",
            PayloadKind::GammaScalars => "gamma_scalars",
            PayloadKind::ThetaSubvectors => "theta_subvectors",
            PayloadKind::CrossApScalars => "cross_ap_scalars",
        }
    }

    /// Complex scalars in a payload of this kind. The cross-AP block is the
    /// full K×K matrix α_i, since the transform update couples every pair
    /// (k, k′) across APs.
    pub fn scalar_count(self, k: usize, n: usize) -> usize {
        match self {
            PayloadKind::WhVectors | PayloadKind::ThetaSubvectors => k * n,
            PayloadKind::WwhMatrix | PayloadKind::OmegaMatrix => n * n,
            PayloadKind::ThetaWhScalars | PayloadKind::GammaScalars => k,
            PayloadKind::CrossApScalars => k * k,
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Data carried by a message. γ is real but is booked as K scalars.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    WhVectors(CMat),
    WwhMatrix(CMat),
    OmegaMatrix(CMat),
    ThetaWhScalars(Vec<C64>),
    GammaScalars(Vec<f64>),
    ThetaSubvectors(CMat),
    CrossApScalars(CMat),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::WhVectors(_) => PayloadKind::WhVectors,
            Payload::WwhMatrix(_) => PayloadKind::WwhMatrix,
            Payload::OmegaMatrix(_) => PayloadKind::OmegaMatrix,
            Payload::ThetaWhScalars(_) => PayloadKind::ThetaWhScalars,
            Payload::GammaScalars(_) => PayloadKind::GammaScalars,
            Payload::ThetaSubvectors(_) => PayloadKind::ThetaSubvectors,
            Payload::CrossApScalars(_) => PayloadKind::CrossApScalars,
        }
    }

    /// Number of complex scalars actually carried; Hermitian symmetry is not exploited.
    pub fn scalar_count(&self) -> usize {
        match self {
            Payload::WhVectors(m)
            | Payload::WwhMatrix(m)
            | Payload::OmegaMatrix(m)
            | Payload::ThetaSubvectors(m)
            | Payload::CrossApScalars(m) => m.len(),
            Payload::ThetaWhScalars(v) => v.len(),
            Payload::GammaScalars(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub direction: Direction,
    pub ap_index: usize,
    pub iteration: usize,
    pub payload: Payload,
}

impl Message {
    pub fn complex_scalar_count(&self) -> usize {
        self.payload.scalar_count()
    }
}

/// One line of the message log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub direction: Direction,
    pub ap: usize,
    pub payload_kind: PayloadKind,
    pub complex_scalars: usize,
}

/// Ordered, lossless transport that logs everything it carries.
#[derive(Debug, Default)]
pub struct Transport {
    queue: VecDeque<Message>,
    log: Vec<LogEntry>,
}

impl Transport {
    pub fn send(&mut self, msg: Message) {
        self.log.push(LogEntry {
            iteration: msg.iteration,
            direction: msg.direction,
            ap: msg.ap_index,
            payload_kind: msg.payload.kind(),
            complex_scalars: msg.complex_scalar_count(),
        });
        self.queue.push_back(msg);
    }

    pub fn recv(&mut self) -> Option<Message> {
        self.queue.pop_front()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }
}

/// Per-AP per-outer-iteration scalar counts as predicted by the protocol.
pub fn expected_overhead(k: usize, l: usize, n: usize) -> Result<(usize, usize)> {
    if k == 0 || l == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "overhead needs positive K, L, N (got {k}, {l}, {n})"
        )));
    }
    Ok((2 * n * n + k * (n + 1), k * (n + l)))
}

/// Per-AP per-iteration counts of the protocol implemented here: the uplink
/// matches `expected_overhead`, the downlink carries γ, θ_i and the K×K α_i.
pub fn protocol_overhead(k: usize, l: usize, n: usize) -> Result<(usize, usize)> {
    let (up, _) = expected_overhead(k, l, n)?;
    Ok((up, k + k * n + k * k))
}

/// Scalars per AP per outer iteration, aggregated from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOverhead {
    pub iteration: usize,
    pub ap: usize,
    pub uplink_scalars: usize,
    pub downlink_scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Outer iterations ≥ 1, ordered by (iteration, ap).
    pub per_iteration: Vec<IterationOverhead>,
    /// Scalars sent before the first outer iteration (initial reports).
    pub initial_uplink: usize,
    pub total_uplink: usize,
    pub total_downlink: usize,
}

impl OverheadReport {
    pub fn from_log(log: &[LogEntry], num_aps: usize) -> Self {
        let iters = log.iter().map(|e| e.iteration).max().unwrap_or(0);
        let mut per_iteration: Vec<IterationOverhead> = (1..=iters)
            .flat_map(|t| {
                (0..num_aps).map(move |ap| IterationOverhead {
                    iteration: t,
                    ap,
                    uplink_scalars: 0,
                    downlink_scalars: 0,
                })
            })
            .collect();
        let mut report = OverheadReport {
            per_iteration: Vec::new(),
            initial_uplink: 0,
            total_uplink: 0,
            total_downlink: 0,
        };
        for e in log {
            match e.direction {
                Direction::Uplink => report.total_uplink += e.complex_scalars,
                Direction::Downlink => report.total_downlink += e.complex_scalars,
            }
            if e.iteration == 0 {
                report.initial_uplink += e.complex_scalars;
                continue;
            }
            let slot = &mut per_iteration[(e.iteration - 1) * num_aps + e.ap];
            match e.direction {
                Direction::Uplink => slot.uplink_scalars += e.complex_scalars,
                Direction::Downlink => slot.downlink_scalars += e.complex_scalars,
            }
        }
        report.per_iteration = per_iteration;
        report
    }

    /// The (uplink, downlink) pair if it is the same for every AP and iteration.
    pub fn constant_per_iteration(&self) -> Option<(usize, usize)> {
        let first = self.per_iteration.first()?;
        let pair = (first.uplink_scalars, first.downlink_scalars);
        self.per_iteration
            .iter()
            .all(|r| (r.uplink_scalars, r.downlink_scalars) == pair)
            .then_some(pair)
    }
}

pub fn write_message_log<W: Write>(log: &[LogEntry], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,direction,ap,payload_kind,complex_scalars")?;
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.iteration, e.direction, e.ap, e.payload_kind, e.complex_scalars
        )?;
    }
    Ok(())
}

pub fn save_message_log(log: &[LogEntry], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_message_log(log, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// An AP: its own channel, its current (W_i, Ω_i) and the last θ_i received.
#[derive(Debug, Clone)]
pub struct ApNode {
    index: usize,
    local: Arc<LocalCov>,
    ap: ApProcessing,
    c_f: f64,
    gamma: Vec<f64>,
    theta: Option<CMat>,
}

impl ApNode {
    pub fn new(index: usize, h_i: &CMat, p: &[f64], sigma_z2: f64, ap: ApProcessing, c_f: f64) -> Self {
        Self {
            index,
            local: Arc::new(LocalCov::new(h_i, p, sigma_z2)),
            ap,
            c_f,
            gamma: Vec::new(),
            theta: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn processing(&self) -> &ApProcessing {
        &self.ap
    }

    /// The only channel an AP may read is its own.
    pub fn channel(&self, ap: usize) -> Result<&CMat> {
        if ap == self.index {
            Ok(&self.local.h)
        } else {
            Err(Error::ContractViolation(format!(
                "AP {} attempted to read the channel of AP {ap}",
                self.index
            )))
        }
    }

    pub fn sigma(&self) -> CMat {
        local_sigma(&self.ap.w, &self.local.s, &self.ap.omega)
    }

    pub fn fronthaul_usage(&self) -> f64 {
        let ap = &self.ap;
        sigmodel::fronthaul_usage_from(&(&ap.w * &self.local.s * ap.w.adjoint()), &ap.omega)
    }

    /// Scales W_i onto the fronthaul budget; Ω_i must be PD.
    pub fn project(&mut self, cfg: &AfpConfig) -> Result<()> {
        if linalg::cholesky(&self.ap.omega).is_none() {
            return Err(Error::Domain(format!(
                "initial Omega of AP {} is not positive definite",
                self.index
            )));
        }
        let q = linalg::hermitized(&self.ap.w * &self.local.s * self.ap.w.adjoint());
        let scale = afp::capacity_scale(&q, &self.ap.omega, self.c_f, cfg.bisect_tol);
        if scale < 1.0 {
            self.ap.w *= c(scale, 0.0);
        }
        Ok(())
    }

    fn report(&self) -> ApReport {
        ApReport::from_local(&self.ap.w, &self.ap.omega, &self.local.h)
    }

    fn send_report(&self, iteration: usize, net: &mut Transport) {
        let r = self.report();
        let mut send = |payload| {
            net.send(Message {
                direction: Direction::Uplink,
                ap_index: self.index,
                iteration,
                payload,
            })
        };
        if let Some(theta) = &self.theta {
            let diag = own_terms(theta, &r.wh).diagonal().iter().copied().collect();
            send(Payload::ThetaWhScalars(diag));
        }
        send(Payload::WhVectors(r.wh));
        send(Payload::WwhMatrix(r.wwh));
        send(Payload::OmegaMatrix(r.omega));
    }

    /// Consumes the CPU's downlink, updates (W_i, Ω_i) and reports back.
    /// Returns the inner iteration count and the update flags.
    fn step(&mut self, iteration: usize, net: &mut Transport, cfg: &AfpConfig) -> Result<afp::ApUpdate> {
        let mut alpha = None;
        for _ in 0..3 {
            let msg = net
                .recv()
                .ok_or_else(|| Error::ContractViolation(format!("AP {} expected a downlink message", self.index)))?;
            if msg.direction != Direction::Downlink || msg.ap_index != self.index {
                return Err(Error::ContractViolation(format!(
                    "AP {} received a message addressed elsewhere",
                    self.index
                )));
            }
            match msg.payload {
                Payload::GammaScalars(g) => self.gamma = g,
                Payload::ThetaSubvectors(t) => self.theta = Some(t),
                Payload::CrossApScalars(a) => alpha = Some(a),
                other => {
                    return Err(Error::ContractViolation(format!(
                        "AP {} received unexpected payload {}",
                        self.index,
                        other.kind()
                    )))
                }
            }
        }
        let (Some(theta), Some(alpha)) = (self.theta.as_ref(), alpha) else {
            return Err(Error::ContractViolation(format!(
                "AP {} downlink incomplete",
                self.index
            )));
        };
        let sigma = self.sigma();
        let coef = assemble_coefficients(self.local.clone(), &sigma, &self.gamma, theta, &alpha, self.c_f)
            .map_err(|e| Error::Numerical(format!("AP {}, outer iteration {iteration}: {e}", self.index)))?;
        let upd = update_ap(&coef, &self.ap, self.c_f, cfg)
            .map_err(|e| Error::Numerical(format!("AP {}, outer iteration {iteration}: {e}", self.index)))?;
        self.ap = upd.ap.clone();
        self.send_report(iteration, net);
        Ok(upd)
    }
}

/// The CPU: last reports of every AP and the per-iteration auxiliaries.
#[derive(Debug, Clone)]
pub struct CpuNode {
    p: Vec<f64>,
    sigma_z2: f64,
    n: usize,
    reports: Vec<Option<ApReport>>,
    theta_wh: Vec<Option<Vec<C64>>>,
}

impl CpuNode {
    pub fn new(p: &[f64], sigma_z2: f64, num_aps: usize, n: usize) -> Self {
        Self {
            p: p.to_vec(),
            sigma_z2,
            n,
            reports: vec![None; num_aps],
            theta_wh: vec![None; num_aps],
        }
    }

    /// Drains every pending uplink message into the report table.
    pub fn receive(&mut self, net: &mut Transport) -> Result<()> {
        while let Some(msg) = net.recv() {
            if msg.direction != Direction::Uplink {
                return Err(Error::ContractViolation("CPU received a downlink message".into()));
            }
            let i = msg.ap_index;
            let slot = self
                .reports
                .get_mut(i)
                .ok_or_else(|| Error::ContractViolation(format!("message from unknown AP {i}")))?;
            let r = slot.get_or_insert_with(|| ApReport {
                wh: CMat::zeros(0, 0),
                wwh: CMat::zeros(0, 0),
                omega: CMat::zeros(0, 0),
            });
            match msg.payload {
                Payload::WhVectors(m) => r.wh = m,
                Payload::WwhMatrix(m) => r.wwh = m,
                Payload::OmegaMatrix(m) => r.omega = m,
                Payload::ThetaWhScalars(v) => self.theta_wh[i] = Some(v),
                other => {
                    return Err(Error::ContractViolation(format!(
                        "CPU received unexpected payload {}",
                        other.kind()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn reports(&self) -> Result<Vec<ApReport>> {
        self.reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.clone()
                    .ok_or_else(|| Error::ContractViolation(format!("no report from AP {i}")))
            })
            .collect()
    }

    pub fn model(&self) -> Result<StackedModel> {
        Ok(StackedModel::from_reports(&self.reports()?, &self.p, self.sigma_z2))
    }

    pub fn sum_rate(&self) -> Result<f64> {
        Ok(self.model()?.sum_rate())
    }

    /// Θ_jᴴ W_j H_j for AP j under θ, with the diagonal taken from the
    /// scalars AP j reported when it has reported them for this θ.
    fn own(&self, j: usize, theta_j: &CMat, use_reported: bool) -> Result<CMat> {
        let r = self.reports[j]
            .as_ref()
            .ok_or_else(|| Error::ContractViolation(format!("no report from AP {j}")))?;
        let mut t = own_terms(theta_j, &r.wh);
        if use_reported {
            if let Some(d) = &self.theta_wh[j] {
                for (k, v) in d.iter().enumerate() {
                    t[(k, k)] = *v;
                }
            }
        }
        Ok(t)
    }
}

/// Everything a decentralized run produces.
#[derive(Debug, Clone)]
pub struct DecentralizedRun {
    pub solution: sigmodel::Solution,
    pub trace: ConvergenceTrace,
    pub overhead: OverheadReport,
    pub log: Vec<LogEntry>,
}

fn nodes_digest(nodes: &[ApNode]) -> u64 {
    sigmodel::Solution::new(nodes.iter().map(|n| n.ap.clone()).collect()).digest()
}

fn record(outer: usize, rate: f64, start: &Instant, nodes: &[ApNode], c_f: f64, inner: Vec<usize>) -> TraceRecord {
    TraceRecord {
        outer_iter: outer,
        sum_rate: rate,
        elapsed_s: start.elapsed().as_secs_f64(),
        max_fh_violation: afp::max_violation(nodes.iter().map(ApNode::fronthaul_usage), c_f),
        inner_iters: inner,
        digest: nodes_digest(nodes),
    }
}

/// Runs A-FP as message passing between L AP nodes and one CPU node. The
/// iterates are the ones `run_afp` produces for the same inputs.
pub fn run_decentralized(
    chan: &ChannelRealization,
    c_f: f64,
    init: &sigmodel::Solution,
    cfg: &AfpConfig,
) -> Result<DecentralizedRun> {
    cfg.validate()?;
    chan.validate()?;
    init.validate(chan)?;
    let start = Instant::now();
    let l = chan.num_aps();
    let n = init.aps[0].reduced_dim();
    let mut nodes: Vec<ApNode> = init
        .aps
        .iter()
        .enumerate()
        .map(|(i, ap)| ApNode::new(i, &chan.h[i], &chan.p, chan.sigma_z2, ap.clone(), c_f))
        .collect();
    let mut cpu = CpuNode::new(&chan.p, chan.sigma_z2, l, n);
    let mut net = Transport::default();

    for node in &mut nodes {
        node.project(cfg)?;
        node.send_report(0, &mut net);
    }
    cpu.receive(&mut net)?;

    let mut trace = ConvergenceTrace::default();
    let mut rate_old = cpu.sum_rate()?;
    trace.records.push(record(0, rate_old, &start, &nodes, c_f, Vec::new()));

    trace.truncated = true;
    for outer in 1..=cfg.max_outer {
        let aux = cpu_aux(&cpu.model()?)?;
        let thetas: Vec<CMat> = (0..l)
            .map(|j| afp::auxiliary::theta_block(&aux.theta, j, cpu.n))
            .collect();
        let mut own: Vec<CMat> = (0..l).map(|j| cpu.own(j, &thetas[j], false)).collect::<Result<_>>()?;
        let mut inner_iters = Vec::with_capacity(l);
        for i in 0..l {
            let down = [
                Payload::GammaScalars(aux.gamma.clone()),
                Payload::ThetaSubvectors(thetas[i].clone()),
                Payload::CrossApScalars(cross_ap_terms(i, &own)),
            ];
            for payload in down {
                net.send(Message {
                    direction: Direction::Downlink,
                    ap_index: i,
                    iteration: outer,
                    payload,
                });
            }
            let upd = nodes[i].step(outer, &mut net, cfg)?;
            trace.inner_truncations += usize::from(upd.inner_truncated);
            trace.kept_previous += usize::from(upd.kept_previous);
            inner_iters.push(upd.inner_iterations);
            cpu.receive(&mut net)?;
            own[i] = cpu.own(i, &thetas[i], true)?;
        }
        let rate_new = cpu.sum_rate()?;
        trace
            .records
            .push(record(outer, rate_new, &start, &nodes, c_f, inner_iters));
        if (rate_new - rate_old).abs() <= cfg.delta_out {
            trace.truncated = false;
            break;
        }
        rate_old = rate_new;
    }
    if trace.truncated {
        log::warn!(
            "decentralized A-FP stopped at max_outer={} before reaching delta_out",
            cfg.max_outer
        );
    }
    let solution = sigmodel::Solution::new(nodes.into_iter().map(|n| n.ap).collect());
    let log = net.log().to_vec();
    Ok(DecentralizedRun {
        solution,
        trace,
        overhead: OverheadReport::from_log(&log, l),
        log,
    })
}

/// Digest of a message log, for determinism checks.
pub fn log_digest(log: &[LogEntry]) -> u64 {
    let mut h = Fnv64::new();
    for e in log {
        h.write_u64(e.iteration as u64);
        h.write_u64(e.direction as u64);
        h.write_u64(e.ap as u64);
        h.write_u64(e.payload_kind as u64);
        h.write_u64(e.complex_scalars as u64);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afp::{run_afp, update_aux};
    use crate::baselines::{baseline_solution, BaselineKind};
    use crate::linalg::testutil::randn_c;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, k: usize, l: usize, m: usize, n: usize) -> (ChannelRealization, sigmodel::Solution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chan = ChannelRealization {
            h: (0..l).map(|_| randn_c(&mut rng, m, k)).collect(),
            beta_lin: vec![vec![1.0; k]; l],
            p: (0..k).map(|kk| 1.0 + 0.2 * kk as f64).collect(),
            sigma_z2: 0.5,
        };
        let init = baseline_solution(BaselineKind::Evd, &chan, n, 3.0, seed).unwrap();
        (chan, init)
    }

    fn small_cfg() -> AfpConfig {
        AfpConfig {
            max_outer: 15,
            ..AfpConfig::default()
        }
    }

    #[test]
    fn expected_overhead_values() {
        assert_eq!(expected_overhead(8, 4, 2).unwrap(), (32, 48));
        assert_eq!(expected_overhead(1, 1, 1).unwrap(), (4, 2));
        assert!(matches!(expected_overhead(8, 4, 0), Err(Error::Domain(_))));
        assert_eq!(protocol_overhead(8, 4, 2).unwrap(), (32, 8 + 16 + 64));
    }

    #[test]
    fn payload_counts_match_kind_formula() {
        let (k, n) = (5, 3);
        let cases = [
            Payload::WhVectors(CMat::zeros(n, k)),
            Payload::WwhMatrix(CMat::zeros(n, n)),
            Payload::OmegaMatrix(CMat::zeros(n, n)),
            Payload::ThetaWhScalars(vec![c(0.0, 0.0); k]),
            Payload::GammaScalars(vec![0.0; k]),
            Payload::ThetaSubvectors(CMat::zeros(n, k)),
            Payload::CrossApScalars(CMat::zeros(k, k)),
        ];
        for p in cases {
            assert_eq!(p.scalar_count(), p.kind().scalar_count(k, n), "{}", p.kind());
        }
    }

    #[test]
    fn matches_centralized_run() {
        let (chan, init) = instance(3, 4, 3, 8, 2);
        let cfg = small_cfg();
        let (sol, trace) = run_afp(&chan, 3.0, &init, &cfg).unwrap();
        let run = run_decentralized(&chan, 3.0, &init, &cfg).unwrap();
        assert_eq!(run.trace.records.len(), trace.records.len());
        for (a, b) in run.trace.records.iter().zip(&trace.records) {
            assert_eq!(a.digest, b.digest);
            assert_eq!(a.sum_rate, b.sum_rate);
            assert_eq!(a.inner_iters, b.inner_iters);
        }
        assert_eq!(run.solution, sol);
    }

    #[test]
    fn ledger_is_constant_per_iteration() {
        let (chan, init) = instance(5, 4, 3, 8, 2);
        let run = run_decentralized(&chan, 3.0, &init, &small_cfg()).unwrap();
        let per = run.overhead.constant_per_iteration().unwrap();
        assert_eq!(per, protocol_overhead(4, 3, 2).unwrap());
        assert_eq!(run.overhead.initial_uplink, 3 * (4 * 2 + 2 * 4));
        let iters = run.trace.outer_iterations();
        assert_eq!(run.overhead.per_iteration.len(), iters * 3);
        assert_eq!(
            run.overhead.total_uplink,
            run.overhead.initial_uplink + iters * 3 * per.0
        );
        assert_eq!(run.overhead.total_downlink, iters * 3 * per.1);
    }

    #[test]
    fn ledger_does_not_depend_on_antenna_count() {
        let cfg = AfpConfig {
            max_outer: 2,
            delta_out: 1e-300,
            ..AfpConfig::default()
        };
        let reports: Vec<OverheadReport> = [4, 12, 24]
            .iter()
            .map(|&m| {
                let (chan, init) = instance(9, 3, 2, m, 2);
                run_decentralized(&chan, 2.0, &init, &cfg).unwrap().overhead
            })
            .collect();
        assert!(reports.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn cpu_aux_from_reports_matches_centralized() {
        let (chan, init) = instance(7, 4, 3, 8, 2);
        let mut nodes: Vec<ApNode> = (0..3)
            .map(|i| ApNode::new(i, &chan.h[i], &chan.p, chan.sigma_z2, init.aps[i].clone(), 3.0))
            .collect();
        let mut cpu = CpuNode::new(&chan.p, chan.sigma_z2, 3, 2);
        let mut net = Transport::default();
        for node in &mut nodes {
            node.send_report(0, &mut net);
        }
        cpu.receive(&mut net).unwrap();
        let got = cpu_aux(&cpu.model().unwrap()).unwrap();
        let want = update_aux(&init, &chan).unwrap();
        let scale = want.theta.norm();
        assert!((got.theta - &want.theta).norm() <= 1e-12 * scale);
        for (a, b) in got.gamma.iter().zip(&want.gamma) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for (i, node) in nodes.iter().enumerate() {
            assert!((node.sigma() - &want.sigma[i]).norm() <= 1e-12 * want.sigma[i].norm());
        }
    }

    #[test]
    fn foreign_channel_access_is_rejected() {
        let (chan, init) = instance(1, 2, 2, 4, 1);
        let node = ApNode::new(0, &chan.h[0], &chan.p, chan.sigma_z2, init.aps[0].clone(), 2.0);
        assert!(node.channel(0).is_ok());
        assert!(matches!(node.channel(1), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn sigma_ignores_other_aps_channels() {
        let (chan, init) = instance(2, 3, 3, 6, 2);
        let mut mutated = chan.clone();
        mutated.h[2] *= c(3.0, -1.0);
        for i in 0..2 {
            let a = ApNode::new(i, &chan.h[i], &chan.p, chan.sigma_z2, init.aps[i].clone(), 2.0);
            let b = ApNode::new(i, &mutated.h[i], &mutated.p, mutated.sigma_z2, init.aps[i].clone(), 2.0);
            assert_eq!(a.sigma(), b.sigma());
        }
    }

    #[test]
    fn message_log_csv_and_determinism() {
        let (chan, init) = instance(4, 3, 2, 6, 2);
        let a = run_decentralized(&chan, 2.0, &init, &small_cfg()).unwrap();
        let b = run_decentralized(&chan, 2.0, &init, &small_cfg()).unwrap();
        assert_eq!(log_digest(&a.log), log_digest(&b.log));
        let mut buf = Vec::new();
        write_message_log(&a.log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("iteration,direction,ap,payload_kind,complex_scalars")
        );
        assert_eq!(lines.next(), Some("0,AP->CPU,0,WH_vectors,6"));
        assert_eq!(text.lines().count(), a.log.len() + 1);
    }
}
