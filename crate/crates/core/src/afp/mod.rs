//! Accelerated fractional programming (A-FP).
//!
//! Each outer iteration refreshes the FP auxiliaries in closed form and then
//! sweeps the APs in order, solving each AP's convex block by a primal-dual
//! subgradient loop followed by fronthaul projection.

pub mod auxiliary;
pub mod coef;
pub mod inner;
pub mod project;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use auxiliary::{cpu_aux, fenchel_constraint_lhs, local_sigma, surrogate_objective, update_aux, AuxState, CpuAux};
pub use coef::{assemble_coefficients, cross_ap_terms, own_terms, per_ap_coefficients, LocalCov, PerApCoefficients};
pub use inner::{
    dual_step, inner_solve, primal_step, relative_change, solve_bisection, solve_subgradient, solve_subproblem,
    update_ap, ApUpdate, InnerOutcome, PrimalIterate,
};
pub use project::{capacity_scale, project_feasible};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scenario::ChannelRealization;
use crate::sigmodel::{self, ApReport, Solution, StackedModel};

/// How the inner loop updates the multiplier μ_i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualUpdate {
    /// Bisection on μ for a tight Fenchel-bounded constraint.
    #[default]
    Bisection,
    /// Projected subgradient steps δ₀, δ₀r, δ₀r², ...
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfpConfig {
    pub dual_update: DualUpdate,
    /// Initial dual step size.
    pub delta0: f64,
    /// Per-iteration step decay, in (0, 1).
    pub decay_r: f64,
    /// Inner stopping threshold on the relative squared Frobenius change
    /// of (W_i, Ω_i), ‖ΔW‖²/‖W‖² + ‖ΔΩ‖²/‖Ω‖²; `None` selects 1e-6·N·(M+N).
    pub delta_in: Option<f64>,
    /// Outer stopping threshold on the sum-rate change, bits/s/Hz.
    pub delta_out: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Lower clamp on μ when evaluating Ω.
    pub mu_floor: f64,
    /// Relative diagonal loading for the transform solve at μ = 0.
    pub ridge: f64,
    /// Relative tolerance of the projection bisection and of the μ bracket.
    pub bisect_tol: f64,
}

impl Default for AfpConfig {
    fn default() -> Self {
        Self {
            dual_update: DualUpdate::default(),
            delta0: 1.0,
            decay_r: 0.95,
            delta_in: None,
            delta_out: 1e-4,
            max_outer: 200,
            max_inner: 500,
            mu_floor: 1e-8,
            ridge: 1e-10,
            bisect_tol: 1e-6,
        }
    }
}

impl AfpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta0 > 0.0
            && self.decay_r > 0.0
            && self.decay_r < 1.0
            && self.delta_in.is_none_or(|d| d > 0.0)
            && self.delta_out > 0.0
            && self.max_outer >= 1
            && self.max_inner >= 1
            && self.mu_floor > 0.0
            && self.ridge >= 0.0
            && self.bisect_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid A-FP configuration: {self:?}")))
        }
    }

    pub fn inner_threshold(&self, n: usize, m: usize) -> f64 {
        self.delta_in.unwrap_or(1e-6 * (n * (m + n)) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 is the (projected) initial point.
    pub outer_iter: usize,
    pub sum_rate: f64,
    pub elapsed_s: f64,
    pub max_fh_violation: f64,
    pub inner_iters: Vec<usize>,
    /// Digest of every W_i and Ω_i after this iteration.
    pub digest: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// `max_outer` was reached before the outer threshold was met.
    pub truncated: bool,
    pub inner_truncations: usize,
    pub kept_previous: usize,
}

impl ConvergenceTrace {
    pub fn final_rate(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.sum_rate)
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.outer_iter)
    }

    /// Largest drop between consecutive records (0 for a non-decreasing trace).
    pub fn max_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].sum_rate - w[1].sum_rate)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "outer_iter,sum_rate_bps_hz,elapsed_s,max_fh_violation,inner_iters_per_ap"
        )?;
        for r in &self.records {
            let inner: Vec<String> = r.inner_iters.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.outer_iter,
                r.sum_rate,
                r.elapsed_s,
                r.max_fh_violation,
                inner.join(";")
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

pub(crate) fn max_violation(usages: impl Iterator<Item = f64>, c_f: f64) -> f64 {
    usages.map(|u| u - c_f).fold(0.0, f64::max)
}

/// Projects every AP of `init` onto its fronthaul budget; Ω must be PD.
pub fn feasible_start(chan: &ChannelRealization, init: &Solution, c_f: f64, cfg: &AfpConfig) -> Result<Solution> {
    init.validate(chan)?;
    let mut sol = init.clone();
    for i in 0..sol.aps.len() {
        if crate::linalg::cholesky(&sol.aps[i].omega).is_none() {
            return Err(Error::Domain(format!(
                "initial Omega of AP {i} is not positive definite"
            )));
        }
        sol = project_feasible(i, &sol, chan, c_f, cfg);
    }
    Ok(sol)
}

/// Runs A-FP from `init` until the sum-rate change falls below `delta_out`.
pub fn run_afp(
    chan: &ChannelRealization,
    c_f: f64,
    init: &Solution,
    cfg: &AfpConfig,
) -> Result<(Solution, ConvergenceTrace)> {
    cfg.validate()?;
    chan.validate()?;
    let start = Instant::now();
    let mut sol = feasible_start(chan, init, c_f, cfg)?;
    let l = sol.aps.len();
    let n = sol.aps[0].reduced_dim();
    let locals: Vec<Arc<LocalCov>> = chan
        .h
        .iter()
        .map(|h| Arc::new(LocalCov::new(h, &chan.p, chan.sigma_z2)))
        .collect();
    let mut reports: Vec<ApReport> = sol
        .aps
        .iter()
        .zip(&chan.h)
        .map(|(ap, h)| ApReport::from_local(&ap.w, &ap.omega, h))
        .collect();
    let usage = |sol: &Solution, i: usize| {
        let ap = &sol.aps[i];
        sigmodel::fronthaul_usage_from(&(&ap.w * &locals[i].s * ap.w.adjoint()), &ap.omega)
    };

    let mut trace = ConvergenceTrace::default();
    let mut rate_old = StackedModel::from_reports(&reports, &chan.p, chan.sigma_z2).sum_rate();
    trace.records.push(TraceRecord {
        outer_iter: 0,
        sum_rate: rate_old,
        elapsed_s: start.elapsed().as_secs_f64(),
        max_fh_violation: max_violation((0..l).map(|i| usage(&sol, i)), c_f),
        inner_iters: Vec::new(),
        digest: sol.digest(),
    });

    trace.truncated = true;
    for outer in 1..=cfg.max_outer {
        let model = StackedModel::from_reports(&reports, &chan.p, chan.sigma_z2);
        let CpuAux { gamma, theta } = cpu_aux(&model)?;
        let mut own: Vec<CMat> = reports
            .iter()
            .enumerate()
            .map(|(j, r)| own_terms(&auxiliary::theta_block(&theta, j, n), &r.wh))
            .collect();
        let mut inner_iters = Vec::with_capacity(l);
        for i in 0..l {
            let ap = &sol.aps[i];
            let sigma = local_sigma(&ap.w, &locals[i].s, &ap.omega);
            let theta_i = auxiliary::theta_block(&theta, i, n);
            let alpha = cross_ap_terms(i, &own);
            let coef = assemble_coefficients(locals[i].clone(), &sigma, &gamma, &theta_i, &alpha, c_f)
                .map_err(|e| Error::Numerical(format!("AP {i}, outer iteration {outer}: {e}")))?;
            let upd = update_ap(&coef, ap, c_f, cfg)
                .map_err(|e| Error::Numerical(format!("AP {i}, outer iteration {outer}: {e}")))?;
            trace.inner_truncations += usize::from(upd.inner_truncated);
            trace.kept_previous += usize::from(upd.kept_previous);
            inner_iters.push(upd.inner_iterations);
            sol.aps[i] = upd.ap;
            reports[i] = ApReport::from_local(&sol.aps[i].w, &sol.aps[i].omega, &chan.h[i]);
            own[i] = own_terms(&theta_i, &reports[i].wh);
        }
        let rate_new = StackedModel::from_reports(&reports, &chan.p, chan.sigma_z2).sum_rate();
        trace.records.push(TraceRecord {
            outer_iter: outer,
            sum_rate: rate_new,
            elapsed_s: start.elapsed().as_secs_f64(),
            max_fh_violation: max_violation((0..l).map(|i| usage(&sol, i)), c_f),
            inner_iters,
            digest: sol.digest(),
        });
        if (rate_new - rate_old).abs() <= cfg.delta_out {
            trace.truncated = false;
            break;
        }
        rate_old = rate_new;
    }
    if trace.truncated {
        log::warn!("A-FP stopped at max_outer={} before reaching delta_out", cfg.max_outer);
    }
    Ok((sol, trace))
}
