//! Primal-dual subgradient solve of one AP's subproblem.

use crate::afp::coef::PerApCoefficients;
use crate::afp::project::capacity_scale;
use crate::afp::{AfpConfig, DualUpdate};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::sigmodel::{self, ApProcessing};

/// Minimizer of the Lagrangian for a fixed multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalIterate {
    /// Devectorized transform; the stacked variable is vec(W) by columns.
    pub w: CMat,
    pub omega: CMat,
}

/// Diagonal loading applied to the w-system when μ = 0.
pub fn ridge_for(coef: &PerApCoefficients, mu: f64, cfg: &AfpConfig) -> f64 {
    if mu > 0.0 {
        return 0.0;
    }
    let mn = (coef.local.antennas() * coef.reduced_dim()) as f64;
    cfg.ridge * coef.d_trace() / mn
}

/// Solves (D + μAAᴴ)w = ½g̃ in the rotated basis and evaluates
/// Ω = μ′(T + μ′Σ⁻¹)⁻¹ with μ′ = max(μ, mu_floor). Returns (W U, Ω).
pub(crate) fn primal_rot(coef: &PerApCoefficients, mu: f64, cfg: &AfpConfig) -> Result<(CMat, CMat)> {
    // D + μAAᴴ = S* ⊗ G with G = T + μΣ⁻¹. In matrix form: G W S + ρW = B.
    let g = linalg::hermitized(&coef.t + &coef.sigma_inv * c(mu, 0.0));
    let (phi, v) = linalg::eigh_desc(&g);
    let rho = ridge_for(coef, mu, cfg);
    let mut x = v.adjoint() * &coef.b_rot;
    for (a, &ph) in phi.iter().enumerate() {
        for (b, &lam) in coef.local.eigvals.iter().enumerate() {
            let den = ph * lam + rho;
            if !(den > 0.0) {
                return Err(Error::Numerical(format!(
                    "transform system is singular at mu={mu:e} (pivot {den:e})"
                )));
            }
            x[(a, b)] /= c(den, 0.0);
        }
    }
    let w_rot = &v * x;

    let mu_eff = mu.max(cfg.mu_floor);
    let g_eff = if mu_eff == mu {
        g
    } else {
        linalg::hermitized(&coef.t + &coef.sigma_inv * c(mu_eff, 0.0))
    };
    let inv = linalg::inverse_hpd(&g_eff)
        .ok_or_else(|| Error::Numerical(format!("T + mu*Sigma^-1 is singular at mu={mu_eff:e}")))?;
    let omega = linalg::hermitized(inv * c(mu_eff, 0.0));
    if !linalg::all_finite(&w_rot) || !linalg::all_finite(&omega) {
        return Err(Error::Numerical(format!("non-finite primal iterate at mu={mu:e}")));
    }
    Ok((w_rot, omega))
}

pub fn primal_step(coef: &PerApCoefficients, mu: f64, cfg: &AfpConfig) -> Result<PrimalIterate> {
    let (w_rot, omega) = primal_rot(coef, mu, cfg)?;
    Ok(PrimalIterate {
        w: coef.local.unrotate(&w_rot),
        omega,
    })
}

/// Projected subgradient step on μ.
pub fn dual_step(mu: f64, delta: f64, coef: &PerApCoefficients, w: &CMat, omega: &CMat) -> f64 {
    let sub = coef.constraint_lhs(w, omega) - coef.c_tilde;
    (mu + delta * sub).max(0.0)
}

fn dual_step_rot(mu: f64, delta: f64, coef: &PerApCoefficients, w_rot: &CMat, omega: &CMat) -> f64 {
    let sub = coef.constraint_lhs_from(&coef.local.wsw_rot(w_rot), omega) - coef.c_tilde;
    (mu + delta * sub).max(0.0)
}

/// ‖new − old‖²_F / ‖new‖²_F, or 0 when both are zero.
pub fn relative_change(new: &CMat, old: &CMat) -> f64 {
    let diff = linalg::frob2(&(new - old));
    if diff == 0.0 {
        0.0
    } else {
        diff / linalg::frob2(new).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub ap: ApProcessing,
    pub iterations: usize,
    /// Stopped at `max_inner` without meeting the change threshold.
    pub truncated: bool,
    pub final_mu: f64,
}

/// Solves AP i's subproblem with the configured dual update.
pub fn solve_subproblem(coef: &PerApCoefficients, start: &ApProcessing, cfg: &AfpConfig) -> Result<InnerOutcome> {
    match cfg.dual_update {
        DualUpdate::Subgradient => solve_subgradient(coef, start, cfg),
        DualUpdate::Bisection => solve_bisection(coef, cfg),
    }
}

/// Alternates primal and dual steps from μ = 0 with a geometrically
/// decaying step until consecutive iterates stop moving.
pub fn solve_subgradient(coef: &PerApCoefficients, start: &ApProcessing, cfg: &AfpConfig) -> Result<InnerOutcome> {
    let n = coef.reduced_dim();
    let m = coef.local.antennas();
    let threshold = cfg.inner_threshold(n, m);
    let mut prev_w = coef.local.rotate(&start.w);
    let mut prev_omega = start.omega.clone();
    let mut mu = 0.0;
    let mut delta = cfg.delta0;
    let mut iterations = 0;
    let mut truncated = true;
    while iterations < cfg.max_inner {
        iterations += 1;
        let (w_rot, omega) = primal_rot(coef, mu, cfg)?;
        mu = dual_step_rot(mu, delta, coef, &w_rot, &omega);
        delta *= cfg.decay_r;
        let change = relative_change(&w_rot, &prev_w) + relative_change(&omega, &prev_omega);
        prev_w = w_rot;
        prev_omega = omega;
        if change <= threshold {
            truncated = false;
            break;
        }
    }
    if truncated {
        log::debug!("inner loop hit max_inner={} (mu={mu:e})", cfg.max_inner);
    }
    Ok(InnerOutcome {
        ap: ApProcessing::new(coef.local.unrotate(&prev_w), prev_omega),
        iterations,
        truncated,
        final_mu: mu,
    })
}

const MU_BRACKET_DOUBLINGS: usize = 200;

/// Finds the multiplier at which the Fenchel-bounded constraint is tight.
/// The constraint value at the Lagrangian minimizer is non-increasing in μ
/// and tends to −C_F ln 2 as μ → ∞, so bisection brackets it. Returns the
/// primal point at the upper (feasible-side) end of the bracket. Each
/// primal evaluation counts as one iteration.
pub fn solve_bisection(coef: &PerApCoefficients, cfg: &AfpConfig) -> Result<InnerOutcome> {
    let mut iterations = 0;
    let mut eval = |mu: f64| -> Result<(f64, CMat, CMat)> {
        iterations += 1;
        let (w_rot, omega) = primal_rot(coef, mu, cfg)?;
        let g = coef.constraint_lhs_from(&coef.local.wsw_rot(&w_rot), &omega) - coef.c_tilde;
        Ok((g, w_rot, omega))
    };
    let done = |w_rot: CMat, omega: CMat, mu: f64, iterations: usize, truncated: bool| InnerOutcome {
        ap: ApProcessing::new(coef.local.unrotate(&w_rot), omega),
        iterations,
        truncated,
        final_mu: mu,
    };

    let (g0, w0, o0) = eval(0.0)?;
    if g0 <= 0.0 {
        return Ok(done(w0, o0, 0.0, 1, false));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut hi_w, mut hi_o);
    let mut doublings = 0;
    loop {
        let (g, w, o) = eval(hi)?;
        if g <= 0.0 {
            hi_w = w;
            hi_o = o;
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MU_BRACKET_DOUBLINGS {
            log::debug!("no feasible multiplier below {hi:e}");
            return Ok(done(w, o, lo, doublings + 1, true));
        }
    }
    let mut truncated = true;
    let budget = cfg.max_inner.max(doublings + 2);
    let mut count = doublings + 2;
    while count < budget {
        if hi - lo <= cfg.bisect_tol * hi {
            truncated = false;
            break;
        }
        count += 1;
        let mid = 0.5 * (lo + hi);
        let (g, w, o) = eval(mid)?;
        if g <= 0.0 {
            hi = mid;
            hi_w = w;
            hi_o = o;
        } else {
            lo = mid;
        }
    }
    Ok(done(hi_w, hi_o, hi, count, truncated))
}

/// Inner solve for AP i against the current solution and auxiliaries.
pub fn inner_solve(
    i: usize,
    sol: &sigmodel::Solution,
    chan: &crate::scenario::ChannelRealization,
    aux: &crate::afp::AuxState,
    c_f: f64,
    cfg: &AfpConfig,
) -> Result<InnerOutcome> {
    let coef = crate::afp::per_ap_coefficients(i, sol, chan, aux, c_f)?;
    solve_subproblem(&coef, &sol.aps[i], cfg)
}

/// Result of one AP's block update inside an outer iteration.
#[derive(Debug, Clone)]
pub struct ApUpdate {
    pub ap: ApProcessing,
    pub inner_iterations: usize,
    pub inner_truncated: bool,
    /// Scale applied by the fronthaul projection (1 when not violated).
    pub scale: f64,
    /// The candidate would have lowered the surrogate, so the previous
    /// block was kept.
    pub kept_previous: bool,
}

/// Inner solve, fronthaul projection and an ascent guard: the projected
/// candidate replaces the current block only if it does not increase the
/// subproblem objective. The current block is feasible, so the surrogate
/// (and with it the sum-rate) cannot decrease.
pub fn update_ap(coef: &PerApCoefficients, current: &ApProcessing, c_f: f64, cfg: &AfpConfig) -> Result<ApUpdate> {
    let inner = solve_subproblem(coef, current, cfg)?;
    let mut cand = inner.ap;
    let wsw = linalg::hermitized(&cand.w * &coef.local.s * cand.w.adjoint());
    let scale = capacity_scale(&wsw, &cand.omega, c_f, cfg.bisect_tol);
    if scale < 1.0 {
        cand.w *= c(scale, 0.0);
    }
    let q_new = coef.objective(&cand.w, &cand.omega);
    let q_old = coef.objective(&current.w, &current.omega);
    let kept_previous = !(q_new <= q_old);
    Ok(ApUpdate {
        ap: if kept_previous { current.clone() } else { cand },
        inner_iterations: inner.iterations,
        inner_truncated: inner.truncated,
        scale,
        kept_previous,
    })
}
