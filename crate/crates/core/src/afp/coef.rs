//! Per-AP subproblem coefficients.
//!
//! With the auxiliaries fixed, AP i's block of the surrogate is the convex
//! quadratic wᴴDw − Re{g̃ᴴw} + tr(TΩ) under the Fenchel-bounded fronthaul
//! constraint ‖Aᴴw‖² + tr(Σ⁻¹Ω) − ln det Ω ≤ C̃. Summing the per-UE
//! Kronecker terms gives D = S* ⊗ T, and AAᴴ = S* ⊗ Σ⁻¹, so neither MN×MN
//! matrix is materialized on the solve path: both share the eigenbasis of S,
//! which is computed once per AP and channel.

use std::f64::consts::LN_2;
use std::sync::Arc;

use crate::afp::auxiliary::AuxState;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::scenario::ChannelRealization;
use crate::sigmodel::{self, Solution};

/// Local second-order statistics of one AP: S = H P̄ Hᴴ + σ²I and its
/// eigendecomposition S = U Λ Uᴴ.
#[derive(Debug, Clone)]
pub struct LocalCov {
    pub h: CMat,
    pub p: Vec<f64>,
    pub s: CMat,
    pub eigvals: Vec<f64>,
    pub eigvecs: CMat,
    /// Hᴴ U, so products with the rotated basis cost O(NKM).
    pub h_adj_u: CMat,
}

impl LocalCov {
    pub fn new(h: &CMat, p: &[f64], sigma_z2: f64) -> Self {
        let s = sigmodel::local_covariance(h, p, sigma_z2);
        let (eigvals, eigvecs) = linalg::eigh_desc(&s);
        let h_adj_u = h.adjoint() * &eigvecs;
        Self {
            h: h.clone(),
            p: p.to_vec(),
            s,
            eigvals,
            eigvecs,
            h_adj_u,
        }
    }

    pub fn antennas(&self) -> usize {
        self.s.nrows()
    }

    /// W S Wᴴ evaluated in the eigenbasis from W U.
    pub fn wsw_rot(&self, w_rot: &CMat) -> CMat {
        let mut scaled = w_rot.clone();
        for (j, &lam) in self.eigvals.iter().enumerate() {
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= c(lam, 0.0));
        }
        linalg::hermitized(scaled * w_rot.adjoint())
    }

    pub fn rotate(&self, w: &CMat) -> CMat {
        w * &self.eigvecs
    }

    pub fn unrotate(&self, w_rot: &CMat) -> CMat {
        w_rot * self.eigvecs.adjoint()
    }
}

/// Coefficients of AP i's convex subproblem.
#[derive(Debug, Clone)]
pub struct PerApCoefficients {
    pub local: Arc<LocalCov>,
    /// T_i = Σ_k (1+γ_k) θ_{i,k}θ_{i,k}ᴴ.
    pub t: CMat,
    pub sigma: CMat,
    pub sigma_inv: CMat,
    /// B_i with g̃_i = vec(2 B_i).
    pub b: CMat,
    /// B_i U.
    pub b_rot: CMat,
    /// C̃_F,i = C_F ln 2 − ln det Σ_i + N, nats.
    pub c_tilde: f64,
}

impl PerApCoefficients {
    pub fn reduced_dim(&self) -> usize {
        self.t.nrows()
    }

    /// D_i = S* ⊗ T_i (materialized; for inspection and tests).
    pub fn d_matrix(&self) -> CMat {
        linalg::kron(&self.local.s.conjugate(), &self.t)
    }

    /// A_iA_iᴴ = S* ⊗ Σ_i⁻¹ (materialized; for inspection and tests).
    pub fn quad_kernel(&self) -> CMat {
        linalg::kron(&self.local.s.conjugate(), &self.sigma_inv)
    }

    pub fn g_tilde(&self) -> CVec {
        linalg::vec_cols(&self.b) * c(2.0, 0.0)
    }

    /// tr(D) = tr(S) tr(T).
    pub fn d_trace(&self) -> f64 {
        linalg::trace(&self.local.s).re * linalg::trace(&self.t).re
    }

    /// wᴴDw − Re{g̃ᴴw} + tr(TΩ) with w = vec(W).
    pub fn objective(&self, w: &CMat, omega: &CMat) -> f64 {
        let wsw = w * &self.local.s * w.adjoint();
        self.objective_from(&wsw, w, omega)
    }

    pub(crate) fn objective_from(&self, wsw: &CMat, w: &CMat, omega: &CMat) -> f64 {
        linalg::trace_of_product(&self.t, wsw).re - 2.0 * self.b.dotc(w).re
            + linalg::trace_of_product(&self.t, omega).re
    }

    /// ‖Aᴴw‖² + tr(Σ⁻¹Ω) − ln det Ω, with ‖Aᴴw‖² = tr(Σ⁻¹ W S Wᴴ).
    pub fn constraint_lhs(&self, w: &CMat, omega: &CMat) -> f64 {
        let wsw = w * &self.local.s * w.adjoint();
        self.constraint_lhs_from(&wsw, omega)
    }

    pub(crate) fn constraint_lhs_from(&self, wsw: &CMat, omega: &CMat) -> f64 {
        match linalg::logdet_hpd(omega) {
            Some(ld) => {
                linalg::trace_of_product(&self.sigma_inv, wsw).re + linalg::trace_of_product(&self.sigma_inv, omega).re
                    - ld
            }
            None => f64::INFINITY,
        }
    }
}

/// K×K matrix Θ_iᴴ (W_i H_i): entry (k, k′) = θ_{i,k}ᴴ W_i h_{i,k′}.
pub fn own_terms(theta_i: &CMat, wh_i: &CMat) -> CMat {
    theta_i.adjoint() * wh_i
}

/// α_i with entry (k, k′) = Σ_{i′≠i} θ_{i′,k}ᴴ W_{i′} h_{i′,k′}.
pub fn cross_ap_terms(i: usize, own: &[CMat]) -> CMat {
    let k = own.first().map_or(0, |m| m.nrows());
    let mut alpha = CMat::zeros(k, k);
    for (j, t) in own.iter().enumerate() {
        if j != i {
            alpha += t;
        }
    }
    alpha
}

/// Assembles the coefficients from AP-local data plus the CPU-provided
/// γ, θ_i (N×K) and cross-AP terms α_i (K×K).
pub fn assemble_coefficients(
    local: Arc<LocalCov>,
    sigma: &CMat,
    gamma: &[f64],
    theta_i: &CMat,
    alpha_i: &CMat,
    c_f: f64,
) -> Result<PerApCoefficients> {
    let n = theta_i.nrows();
    let k_total = gamma.len();
    let chol = linalg::cholesky(sigma).ok_or_else(|| {
        Error::Numerical(format!(
            "Sigma is not positive definite (min eigenvalue {:.3e}, trace {:.3e})",
            linalg::min_eigenvalue(sigma),
            linalg::trace(sigma).re
        ))
    })?;
    let sigma_inv = linalg::hermitized(chol.inverse());
    let sigma_logdet = linalg::logdet_hpd(sigma).expect("Cholesky already succeeded");

    // θ_i diag(1+γ)
    let mut weighted = theta_i.clone();
    for (k, &g) in gamma.iter().enumerate() {
        weighted.column_mut(k).iter_mut().for_each(|z| *z *= c(1.0 + g, 0.0));
    }
    let t = linalg::hermitized(&weighted * theta_i.adjoint());

    // g_{i,k} = √p_k h_{i,k} − Σ_{k′} p_{k′} α*_{k,k′} h_{i,k′}, i.e. G = H C with
    // C[k′, k] = √p_k δ_{k′k} − p_{k′} α*_{k,k′}; then B = Θ diag(1+γ) Cᴴ Hᴴ.
    let p = &local.p;
    let mut mix = CMat::zeros(k_total, k_total);
    for k in 0..k_total {
        for kp in 0..k_total {
            let mut v = -alpha_i[(k, kp)].conj() * c(p[kp], 0.0);
            if kp == k {
                v += c(p[k].sqrt(), 0.0);
            }
            mix[(kp, k)] = v;
        }
    }
    let left = &weighted * mix.adjoint();
    let b = &left * local.h.adjoint();
    let b_rot = &left * &local.h_adj_u;
    let c_tilde = c_f * LN_2 - sigma_logdet + n as f64;
    Ok(PerApCoefficients {
        local,
        t,
        sigma: sigma.clone(),
        sigma_inv,
        b,
        b_rot,
        c_tilde,
    })
}

/// Coefficients of AP i for the current solution and auxiliaries.
pub fn per_ap_coefficients(
    i: usize,
    sol: &Solution,
    chan: &ChannelRealization,
    aux: &AuxState,
    c_f: f64,
) -> Result<PerApCoefficients> {
    let n = sol.aps[i].w.nrows();
    let reports = sigmodel::reports_for(sol, chan);
    let own: Vec<CMat> = reports
        .iter()
        .enumerate()
        .map(|(j, r)| own_terms(&aux.theta_block(j, n), &r.wh))
        .collect();
    let local = Arc::new(LocalCov::new(&chan.h[i], &chan.p, chan.sigma_z2));
    assemble_coefficients(
        local,
        &aux.sigma[i],
        &aux.gamma,
        &aux.theta_block(i, n),
        &cross_ap_terms(i, &own),
        c_f,
    )
    .map_err(|e| Error::Numerical(format!("AP {i}: {e}")))
}
