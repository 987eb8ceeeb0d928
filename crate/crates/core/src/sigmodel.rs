//! Model quantities for a candidate design: local covariances, fronthaul
//! usage, per-UE rates and the sum-rate objective.
//!
//! Every CPU-side quantity is computed from [`ApReport`]s, the per-AP
//! sufficient statistics ({W_i h_{i,k}}, W_i W_iᴴ, Ω_i). The centralized
//! optimizer and the decentralized CPU node therefore share one code path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::scenario::{ChannelRealization, Fnv64};

/// Relative eigenvalue cut used when C_IF,k must be pseudo-inverted.
pub const PINV_TOL: f64 = 1e-12;

/// One AP's transform W_i (N×M) and quantization covariance Ω_i (N×N).
#[derive(Debug, Clone, PartialEq)]
pub struct ApProcessing {
    pub w: CMat,
    pub omega: CMat,
}

impl ApProcessing {
    pub fn new(w: CMat, omega: CMat) -> Self {
        Self { w, omega }
    }

    pub fn reduced_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.nrows();
        if self.omega.shape() != (n, n) {
            return Err(Error::Domain(format!(
                "Omega must be {n}×{n}, got {:?}",
                self.omega.shape()
            )));
        }
        if !linalg::all_finite(&self.w) || !linalg::all_finite(&self.omega) {
            return Err(Error::Domain("non-finite transform or covariance".into()));
        }
        if !linalg::is_hermitian(&self.omega, 1e-12) {
            return Err(Error::Domain("Omega is not Hermitian".into()));
        }
        if !linalg::is_psd(&self.omega) {
            return Err(Error::Domain("Omega is not positive semidefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub aps: Vec<ApProcessing>,
}

impl Solution {
    pub fn new(aps: Vec<ApProcessing>) -> Self {
        Self { aps }
    }

    pub fn validate(&self, chan: &ChannelRealization) -> Result<()> {
        if self.aps.len() != chan.num_aps() {
            return Err(Error::Domain(format!(
                "solution has {} APs, channel has {}",
                self.aps.len(),
                chan.num_aps()
            )));
        }
        for (i, ap) in self.aps.iter().enumerate() {
            if ap.w.ncols() != chan.antennas() {
                return Err(Error::Domain(format!("AP {i}: W must have M columns")));
            }
            ap.validate().map_err(|e| Error::Domain(format!("AP {i}: {e}")))?;
        }
        Ok(())
    }

    /// Stable digest of all iterate bits.
    pub fn digest(&self) -> u64 {
        let mut d = Fnv64::new();
        for ap in &self.aps {
            for z in ap.w.iter().chain(ap.omega.iter()) {
                d.write_f64(z.re);
                d.write_f64(z.im);
            }
        }
        d.finish()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = SolutionFile::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SolutionFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

/// Text serialization of a [`Solution`]: per AP, row-major real and
/// imaginary parts of W (N×M) and Ω (N×N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub aps: Vec<ApProcessingFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApProcessingFile {
    pub w_re: Vec<Vec<f64>>,
    pub w_im: Vec<Vec<f64>>,
    pub omega_re: Vec<Vec<f64>>,
    pub omega_im: Vec<Vec<f64>>,
}

fn split_rows(m: &CMat) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let re = (0..m.nrows())
        .map(|r| m.row(r).iter().map(|z| z.re).collect())
        .collect();
    let im = (0..m.nrows())
        .map(|r| m.row(r).iter().map(|z| z.im).collect())
        .collect();
    (re, im)
}

fn join_rows(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<CMat> {
    let rows = re.len();
    let cols = re.first().map_or(0, Vec::len);
    if im.len() != rows || re.iter().chain(im).any(|r| r.len() != cols) {
        return Err(Error::Serde("ragged or mismatched real/imaginary arrays".into()));
    }
    Ok(CMat::from_fn(rows, cols, |r, k| c(re[r][k], im[r][k])))
}

impl From<&Solution> for SolutionFile {
    fn from(sol: &Solution) -> Self {
        let aps = sol
            .aps
            .iter()
            .map(|ap| {
                let (w_re, w_im) = split_rows(&ap.w);
                let (omega_re, omega_im) = split_rows(&ap.omega);
                ApProcessingFile {
                    w_re,
                    w_im,
                    omega_re,
                    omega_im,
                }
            })
            .collect();
        SolutionFile { aps }
    }
}

impl TryFrom<SolutionFile> for Solution {
    type Error = Error;

    fn try_from(file: SolutionFile) -> Result<Self> {
        let aps = file
            .aps
            .iter()
            .map(|ap| {
                Ok(ApProcessing::new(
                    join_rows(&ap.w_re, &ap.w_im)?,
                    join_rows(&ap.omega_re, &ap.omega_im)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Solution { aps })
    }
}

/// S_i = H_i P̄ H_iᴴ + σ_z² I for a local channel matrix (M×K).
pub fn local_covariance(h_i: &CMat, p: &[f64], sigma_z2: f64) -> CMat {
    let m = h_i.nrows();
    let mut scaled = h_i.clone();
    for (k, &pk) in p.iter().enumerate() {
        let s = c(pk, 0.0);
        scaled.column_mut(k).iter_mut().for_each(|z| *z *= s);
    }
    let mut s = scaled * h_i.adjoint();
    for d in 0..m {
        s[(d, d)] += c(sigma_z2, 0.0);
    }
    linalg::hermitized(s)
}

pub fn received_covariance(chan: &ChannelRealization, i: usize) -> CMat {
    local_covariance(&chan.h[i], &chan.p, chan.sigma_z2)
}

/// log2 det(Q + Ω) − log2 det(Ω) where Q = W S Wᴴ; +∞ when Ω is singular.
pub fn fronthaul_usage_from(wsw: &CMat, omega: &CMat) -> f64 {
    let Some(ld_omega) = linalg::logdet_hpd(omega) else {
        return f64::INFINITY;
    };
    match linalg::logdet_hpd(&(wsw + omega)) {
        Some(ld_total) => ((ld_total - ld_omega) / std::f64::consts::LN_2).max(0.0),
        None => f64::INFINITY,
    }
}

/// Left-hand side of the per-AP fronthaul constraint, bits/s/Hz.
pub fn fronthaul_usage(sol: &Solution, chan: &ChannelRealization, i: usize) -> f64 {
    let s = received_covariance(chan, i);
    let ap = &sol.aps[i];
    fronthaul_usage_from(&(&ap.w * s * ap.w.adjoint()), &ap.omega)
}

/// Largest positive excess of fronthaul usage over `c_f` across APs.
pub fn max_fronthaul_violation(sol: &Solution, chan: &ChannelRealization, c_f: f64) -> f64 {
    (0..sol.aps.len())
        .map(|i| fronthaul_usage(sol, chan, i) - c_f)
        .fold(0.0, f64::max)
}

/// What AP i reports to the CPU: {W_i h_{i,k}} as the columns of an N×K
/// matrix, W_i W_iᴴ and Ω_i.
#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub wh: CMat,
    pub wwh: CMat,
    pub omega: CMat,
}

impl ApReport {
    pub fn from_local(w: &CMat, omega: &CMat, h_i: &CMat) -> Self {
        Self {
            wh: w * h_i,
            wwh: linalg::hermitized(w * w.adjoint()),
            omega: omega.clone(),
        }
    }
}

pub fn reports_for(sol: &Solution, chan: &ChannelRealization) -> Vec<ApReport> {
    sol.aps
        .iter()
        .zip(&chan.h)
        .map(|(ap, h)| ApReport::from_local(&ap.w, &ap.omega, h))
        .collect()
}

/// The stacked CPU-side model built from AP reports: effective channels
/// W̄h_k and the total covariance C = Σ_k p_k W̄h_k h_kᴴW̄ᴴ + σ²W̄W̄ᴴ + Ω̄.
#[derive(Debug, Clone)]
pub struct StackedModel {
    /// Column k is W̄h_k (length L·N).
    pub eff: CMat,
    pub total_cov: CMat,
    pub p: Vec<f64>,
    pub n: usize,
}

/// SINR of one UE and whether a pseudo-inverse was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinr {
    pub value: f64,
    pub pinv_used: bool,
}

/// Rate of one UE, bits/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRate {
    pub bits: f64,
    pub pinv_used: bool,
}

impl StackedModel {
    pub fn from_reports(reports: &[ApReport], p: &[f64], sigma_z2: f64) -> Self {
        let n = reports.first().map_or(0, |r| r.wh.nrows());
        let ln = n * reports.len();
        let k = p.len();
        let mut eff = CMat::zeros(ln, k);
        let mut total = CMat::zeros(ln, ln);
        for (i, r) in reports.iter().enumerate() {
            eff.view_mut((i * n, 0), (n, k)).copy_from(&r.wh);
            let block = &r.wwh * c(sigma_z2, 0.0) + &r.omega;
            total.view_mut((i * n, i * n), (n, n)).copy_from(&block);
        }
        for (kk, &pk) in p.iter().enumerate() {
            let a = eff.column(kk);
            total += (a * a.adjoint()) * c(pk, 0.0);
        }
        linalg::hermitize(&mut total);
        Self {
            eff,
            total_cov: total,
            p: p.to_vec(),
            n,
        }
    }

    pub fn num_ues(&self) -> usize {
        self.p.len()
    }

    /// C_IF,k: total covariance minus UE k's own contribution.
    pub fn interference_cov(&self, k: usize) -> CMat {
        let a = self.eff.column(k);
        let mut cif = &self.total_cov - (a * a.adjoint()) * c(self.p[k], 0.0);
        linalg::hermitize(&mut cif);
        cif
    }

    /// γ_k = p_k (W̄h_k)ᴴ C_IF,k⁻¹ W̄h_k, pseudo-inverting if C_IF,k is singular.
    pub fn sinr(&self, k: usize) -> Sinr {
        let a: CVec = self.eff.column(k).into_owned();
        let cif = self.interference_cov(k);
        match linalg::cholesky(&cif) {
            Some(ch) => {
                let x = ch.solve(&a);
                Sinr {
                    value: (self.p[k] * a.dotc(&x).re).max(0.0),
                    pinv_used: false,
                }
            }
            None => {
                let x = linalg::pinv_hermitian(&cif, PINV_TOL) * &a;
                Sinr {
                    value: (self.p[k] * a.dotc(&x).re).max(0.0),
                    pinv_used: true,
                }
            }
        }
    }

    pub fn user_rate(&self, k: usize) -> UserRate {
        let s = self.sinr(k);
        UserRate {
            bits: s.value.ln_1p() / std::f64::consts::LN_2,
            pinv_used: s.pinv_used,
        }
    }

    pub fn sum_rate(&self) -> f64 {
        (0..self.num_ues()).map(|k| self.user_rate(k).bits).sum()
    }
}

pub fn stacked_model(sol: &Solution, chan: &ChannelRealization) -> StackedModel {
    StackedModel::from_reports(&reports_for(sol, chan), &chan.p, chan.sigma_z2)
}

/// R_k in bits/s/Hz.
pub fn user_rate(sol: &Solution, chan: &ChannelRealization, k: usize) -> UserRate {
    stacked_model(sol, chan).user_rate(k)
}

/// Σ_k R_k in bits/s/Hz.
pub fn sum_rate(sol: &Solution, chan: &ChannelRealization) -> f64 {
    stacked_model(sol, chan).sum_rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_chan(h: f64, p: f64, s2: f64) -> ChannelRealization {
        ChannelRealization {
            h: vec![CMat::from_element(1, 1, c(h, 0.0))],
            beta_lin: vec![vec![1.0]],
            p: vec![p],
            sigma_z2: s2,
        }
    }

    fn scalar_sol(w: f64, omega: f64) -> Solution {
        Solution::new(vec![ApProcessing::new(
            CMat::from_element(1, 1, c(w, 0.0)),
            CMat::from_element(1, 1, c(omega, 0.0)),
        )])
    }

    pub(crate) fn random_instance(seed: u64, k: usize, l: usize, m: usize, n: usize) -> (ChannelRealization, Solution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<CMat> = (0..l).map(|_| randn_c(&mut rng, m, k)).collect();
        let p: Vec<f64> = (0..k).map(|kk| 0.5 + kk as f64 * 0.3).collect();
        let chan = ChannelRealization {
            h,
            beta_lin: vec![vec![1.0; k]; l],
            p,
            sigma_z2: 0.7,
        };
        let aps = (0..l)
            .map(|_| ApProcessing::new(randn_c(&mut rng, n, m), random_hpd(&mut rng, n, 0.2)))
            .collect();
        (chan, Solution::new(aps))
    }

    #[test]
    fn covariance_scalar_and_zero_channel() {
        let chan = scalar_chan(1.0, 1.0, 1.0);
        assert!((received_covariance(&chan, 0)[(0, 0)] - c(2.0, 0.0)).norm() < 1e-15);

        let zero = ChannelRealization {
            h: vec![CMat::zeros(3, 2)],
            beta_lin: vec![vec![1.0; 2]],
            p: vec![1.0, 2.0],
            sigma_z2: 0.5,
        };
        let s = received_covariance(&zero, 0);
        assert!((s - CMat::identity(3, 3) * c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn covariance_matches_per_user_accumulation() {
        let (chan, _) = random_instance(4, 3, 1, 4, 2);
        let mut acc = CMat::identity(4, 4) * c(chan.sigma_z2, 0.0);
        for k in 0..3 {
            let h = chan.h_ik(0, k);
            acc += (h * h.adjoint()) * c(chan.p[k], 0.0);
        }
        assert!((received_covariance(&chan, 0) - acc).norm() < 1e-12);
    }

    #[test]
    fn usage_scalar_cases() {
        // N=M=1, W=1, S=3, Ω=1 → log2(4) = 2
        let chan = scalar_chan(2f64.sqrt(), 1.0, 1.0);
        assert!((fronthaul_usage(&scalar_sol(1.0, 1.0), &chan, 0) - 2.0).abs() < 1e-12);
        assert_eq!(fronthaul_usage(&scalar_sol(0.0, 0.3), &chan, 0), 0.0);
        assert_eq!(fronthaul_usage(&scalar_sol(1.0, 0.0), &chan, 0), f64::INFINITY);
    }

    #[test]
    fn usage_matches_eigenvalue_products() {
        let (chan, sol) = random_instance(8, 3, 2, 5, 2);
        let s = received_covariance(&chan, 1);
        let ap = &sol.aps[1];
        let (num, _) = linalg::eigh_desc(&(&ap.w * &s * ap.w.adjoint() + &ap.omega));
        let (den, _) = linalg::eigh_desc(&ap.omega);
        let oracle = (num.iter().product::<f64>() / den.iter().product::<f64>()).log2();
        assert!((fronthaul_usage(&sol, &chan, 1) - oracle).abs() < 1e-9);
    }

    #[test]
    fn scalar_rate() {
        let chan = scalar_chan(1.0, 1.0, 1.0);
        let r = user_rate(&scalar_sol(1.0, 1.0), &chan, 0);
        assert!((r.bits - 1.5f64.log2()).abs() < 1e-12);
        assert!(!r.pinv_used);
    }

    #[test]
    fn zero_transform_gives_zero_rate() {
        let (chan, mut sol) = random_instance(2, 3, 2, 4, 2);
        for ap in &mut sol.aps {
            ap.w.fill(c(0.0, 0.0));
        }
        assert_eq!(sum_rate(&sol, &chan), 0.0);
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let (mut chan, sol) = random_instance(2, 3, 2, 4, 2);
        chan.p.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(sum_rate(&sol, &chan), 0.0);
    }

    #[test]
    fn single_ue_sum_equals_user_rate() {
        let (chan, sol) = random_instance(6, 1, 2, 4, 2);
        assert!((sum_rate(&sol, &chan) - user_rate(&sol, &chan, 0).bits).abs() < 1e-15);
    }

    /// Determinant-lemma oracle assembled from an explicit block-diagonal W̄.
    fn rate_by_determinants(sol: &Solution, chan: &ChannelRealization, k: usize) -> f64 {
        let (l, m, n) = (chan.num_aps(), chan.antennas(), sol.aps[0].w.nrows());
        let mut wbar = CMat::zeros(l * n, l * m);
        let mut obar = CMat::zeros(l * n, l * n);
        for i in 0..l {
            wbar.view_mut((i * n, i * m), (n, m)).copy_from(&sol.aps[i].w);
            obar.view_mut((i * n, i * n), (n, n)).copy_from(&sol.aps[i].omega);
        }
        let stack = |kk: usize| {
            let mut v = CVec::zeros(l * m);
            for i in 0..l {
                v.rows_mut(i * m, m).copy_from(&chan.h_ik(i, kk));
            }
            &wbar * v
        };
        let mut cif = &wbar * wbar.adjoint() * c(chan.sigma_z2, 0.0) + obar;
        for kk in 0..chan.num_ues() {
            if kk != k {
                let a = stack(kk);
                cif += (&a * a.adjoint()) * c(chan.p[kk], 0.0);
            }
        }
        let a = stack(k);
        let full = &cif + (&a * a.adjoint()) * c(chan.p[k], 0.0);
        (linalg::logdet_hpd(&full).unwrap() - linalg::logdet_hpd(&cif).unwrap()) / std::f64::consts::LN_2
    }

    #[test]
    fn rate_matches_determinant_lemma() {
        for seed in 0..20 {
            let (chan, sol) = random_instance(seed, 3, 2, 4, 2);
            for k in 0..3 {
                let r = user_rate(&sol, &chan, k).bits;
                assert!(
                    (r - rate_by_determinants(&sol, &chan, k)).abs() < 1e-9,
                    "seed {seed} k {k}"
                );
            }
        }
    }

    #[test]
    fn singular_interference_uses_pseudo_inverse() {
        // Ω = 0 and σ² tiny with K=1: C_IF = σ²WWᴴ is singular when W has a zero row.
        let chan = ChannelRealization {
            h: vec![CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.5, 0.0)])],
            beta_lin: vec![vec![1.0]],
            p: vec![1.0],
            sigma_z2: 1.0,
        };
        let w = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let sol = Solution::new(vec![ApProcessing::new(w, CMat::zeros(2, 2))]);
        let r = user_rate(&sol, &chan, 0);
        assert!(r.pinv_used);
        assert!((r.bits - 2f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn usage_invariant_under_unitary_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..10 {
            let (chan, sol) = random_instance(seed, 3, 2, 5, 3);
            let u = random_unitary(&mut rng, 3);
            let mut rot = sol.clone();
            rot.aps[0].w = &u * &sol.aps[0].w;
            rot.aps[0].omega = linalg::hermitized(&u * &sol.aps[0].omega * u.adjoint());
            let d = fronthaul_usage(&sol, &chan, 0) - fronthaul_usage(&rot, &chan, 0);
            assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn sum_rate_invariant_under_per_ap_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for seed in 0..10 {
            let (chan, sol) = random_instance(seed, 4, 3, 5, 2);
            let mut rot = sol.clone();
            for ap in &mut rot.aps {
                let u = random_unitary(&mut rng, 2);
                ap.w = &u * &ap.w;
                ap.omega = linalg::hermitized(&u * &ap.omega * u.adjoint());
            }
            assert!((sum_rate(&sol, &chan) - sum_rate(&rot, &chan)).abs() < 1e-8);
        }
    }

    #[test]
    fn shrinking_quantization_noise_never_hurts() {
        for seed in 0..20 {
            let (chan, sol) = random_instance(seed, 3, 2, 4, 2);
            let mut less = sol.clone();
            let eps = 0.5 * linalg::min_eigenvalue(&sol.aps[1].omega);
            less.aps[1].omega -= CMat::identity(2, 2) * c(eps, 0.0);
            for k in 0..3 {
                assert!(user_rate(&less, &chan, k).bits >= user_rate(&sol, &chan, k).bits - 1e-12);
            }
        }
    }

    #[test]
    fn validate_rejects_non_psd_omega() {
        let ap = ApProcessing::new(CMat::identity(1, 2), CMat::from_element(1, 1, c(-1.0, 0.0)));
        assert!(ap.validate().is_err());
        let ap = ApProcessing::new(
            CMat::identity(2, 2),
            CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]),
        );
        assert!(ap.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let (_, sol) = random_instance(3, 2, 2, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.json");
        sol.save_json(&path).unwrap();
        assert_eq!(Solution::load_json(&path).unwrap(), sol);
    }
}
