//! Closed-form auxiliary updates and the quadratic-transform surrogate.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::scenario::ChannelRealization;
use crate::sigmodel::{self, ApReport, Solution, StackedModel};

/// FP auxiliaries: SINR-like weights γ, combiners θ and Fenchel points Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    pub gamma: Vec<f64>,
    /// L·N × K; column k is θ_k and rows i·N..(i+1)·N hold θ_{i,k}.
    pub theta: CMat,
    pub sigma: Vec<CMat>,
}

impl AuxState {
    /// N×K block of θ belonging to AP i.
    pub fn theta_block(&self, i: usize, n: usize) -> CMat {
        theta_block(&self.theta, i, n)
    }
}

pub(crate) fn theta_block(theta: &CMat, i: usize, n: usize) -> CMat {
    theta.view((i * n, 0), (n, theta.ncols())).into_owned()
}

/// The CPU half of the aux update: γ and θ from the stacked model alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuAux {
    pub gamma: Vec<f64>,
    pub theta: CMat,
}

pub fn cpu_aux(model: &StackedModel) -> Result<CpuAux> {
    let k_total = model.num_ues();
    let chol = linalg::cholesky(&model.total_cov)
        .ok_or_else(|| Error::Numerical("stacked covariance of the quantized signal is singular".into()))?;
    let mut theta = CMat::zeros(model.eff.nrows(), k_total);
    let mut gamma = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let a = model.eff.column(k).into_owned();
        let x = chol.solve(&a) * c(model.p[k].sqrt(), 0.0);
        theta.set_column(k, &x);
        let cif = model.interference_cov(k);
        let ch = linalg::cholesky(&cif)
            .ok_or_else(|| Error::Numerical(format!("interference covariance of UE {k} is singular")))?;
        gamma.push((model.p[k] * a.dotc(&ch.solve(&a)).re).max(0.0));
    }
    Ok(CpuAux { gamma, theta })
}

/// Σ_i = W_i S_i W_iᴴ + Ω_i.
pub fn local_sigma(w: &CMat, s: &CMat, omega: &CMat) -> CMat {
    linalg::hermitized(w * s * w.adjoint() + omega)
}

pub fn update_aux(sol: &Solution, chan: &ChannelRealization) -> Result<AuxState> {
    let model = sigmodel::stacked_model(sol, chan);
    let CpuAux { gamma, theta } = cpu_aux(&model)?;
    let mut sigma = Vec::with_capacity(sol.aps.len());
    for (i, ap) in sol.aps.iter().enumerate() {
        let s = sigmodel::received_covariance(chan, i);
        let sig = local_sigma(&ap.w, &s, &ap.omega);
        if linalg::cholesky(&sig).is_none() {
            return Err(Error::Numerical(format!("Sigma of AP {i} is not positive definite")));
        }
        sigma.push(sig);
    }
    Ok(AuxState { gamma, theta, sigma })
}

/// Quadratic-transform objective in bits/s/Hz for arbitrary auxiliaries.
pub fn surrogate_objective(sol: &Solution, chan: &ChannelRealization, aux: &AuxState) -> f64 {
    let reports: Vec<ApReport> = sigmodel::reports_for(sol, chan);
    let model = StackedModel::from_reports(&reports, &chan.p, chan.sigma_z2);
    let n = model.n;
    let ln = model.eff.nrows();
    let mut wwh = CMat::zeros(ln, ln);
    let mut omega = CMat::zeros(ln, ln);
    for (i, r) in reports.iter().enumerate() {
        wwh.view_mut((i * n, i * n), (n, n)).copy_from(&r.wwh);
        omega.view_mut((i * n, i * n), (n, n)).copy_from(&r.omega);
    }
    let mut total = 0.0;
    for (k, &g) in aux.gamma.iter().enumerate() {
        let th = aux.theta.column(k);
        let a = model.eff.column(k);
        let mut quad = 2.0 * (a.dotc(&th) * c(chan.p[k].sqrt(), 0.0)).re;
        for (kk, &pk) in chan.p.iter().enumerate() {
            quad -= pk * th.dotc(&model.eff.column(kk)).norm_sqr();
        }
        quad -= chan.sigma_z2 * th.dotc(&(&wwh * th)).re;
        quad -= th.dotc(&(&omega * th)).re;
        total += g.ln_1p() / LN_2 - g / LN_2 + (1.0 + g) / LN_2 * quad;
    }
    total
}

/// ln det Σ + tr(Σ⁻¹(W S Wᴴ + Ω)) − N − ln det Ω, the Fenchel-bounded
/// fronthaul term in nats.
pub fn fenchel_constraint_lhs(w: &CMat, omega: &CMat, s: &CMat, sigma: &CMat) -> Result<f64> {
    let n = w.nrows() as f64;
    let sigma_inv = linalg::inverse_hpd(sigma).ok_or_else(|| Error::Numerical("Sigma is singular".into()))?;
    let ld_sigma = linalg::logdet_hpd(sigma).ok_or_else(|| Error::Numerical("Sigma is singular".into()))?;
    let Some(ld_omega) = linalg::logdet_hpd(omega) else {
        return Ok(f64::INFINITY);
    };
    let inner = w * s * w.adjoint() + omega;
    Ok(ld_sigma + linalg::trace_of_product(&sigma_inv, &inner).re - n - ld_omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use crate::sigmodel::ApProcessing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_instance(seed: u64, k: usize, l: usize, m: usize, n: usize) -> (ChannelRealization, Solution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<CMat> = (0..l).map(|_| randn_c(&mut rng, m, k)).collect();
        let chan = ChannelRealization {
            h,
            beta_lin: vec![vec![1.0; k]; l],
            p: (0..k).map(|kk| 0.4 + 0.25 * kk as f64).collect(),
            sigma_z2: 0.6,
        };
        let aps = (0..l)
            .map(|_| ApProcessing::new(randn_c(&mut rng, n, m), random_hpd(&mut rng, n, 0.3)))
            .collect();
        (chan, Solution::new(aps))
    }

    fn scalar() -> (ChannelRealization, Solution) {
        let chan = ChannelRealization {
            h: vec![CMat::from_element(1, 1, c(1.0, 0.0))],
            beta_lin: vec![vec![1.0]],
            p: vec![1.0],
            sigma_z2: 1.0,
        };
        let sol = Solution::new(vec![ApProcessing::new(
            CMat::from_element(1, 1, c(1.0, 0.0)),
            CMat::from_element(1, 1, c(1.0, 0.0)),
        )]);
        (chan, sol)
    }

    #[test]
    fn scalar_aux_values() {
        let (chan, sol) = scalar();
        let aux = update_aux(&sol, &chan).unwrap();
        assert!((aux.gamma[0] - 0.5).abs() < 1e-15);
        assert!((aux.theta[(0, 0)] - c(1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((aux.sigma[0][(0, 0)] - c(3.0, 0.0)).norm() < 1e-15);
        // surrogate at the optimal aux: log2(1.5) after the −γ/ln2 and quadratic terms cancel
        assert!((surrogate_objective(&sol, &chan, &aux) - 1.5f64.log2()).abs() < 1e-14);
    }

    #[test]
    fn zero_transform_aux() {
        let (chan, mut sol) = random_instance(1, 3, 2, 4, 2);
        for ap in &mut sol.aps {
            ap.w.fill(c(0.0, 0.0));
        }
        let aux = update_aux(&sol, &chan).unwrap();
        assert!(aux.gamma.iter().all(|&g| g == 0.0));
        assert!(aux.theta.iter().all(|z| z.norm() == 0.0));
        for (s, ap) in aux.sigma.iter().zip(&sol.aps) {
            assert!((s - &ap.omega).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_aux_gives_zero_surrogate() {
        let (chan, sol) = random_instance(2, 3, 2, 4, 2);
        let mut aux = update_aux(&sol, &chan).unwrap();
        aux.gamma.iter_mut().for_each(|g| *g = 0.0);
        aux.theta.fill(c(0.0, 0.0));
        assert_eq!(surrogate_objective(&sol, &chan, &aux), 0.0);
    }

    #[test]
    fn gamma_is_the_rate_sinr() {
        for seed in 0..10 {
            let (chan, sol) = random_instance(seed, 4, 3, 5, 2);
            let aux = update_aux(&sol, &chan).unwrap();
            for k in 0..4 {
                let r = sigmodel::user_rate(&sol, &chan, k).bits;
                assert!((r - aux.gamma[k].ln_1p() / LN_2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn surrogate_is_tight_and_an_upper_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..20 {
            let (chan, sol) = random_instance(seed, 3, 2, 6, 2);
            let aux = update_aux(&sol, &chan).unwrap();
            let rate = sigmodel::sum_rate(&sol, &chan);
            assert!((surrogate_objective(&sol, &chan, &aux) - rate).abs() < 1e-8);
            let mut off = aux.clone();
            off.theta += randn_c(&mut rng, off.theta.nrows(), off.theta.ncols()) * c(0.05, 0.0);
            assert!(surrogate_objective(&sol, &chan, &off) < rate);
            let mut off = aux.clone();
            off.gamma.iter_mut().for_each(|g| *g *= 1.3);
            assert!(surrogate_objective(&sol, &chan, &off) < rate);
        }
    }

    #[test]
    fn fenchel_bound_is_tight_at_the_optimal_sigma() {
        for seed in 0..10 {
            let (chan, sol) = random_instance(seed, 3, 2, 5, 2);
            let aux = update_aux(&sol, &chan).unwrap();
            for i in 0..2 {
                let s = sigmodel::received_covariance(&chan, i);
                let ap = &sol.aps[i];
                let lhs = fenchel_constraint_lhs(&ap.w, &ap.omega, &s, &aux.sigma[i]).unwrap();
                let usage = sigmodel::fronthaul_usage(&sol, &chan, i);
                assert!((lhs - LN_2 * usage).abs() < 1e-9);
                // any other Σ gives an upper bound
                let other = &aux.sigma[i] * c(1.7, 0.0);
                assert!(fenchel_constraint_lhs(&ap.w, &ap.omega, &s, &other).unwrap() > lhs);
            }
        }
    }
}
