//! Local-CSI reference designs and the uniform diagonal quantization rule.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::scenario::{draw_fading, ChannelRealization};
use crate::sigmodel::{self, ApProcessing, Solution};

/// Floor for a zero quantization variance, relative to σ_z².
pub const OMEGA_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Evd,
    Mf,
    Random,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Evd => "evd",
            BaselineKind::Mf => "mf",
            BaselineKind::Random => "random",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "evd" => Ok(BaselineKind::Evd),
            "mf" => Ok(BaselineKind::Mf),
            "random" => Ok(BaselineKind::Random),
            other => Err(Error::Config(format!("unknown baseline '{other}'"))),
        }
    }
}

/// Rows are the N leading eigenvectors (conjugated) of S_i, each phased so
/// its largest-magnitude entry is real and positive.
pub fn local_evd(chan: &ChannelRealization, i: usize, n: usize) -> Result<CMat> {
    let m = chan.antennas();
    if n == 0 || n > m {
        return Err(Error::Config(format!("Local EVD needs 1 <= N <= M (N={n}, M={m})")));
    }
    let s = sigmodel::received_covariance(chan, i);
    let (vals, vecs) = linalg::eigh_desc(&s);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("eigendecomposition of S at AP {i} failed")));
    }
    let mut w = CMat::zeros(n, m);
    for r in 0..n {
        let mut u = vecs.column(r).into_owned();
        let pivot = u
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(c(1.0, 0.0));
        if pivot.norm() > 0.0 {
            u *= pivot.conj() / pivot.norm();
        }
        w.set_row(r, &u.adjoint());
    }
    Ok(w)
}

/// Indices of the N UEs with the largest p_k‖h_{i,k}‖², ties to the lower index.
pub fn strongest_ues(chan: &ChannelRealization, i: usize, n: usize) -> Vec<usize> {
    let gains: Vec<f64> = (0..chan.num_ues())
        .map(|k| chan.p[k] * chan.h_ik(i, k).norm_squared())
        .collect();
    let mut order: Vec<usize> = (0..gains.len()).collect();
    // stable sort keeps lower indices first among equal gains
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    order.truncate(n);
    order
}

/// Partial matched filter: row n is h_{i,k_n}ᴴ for the n-th strongest UE.
pub fn local_mf(chan: &ChannelRealization, i: usize, n: usize) -> Result<CMat> {
    if n == 0 || n > chan.num_ues() {
        return Err(Error::Config(format!(
            "Local MF needs 1 <= N <= K (N={n}, K={})",
            chan.num_ues()
        )));
    }
    let picks = strongest_ues(chan, i, n);
    let mut w = CMat::zeros(n, chan.antennas());
    for (r, &k) in picks.iter().enumerate() {
        w.set_row(r, &chan.h_ik(i, k).adjoint());
    }
    Ok(w)
}

/// I.i.d. CN(0, 1) transform, drawn from an AP-specific stream of `seed`.
pub fn local_random(n: usize, m: usize, seed: u64, i: usize) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    draw_fading(&mut rng, n, m)
}

/// Ω_i = diag(ω_n), ω_n = w_nᴴ S_i w_n / (2^{C_F/N} − 1).
pub fn uniform_quantization(w: &CMat, chan: &ChannelRealization, i: usize, c_f: f64) -> Result<CMat> {
    if !(c_f > 0.0) {
        return Err(Error::Domain(format!("uniform quantization needs C_F > 0, got {c_f}")));
    }
    let s = sigmodel::received_covariance(chan, i);
    Ok(uniform_quantization_with(w, &s, c_f, chan.sigma_z2))
}

pub(crate) fn uniform_quantization_with(w: &CMat, s: &CMat, c_f: f64, sigma_z2: f64) -> CMat {
    let n = w.nrows();
    let denom = (c_f / n as f64).exp2() - 1.0;
    let floor = OMEGA_FLOOR_REL * sigma_z2;
    let mut omega = CMat::zeros(n, n);
    for r in 0..n {
        let row = w.row(r);
        let energy = (row * s * row.adjoint())[(0, 0)].re;
        let mut v = energy / denom;
        if !(v > 0.0) {
            log::warn!("row {r} of the transform carries no energy; flooring its quantization variance");
            v = floor;
        }
        omega[(r, r)] = c(v, 0.0);
    }
    omega
}

/// A full baseline solution: transform by `kind`, Ω by the uniform rule.
pub fn baseline_solution(
    kind: BaselineKind,
    chan: &ChannelRealization,
    n: usize,
    c_f: f64,
    seed: u64,
) -> Result<Solution> {
    let aps = (0..chan.num_aps())
        .map(|i| {
            let w = match kind {
                BaselineKind::Evd => local_evd(chan, i, n)?,
                BaselineKind::Mf => local_mf(chan, i, n)?,
                BaselineKind::Random => local_random(n, chan.antennas(), seed, i),
            };
            let omega = uniform_quantization(&w, chan, i, c_f)?;
            Ok(ApProcessing::new(w, omega))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Solution::new(aps))
}
