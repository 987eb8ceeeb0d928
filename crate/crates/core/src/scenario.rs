//! Random deployments and channel realizations.
//!
//! Powers are kept in linear watts throughout (transmit power and noise power
//! share the unit, so every SINR is unit-free). Distances are 2-D meters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Rejection-sampling cap per UE when enforcing the minimum AP distance.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

/// Scenario constants. Config keys equal the serde names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    #[serde(rename = "K")]
    pub num_ues: usize,
    #[serde(rename = "L")]
    pub num_aps: usize,
    /// Antennas per AP.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Reduced dimension after the per-AP transform.
    #[serde(rename = "N")]
    pub reduced_dim: usize,
    /// Fronthaul capacity per AP, bits/s/Hz.
    #[serde(rename = "C_F")]
    pub fronthaul_capacity: f64,
    #[serde(rename = "fc")]
    pub carrier_hz: f64,
    #[serde(rename = "bandwidth")]
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub area_radius_m: f64,
    pub min_dist_m: f64,
    pub shadowing_sigma_db: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_ues: 8,
            num_aps: 4,
            antennas: 100,
            reduced_dim: 2,
            fronthaul_capacity: 4.0,
            carrier_hz: 3.5e9,
            bandwidth_hz: 2e7,
            tx_power_dbm: 23.0,
            noise_psd_dbm_hz: -169.0,
            area_radius_m: 100.0,
            min_dist_m: 10.0,
            shadowing_sigma_db: 8.1,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Domain(msg.to_string()));
        if self.num_ues == 0 {
            return fail("K must be at least 1");
        }
        if self.num_aps == 0 {
            return fail("L must be at least 1");
        }
        if self.reduced_dim == 0 || self.reduced_dim > self.antennas {
            return fail("require 1 <= N <= M");
        }
        if !(self.fronthaul_capacity > 0.0) {
            return fail("C_F must be positive");
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail("bandwidth must be positive");
        }
        if !(self.carrier_hz > 0.0) {
            return fail("fc must be positive");
        }
        if !(self.min_dist_m >= 0.0 && self.area_radius_m > self.min_dist_m) {
            return fail("require area_radius_m > min_dist_m >= 0");
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return fail("shadowing_sigma_db must be non-negative");
        }
        let finite = [self.tx_power_dbm, self.noise_psd_dbm_hz, self.area_radius_m];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("non-finite power or geometry parameter");
        }
        Ok(())
    }

    /// Per-UE transmit power in watts.
    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
}

impl Placement {
    /// Distance from AP `i` to UE `k`.
    pub fn distance(&self, i: usize, k: usize) -> f64 {
        self.ap_positions[i].dist(&self.ue_positions[k])
    }
}

/// One channel draw: `h[i]` is the M×K matrix of AP i (column k = h_{i,k}).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<CMat>,
    /// Linear-scale attenuation β_{i,k} (≥ 1 for physical path loss).
    pub beta_lin: Vec<Vec<f64>>,
    /// Transmit powers, watts.
    pub p: Vec<f64>,
    /// Noise variance, watts.
    pub sigma_z2: f64,
}

impl ChannelRealization {
    pub fn num_aps(&self) -> usize {
        self.h.len()
    }

    pub fn num_ues(&self) -> usize {
        self.p.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    /// Channel vector h_{i,k}.
    pub fn h_ik(&self, i: usize, k: usize) -> nalgebra::DVectorView<'_, crate::linalg::C64> {
        self.h[i].column(k)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_ues();
        let m = self.antennas();
        if k == 0 || self.h.is_empty() || m == 0 {
            return Err(Error::Domain("empty channel realization".into()));
        }
        if self.h.iter().any(|h| h.nrows() != m || h.ncols() != k) {
            return Err(Error::Domain("channel matrices must all be M×K".into()));
        }
        if !self.sigma_z2.is_finite() || self.h.iter().any(|h| !crate::linalg::all_finite(h)) {
            return Err(Error::Domain("non-finite channel entry".into()));
        }
        if !(self.sigma_z2 > 0.0) {
            return Err(Error::Domain("noise variance must be positive".into()));
        }
        if self.p.iter().any(|&pk| !(pk > 0.0 && pk.is_finite())) {
            return Err(Error::Domain("transmit powers must be positive".into()));
        }
        if self.beta_lin.len() != self.h.len()
            || self
                .beta_lin
                .iter()
                .any(|row| row.len() != k || row.iter().any(|&b| !(b > 0.0 && b.is_finite())))
        {
            return Err(Error::Domain("attenuations must be L×K and positive".into()));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the channel bits, used to verify that paired
    /// schemes saw the same realization.
    pub fn digest(&self) -> u64 {
        let mut d = Fnv64::new();
        for h in &self.h {
            for z in h.iter() {
                d.write_f64(z.re);
                d.write_f64(z.im);
            }
        }
        for pk in &self.p {
            d.write_f64(*pk);
        }
        d.write_f64(self.sigma_z2);
        d.finish()
    }
}

/// FNV-1a over f64 bit patterns.
pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Close-in path loss in dB: 20·log10(4π·fc/c) + 31·log10(d) + shadowing.
pub fn path_loss_db(d_m: f64, fc_hz: f64, shadow_db: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(fc_hz > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs positive distance and frequency (d={d_m}, fc={fc_hz})"
        )));
    }
    Ok(20.0 * (4.0 * PI * fc_hz / SPEED_OF_LIGHT).log10() + 31.0 * d_m.log10() + shadow_db)
}

/// Noise power over the system bandwidth, watts.
pub fn noise_power(params: &SystemParams) -> f64 {
    dbm_to_watts(params.noise_psd_dbm_hz + 10.0 * params.bandwidth_hz.log10())
}

fn uniform_in_disc<R: Rng>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    Point {
        x: r * phi.cos(),
        y: r * phi.sin(),
    }
}

/// Uniform APs and UEs in the service disc; each UE is resampled until its
/// nearest AP is at least `min_dist_m` away.
pub fn draw_placement(params: &SystemParams, seed: u64) -> Result<Placement> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = params.area_radius_m;
    let ap_positions: Vec<Point> = (0..params.num_aps).map(|_| uniform_in_disc(&mut rng, radius)).collect();
    let mut ue_positions = Vec::with_capacity(params.num_ues);
    for k in 0..params.num_ues {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand = uniform_in_disc(&mut rng, radius);
            let nearest = ap_positions
                .iter()
                .map(|ap| ap.dist(&cand))
                .fold(f64::INFINITY, f64::min);
            if nearest >= params.min_dist_m {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(p) => ue_positions.push(p),
            None => {
                return Err(Error::Generation(format!(
                    "UE {k}: no position at least {} m from every AP after {MAX_PLACEMENT_ATTEMPTS} attempts",
                    params.min_dist_m
                )))
            }
        }
    }
    Ok(Placement {
        ap_positions,
        ue_positions,
    })
}

/// Builds a realization from path losses (dB) and unit-variance fading:
/// h_{i,k} = β_{i,k}^{-1/2} · h̃_{i,k} with β converted to linear scale.
pub fn assemble_channel(
    beta_db: &[Vec<f64>],
    fading: &[CMat],
    p: Vec<f64>,
    sigma_z2: f64,
) -> Result<ChannelRealization> {
    if beta_db.len() != fading.len() {
        return Err(Error::Domain("path-loss and fading AP counts differ".into()));
    }
    let mut h = Vec::with_capacity(fading.len());
    let mut beta_lin = Vec::with_capacity(fading.len());
    for (row_db, f) in beta_db.iter().zip(fading) {
        if row_db.len() != f.ncols() {
            return Err(Error::Domain("path-loss and fading UE counts differ".into()));
        }
        let row: Vec<f64> = row_db.iter().map(|&b| db_to_linear(b)).collect();
        let mut hi = f.clone();
        for (k, &b) in row.iter().enumerate() {
            let scale = c(b.sqrt().recip(), 0.0);
            hi.column_mut(k).iter_mut().for_each(|z| *z *= scale);
        }
        h.push(hi);
        beta_lin.push(row);
    }
    let chan = ChannelRealization {
        h,
        beta_lin,
        p,
        sigma_z2,
    };
    chan.validate()?;
    Ok(chan)
}

/// CN(0, I) fading matrix of shape rows×cols.
pub fn draw_fading<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re * s, im * s)
    })
}

/// Draws shadowing (i.i.d. per link) and Rayleigh fading for `placement`.
pub fn draw_channel(params: &SystemParams, placement: &Placement, seed: u64) -> Result<ChannelRealization> {
    params.validate()?;
    if placement.ap_positions.len() != params.num_aps || placement.ue_positions.len() != params.num_ues {
        return Err(Error::Domain("placement does not match K/L".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, params.shadowing_sigma_db)
        .map_err(|e| Error::Domain(format!("shadowing distribution: {e}")))?;
    let mut beta_db = vec![vec![0.0; params.num_ues]; params.num_aps];
    for (i, row) in beta_db.iter_mut().enumerate() {
        for (k, b) in row.iter_mut().enumerate() {
            let chi = rng.sample(shadow);
            *b = path_loss_db(placement.distance(i, k), params.carrier_hz, chi)?;
        }
    }
    // Separate stream so the fading draw does not depend on the shadowing draw.
    rng.set_stream(1);
    let fading: Vec<CMat> = (0..params.num_aps)
        .map(|_| draw_fading(&mut rng, params.antennas, params.num_ues))
        .collect();
    let p = vec![params.tx_power_w(); params.num_ues];
    assemble_channel(&beta_db, &fading, p, noise_power(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn path_loss_reference_values() {
        // 20·log10(4π·3.5e9/c) evaluated independently (python, math.log10).
        assert!((path_loss_db(10.0, 3.5e9, 0.0).unwrap() - 74.329_144).abs() < 0.01);
        assert!((path_loss_db(100.0, 3.5e9, 0.0).unwrap() - 105.329_144).abs() < 0.01);
        let base = 20.0 * (4.0 * PI * 3.5e9 / SPEED_OF_LIGHT).log10();
        assert!((path_loss_db(1.0, 3.5e9, 5.0).unwrap() - (base + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn path_loss_domain_errors() {
        assert!(path_loss_db(0.0, 3.5e9, 0.0).is_err());
        assert!(path_loss_db(-1.0, 3.5e9, 0.0).is_err());
        assert!(path_loss_db(10.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_power_reference() {
        let p = SystemParams::default();
        let dbm = linear_to_db(noise_power(&p)) + 30.0;
        assert!((dbm - (-95.989_700)).abs() < 0.01);

        let one_hz = SystemParams {
            bandwidth_hz: 1.0,
            ..p.clone()
        };
        assert!((linear_to_db(noise_power(&one_hz)) + 30.0 - (-169.0)).abs() < 1e-9);

        let doubled = SystemParams {
            bandwidth_hz: 4e7,
            ..p.clone()
        };
        let gain = linear_to_db(noise_power(&doubled) / noise_power(&p));
        assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn placement_is_deterministic() {
        let p = SystemParams::default();
        assert_eq!(draw_placement(&p, 42).unwrap(), draw_placement(&p, 42).unwrap());
        assert_ne!(draw_placement(&p, 42).unwrap(), draw_placement(&p, 43).unwrap());
    }

    #[test]
    fn placement_without_min_distance() {
        let p = SystemParams {
            min_dist_m: 0.0,
            ..SystemParams::default()
        };
        let pl = draw_placement(&p, 5).unwrap();
        assert_eq!(pl.ue_positions.len(), p.num_ues);
    }

    #[test]
    fn placement_degenerate_geometry_errors() {
        // a single AP at the center of a 100 m disc cannot keep every UE 99.9 m away
        // with high probability; use many APs to make it impossible.
        let p = SystemParams {
            num_aps: 64,
            min_dist_m: 99.0,
            ..SystemParams::default()
        };
        assert!(matches!(draw_placement(&p, 1), Err(Error::Generation(_))));
    }

    #[test]
    fn uniform_disc_second_moment() {
        // E‖x‖² = R²/2 for a uniform disc.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| uniform_in_disc(&mut rng, 100.0).norm().powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((mean / 5000.0 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn unit_attenuation_gives_unit_gain_per_antenna() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 16;
        let trials = 10_000;
        for (db, expect) in [(0.0, m as f64), (10.0, m as f64 / 10.0)] {
            let fading: Vec<CMat> = (0..1).map(|_| draw_fading(&mut rng, m, trials)).collect();
            let chan = assemble_channel(&[vec![db; trials]], &fading, vec![1.0; trials], 1.0).unwrap();
            if db == 0.0 {
                assert!(chan.beta_lin[0].iter().all(|&b| (b - 1.0).abs() < 1e-15));
            }
            let mean = (0..trials).map(|k| chan.h_ik(0, k).norm_squared()).sum::<f64>() / trials as f64;
            assert!((mean / expect - 1.0).abs() < 0.03, "β={db} dB: mean {mean}");
        }
    }

    #[test]
    fn channel_is_deterministic() {
        let p = SystemParams {
            antennas: 8,
            ..SystemParams::default()
        };
        let pl = draw_placement(&p, 3).unwrap();
        let a = draw_channel(&p, &pl, 7).unwrap();
        let b = draw_channel(&p, &pl, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.h.len(), p.num_aps);
        assert!(a.h.iter().all(|h| h.shape() == (8, p.num_ues)));
        assert!((a.p[0] - 0.199_526_231).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn placement_invariants(seed in any::<u64>()) {
            let p = SystemParams::default();
            let pl = draw_placement(&p, seed).unwrap();
            for pt in pl.ap_positions.iter().chain(&pl.ue_positions) {
                prop_assert!(pt.norm() <= p.area_radius_m + 1e-9);
            }
            for k in 0..p.num_ues {
                let nearest = (0..p.num_aps).map(|i| pl.distance(i, k)).fold(f64::INFINITY, f64::min);
                prop_assert!(nearest >= p.min_dist_m);
            }
        }

        #[test]
        fn db_round_trip(x in -200.0f64..200.0) {
            let back = linear_to_db(db_to_linear(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn attenuation_shift_scales_gain(seed in any::<u64>(), base in 60.0f64..120.0, delta in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fading = vec![draw_fading(&mut rng, 4, 2)];
            let a = assemble_channel(&[vec![base; 2]], &fading, vec![1.0; 2], 1.0).unwrap();
            let b = assemble_channel(&[vec![base + delta; 2]], &fading, vec![1.0; 2], 1.0).unwrap();
            let ratio = b.h_ik(0, 0).norm_squared() / a.h_ik(0, 0).norm_squared();
            prop_assert!((ratio / db_to_linear(-delta) - 1.0).abs() < 1e-12);
        }
    }
}
