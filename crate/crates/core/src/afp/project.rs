//! Fronthaul feasibility restoration by scaling the transform.

use crate::afp::AfpConfig;
use crate::linalg::{self, c, CMat};
use crate::scenario::ChannelRealization;
use crate::sigmodel::{self, Solution};

const MAX_BISECTIONS: usize = 200;

/// Largest c ∈ [0, 1] (to within `tol`) with usage(c²Q, Ω) ≤ C_F, where Q
/// is W S Wᴴ. Returns 1 when the constraint already holds. The returned
/// scale is always on the feasible side of the bracket.
pub fn capacity_scale(q: &CMat, omega: &CMat, c_f: f64, tol: f64) -> f64 {
    let excess = |s: f64| sigmodel::fronthaul_usage_from(&(q * c(s * s, 0.0)), omega) - c_f;
    if excess(1.0) <= 0.0 {
        return 1.0;
    }
    let slack = tol * c_f.max(0.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..MAX_BISECTIONS {
        if excess(lo) >= -slack || hi - lo <= f64::EPSILON {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Scales W_i down until AP i's fronthaul constraint holds with equality;
/// a feasible AP is returned unchanged.
pub fn project_feasible(i: usize, sol: &Solution, chan: &ChannelRealization, c_f: f64, cfg: &AfpConfig) -> Solution {
    let s = sigmodel::received_covariance(chan, i);
    let ap = &sol.aps[i];
    let q = linalg::hermitized(&ap.w * s * ap.w.adjoint());
    let scale = capacity_scale(&q, &ap.omega, c_f, cfg.bisect_tol);
    let mut out = sol.clone();
    if scale < 1.0 {
        out.aps[i].w *= c(scale, 0.0);
    }
    out
}
