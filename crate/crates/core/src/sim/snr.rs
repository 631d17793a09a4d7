//! Locating the SNR at which a BLER curve crosses a target.

use super::channel::{snr_to_sigma, ChannelKind, SnrMetric};
use super::montecarlo::{run_point, PointResult, StopRule};
use crate::construct::CodeSpec;
use crate::decode::Decoder;
use crate::error::{Error, Result};

/// Crossing of `target` by a curve given as `(dB, BLER)` pairs sorted by dB,
/// interpolating `log10(BLER)` linearly between the first bracketing pair.
pub fn crossing_db(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 >= target && y1 <= target {
            if y0 == y1 {
                return Some(x0);
            }
            if y1 <= 0.0 {
                // Zero errors at the right end: interpolate linearly instead.
                let t = (y0 - target) / (y0 - y1);
                return Some(x0 + t * (x1 - x0));
            }
            let (l0, l1) = (y0.log10(), y1.log10());
            return Some(x0 + (l0 - lt) / (l0 - l1) * (x1 - x0));
        }
    }
    None
}

/// Crossing point with the crossings of the confidence-band edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub estimate: f64,
    /// Crossing of the lower BLER bound (leftmost plausible dB).
    pub low: f64,
    /// Crossing of the upper BLER bound (rightmost plausible dB).
    pub high: f64,
}

impl Crossing {
    /// Half-width of the dB interval.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }
}

/// BLER crossing of simulated points under `metric`, with a Wilson band at
/// confidence `z`.
pub fn bler_crossing(points: &[PointResult], metric: SnrMetric, target: f64, z: f64) -> Option<Crossing> {
    let db = |p: &PointResult| match metric {
        SnrMetric::Snr => p.snr_db,
        SnrMetric::EbN0 => p.ebn0_db,
    };
    let mut sorted: Vec<&PointResult> = points.iter().collect();
    sorted.sort_by(|a, b| db(a).total_cmp(&db(b)));
    let curve = |f: &dyn Fn(&PointResult) -> f64| -> Vec<(f64, f64)> {
        sorted.iter().map(|p| (db(p), f(p))).collect()
    };
    let estimate = crossing_db(&curve(&|p| p.bler()), target)?;
    let low = crossing_db(&curve(&|p| p.bler_interval(z).0), target).unwrap_or(f64::NEG_INFINITY);
    let high = crossing_db(&curve(&|p| p.bler_interval(z).1), target).unwrap_or(f64::INFINITY);
    Some(Crossing { estimate, low, high })
}

/// Bisection for the dB value where the decoder's BLER equals `target`.
/// Every evaluation uses the same `trials` trials (same seed), so the
/// estimated curve is close to monotone and the search is stable.
#[allow(clippy::too_many_arguments)]
pub fn find_bler_crossing(
    spec: &CodeSpec,
    decoder: &Decoder,
    target: f64,
    mut lo_db: f64,
    mut hi_db: f64,
    metric: SnrMetric,
    trials: u64,
    seed: u64,
    tol_db: f64,
) -> Result<f64> {
    if !(lo_db < hi_db) || !(target > 0.0 && target < 1.0) || !(tol_db > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bad search: interval [{lo_db}, {hi_db}], target {target}, tolerance {tol_db}"
        )));
    }
    let bler = |db: f64| -> Result<f64> {
        let sigma = snr_to_sigma(metric, db, spec.n, spec.k);
        Ok(run_point(spec, decoder, ChannelKind::Awgn { sigma }, StopRule::fixed(trials), seed)?.bler())
    };
    let (b_lo, b_hi) = (bler(lo_db)?, bler(hi_db)?);
    if b_lo < target || b_hi > target {
        return Err(Error::Unreachable(format!(
            "BLER {b_lo:.3e} at {lo_db} dB and {b_hi:.3e} at {hi_db} dB do not bracket {target:.1e}"
        )));
    }
    while hi_db - lo_db > tol_db {
        let mid = 0.5 * (lo_db + hi_db);
        if bler(mid)? > target {
            lo_db = mid;
        } else {
            hi_db = mid;
        }
    }
    Ok(0.5 * (lo_db + hi_db))
}
