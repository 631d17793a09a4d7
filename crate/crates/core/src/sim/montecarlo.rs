//! Monte-Carlo block/bit error-rate estimation.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::channel::{
    awgn_llr_from_noise, bsc_output, sigma_to_db, snr_to_sigma, standard_normal, trial_rng,
    ChannelKind, SnrMetric,
};
use crate::construct::CodeSpec;
use crate::decode::Decoder;
use crate::error::{Error, Result};

/// When to stop simulating one operating point: once at least `min_trials`
/// trials and `min_errors` block errors have been seen, or at `max_trials`.
/// Trials run in batches of `batch`; the rule is checked between batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub min_trials: u64,
    pub min_errors: u64,
    pub max_trials: u64,
    pub batch: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            min_trials: 100_000,
            min_errors: 100,
            max_trials: 1_000_000,
            batch: 1000,
        }
    }
}

impl StopRule {
    /// Exactly `trials` trials.
    pub fn fixed(trials: u64) -> Self {
        StopRule {
            min_trials: trials,
            min_errors: 0,
            max_trials: trials,
            batch: 1000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.max_trials == 0 || self.min_trials > self.max_trials {
            return Err(Error::InvalidParameter(format!(
                "invalid stop rule: min_trials {} max_trials {} batch {}",
                self.min_trials, self.max_trials, self.batch
            )));
        }
        Ok(())
    }
}

/// Counts for one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub snr_db: f64,
    pub ebn0_db: f64,
    pub channel: ChannelKind,
    pub trials: u64,
    pub block_errors: u64,
    pub bit_errors: u64,
    /// Bit errors per codeword position.
    pub position_errors: Vec<u64>,
    pub seconds: f64,
    pub leaf_calls: u64,
}

impl PointResult {
    pub fn bler(&self) -> f64 {
        self.block_errors as f64 / self.trials as f64
    }

    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / (self.trials as f64 * self.position_errors.len() as f64)
    }

    /// Wilson score interval for the BLER at confidence `z` (1.96 for 95%).
    pub fn bler_interval(&self, z: f64) -> (f64, f64) {
        wilson(self.block_errors, self.trials, z)
    }
}

pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub points: Vec<PointResult>,
}

impl SimResult {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "snr_db,ebn0_db,trials,block_errors,bler,ber,seconds,leaf_calls")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.4},{:.4},{},{},{:.6e},{:.6e},{:.3},{}",
                p.snr_db,
                p.ebn0_db,
                p.trials,
                p.block_errors,
                p.bler(),
                p.ber(),
                p.seconds,
                p.leaf_calls
            )?;
        }
        Ok(())
    }

    /// Per-position bit-error counts, one block per operating point.
    pub fn write_profile(&self, mut w: impl Write) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "# snr_db={:.4} ebn0_db={:.4}", p.snr_db, p.ebn0_db)?;
            writeln!(w, "position,errors,trials")?;
            for (i, e) in p.position_errors.iter().enumerate() {
                writeln!(w, "{},{},{}", i, e, p.trials)?;
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Counts {
    block_errors: u64,
    bit_errors: u64,
    position_errors: Vec<u64>,
    leaf_calls: u64,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        self.block_errors += other.block_errors;
        self.bit_errors += other.bit_errors;
        self.leaf_calls += other.leaf_calls;
        if self.position_errors.is_empty() {
            self.position_errors = other.position_errors;
        } else {
            for (a, b) in self.position_errors.iter_mut().zip(other.position_errors) {
                *a += b;
            }
        }
        self
    }
}

fn run_trial(spec: &CodeSpec, decoder: &Decoder, channel: ChannelKind, seed: u64, trial: u64) -> Result<Counts> {
    let mut rng = trial_rng(seed, trial);
    let u: Vec<u8> = (0..spec.k).map(|_| rng.gen_range(0..2)).collect();
    let c = spec.encode(&u)?;
    // Information bits are drawn before the noise so every operating point
    // of a run sees the same codewords and the same unit noise.
    let l = match channel {
        ChannelKind::Awgn { sigma } => {
            let noise = standard_normal(spec.n, &mut rng);
            awgn_llr_from_noise(&c, &noise, sigma)
        }
        ChannelKind::Bsc { p } => bsc_output(&c, p, &mut rng).1,
    };
    let out = decoder.decode(&l)?;
    let mut position_errors = vec![0u64; spec.n];
    let mut bit_errors = 0;
    for (i, (a, b)) in out.codeword.iter().zip(&c).enumerate() {
        if a != b {
            position_errors[i] = 1;
            bit_errors += 1;
        }
    }
    Ok(Counts {
        block_errors: (bit_errors > 0) as u64,
        bit_errors,
        position_errors,
        leaf_calls: out.leaf_map_calls,
    })
}

/// Simulates one operating point.
pub fn run_point(
    spec: &CodeSpec,
    decoder: &Decoder,
    channel: ChannelKind,
    stop: StopRule,
    seed: u64,
) -> Result<PointResult> {
    channel.validate()?;
    stop.validate()?;
    let start = Instant::now();
    let mut total = Counts {
        position_errors: vec![0; spec.n],
        ..Counts::default()
    };
    let mut trials = 0u64;
    loop {
        let done = trials >= stop.max_trials
            || (trials >= stop.min_trials && total.block_errors >= stop.min_errors);
        if done {
            break;
        }
        let end = (trials + stop.batch).min(stop.max_trials);
        let batch = (trials..end)
            .into_par_iter()
            .map(|t| run_trial(spec, decoder, channel, seed, t))
            .try_reduce(Counts::default, |a, b| Ok(a.merge(b)))?;
        total = total.merge(batch);
        trials = end;
    }
    let (snr_db, ebn0_db) = match channel {
        ChannelKind::Awgn { sigma } => (
            sigma_to_db(SnrMetric::Snr, sigma, spec.n, spec.k),
            sigma_to_db(SnrMetric::EbN0, sigma, spec.n, spec.k),
        ),
        ChannelKind::Bsc { .. } => (f64::NAN, f64::NAN),
    };
    Ok(PointResult {
        snr_db,
        ebn0_db,
        channel,
        trials,
        block_errors: total.block_errors,
        bit_errors: total.bit_errors,
        position_errors: total.position_errors,
        seconds: start.elapsed().as_secs_f64(),
        leaf_calls: total.leaf_calls,
    })
}

/// Simulates an AWGN grid given in dB under `metric`.
pub fn run_montecarlo(
    spec: &CodeSpec,
    decoder: &Decoder,
    grid_db: &[f64],
    metric: SnrMetric,
    stop: StopRule,
    seed: u64,
) -> Result<SimResult> {
    let points = grid_db
        .iter()
        .map(|&db| {
            let sigma = snr_to_sigma(metric, db, spec.n, spec.k);
            run_point(spec, decoder, ChannelKind::Awgn { sigma }, stop, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimResult { points })
}

/// Parses `a:b:step` into the inclusive grid `a, a+step, …, ≤ b`.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?} in grid {text:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a] => Ok(vec![a]),
        [a, b, step] if step > 0.0 && b >= a => {
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(format!("grid {text:?} must be `a:b:step` with step > 0 and b >= a")),
    }
}
