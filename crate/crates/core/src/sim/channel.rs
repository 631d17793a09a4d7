//! Channel models and SNR bookkeeping.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::llr::bpsk;

/// Which signal-to-noise definition a dB value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrMetric {
    /// `SNR = 1 / (2σ²)`.
    #[default]
    Snr,
    /// `Eb/N0 = n / (2kσ²)`.
    EbN0,
}

impl FromStr for SnrMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "snr" => Ok(SnrMetric::Snr),
            "ebn0" => Ok(SnrMetric::EbN0),
            _ => Err(format!("unknown SNR metric {s:?}; expected snr or ebn0")),
        }
    }
}

impl fmt::Display for SnrMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnrMetric::Snr => "snr",
            SnrMetric::EbN0 => "ebn0",
        })
    }
}

/// Noise standard deviation for a dB value under `metric`.
pub fn snr_to_sigma(metric: SnrMetric, db: f64, n: usize, k: usize) -> f64 {
    let lin = 10f64.powf(db / 10.0);
    match metric {
        SnrMetric::Snr => (1.0 / (2.0 * lin)).sqrt(),
        SnrMetric::EbN0 => (n as f64 / (2.0 * k as f64 * lin)).sqrt(),
    }
}

/// Inverse of [`snr_to_sigma`].
pub fn sigma_to_db(metric: SnrMetric, sigma: f64, n: usize, k: usize) -> f64 {
    let lin = match metric {
        SnrMetric::Snr => 1.0 / (2.0 * sigma * sigma),
        SnrMetric::EbN0 => n as f64 / (2.0 * k as f64 * sigma * sigma),
    };
    10.0 * lin.log10()
}

/// SNR in dB corresponding to an Eb/N0 value, and back.
pub fn ebn0_to_snr_db(ebn0_db: f64, n: usize, k: usize) -> f64 {
    ebn0_db + 10.0 * (k as f64 / n as f64).log10()
}

pub fn snr_to_ebn0_db(snr_db: f64, n: usize, k: usize) -> f64 {
    snr_db - 10.0 * (k as f64 / n as f64).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    Awgn { sigma: f64 },
    Bsc { p: f64 },
}

impl ChannelKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelKind::Awgn { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("AWGN sigma must be positive, got {sigma}")),
            ),
            ChannelKind::Bsc { p } if !(p > 0.0 && p < 0.5) => Err(Error::InvalidParameter(
                format!("BSC crossover must lie in (0, 0.5), got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Independent generator for one trial: the ChaCha stream `trial` of a key
/// derived from `seed`. Trials can be evaluated in any order or in parallel
/// with identical results.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Standard normal noise vector of length `n`.
pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// AWGN LLRs `2y/σ²` with `y = (1 - 2c) + σ·noise` for given unit noise.
pub fn awgn_llr_from_noise(codeword: &[u8], noise: &[f64], sigma: f64) -> Vec<f64> {
    let scale = 2.0 / (sigma * sigma);
    codeword
        .iter()
        .zip(noise)
        .map(|(&c, &e)| scale * (bpsk(c) + sigma * e))
        .collect()
}

/// BPSK over AWGN, returning channel LLRs.
pub fn awgn_llr(codeword: &[u8], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise = standard_normal(codeword.len(), rng);
    awgn_llr_from_noise(codeword, &noise, sigma)
}

/// Binary symmetric channel: the received bits and their LLRs
/// `±ln((1-p)/p)`.
pub fn bsc_output(codeword: &[u8], p: f64, rng: &mut impl Rng) -> (Vec<u8>, Vec<f64>) {
    let mag = ((1.0 - p) / p).ln();
    let bits: Vec<u8> = codeword
        .iter()
        .map(|&c| c ^ (rng.gen::<f64>() < p) as u8)
        .collect();
    let llr = bits.iter().map(|&b| mag * bpsk(b)).collect();
    (bits, llr)
}
