//! Mutual information under a memoryless Gaussian auxiliary channel,
//! data-aided effective SNR estimation and the sweep report.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{linear_to_db, standard_complex_noise, ChannelModel};
use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Default number of Monte-Carlo samples for MI estimation.
pub const DEFAULT_MI_SAMPLES: usize = 1 << 17;
/// Estimates from fewer samples than this carry `low_sample_count`.
pub const MIN_RELIABLE_SAMPLES: usize = 100;
/// Reported SNRs are capped here; a noiseless fit would otherwise be infinite.
pub const SNR_CAP_DB: f64 = 60.0;
pub const MIN_SNR_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub mi_bits_per_2d: f64,
    pub mi_bits_per_4d: f64,
    pub n_samples: usize,
    pub standard_error: f64,
    pub low_sample_count: bool,
}

impl MiEstimate {
    fn from_terms(order: usize, terms: &[f64]) -> Self {
        let k = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / k;
        let var = if terms.len() > 1 {
            terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let log2m = (order as f64).log2();
        let mi = (log2m - mean).clamp(0.0, log2m);
        Self {
            mi_bits_per_2d: mi,
            mi_bits_per_4d: 2.0 * mi,
            n_samples: terms.len(),
            standard_error: (var / k).sqrt(),
            low_sample_count: terms.len() < MIN_RELIABLE_SAMPLES,
        }
    }
}

/// `log2 sum_j exp((|y - x|^2 - |y - x_j|^2) / sigma2)`, stabilized.
fn log2_sum_term(points: &[Complex64], x: Complex64, y: Complex64, sigma2: f64) -> f64 {
    let d0 = (y - x).norm_sqr();
    let mut max = f64::NEG_INFINITY;
    for p in points {
        max = max.max((d0 - (y - p).norm_sqr()) / sigma2);
    }
    let sum: f64 = points
        .iter()
        .map(|p| ((d0 - (y - p).norm_sqr()) / sigma2 - max).exp())
        .sum();
    (max + sum.ln()) / std::f64::consts::LN_2
}

/// MI of `c` on an AWGN channel with complex noise variance `sigma2`
/// (relative to the unit-power constellation), by Monte-Carlo sampling.
/// Transmitted symbols cycle through the constellation so every point is
/// equally represented.
pub fn mi_gaussian_auxiliary<R: Rng + ?Sized>(
    c: &Constellation,
    sigma2: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<MiEstimate> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("MI estimation needs at least one sample".into()));
    }
    if !c.is_normalized() {
        return Err(Error::InvalidArgument("MI estimation expects a normalized constellation".into()));
    }
    let points = c.points();
    let noise = standard_complex_noise(n_samples, rng);
    let sigma = sigma2.sqrt();
    let terms: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let x = points[k % points.len()];
            log2_sum_term(points, x, x + n * sigma, sigma2)
        })
        .collect();
    Ok(MiEstimate::from_terms(c.order(), &terms))
}

/// MI from aligned transmitted/received pairs; the auxiliary-channel
/// variance is estimated from the pairs. Every `x` must be a point of `c`.
pub fn mi_from_pairs(c: &Constellation, x: &[Complex64], y: &[Complex64]) -> Result<MiEstimate> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} transmitted vs {} received symbols",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("MI estimation needs at least one pair".into()));
    }
    let points = c.points();
    let tol = 1e-9 * c.mean_power().sqrt().max(1.0);
    if let Some((i, bad)) = x
        .iter()
        .enumerate()
        .find(|(_, xi)| points.iter().all(|p| (*p - **xi).norm() > tol))
    {
        return Err(Error::InvalidArgument(format!(
            "transmitted symbol {i} ({bad}) is not a constellation point"
        )));
    }
    let sigma2 = x.iter().zip(y).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>() / x.len() as f64;
    if !(sigma2 > 0.0) {
        // noiseless pairs carry the full log2 M
        return Ok(MiEstimate::from_terms(c.order(), &vec![0.0; x.len()]));
    }
    let terms: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| log2_sum_term(points, xi, yi, sigma2))
        .collect();
    Ok(MiEstimate::from_terms(c.order(), &terms))
}

/// Least-squares complex gain `h` fitting `y ~ h x`, and the resulting SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub gain: Complex64,
    pub snr_db: f64,
}

impl Alignment {
    /// `y / h`: received symbols on the scale and phase of `x`.
    pub fn apply(&self, y: &[Complex64]) -> Vec<Complex64> {
        y.iter().map(|v| v / self.gain).collect()
    }
}

pub fn align(x: &[Complex64], y: &[Complex64]) -> Result<Alignment> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} transmitted vs {} received symbols",
            x.len(),
            y.len()
        )));
    }
    if x.len() < MIN_SNR_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "SNR estimation needs at least {MIN_SNR_SAMPLES} symbols, got {}",
            x.len()
        )));
    }
    let num: Complex64 = x.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = x.iter().map(|a| a.norm_sqr()).sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateInput("transmitted symbols are all zero".into()));
    }
    let gain = num / den;
    if !(gain.norm() > 0.0) {
        return Err(Error::DegenerateInput("received symbols are uncorrelated with the transmitted ones".into()));
    }
    let signal: f64 = x.iter().map(|a| (gain * a).norm_sqr()).sum();
    let noise: f64 = x.iter().zip(y).map(|(a, b)| (b - gain * a).norm_sqr()).sum();
    let snr_db = if noise > 0.0 {
        linear_to_db(signal / noise).min(SNR_CAP_DB)
    } else {
        SNR_CAP_DB
    };
    Ok(Alignment { gain, snr_db })
}

/// Data-aided effective SNR in dB after one complex scale/rotation fit.
pub fn effective_snr_estimate(x: &[Complex64], y: &[Complex64]) -> Result<f64> {
    Ok(align(x, y)?.snr_db)
}

/// Channel-model evaluation of one constellation at the model's launch power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEvaluation {
    pub snr_eff_db: f64,
    pub mi: MiEstimate,
}

/// Effective SNR from the exact constellation moments and MI on the
/// equivalent AWGN channel.
pub fn evaluate_model<R: Rng + ?Sized>(
    c: &Constellation,
    model: &ChannelModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<ModelEvaluation> {
    let c = if c.is_normalized() { c.clone() } else { c.normalized()? };
    let m = c.moments();
    let snr_eff_db = model.effective_snr(m.mu4, m.mu6)?;
    let sigma2 = 10f64.powf(-snr_eff_db / 10.0);
    let mi = mi_gaussian_auxiliary(&c, sigma2, n_samples, rng)?;
    Ok(ModelEvaluation { snr_eff_db, mi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Model,
    Ssf,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Model => "model",
            Source::Ssf => "ssf",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Source::Model),
            "ssf" => Ok(Source::Ssf),
            other => Err(Error::InvalidArgument(format!("unknown evaluation source `{other}`"))),
        }
    }
}

/// One sweep point. Failed points keep their row with `error` set.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub constellation: String,
    pub power_dbm: f64,
    pub snr_eff_db: Option<f64>,
    pub mi_bit_4d: Option<f64>,
    pub mu4: f64,
    pub mu6: f64,
    pub source: Source,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "constellation",
    "power_dbm",
    "snr_eff_db",
    "mi_bit_4d",
    "mu4",
    "mu6",
    "source",
    "error",
];

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.constellation.clone(),
            r.power_dbm.to_string(),
            opt(r.snr_eff_db),
            opt(r.mi_bit_4d),
            r.mu4.to_string(),
            r.mu6.to_string(),
            r.source.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
