//! Analytic memoryless fiber channel models.
//!
//! The effective SNR of a WDM link is `P / (sigma2_ase + sigma2_nl(P, mu4, mu6))`.
//! For the GN model the nonlinear term is `kappa0 * P^3`; the NLIN model adds
//! modulation-dependent corrections that are affine in `mu4 - 2` and `mu6 - 6`,
//! so both models agree for Gaussian-like moments.
//!
//! All powers and variances are per polarization, in mW.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Lower clamp on the nonlinear variance, in mW.
pub const DEFAULT_VARIANCE_FLOOR_MW: f64 = 1e-12;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Physical description of a multi-span WDM link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub n_spans: usize,
    pub span_length_km: f64,
    pub attenuation_db_per_km: f64,
    pub gamma_per_w_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub noise_figure_db: f64,
    pub symbol_rate_hz: f64,
    pub n_channels: usize,
    pub channel_spacing_hz: f64,
    pub center_wavelength_nm: f64,
    /// Transmitter SNR of an extra AWGN source between normalization and fiber.
    pub tx_awgn_snr_db: Option<f64>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            n_spans: 10,
            span_length_km: 100.0,
            attenuation_db_per_km: 0.2,
            gamma_per_w_km: 1.3,
            dispersion_ps_nm_km: 16.48,
            noise_figure_db: 5.0,
            symbol_rate_hz: 32e9,
            n_channels: 5,
            channel_spacing_hz: 50e9,
            center_wavelength_nm: 1550.0,
            tx_awgn_snr_db: None,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("span_length_km", self.span_length_km),
            ("symbol_rate_hz", self.symbol_rate_hz),
            ("channel_spacing_hz", self.channel_spacing_hz),
            ("center_wavelength_nm", self.center_wavelength_nm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("link.{name} must be positive, got {v}")));
            }
        }
        // zero loss and zero nonlinearity are legitimate idealized links
        for (name, v) in [
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("gamma_per_w_km", self.gamma_per_w_km),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("link.{name} must be non-negative, got {v}")));
            }
        }
        if !self.dispersion_ps_nm_km.is_finite() || !self.noise_figure_db.is_finite() {
            return Err(Error::Config("link dispersion and noise figure must be finite".into()));
        }
        if self.n_spans == 0 {
            return Err(Error::Config("link.n_spans must be at least 1".into()));
        }
        if self.n_channels == 0 {
            return Err(Error::Config("link.n_channels must be at least 1".into()));
        }
        if let Some(snr) = self.tx_awgn_snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("link.tx_awgn_snr_db must be finite".into()));
            }
        }
        Ok(())
    }

    /// Amplifier gain that exactly compensates one span, in dB.
    pub fn span_loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.span_length_km
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.center_wavelength_nm * 1e-9)
    }
}

/// One-sided ASE power spectral density per polarization of a lumped
/// amplifier, `h * nu * (G * F - 1) / 2`, in W/Hz.
pub fn ase_psd_w_per_hz(gain_db: f64, noise_figure_db: f64, carrier_hz: f64) -> f64 {
    let g = db_to_linear(gain_db);
    let f = db_to_linear(noise_figure_db);
    (PLANCK * carrier_hz * (g * f - 1.0) / 2.0).max(0.0)
}

/// Accumulated ASE variance per polarization in the symbol bandwidth, in mW.
pub fn ase_variance(link: &LinkConfig) -> Result<f64> {
    link.validate()?;
    let psd = ase_psd_w_per_hz(
        link.span_loss_db(),
        link.noise_figure_db,
        link.carrier_frequency_hz(),
    );
    Ok(link.n_spans as f64 * psd * link.symbol_rate_hz * 1e3)
}

/// Coefficients of the nonlinear interference variance
/// `P^3 * (kappa0 + kappa1 * (mu4 - 2) + kappa2 * (mu6 - 6))`, in 1/mW^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlinCoefficients {
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl NlinCoefficients {
    pub fn gn(kappa0: f64) -> Self {
        Self {
            kappa0,
            kappa1: 0.0,
            kappa2: 0.0,
        }
    }

    /// Bracketed factor multiplying `P^3`.
    pub fn moment_factor(&self, mu4: f64, mu6: f64) -> f64 {
        self.kappa0 + self.kappa1 * (mu4 - 2.0) + self.kappa2 * (mu6 - 6.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0.is_finite() && self.kappa0 >= 0.0)
            || !self.kappa1.is_finite()
            || !self.kappa2.is_finite()
        {
            return Err(Error::Config(format!(
                "nonlinear coefficients must be finite with kappa0 >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Coefficients plus the relative RMS residual of the fit that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlinFit {
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub fit_residual: f64,
}

impl NlinFit {
    pub fn coefficients(&self) -> NlinCoefficients {
        NlinCoefficients {
            kappa0: self.kappa0,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fit: NlinFit =
            serde_json::from_str(&text).map_err(|e| Error::parse("<kappa json>", e.to_string()))?;
        fit.coefficients().validate()?;
        Ok(fit)
    }
}

/// Whether `(mu4, mu6)` can be the moments of some distribution:
/// `mu4 >= 1` and `mu6 >= mu4^2` (both from Cauchy-Schwarz).
pub fn moments_plausible(mu4: f64, mu6: f64) -> bool {
    mu4 >= 1.0 - 1e-12 && mu6 >= mu4 * mu4 * (1.0 - 1e-12)
}

/// Nonlinear interference variance in mW, clamped below at `floor`.
pub fn nlin_variance_with_floor(
    p_mw: f64,
    mu4: f64,
    mu6: f64,
    coeffs: &NlinCoefficients,
    floor: f64,
) -> Result<f64> {
    if !(p_mw.is_finite() && p_mw > 0.0) {
        return Err(Error::InvalidArgument(format!("launch power must be positive, got {p_mw} mW")));
    }
    if !(mu4 >= 1.0 - 1e-12 && mu6 >= 1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "moments must satisfy mu4 >= 1 and mu6 >= 1, got ({mu4}, {mu6})"
        )));
    }
    let raw = p_mw.powi(3) * coeffs.moment_factor(mu4, mu6);
    if raw < 0.0 && moments_plausible(mu4, mu6) {
        return Err(Error::Config(format!(
            "nonlinear variance {raw:e} mW is negative at plausible moments ({mu4}, {mu6}); \
             the coefficients {coeffs:?} are a bad fit"
        )));
    }
    Ok(raw.max(floor))
}

pub fn nlin_variance(p_mw: f64, mu4: f64, mu6: f64, coeffs: &NlinCoefficients) -> Result<f64> {
    nlin_variance_with_floor(p_mw, mu4, mu6, coeffs, DEFAULT_VARIANCE_FLOOR_MW)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gn,
    Nlin,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gn" => Ok(ModelKind::Gn),
            "nlin" => Ok(ModelKind::Nlin),
            other => Err(Error::InvalidArgument(format!("unknown channel model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gn => "gn",
            ModelKind::Nlin => "nlin",
        })
    }
}

/// Per-component noise variances in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub ase: f64,
    pub nonlinear: f64,
    pub transmitter: f64,
}

impl NoiseBudget {
    pub fn total(&self) -> f64 {
        self.ase + self.nonlinear + self.transmitter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub kind: ModelKind,
    pub sigma2_ase_mw: f64,
    pub coeffs: NlinCoefficients,
    pub launch_power_dbm: f64,
    pub tx_awgn_snr_db: Option<f64>,
    pub variance_floor_mw: f64,
}

impl ChannelModel {
    pub fn new(kind: ModelKind, sigma2_ase_mw: f64, coeffs: NlinCoefficients, launch_power_dbm: f64) -> Self {
        Self {
            kind,
            sigma2_ase_mw,
            coeffs,
            launch_power_dbm,
            tx_awgn_snr_db: None,
            variance_floor_mw: DEFAULT_VARIANCE_FLOOR_MW,
        }
    }

    /// Builds a model for `link` with the ASE variance derived from the link.
    pub fn for_link(kind: ModelKind, link: &LinkConfig, coeffs: NlinCoefficients, launch_power_dbm: f64) -> Result<Self> {
        let mut model = Self::new(kind, ase_variance(link)?, coeffs, launch_power_dbm);
        model.tx_awgn_snr_db = link.tx_awgn_snr_db;
        Ok(model)
    }

    pub fn with_power_dbm(&self, launch_power_dbm: f64) -> Self {
        Self {
            launch_power_dbm,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_ase_mw.is_finite() && self.sigma2_ase_mw >= 0.0) {
            return Err(Error::Config(format!("ASE variance must be non-negative, got {}", self.sigma2_ase_mw)));
        }
        if !self.launch_power_dbm.is_finite() {
            return Err(Error::Config("launch power must be finite".into()));
        }
        if !(self.variance_floor_mw > 0.0) {
            return Err(Error::Config("variance floor must be positive".into()));
        }
        self.coeffs.validate()
    }

    pub fn launch_power_mw(&self) -> f64 {
        dbm_to_mw(self.launch_power_dbm)
    }

    /// Coefficients actually used: the GN model keeps only `kappa0`.
    pub fn effective_coeffs(&self) -> NlinCoefficients {
        match self.kind {
            ModelKind::Gn => NlinCoefficients::gn(self.coeffs.kappa0),
            ModelKind::Nlin => self.coeffs,
        }
    }

    /// Transmitter AWGN variance at the launch power, relative to unit signal power.
    pub fn tx_relative_variance(&self) -> f64 {
        self.tx_awgn_snr_db.map_or(0.0, |snr| db_to_linear(-snr))
    }

    pub fn noise_budget(&self, mu4: f64, mu6: f64) -> Result<NoiseBudget> {
        self.validate()?;
        let p = self.launch_power_mw();
        let (mu4, mu6) = match self.kind {
            ModelKind::Gn => (2.0, 6.0),
            ModelKind::Nlin => (mu4, mu6),
        };
        Ok(NoiseBudget {
            ase: self.sigma2_ase_mw,
            nonlinear: nlin_variance_with_floor(p, mu4, mu6, &self.effective_coeffs(), self.variance_floor_mw)?,
            transmitter: p * self.tx_relative_variance(),
        })
    }

    /// Effective SNR in dB for a constellation with the given moments.
    pub fn effective_snr(&self, mu4: f64, mu6: f64) -> Result<f64> {
        let budget = self.noise_budget(mu4, mu6)?;
        Ok(linear_to_db(self.launch_power_mw() / budget.total()))
    }
}

/// Draws `n` standard circular complex normal samples (E|e|^2 = 1).
pub fn standard_complex_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// `y = x + sigma * eps`: the noise is a deterministic function of the
/// pre-drawn standard draws so that the same expression can carry gradients.
pub fn apply_noise(x: &[Complex64], sigma: f64, eps: &[Complex64]) -> Vec<Complex64> {
    x.iter().zip(eps).map(|(&xi, &e)| xi + e * sigma).collect()
}

/// Passes launch-power-scaled symbols through the memoryless channel.
pub fn sample_channel<R: Rng + ?Sized>(
    x: &[Complex64],
    model: &ChannelModel,
    mu4: f64,
    mu6: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let sigma = model.noise_budget(mu4, mu6)?.total().sqrt();
    let eps = standard_complex_noise(x.len(), rng);
    Ok(apply_noise(x, sigma, &eps))
}

/// One measured operating point used to fit the nonlinear coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub power_mw: f64,
    pub mu4: f64,
    pub mu6: f64,
    pub sigma2_nl_mw: f64,
}

/// Least-squares fit of `sigma2_nl / P^3` against `[1, mu4 - 2, mu6 - 6]`.
pub fn calibrate_nlin(points: &[CalibrationPoint]) -> Result<NlinFit> {
    if points.len() < 3 {
        return Err(Error::NeedsMoreDiversity(format!(
            "{} points given, at least 3 are needed",
            points.len()
        )));
    }
    for p in points {
        if !(p.power_mw > 0.0 && p.power_mw.is_finite() && p.sigma2_nl_mw.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid calibration point {p:?}")));
        }
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.power_mw).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if powers.len() < 2 {
        return Err(Error::NeedsMoreDiversity("all points share one launch power".into()));
    }

    let n = points.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].mu4 - 2.0,
        _ => points[i].mu6 - 6.0,
    });
    let target = DVector::from_iterator(n, points.iter().map(|p| p.sigma2_nl_mw / p.power_mw.powi(3)));

    // equilibrate columns so the rank test is scale free
    let norms: Vec<f64> = (0..3).map(|j| design.column(j).norm()).collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::NeedsMoreDiversity("moment column is identically zero".into()));
    }
    let scaled = DMatrix::from_fn(n, 3, |i, j| design[(i, j)] / norms[j]);
    let svd = scaled.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(min > 1e-9 * max) {
        return Err(Error::NeedsMoreDiversity(format!(
            "moment pairs are collinear (singular values {sv:?})"
        )));
    }
    let solution = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::NeedsMoreDiversity(e.to_string()))?;
    let kappa: Vec<f64> = (0..3).map(|j| solution[j] / norms[j]).collect();

    let fitted = &design * DVector::from_column_slice(&kappa);
    let residual = (&target - fitted).norm();
    let scale = target.norm();
    Ok(NlinFit {
        kappa0: kappa[0],
        kappa1: kappa[1],
        kappa2: kappa[2],
        fit_residual: if scale > 0.0 { residual / scale } else { residual },
    })
}
