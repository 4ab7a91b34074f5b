//! Dual-polarization WDM split-step Fourier simulator.
//!
//! The transmitter shapes i.i.d. symbols with a root-raised-cosine filter and
//! places each channel on an integer frequency bin. Propagation solves the
//! Manakov equation with the symmetric split-step method; lumped EDFAs
//! restore the span loss and add ASE noise. The receiver selects the center
//! channel, compensates dispersion, applies the matched filter and samples
//! at the best phase. All filtering is circular in the frequency domain.
//!
//! Field samples are in sqrt(mW); each polarization of each channel carries
//! the launch power.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{
    ase_psd_w_per_hz, ase_variance, db_to_linear, dbm_to_mw, linear_to_db, standard_complex_noise,
    CalibrationPoint, LinkConfig, SPEED_OF_LIGHT,
};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::metrics::{align, mi_from_pairs, MiEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsfConfig {
    /// Symbols per channel and polarization; a power of two.
    pub n_symbols: usize,
    pub symbol_rate_hz: f64,
    /// Samples per symbol.
    pub oversampling: usize,
    pub channel_spacing_hz: f64,
    /// Number of WDM channels; odd, the middle one is received.
    pub n_channels: usize,
    pub rolloff: f64,
    pub span_length_km: f64,
    pub attenuation_db_per_km: f64,
    pub gamma_per_w_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub noise_figure_db: f64,
    pub center_wavelength_nm: f64,
    pub step_km: f64,
    /// When false the amplifiers are noiseless (used for calibration runs
    /// that isolate the nonlinear interference).
    pub enable_ase: bool,
    pub seed: u64,
}

impl Default for SsfConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SsfConfig {
    /// Reduced scale that runs in seconds per span on one core.
    pub fn desk() -> Self {
        Self {
            n_symbols: 1 << 14,
            oversampling: 8,
            n_channels: 3,
            step_km: 0.5,
            ..Self::full()
        }
    }

    /// Full simulation scale.
    pub fn full() -> Self {
        Self {
            n_symbols: 1 << 17,
            symbol_rate_hz: 32e9,
            oversampling: 32,
            channel_spacing_hz: 50e9,
            n_channels: 5,
            rolloff: 0.05,
            span_length_km: 100.0,
            attenuation_db_per_km: 0.2,
            gamma_per_w_km: 1.3,
            dispersion_ps_nm_km: 16.48,
            noise_figure_db: 5.0,
            center_wavelength_nm: 1550.0,
            step_km: 0.1,
            enable_ase: true,
            seed: 0,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_symbols * self.oversampling
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_hz * self.oversampling as f64
    }

    /// Frequency resolution of the circular grid.
    pub fn bin_hz(&self) -> f64 {
        self.symbol_rate_hz / self.n_symbols as f64
    }

    pub fn steps_per_span(&self) -> usize {
        (self.span_length_km / self.step_km).round() as usize
    }

    pub fn channel_offsets_hz(&self) -> Vec<f64> {
        let mid = (self.n_channels / 2) as f64;
        (0..self.n_channels)
            .map(|c| (c as f64 - mid) * self.channel_spacing_hz)
            .collect()
    }

    pub fn span_gain_db(&self) -> f64 {
        self.attenuation_db_per_km * self.span_length_km
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.center_wavelength_nm * 1e-9)
    }

    /// Group-velocity dispersion in s^2/km.
    pub fn beta2_s2_per_km(&self) -> f64 {
        let lambda = self.center_wavelength_nm * 1e-9;
        let d = self.dispersion_ps_nm_km * 1e-6; // s/m^2
        -d * lambda * lambda / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT) * 1e3
    }

    /// Power attenuation in 1/km.
    pub fn alpha_per_km(&self) -> f64 {
        self.attenuation_db_per_km * std::f64::consts::LN_10 / 10.0
    }

    /// Analytic link description with the same physical parameters.
    pub fn link(&self, n_spans: usize) -> LinkConfig {
        LinkConfig {
            n_spans,
            span_length_km: self.span_length_km,
            attenuation_db_per_km: self.attenuation_db_per_km,
            gamma_per_w_km: self.gamma_per_w_km,
            dispersion_ps_nm_km: self.dispersion_ps_nm_km,
            noise_figure_db: self.noise_figure_db,
            symbol_rate_hz: self.symbol_rate_hz,
            n_channels: self.n_channels,
            channel_spacing_hz: self.channel_spacing_hz,
            center_wavelength_nm: self.center_wavelength_nm,
            tx_awgn_snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_symbols < 2 || !self.n_symbols.is_power_of_two() {
            return bad(format!("n_symbols must be a power of two, got {}", self.n_symbols));
        }
        if self.oversampling < 1 {
            return bad("oversampling must be at least 1".into());
        }
        if self.n_channels == 0 || self.n_channels % 2 == 0 {
            return bad(format!("n_channels must be odd, got {}", self.n_channels));
        }
        for (name, v) in [
            ("symbol_rate_hz", self.symbol_rate_hz),
            ("channel_spacing_hz", self.channel_spacing_hz),
            ("span_length_km", self.span_length_km),
            ("center_wavelength_nm", self.center_wavelength_nm),
            ("step_km", self.step_km),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("gamma_per_w_km", self.gamma_per_w_km),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.dispersion_ps_nm_km.is_finite() || !self.noise_figure_db.is_finite() {
            return bad("dispersion and noise figure must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return bad(format!("rolloff must be in [0, 1], got {}", self.rolloff));
        }
        let steps = self.span_length_km / self.step_km;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return bad(format!(
                "step {} km does not divide the span length {} km",
                self.step_km, self.span_length_km
            ));
        }
        let occupied = (self.n_channels - 1) as f64 * self.channel_spacing_hz + self.symbol_rate_hz * (1.0 + self.rolloff);
        if self.sample_rate_hz() < occupied * (1.0 - 1e-12) {
            return bad(format!(
                "sample rate {:.4e} Hz is below the occupied WDM bandwidth {:.4e} Hz (aliasing)",
                self.sample_rate_hz(),
                occupied
            ));
        }
        let bins = self.channel_spacing_hz / self.bin_hz();
        if (bins - bins.round()).abs() > 1e-6 {
            return bad(format!(
                "channel spacing is {bins} frequency bins; choose n_symbols so it is an integer"
            ));
        }
        Ok(())
    }
}

/// Raised-cosine spectrum with unit value at DC.
pub fn raised_cosine(f: f64, symbol_rate: f64, rolloff: f64) -> f64 {
    let af = f.abs();
    if rolloff == 0.0 {
        // brick wall; the edge takes half so shifted copies still sum to one
        let edge = symbol_rate / 2.0;
        return if af < edge {
            1.0
        } else if af == edge {
            0.5
        } else {
            0.0
        };
    }
    let f1 = (1.0 - rolloff) * symbol_rate / 2.0;
    let f2 = (1.0 + rolloff) * symbol_rate / 2.0;
    if af <= f1 {
        1.0
    } else if af > f2 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI / (rolloff * symbol_rate) * (af - f1)).cos())
    }
}

/// Signed frequency of FFT bin `k` on an `n`-point grid.
fn bin_frequency(k: usize, n: usize, df: f64) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 * df
    } else {
        (k as f64 - n as f64) * df
    }
}

#[derive(Debug, Clone)]
pub struct WdmSignal {
    /// Time-domain field of the x and y polarizations, sqrt(mW).
    pub fields: [Vec<Complex64>; 2],
    pub sample_rate_hz: f64,
    pub channel_offsets_hz: Vec<f64>,
    /// Transmitted (unit-power) symbols per channel and polarization.
    pub symbols: Vec<[Vec<Complex64>; 2]>,
}

impl WdmSignal {
    /// Mean power per sample summed over both polarizations, mW.
    pub fn total_power_mw(&self) -> f64 {
        self.fields
            .iter()
            .map(|f| f.iter().map(|v| v.norm_sqr()).sum::<f64>() / f.len() as f64)
            .sum()
    }

    pub fn energy(&self) -> f64 {
        self.fields.iter().flat_map(|f| f.iter()).map(|v| v.norm_sqr()).sum()
    }

    fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.fields.iter().flat_map(|f| f.iter()).all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    n: usize,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            n,
        }
    }

    fn fft(&mut self, x: &mut [Complex64]) {
        self.forward.process_with_scratch(x, &mut self.scratch);
    }

    /// Normalized inverse transform.
    fn ifft(&mut self, x: &mut [Complex64]) {
        self.inverse.process_with_scratch(x, &mut self.scratch);
        let s = 1.0 / self.n as f64;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Shapes i.i.d. uniform symbols from `c` onto every channel and
/// polarization at `power_dbm` per channel and polarization.
pub fn modulate<R: Rng + ?Sized>(c: &Constellation, cfg: &SsfConfig, power_dbm: f64, rng: &mut R) -> Result<WdmSignal> {
    cfg.validate()?;
    if !power_dbm.is_finite() {
        return Err(Error::InvalidArgument(format!("launch power must be finite, got {power_dbm}")));
    }
    let c = if c.is_normalized() { c.clone() } else { c.normalized()? };
    let points = c.points();
    let (n_sym, n) = (cfg.n_symbols, cfg.n_samples());
    let df = cfg.bin_hz();
    let amplitude = dbm_to_mw(power_dbm).sqrt();
    let offsets = cfg.channel_offsets_hz();

    let mut sym_fft = Transforms::new(n_sym);
    let mut spectra = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
    let mut symbols = Vec::with_capacity(cfg.n_channels);
    // pulse shape on the baseband grid: os * sqrt(RC) gives unit power for unit-power symbols
    let shape: Vec<f64> = (0..n)
        .map(|k| cfg.oversampling as f64 * raised_cosine(bin_frequency(k, n, df), cfg.symbol_rate_hz, cfg.rolloff).sqrt())
        .collect();
    for &offset in &offsets {
        let shift = (offset / df).round() as i64;
        let mut per_pol: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
        for (pol, spectrum) in spectra.iter_mut().enumerate() {
            let a: Vec<Complex64> = (0..n_sym).map(|_| points[rng.random_range(0..points.len())]).collect();
            let mut a_hat = a.clone();
            sym_fft.fft(&mut a_hat);
            for (k, &h) in shape.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let dst = (k as i64 + shift).rem_euclid(n as i64) as usize;
                spectrum[dst] += a_hat[k % n_sym] * (h * amplitude);
            }
            per_pol[pol] = a;
        }
        symbols.push(per_pol);
    }
    let mut tf = Transforms::new(n);
    for s in spectra.iter_mut() {
        tf.ifft(s);
    }
    let sig = WdmSignal {
        fields: spectra,
        sample_rate_hz: cfg.sample_rate_hz(),
        channel_offsets_hz: offsets,
        symbols,
    };
    sig.check_finite("modulate")?;
    Ok(sig)
}

/// Split-step propagator for one span length, with precomputed linear
/// operators.
pub struct Propagator {
    tf: Transforms,
    full: Vec<Complex64>,
    half: Vec<Complex64>,
    steps: usize,
    /// Kerr phase per mW over one step (effective length at mid-step power).
    kerr_per_mw: f64,
}

impl Propagator {
    pub fn new(cfg: &SsfConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_samples();
        let df = cfg.sample_rate_hz() / n as f64;
        let dz = cfg.span_length_km / cfg.steps_per_span() as f64;
        let alpha = cfg.alpha_per_km();
        let beta2 = cfg.beta2_s2_per_km();
        let op = |len: f64| -> Vec<Complex64> {
            (0..n)
                .map(|k| {
                    let w = 2.0 * std::f64::consts::PI * bin_frequency(k, n, df);
                    Complex64::new(-alpha / 2.0 * len, beta2 / 2.0 * w * w * len).exp()
                })
                .collect()
        };
        let l_step = if alpha > 0.0 {
            2.0 * (alpha * dz / 2.0).sinh() / alpha
        } else {
            dz
        };
        Ok(Self {
            tf: Transforms::new(n),
            full: op(dz),
            half: op(dz / 2.0),
            steps: cfg.steps_per_span(),
            kerr_per_mw: 8.0 / 9.0 * cfg.gamma_per_w_km * 1e-3 * l_step,
        })
    }

    /// Propagates `sig` over one span (no amplification).
    pub fn span(&mut self, sig: &mut WdmSignal) -> Result<()> {
        let [ex, ey] = &mut sig.fields;
        if ex.len() != self.full.len() || ey.len() != self.full.len() {
            return Err(Error::ShapeMismatch {
                op: "propagate_span",
                detail: format!("signal has {} samples, propagator expects {}", ex.len(), self.full.len()),
            });
        }
        let mul = |x: &mut [Complex64], op: &[Complex64]| x.iter_mut().zip(op).for_each(|(v, o)| *v *= o);
        self.tf.fft(ex);
        self.tf.fft(ey);
        mul(ex, &self.half);
        mul(ey, &self.half);
        for step in 0..self.steps {
            self.tf.ifft(ex);
            self.tf.ifft(ey);
            if self.kerr_per_mw != 0.0 {
                for (a, b) in ex.iter_mut().zip(ey.iter_mut()) {
                    let rot = Complex64::from_polar(1.0, self.kerr_per_mw * (a.norm_sqr() + b.norm_sqr()));
                    *a *= rot;
                    *b *= rot;
                }
            }
            self.tf.fft(ex);
            self.tf.fft(ey);
            let op = if step + 1 == self.steps { &self.half } else { &self.full };
            mul(ex, op);
            mul(ey, op);
        }
        self.tf.ifft(ex);
        self.tf.ifft(ey);
        sig.check_finite("propagate_span")
    }
}

pub fn propagate_span(sig: &mut WdmSignal, cfg: &SsfConfig) -> Result<()> {
    Propagator::new(cfg)?.span(sig)
}

/// Lumped amplifier: gain, then white circular ASE noise of PSD
/// `h nu (G F - 1) / 2` per polarization over the simulation bandwidth.
pub fn edfa<R: Rng + ?Sized>(sig: &mut WdmSignal, gain_db: f64, noise_figure_db: f64, carrier_hz: f64, rng: &mut R) -> Result<()> {
    let g = db_to_linear(gain_db).sqrt();
    let psd_mw = ase_psd_w_per_hz(gain_db, noise_figure_db, carrier_hz) * 1e3;
    let sigma = (psd_mw * sig.sample_rate_hz).max(0.0).sqrt();
    for field in sig.fields.iter_mut() {
        field.iter_mut().for_each(|v| *v *= g);
        if sigma > 0.0 {
            let noise = standard_complex_noise(field.len(), rng);
            field.iter_mut().zip(noise).for_each(|(v, e)| *v += e * sigma);
        }
    }
    sig.check_finite("edfa")
}

/// Received center-channel symbols, aligned to the transmitted ones.
#[derive(Debug, Clone)]
pub struct Received {
    /// Transmitted symbols, x polarization then y polarization.
    pub x: Vec<Complex64>,
    /// Received symbols after the complex scale/rotation fit.
    pub y: Vec<Complex64>,
    pub snr_db: f64,
    pub sampling_phase: usize,
}

/// Center-channel receiver: brick-wall channel filter, dispersion
/// compensation over `length_km`, RRC matched filter, data-aided choice of
/// the sampling phase and one global complex gain fit.
pub fn receive(sig: &WdmSignal, cfg: &SsfConfig, length_km: f64) -> Result<Received> {
    cfg.validate()?;
    let n = cfg.n_samples();
    if sig.fields[0].len() != n || sig.fields[1].len() != n {
        return Err(Error::ShapeMismatch {
            op: "receive",
            detail: format!("signal has {} samples, configuration expects {n}", sig.fields[0].len()),
        });
    }
    let center = cfg.n_channels / 2;
    let tx = &sig.symbols[center];
    let df = cfg.sample_rate_hz() / n as f64;
    let beta2 = cfg.beta2_s2_per_km();
    let edge = cfg.symbol_rate_hz * (1.0 + cfg.rolloff) / 2.0;
    let filter: Vec<Complex64> = (0..n)
        .map(|k| {
            let f = bin_frequency(k, n, df);
            if f.abs() > edge + 1e-9 * df {
                return Complex64::new(0.0, 0.0);
            }
            let w = 2.0 * std::f64::consts::PI * f;
            let cd = Complex64::from_polar(1.0, -beta2 / 2.0 * w * w * length_km);
            cd * raised_cosine(f, cfg.symbol_rate_hz, cfg.rolloff).sqrt()
        })
        .collect();

    let mut tf = Transforms::new(n);
    let mut filtered = Vec::with_capacity(2);
    for field in &sig.fields {
        let mut s = field.clone();
        tf.fft(&mut s);
        s.iter_mut().zip(&filter).for_each(|(v, h)| *v *= h);
        tf.ifft(&mut s);
        filtered.push(s);
    }

    let os = cfg.oversampling;
    let x: Vec<Complex64> = tx[0].iter().chain(&tx[1]).copied().collect();
    let mut best: Option<(f64, usize)> = None;
    for phase in 0..os {
        let mut num = Complex64::new(0.0, 0.0);
        let mut energy = 0.0;
        for (pol, s) in filtered.iter().enumerate() {
            for (i, xi) in tx[pol].iter().enumerate() {
                let yi = s[i * os + phase];
                num += xi.conj() * yi;
                energy += yi.norm_sqr();
            }
        }
        let score = if energy > 0.0 { num.norm_sqr() / energy } else { 0.0 };
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, phase));
        }
    }
    let phase = best.map_or(0, |(_, p)| p);
    let y: Vec<Complex64> = filtered
        .iter()
        .flat_map(|s| (0..cfg.n_symbols).map(move |i| s[i * os + phase]))
        .collect();
    let fit = align(&x, &y)?;
    Ok(Received {
        y: fit.apply(&y),
        x,
        snr_db: fit.snr_db,
        sampling_phase: phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionResult {
    pub snr_eff_db: f64,
    pub mi: MiEstimate,
    /// Total residual noise variance referred to the launch power, mW.
    pub sigma2_total_mw: f64,
    /// Analytic ASE variance of the link (zero with ASE disabled), mW.
    pub sigma2_ase_mw: f64,
    /// `sigma2_total_mw - sigma2_ase_mw`.
    pub sigma2_nl_mw: f64,
}

/// Full pipeline: modulate, `n_spans` x (span, EDFA), receive, metrics.
pub fn run_transmission(c: &Constellation, cfg: &SsfConfig, n_spans: usize, power_dbm: f64) -> Result<TransmissionResult> {
    if n_spans == 0 {
        return Err(Error::InvalidArgument("n_spans must be at least 1".into()));
    }
    let c = if c.is_normalized() { c.clone() } else { c.normalized()? };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sig = modulate(&c, cfg, power_dbm, &mut rng)?;
    let mut prop = Propagator::new(cfg)?;
    for _ in 0..n_spans {
        prop.span(&mut sig)?;
        if cfg.enable_ase {
            edfa(&mut sig, cfg.span_gain_db(), cfg.noise_figure_db, cfg.carrier_frequency_hz(), &mut rng)?;
        } else {
            let g = db_to_linear(cfg.span_gain_db()).sqrt();
            sig.fields.iter_mut().flatten().for_each(|v| *v *= g);
        }
    }
    let rx = receive(&sig, cfg, n_spans as f64 * cfg.span_length_km)?;
    let mi = mi_from_pairs(&c, &rx.x, &rx.y)?;
    let p = dbm_to_mw(power_dbm);
    let sigma2_total_mw = p / db_to_linear(rx.snr_db);
    let sigma2_ase_mw = if cfg.enable_ase {
        ase_variance(&cfg.link(n_spans))?
    } else {
        0.0
    };
    Ok(TransmissionResult {
        snr_eff_db: rx.snr_db,
        mi,
        sigma2_total_mw,
        sigma2_ase_mw,
        sigma2_nl_mw: sigma2_total_mw - sigma2_ase_mw,
    })
}

/// Runs every (constellation, power) pair and returns calibration points.
/// Runs are independent and execute in parallel.
pub fn calibration_points(
    constellations: &[Constellation],
    powers_dbm: &[f64],
    cfg: &SsfConfig,
    n_spans: usize,
) -> Result<Vec<CalibrationPoint>> {
    let jobs: Vec<(&Constellation, f64)> = constellations
        .iter()
        .flat_map(|c| powers_dbm.iter().map(move |&p| (c, p)))
        .collect();
    jobs.par_iter()
        .map(|&(c, p)| {
            let r = run_transmission(c, cfg, n_spans, p)?;
            let m = c.moments();
            Ok(CalibrationPoint {
                power_mw: dbm_to_mw(p),
                mu4: m.mu4,
                mu6: m.mu6,
                sigma2_nl_mw: r.sigma2_nl_mw,
            })
        })
        .collect()
}

/// Predicted linear-regime SNR for an ASE-only link, dB.
pub fn ase_limited_snr_db(cfg: &SsfConfig, n_spans: usize, power_dbm: f64) -> Result<f64> {
    Ok(linear_to_db(dbm_to_mw(power_dbm) / ase_variance(&cfg.link(n_spans))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SsfConfig {
        SsfConfig {
            n_symbols: 1 << 12,
            ..SsfConfig::desk()
        }
    }

    fn cw(cfg: &SsfConfig, power_mw: f64) -> WdmSignal {
        let n = cfg.n_samples();
        WdmSignal {
            fields: [vec![Complex64::new(power_mw.sqrt(), 0.0); n], vec![Complex64::new(0.0, 0.0); n]],
            sample_rate_hz: cfg.sample_rate_hz(),
            channel_offsets_hz: vec![0.0],
            symbols: vec![],
        }
    }

    #[test]
    fn raised_cosine_is_nyquist() {
        for rolloff in [0.0, 0.05, 0.5, 1.0] {
            for i in 0..50 {
                let f = -16e9 + i as f64 * 0.64e9;
                let sum: f64 = (-3..=3).map(|m| raised_cosine(f + m as f64 * 32e9, 32e9, rolloff)).sum();
                assert!((sum - 1.0).abs() < 1e-12, "rolloff {rolloff} f {f}: {sum}");
            }
        }
    }

    #[test]
    fn validation_rejects_bad_grids() {
        assert!(SsfConfig::desk().validate().is_ok());
        assert!(SsfConfig::full().validate().is_ok());
        let ok = small();
        for bad in [
            SsfConfig { n_symbols: 1000, ..ok.clone() },
            SsfConfig { oversampling: 2, ..ok.clone() },
            SsfConfig { n_channels: 2, ..ok.clone() },
            SsfConfig { step_km: 0.3, ..ok.clone() },
            SsfConfig { rolloff: 1.5, ..ok.clone() },
            SsfConfig { n_symbols: 8, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        let err = SsfConfig { oversampling: 2, ..ok }.validate().unwrap_err().to_string();
        assert!(err.contains("aliasing"), "{err}");
    }

    #[test]
    fn modulated_power_matches_launch_power() {
        let cfg = SsfConfig {
            n_symbols: 1 << 14,
            n_channels: 1,
            ..SsfConfig::desk()
        };
        let q = Constellation::qam(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sig = modulate(&q, &cfg, 3.0, &mut rng).unwrap();
        let per_pol = sig.total_power_mw() / 2.0;
        assert!((per_pol / dbm_to_mw(3.0) - 1.0).abs() < 0.005, "{per_pol}");
        // the shaped power is exactly the drawn symbols' mean power
        for (pol, f) in sig.fields.iter().enumerate() {
            let p = f.iter().map(|v| v.norm_sqr()).sum::<f64>() / f.len() as f64;
            let s = &sig.symbols[0][pol];
            let e = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.len() as f64;
            assert!((p / (e * dbm_to_mw(3.0)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_has_one_band_per_channel() {
        let cfg = SsfConfig { n_channels: 5, ..small() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sig = modulate(&Constellation::qam(4).unwrap(), &cfg, 0.0, &mut rng).unwrap();
        assert_eq!(sig.channel_offsets_hz, vec![-100e9, -50e9, 0.0, 50e9, 100e9]);
        let n = cfg.n_samples();
        let mut spectrum = sig.fields[0].clone();
        Transforms::new(n).fft(&mut spectrum);
        let df = cfg.bin_hz();
        let half_width = cfg.symbol_rate_hz * (1.0 + cfg.rolloff) / 2.0;
        let mut band_energy = vec![0.0; 5];
        let mut outside = 0.0;
        for (k, v) in spectrum.iter().enumerate() {
            let f = bin_frequency(k, n, df);
            match sig.channel_offsets_hz.iter().position(|o| (f - o).abs() <= half_width) {
                Some(b) => band_energy[b] += v.norm_sqr(),
                None => outside += v.norm_sqr(),
            }
        }
        let total: f64 = band_energy.iter().sum();
        assert!(outside / total < 1e-20);
        for e in &band_energy {
            assert!((e / (total / 5.0) - 1.0).abs() < 1e-9, "{band_energy:?}");
        }
    }

    #[test]
    fn back_to_back_recovers_symbols() {
        let cfg = small();
        let q = Constellation::qam(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig = modulate(&q, &cfg, 2.0, &mut rng).unwrap();
        let rx = receive(&sig, &cfg, 0.0).unwrap();
        assert_eq!(rx.sampling_phase, 0);
        assert_eq!(rx.snr_db, crate::metrics::SNR_CAP_DB);
        let worst = rx.x.iter().zip(&rx.y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn loss_only_span_is_minus_twenty_db() {
        let cfg = SsfConfig {
            gamma_per_w_km: 0.0,
            dispersion_ps_nm_km: 0.0,
            ..small()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sig = modulate(&Constellation::qam(16).unwrap(), &cfg, 0.0, &mut rng).unwrap();
        let before = sig.energy();
        propagate_span(&mut sig, &cfg).unwrap();
        assert!((sig.energy() / before / 1e-2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dispersion_only_is_all_pass() {
        let cfg = SsfConfig {
            gamma_per_w_km: 0.0,
            attenuation_db_per_km: 0.0,
            ..small()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sig = modulate(&Constellation::qam(16).unwrap(), &cfg, 0.0, &mut rng).unwrap();
        let before = sig.clone();
        propagate_span(&mut sig, &cfg).unwrap();
        assert!((sig.energy() / before.energy() - 1.0).abs() < 1e-9);
        let mut tf = Transforms::new(cfg.n_samples());
        let (mut a, mut b) = (before.fields[0].clone(), sig.fields[0].clone());
        tf.fft(&mut a);
        tf.fft(&mut b);
        let peak = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = a.iter().zip(&b).map(|(u, v)| (u.norm() - v.norm()).abs()).fold(0.0, f64::max);
        assert!(worst / peak < 1e-9, "{worst}");
        // dispersion did act on the waveform
        let moved = before.fields[0].iter().zip(&sig.fields[0]).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(moved > 1e-3);
    }

    #[test]
    fn spm_phase_of_continuous_wave() {
        let cfg = SsfConfig {
            dispersion_ps_nm_km: 0.0,
            ..small()
        };
        let mut sig = cw(&cfg, 1.0);
        propagate_span(&mut sig, &cfg).unwrap();
        let alpha = cfg.alpha_per_km();
        let l_eff = (1.0 - (-alpha * cfg.span_length_km).exp()) / alpha;
        assert!((l_eff - 21.48).abs() < 0.02, "{l_eff}");
        let expected = 8.0 / 9.0 * 1.3e-3 * l_eff;
        assert!((expected - 0.0248).abs() < 5e-5);
        let phase = sig.fields[0][17].arg();
        assert!((phase / expected - 1.0).abs() < 1e-6, "{phase} vs {expected}");
        assert!((sig.fields[0][17].norm_sqr() / 1e-2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_amplifier_adds_nothing() {
        let cfg = small();
        let mut sig = cw(&cfg, 1.0);
        let before = sig.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        edfa(&mut sig, 0.0, 0.0, cfg.carrier_frequency_hz(), &mut rng).unwrap();
        assert_eq!(sig.fields, before.fields);
    }

    #[test]
    fn amplifier_noise_psd_and_independence() {
        let cfg = SsfConfig {
            n_symbols: 1 << 17,
            ..SsfConfig::desk()
        };
        let n = cfg.n_samples();
        let mut sig = cw(&cfg, 0.0);
        assert!(n >= 1_000_000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        edfa(&mut sig, 20.0, 5.0, cfg.carrier_frequency_hz(), &mut rng).unwrap();
        let expected_psd = ase_psd_w_per_hz(20.0, 5.0, cfg.carrier_frequency_hz()) * 1e3;
        for f in &sig.fields {
            let var = f.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            let psd = var / cfg.sample_rate_hz();
            assert!((psd / expected_psd - 1.0).abs() < 0.02, "{psd} vs {expected_psd}");
        }
        let [x, y] = &sig.fields;
        let cross: Complex64 = x.iter().zip(y).map(|(a, b)| a * b.conj()).sum();
        let norm = (x.iter().map(|v| v.norm_sqr()).sum::<f64>() * y.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
        assert!(cross.norm() / norm < 0.01);
    }

    #[test]
    fn linear_noiseless_link_is_inverted_exactly() {
        let cfg = SsfConfig {
            gamma_per_w_km: 0.0,
            enable_ase: false,
            ..small()
        };
        let r = run_transmission(&Constellation::qam(16).unwrap(), &cfg, 2, 0.0).unwrap();
        assert!(r.snr_eff_db >= 50.0, "{}", r.snr_eff_db);
        assert!((r.mi.mi_bits_per_4d - 8.0).abs() < 1e-9);
    }

    #[test]
    fn noise_only_link_matches_ase_prediction() {
        let cfg = SsfConfig {
            gamma_per_w_km: 0.0,
            ..small()
        };
        for (spans, p) in [(1, -4.0), (3, 2.0)] {
            let r = run_transmission(&Constellation::qam(16).unwrap(), &cfg, spans, p).unwrap();
            let predicted = ase_limited_snr_db(&cfg, spans, p).unwrap();
            assert!((r.snr_eff_db - predicted).abs() < 0.2, "{} vs {predicted}", r.snr_eff_db);
            assert!(r.sigma2_nl_mw.abs() < 0.1 * r.sigma2_ase_mw);
        }
    }

    #[test]
    fn transmission_is_deterministic() {
        let cfg = SsfConfig { seed: 11, ..small() };
        let q = Constellation::qam(16).unwrap();
        let a = run_transmission(&q, &cfg, 1, 3.0).unwrap();
        let b = run_transmission(&q, &cfg, 1, 3.0).unwrap();
        assert_eq!(a, b);
        let c = run_transmission(&q, &SsfConfig { seed: 12, ..cfg }, 1, 3.0).unwrap();
        assert_ne!(a.snr_eff_db, c.snr_eff_db);
    }

    #[test]
    fn input_errors() {
        let q = Constellation::qam(4).unwrap();
        assert!(run_transmission(&q, &small(), 0, 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(modulate(&q, &small(), f64::NAN, &mut rng).is_err());
        let sig = modulate(&q, &small(), 0.0, &mut rng).unwrap();
        let other = SsfConfig { n_symbols: 1 << 13, ..small() };
        assert!(matches!(receive(&sig, &other, 0.0), Err(Error::ShapeMismatch { .. })));
    }
}
