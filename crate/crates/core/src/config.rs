//! Flat key-value run configuration.
//!
//! One `key = value` per line, `#` starts a comment. Keys carry a section
//! prefix (`link.`, `model.`, `train.`, `ssf.`, `calib.`, `eval.`). Unknown or
//! repeated keys are errors. [`RunConfig::to_text`] writes every key, so a
//! snapshot parses back to the same configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, LinkConfig, ModelKind, NlinCoefficients, NlinFit, DEFAULT_VARIANCE_FLOOR_MW};
use crate::error::{Error, Result};
use crate::ssf::SsfConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub launch_power_dbm: f64,
    /// JSON file written by the calibration command.
    pub kappa_file: Option<PathBuf>,
    pub kappa0: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub variance_floor_mw: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gn,
            launch_power_dbm: 0.0,
            kappa_file: None,
            kappa0: None,
            kappa1: None,
            kappa2: None,
            variance_floor_mw: DEFAULT_VARIANCE_FLOOR_MW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub order: usize,
    pub layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub power_learning_rate: Option<f64>,
    pub batch_schedule: Vec<(usize, usize)>,
    pub max_iterations: usize,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    pub seed: u64,
    pub joint_power: bool,
    pub initial_launch_power_dbm: Option<f64>,
    pub detach_moments: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::new(64, ChannelModel::new(ModelKind::Gn, 0.0, NlinCoefficients::gn(0.0), 0.0));
        Self {
            order: t.order,
            layers: t.layers,
            hidden_units: t.hidden_units,
            learning_rate: t.learning_rate,
            power_learning_rate: t.power_learning_rate,
            batch_schedule: t.batch_schedule,
            max_iterations: t.max_iterations,
            plateau_window: t.plateau_window,
            plateau_tolerance: t.plateau_tolerance,
            seed: t.seed,
            joint_power: t.train_launch_power,
            initial_launch_power_dbm: t.initial_launch_power_dbm,
            detach_moments: t.detach_moments,
        }
    }
}

/// Simulator settings. The fiber itself comes from the `link.` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsfSettings {
    pub n_symbols: usize,
    pub oversampling: usize,
    pub n_channels: usize,
    pub rolloff: f64,
    pub step_km: f64,
    pub enable_ase: bool,
    pub seed: u64,
}

impl SsfSettings {
    fn from_preset(c: &SsfConfig) -> Self {
        Self {
            n_symbols: c.n_symbols,
            oversampling: c.oversampling,
            n_channels: c.n_channels,
            rolloff: c.rolloff,
            step_km: c.step_km,
            enable_ase: c.enable_ase,
            seed: c.seed,
        }
    }
}

impl Default for SsfSettings {
    fn default() -> Self {
        Self::from_preset(&SsfConfig::desk())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSettings {
    /// QAM orders of the calibration constellations.
    pub orders: Vec<usize>,
    pub powers_dbm: Vec<f64>,
}

impl Default for CalibSettings {
    fn default() -> Self {
        Self {
            orders: vec![4, 16, 64],
            powers_dbm: vec![0.0, 3.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub mi_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mi_samples: crate::metrics::DEFAULT_MI_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub link: LinkConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub ssf: SsfSettings,
    pub calib: CalibSettings,
    pub eval: EvalSettings,
}

fn num(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::parse(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::parse(key, format!("`{v}` is not finite")));
    }
    Ok(x)
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::parse(key, format!("`{v}` is not a non-negative integer")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::parse(key, format!("`{v}` is not a boolean"))),
    }
}

fn list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(key, s.trim())).collect()
}

fn optional<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

fn schedule(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    list(key, v, |key, item| {
        let (a, b) = item
            .split_once(':')
            .ok_or_else(|| Error::parse(key, format!("`{item}` is not `iteration:multiple`")))?;
        Ok((int(key, a.trim())?, int(key, b.trim())?))
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or("none".into(), T::to_string)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::parse(k, "key given more than once"));
            }
            pairs.push((k, v.trim().to_string()));
        }
        let mut cfg = Self::default();
        // The scale preset resets the simulator fields, so it goes first.
        if let Some((k, v)) = pairs.iter().find(|(k, _)| k == "ssf.scale") {
            cfg.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "ssf.scale") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or the config snapshot inside a run manifest
    /// (any JSON object with a string `config` field).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let snapshot = v
                .get("config")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::parse("config", "JSON file has no string `config` field"))?;
            return Self::parse(snapshot);
        }
        Self::parse(&text)
    }

    /// Sets one key. Used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "link.n_spans" => self.link.n_spans = int(k, v)?,
            "link.span_length_km" => self.link.span_length_km = num(k, v)?,
            "link.attenuation_db_per_km" => self.link.attenuation_db_per_km = num(k, v)?,
            "link.gamma_per_w_km" => self.link.gamma_per_w_km = num(k, v)?,
            "link.dispersion_ps_nm_km" => self.link.dispersion_ps_nm_km = num(k, v)?,
            "link.noise_figure_db" => self.link.noise_figure_db = num(k, v)?,
            "link.symbol_rate_hz" => self.link.symbol_rate_hz = num(k, v)?,
            "link.n_channels" => self.link.n_channels = int(k, v)?,
            "link.channel_spacing_hz" => self.link.channel_spacing_hz = num(k, v)?,
            "link.center_wavelength_nm" => self.link.center_wavelength_nm = num(k, v)?,
            "link.tx_awgn_snr_db" => self.link.tx_awgn_snr_db = optional(k, v, num)?,

            "model.kind" => self.model.kind = v.parse().map_err(|_| Error::parse(k, format!("`{v}` is not gn or nlin")))?,
            "model.launch_power_dbm" => self.model.launch_power_dbm = num(k, v)?,
            "model.kappa_file" => self.model.kappa_file = optional(k, v, |_, s| Ok(PathBuf::from(s)))?,
            "model.kappa0" => self.model.kappa0 = optional(k, v, num)?,
            "model.kappa1" => self.model.kappa1 = optional(k, v, num)?,
            "model.kappa2" => self.model.kappa2 = optional(k, v, num)?,
            "model.variance_floor_mw" => self.model.variance_floor_mw = num(k, v)?,

            "train.order" => self.train.order = int(k, v)?,
            "train.layers" => self.train.layers = int(k, v)?,
            "train.hidden_units" => self.train.hidden_units = int(k, v)?,
            "train.learning_rate" => self.train.learning_rate = num(k, v)?,
            "train.power_learning_rate" => self.train.power_learning_rate = optional(k, v, num)?,
            "train.batch_schedule" => self.train.batch_schedule = schedule(k, v)?,
            "train.max_iterations" => self.train.max_iterations = int(k, v)?,
            "train.plateau_window" => self.train.plateau_window = int(k, v)?,
            "train.plateau_tolerance" => self.train.plateau_tolerance = num(k, v)?,
            "train.seed" => self.train.seed = int(k, v)?,
            "train.joint_power" => self.train.joint_power = flag(k, v)?,
            "train.initial_launch_power_dbm" => self.train.initial_launch_power_dbm = optional(k, v, num)?,
            "train.detach_moments" => self.train.detach_moments = flag(k, v)?,

            "ssf.scale" => {
                self.ssf = match v {
                    "desk" => SsfSettings::from_preset(&SsfConfig::desk()),
                    "full" => SsfSettings::from_preset(&SsfConfig::full()),
                    _ => return Err(Error::parse(k, format!("`{v}` is not desk or full"))),
                }
            }
            "ssf.n_symbols" => self.ssf.n_symbols = int(k, v)?,
            "ssf.oversampling" => self.ssf.oversampling = int(k, v)?,
            "ssf.n_channels" => self.ssf.n_channels = int(k, v)?,
            "ssf.rolloff" => self.ssf.rolloff = num(k, v)?,
            "ssf.step_km" => self.ssf.step_km = num(k, v)?,
            "ssf.enable_ase" => self.ssf.enable_ase = flag(k, v)?,
            "ssf.seed" => self.ssf.seed = int(k, v)?,

            "calib.orders" => self.calib.orders = list(k, v, int)?,
            "calib.powers_dbm" => self.calib.powers_dbm = list(k, v, num)?,

            "eval.mi_samples" => self.eval.mi_samples = int(k, v)?,
            _ => return Err(Error::parse(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let (l, m, t, s, c) = (&self.link, &self.model, &self.train, &self.ssf, &self.calib);
        vec![
            ("link.n_spans", l.n_spans.to_string()),
            ("link.span_length_km", l.span_length_km.to_string()),
            ("link.attenuation_db_per_km", l.attenuation_db_per_km.to_string()),
            ("link.gamma_per_w_km", l.gamma_per_w_km.to_string()),
            ("link.dispersion_ps_nm_km", l.dispersion_ps_nm_km.to_string()),
            ("link.noise_figure_db", l.noise_figure_db.to_string()),
            ("link.symbol_rate_hz", l.symbol_rate_hz.to_string()),
            ("link.n_channels", l.n_channels.to_string()),
            ("link.channel_spacing_hz", l.channel_spacing_hz.to_string()),
            ("link.center_wavelength_nm", l.center_wavelength_nm.to_string()),
            ("link.tx_awgn_snr_db", opt(&l.tx_awgn_snr_db)),
            ("model.kind", m.kind.to_string()),
            ("model.launch_power_dbm", m.launch_power_dbm.to_string()),
            ("model.kappa_file", opt(&m.kappa_file.as_ref().map(|p| p.display().to_string()))),
            ("model.kappa0", opt(&m.kappa0)),
            ("model.kappa1", opt(&m.kappa1)),
            ("model.kappa2", opt(&m.kappa2)),
            ("model.variance_floor_mw", m.variance_floor_mw.to_string()),
            ("train.order", t.order.to_string()),
            ("train.layers", t.layers.to_string()),
            ("train.hidden_units", t.hidden_units.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.power_learning_rate", opt(&t.power_learning_rate)),
            (
                "train.batch_schedule",
                t.batch_schedule.iter().map(|(i, m)| format!("{i}:{m}")).collect::<Vec<_>>().join(","),
            ),
            ("train.max_iterations", t.max_iterations.to_string()),
            ("train.plateau_window", t.plateau_window.to_string()),
            ("train.plateau_tolerance", t.plateau_tolerance.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.joint_power", t.joint_power.to_string()),
            ("train.initial_launch_power_dbm", opt(&t.initial_launch_power_dbm)),
            ("train.detach_moments", t.detach_moments.to_string()),
            ("ssf.n_symbols", s.n_symbols.to_string()),
            ("ssf.oversampling", s.oversampling.to_string()),
            ("ssf.n_channels", s.n_channels.to_string()),
            ("ssf.rolloff", s.rolloff.to_string()),
            ("ssf.step_km", s.step_km.to_string()),
            ("ssf.enable_ase", s.enable_ase.to_string()),
            ("ssf.seed", s.seed.to_string()),
            ("calib.orders", join(&c.orders)),
            ("calib.powers_dbm", join(&c.powers_dbm)),
            ("eval.mi_samples", self.eval.mi_samples.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if !(self.model.variance_floor_mw > 0.0) {
            return Err(Error::Config("model.variance_floor_mw must be positive".into()));
        }
        if self.eval.mi_samples == 0 {
            return Err(Error::Config("eval.mi_samples must be positive".into()));
        }
        if self.calib.orders.is_empty() || self.calib.powers_dbm.is_empty() {
            return Err(Error::Config("calib.orders and calib.powers_dbm must be non-empty".into()));
        }
        self.ssf_config().validate()
    }

    /// Coefficients from `model.kappa_file` or the inline `model.kappa*`
    /// keys; `None` when neither is given. The GN model needs only `kappa0`.
    pub fn coefficients(&self) -> Result<Option<NlinCoefficients>> {
        let m = &self.model;
        let inline = m.kappa0.is_some() || m.kappa1.is_some() || m.kappa2.is_some();
        if inline && m.kappa_file.is_some() {
            return Err(Error::Config("give either model.kappa_file or model.kappa0/1/2, not both".into()));
        }
        if let Some(path) = &m.kappa_file {
            return NlinFit::load(path).map(|f| Some(f.coefficients()));
        }
        let Some(kappa0) = m.kappa0 else {
            if inline {
                return Err(Error::Config("model.kappa1/kappa2 given without model.kappa0".into()));
            }
            return Ok(None);
        };
        let coeffs = match (m.kind, m.kappa1, m.kappa2) {
            (_, Some(kappa1), Some(kappa2)) => NlinCoefficients { kappa0, kappa1, kappa2 },
            (ModelKind::Gn, None, None) => NlinCoefficients::gn(kappa0),
            (ModelKind::Nlin, ..) => {
                return Err(Error::Config("the nlin model needs model.kappa0, kappa1 and kappa2".into()))
            }
            (ModelKind::Gn, ..) => return Err(Error::Config("give both model.kappa1 and model.kappa2 or neither".into())),
        };
        coeffs.validate()?;
        Ok(Some(coeffs))
    }

    pub fn channel_model(&self, coeffs: NlinCoefficients) -> Result<ChannelModel> {
        let mut ch = ChannelModel::for_link(self.model.kind, &self.link, coeffs, self.model.launch_power_dbm)?;
        ch.variance_floor_mw = self.model.variance_floor_mw;
        ch.validate()?;
        Ok(ch)
    }

    pub fn train_config(&self, coeffs: NlinCoefficients) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            layers: t.layers,
            hidden_units: t.hidden_units,
            learning_rate: t.learning_rate,
            power_learning_rate: t.power_learning_rate,
            batch_schedule: t.batch_schedule.clone(),
            max_iterations: t.max_iterations,
            plateau_window: t.plateau_window,
            plateau_tolerance: t.plateau_tolerance,
            seed: t.seed,
            train_launch_power: t.joint_power,
            initial_launch_power_dbm: t.initial_launch_power_dbm,
            detach_moments: t.detach_moments,
            ..TrainConfig::new(t.order, self.channel_model(coeffs)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Simulator configuration: fiber from `link.`, numerics from `ssf.`.
    pub fn ssf_config(&self) -> SsfConfig {
        let (l, s) = (&self.link, &self.ssf);
        SsfConfig {
            n_symbols: s.n_symbols,
            symbol_rate_hz: l.symbol_rate_hz,
            oversampling: s.oversampling,
            channel_spacing_hz: l.channel_spacing_hz,
            n_channels: s.n_channels,
            rolloff: s.rolloff,
            span_length_km: l.span_length_km,
            attenuation_db_per_km: l.attenuation_db_per_km,
            gamma_per_w_km: l.gamma_per_w_km,
            dispersion_ps_nm_km: l.dispersion_ps_nm_km,
            noise_figure_db: l.noise_figure_db,
            center_wavelength_nm: l.center_wavelength_nm,
            step_km: s.step_km,
            enable_ase: s.enable_ase,
            seed: s.seed,
        }
    }
}

/// Parses a power list: `start:step:stop` (inclusive) or comma-separated
/// values. An empty list is an error.
pub fn parse_power_list(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let parts: Vec<&str> = s.split(':').collect();
    let powers = match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b) = (num("powers", a.trim())?, num("powers", step.trim())?, num("powers", b.trim())?);
            if !(step > 0.0) {
                return Err(Error::parse("powers", format!("step must be positive, got {step}")));
            }
            let n = ((b - a) / step + 1e-9).floor();
            if n < 0.0 {
                return Err(Error::parse("powers", format!("empty range {s}")));
            }
            (0..=n as usize).map(|i| a + step * i as f64).collect()
        }
        [_] => list("powers", s, num)?,
        _ => return Err(Error::parse("powers", format!("`{s}` is neither start:step:stop nor a list"))),
    };
    if powers.is_empty() {
        return Err(Error::parse("powers", "the power list is empty"));
    }
    Ok(powers)
}
