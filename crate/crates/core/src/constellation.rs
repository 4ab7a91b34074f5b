//! Constellations: generation, normalization, moments and persistence.
//!
//! A constellation is an ordered list of complex symbols. The position of a
//! symbol in the list is its label, which is also the one-hot index used while
//! training. Only one complex dimension per symbol is supported; dual
//! polarization reuses the same 2D constellation on both polarizations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Current version of the constellation JSON format.
pub const FORMAT_VERSION: u64 = 1;

const NORMALIZED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    normalized: bool,
    metadata: BTreeMap<String, Value>,
}

/// Standardized absolute moments of a constellation or sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    /// Mean power E[|x|^2].
    pub mu2: f64,
    /// E[|x|^4] / E[|x|^2]^2.
    pub mu4: f64,
    /// E[|x|^6] / E[|x|^2]^3.
    pub mu6: f64,
}

impl Moments {
    /// Moments of a circular complex Gaussian.
    pub const GAUSSIAN: Moments = Moments {
        mu2: 1.0,
        mu4: 2.0,
        mu6: 6.0,
    };
}

/// Computes (mu2, mu4, mu6) of a sample set, uniformly weighted unless
/// `weights` is given.
pub fn moments_of(samples: &[Complex64], weights: Option<&[f64]>) -> Result<Moments> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput(
            "moments of an empty sample set".into(),
        ));
    }
    let (mut m2, mut m4, mut m6) = (0.0, 0.0, 0.0);
    match weights {
        None => {
            for p in samples {
                let a = p.norm_sqr();
                m2 += a;
                m4 += a * a;
                m6 += a * a * a;
            }
            let n = samples.len() as f64;
            m2 /= n;
            m4 /= n;
            m6 /= n;
        }
        Some(w) => {
            if w.len() != samples.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} points",
                    w.len(),
                    samples.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "weights sum to {total}, expected 1"
                )));
            }
            for (p, &wi) in samples.iter().zip(w) {
                let a = p.norm_sqr();
                m2 += wi * a;
                m4 += wi * a * a;
                m6 += wi * a * a * a;
            }
        }
    }
    if m2 <= 0.0 {
        return Err(Error::DegenerateInput(
            "moments of an all-zero sample set".into(),
        ));
    }
    Ok(Moments {
        mu2: m2,
        mu4: m4 / (m2 * m2),
        mu6: m6 / (m2 * m2 * m2),
    })
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

impl Constellation {
    /// Builds a constellation from its points in label order.
    pub fn new(points: Vec<Complex64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "constellation order must be at least 2, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::InvalidArgument(
                "constellation points must be finite".into(),
            ));
        }
        let mean_power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        Ok(Self {
            normalized: (mean_power - 1.0).abs() <= NORMALIZED_TOL,
            points,
            metadata: BTreeMap::new(),
        })
    }

    /// Square M-QAM with unit average power.
    ///
    /// Label `i` splits into a high half (in-phase) and a low half
    /// (quadrature) of `log2(M)/2` bits each; each half is read as a Gray
    /// code and mapped to the amplitude level `2k - (L - 1)` with `L = sqrt(M)`.
    /// Neighbouring amplitude levels therefore differ in one label bit.
    pub fn qam(order: usize) -> Result<Self> {
        if !matches!(order, 4 | 16 | 64 | 256) {
            return Err(Error::InvalidArgument(format!(
                "QAM order must be one of 4, 16, 64, 256, got {order}"
            )));
        }
        let bits_per_axis = order.trailing_zeros() / 2;
        let levels = 1usize << bits_per_axis;
        let mask = levels - 1;
        let level = |g: usize| 2.0 * gray_to_binary(g) as f64 - (levels - 1) as f64;
        let points = (0..order)
            .map(|label| Complex64::new(level(label >> bits_per_axis), level(label & mask)))
            .collect();
        let mut c = Self::new(points)?.normalized()?;
        c.metadata
            .insert("kind".into(), Value::String(format!("{order}-QAM")));
        Ok(c)
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn n_complex_dims(&self) -> usize {
        1
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn metadata(&self) -> &BTreeMap<String, Value> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, Value> {
        &mut self.metadata
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Uniform-prior moments.
    pub fn moments(&self) -> Moments {
        moments_of(&self.points, None).expect("non-degenerate constellation")
    }

    /// Moments under the given per-point probabilities.
    pub fn weighted_moments(&self, probabilities: &[f64]) -> Result<Moments> {
        moments_of(&self.points, Some(probabilities))
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order() as f64
    }

    /// Scales every point by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let mut c = Self::new(self.points.iter().map(|p| p * factor).collect())?;
        c.metadata = self.metadata.clone();
        Ok(c)
    }

    /// Returns the constellation scaled to unit mean power.
    pub fn normalized(&self) -> Result<Self> {
        let power = self.mean_power();
        if power <= 0.0 {
            return Err(Error::DegenerateInput(
                "cannot normalize an all-zero constellation".into(),
            ));
        }
        let scale = power.sqrt().recip();
        let mut c = self.clone();
        for p in &mut c.points {
            *p *= scale;
        }
        c.normalized = true;
        Ok(c)
    }

    /// Smallest Euclidean distance between two distinct labels.
    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }

    pub fn to_json(&self) -> Value {
        let points: Vec<Value> = self
            .points
            .iter()
            .map(|p| Value::from(vec![p.re, p.im]))
            .collect();
        serde_json::json!({
            "format_version": FORMAT_VERSION,
            "M": self.order(),
            "n_complex_dims": self.n_complex_dims(),
            "points": points,
            "metadata": self.metadata,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse("<root>", "expected a JSON object"))?;
        let get_uint = |field: &str| -> Result<u64> {
            obj.get(field)
                .ok_or_else(|| Error::parse(field, "missing"))?
                .as_u64()
                .ok_or_else(|| Error::parse(field, "expected a non-negative integer"))
        };
        let version = get_uint("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(
                "format_version",
                format!("unsupported version {version}"),
            ));
        }
        let order = get_uint("M")? as usize;
        let dims = get_uint("n_complex_dims")?;
        if dims != 1 {
            return Err(Error::parse(
                "n_complex_dims",
                format!("only 1 complex dimension is supported, got {dims}"),
            ));
        }
        let raw_points = obj
            .get("points")
            .ok_or_else(|| Error::parse("points", "missing"))?
            .as_array()
            .ok_or_else(|| Error::parse("points", "expected an array"))?;
        if raw_points.len() != order {
            return Err(Error::parse(
                "points",
                format!("header declares M={order} but {} points are listed", raw_points.len()),
            ));
        }
        let mut points = Vec::with_capacity(order);
        for (i, p) in raw_points.iter().enumerate() {
            let field = format!("points[{i}]");
            let pair = p
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| Error::parse(&field, "expected [re, im]"))?;
            let re = pair[0]
                .as_f64()
                .ok_or_else(|| Error::parse(&field, "real part is not a number"))?;
            let im = pair[1]
                .as_f64()
                .ok_or_else(|| Error::parse(&field, "imaginary part is not a number"))?;
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::parse(&field, "non-finite value"));
            }
            points.push(Complex64::new(re, im));
        }
        let mut c = Self::new(points).map_err(|e| Error::parse("M", e.to_string()))?;
        match obj.get("metadata") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                c.metadata = map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            }
            Some(_) => return Err(Error::parse("metadata", "expected an object")),
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::parse("<json>", e.to_string()))?;
        Self::from_json(&value)
    }

    /// Writes `re,im` rows in label order, for plotting.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "re,im")?;
        for p in &self.points {
            writeln!(out, "{},{}", p.re, p.im)?;
        }
        Ok(())
    }
}
