//! JSON run configurations and the building blocks they share.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::ValueEnum;
use qkin::collision_linear::PotentialSpectrum;
use qkin::collision_uu::PairPotential;
use qkin::quasifree::{thermal_distribution_drifting, occupation};
use qkin::{DispersionKind, DispersionModel, Distribution, MomentumGrid, Statistics};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, FieldContext};

/// Fields every run configuration carries.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn seed_mut(&mut self) -> &mut u64;
    fn threads(&self) -> Option<usize>;
    fn output_dir(&self) -> Option<&Path>;
    /// Checks cross-field constraints before any computation starts.
    fn validate(&self) -> Result<(), CliError>;
}

/// Reads a config file, or returns the defaults when no file is given.
pub fn load<T: RunConfig>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let message = match msg.rfind(" at line ") {
            Some(i) => msg[..i].to_string(),
            None => msg,
        };
        CliError::ConfigParse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message,
        }
    })
}

pub fn resolve_relative(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Lattice,
    Continuum,
    Acoustic,
    Optical,
}

impl ModelName {
    pub fn kind(self) -> DispersionKind {
        match self {
            ModelName::Lattice => DispersionKind::LatticeNn,
            ModelName::Continuum => DispersionKind::ContinuumQuadratic,
            ModelName::Acoustic => DispersionKind::PhononAcoustic,
            ModelName::Optical => DispersionKind::PhononOptical,
        }
    }

    pub fn build(self, dim: usize, gap: f64) -> Result<DispersionModel, CliError> {
        DispersionModel::from_kind(self.kind(), dim, gap).field("model")
    }
}

/// Momentum grid: the torus for periodic models, the box `[-K, K]^d`
/// otherwise.
pub fn momentum_grid(
    model: &DispersionModel,
    n: usize,
    half_width: f64,
) -> Result<Arc<MomentumGrid>, CliError> {
    let g = if model.is_periodic() {
        MomentumGrid::torus(model.dim(), n)
    } else {
        MomentumGrid::boxed(model.dim(), n, half_width)
    };
    Ok(Arc::new(g.field("grid")?))
}

/// Radial profile used both for disorder spectra and pair potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `amplitude * exp(-|q|^2 / (2 width^2))`
    Gaussian { amplitude: f64, width: f64 },
}

impl Profile {
    pub fn spectrum(&self) -> PotentialSpectrum {
        match *self {
            Profile::Constant { value } => PotentialSpectrum::Constant(value),
            Profile::Gaussian { amplitude, width } => PotentialSpectrum::Gaussian { amplitude, width },
        }
    }

    pub fn pair_potential(&self) -> PairPotential {
        match *self {
            Profile::Constant { value } => PairPotential::Constant(value),
            Profile::Gaussian { amplitude, width } => PairPotential::Gaussian { amplitude, width },
        }
    }
}

/// `constant:1`, `constant:c=1` or `gaussian:a=1,w=2`.
impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let mut named = Vec::new();
        for part in args.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').unwrap_or(("", part));
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("`{part}` is not a number"))?;
            named.push((k.trim().to_string(), v));
        }
        let get = |keys: &[&str]| -> Result<f64, String> {
            named
                .iter()
                .find(|(k, _)| keys.contains(&k.as_str()))
                .map(|(_, v)| *v)
                .ok_or_else(|| format!("missing `{}=` in `{s}`", keys[0]))
        };
        match kind.trim() {
            "constant" => Ok(Profile::Constant {
                value: get(&["c", "value", ""])?,
            }),
            "gaussian" => Ok(Profile::Gaussian {
                amplitude: get(&["a", "amplitude"])?,
                width: get(&["w", "width"])?,
            }),
            other => Err(format!("unknown profile `{other}` (expected constant or gaussian)")),
        }
    }
}

/// Smearing width: a number or `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Eta {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for Eta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Eta::Auto);
        }
        s.parse::<f64>()
            .map(Eta::Value)
            .map_err(|_| format!("eta must be a number or `auto`, got `{s}`"))
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta::Auto => write!(f, "auto"),
            Eta::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Eta::Auto => s.serialize_str("auto"),
            Eta::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Eta::Value(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Eta {
    /// The explicit value, or the automatic width at `energy`.
    pub fn resolve(
        self,
        grid: &MomentumGrid,
        model: &DispersionModel,
        energy: f64,
    ) -> Result<f64, CliError> {
        match self {
            Eta::Value(v) if v > 0.0 && v.is_finite() => Ok(v),
            Eta::Value(v) => Err(CliError::field("eta", format!("must be positive, got {v}"))),
            Eta::Auto => qkin::auto_eta(grid, model, energy).field("eta"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

/// Named initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    Thermal {
        temperature: f64,
        mu: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drift: Option<Vec<f64>>,
    },
    /// Mixture `(1 - fraction) W_{T_low} + fraction W_{T_high}` at a common
    /// chemical potential.
    TwoTemperature {
        t_low: f64,
        t_high: f64,
        mu: f64,
        #[serde(default = "half")]
        fraction: f64,
    },
    /// `amplitude * exp(-|r - r0|^2 / (2 sigma_r^2) - |k - k0|^2 / (2 sigma_k^2))`;
    /// the spatial factor is dropped in homogeneous runs.
    Bump {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r0: Option<Vec<f64>>,
        #[serde(default = "one")]
        sigma_r: f64,
        k0: Vec<f64>,
        sigma_k: f64,
        #[serde(default = "half")]
        amplitude: f64,
    },
    /// Sum of momentum Gaussians.
    Gaussians { terms: Vec<GaussianTerm> },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

fn wrap(x: f64) -> f64 {
    x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor()
}

fn sq_dist(k: &[f64], c: &[f64], periodic: bool) -> f64 {
    k.iter()
        .zip(c)
        .map(|(a, b)| {
            let d = if periodic { wrap(a - b) } else { a - b };
            d * d
        })
        .sum()
}

impl Initial {
    fn check_dims(&self, dim: usize) -> Result<(), CliError> {
        let bad = |v: &[f64]| v.len() != dim;
        let ok = match self {
            Initial::Thermal { temperature, drift, .. } => {
                *temperature > 0.0 && !drift.as_deref().is_some_and(bad)
            }
            Initial::TwoTemperature { t_low, t_high, fraction, .. } => {
                *t_low > 0.0 && *t_high > 0.0 && (0.0..=1.0).contains(fraction)
            }
            Initial::Bump { k0, sigma_k, sigma_r, .. } => {
                !bad(k0) && *sigma_k > 0.0 && *sigma_r > 0.0
            }
            Initial::Gaussians { terms } => {
                !terms.is_empty() && terms.iter().all(|t| !bad(&t.center) && t.sigma > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::field(
                "initial",
                format!("parameters are not valid in dimension {dim}: {self:?}"),
            ))
        }
    }

    /// Closed-form momentum profile.
    pub fn momentum_fn(
        &self,
        model: &DispersionModel,
        stats: Statistics,
    ) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>, CliError> {
        self.check_dims(model.dim())?;
        let periodic = model.is_periodic();
        let m = model.clone();
        Ok(match self.clone() {
            Initial::Thermal { temperature, mu, drift } => {
                let drift = drift.unwrap_or_else(|| vec![0.0; m.dim()]);
                Box::new(move |k: &[f64]| {
                    let s: Vec<f64> = k.iter().zip(&drift).map(|(a, u)| a - u).collect();
                    occupation((m.omega_unchecked(&s) - mu) / temperature, stats)
                })
            }
            Initial::TwoTemperature { t_low, t_high, mu, fraction } => Box::new(move |k: &[f64]| {
                let w = m.omega_unchecked(k) - mu;
                (1.0 - fraction) * occupation(w / t_low, stats) + fraction * occupation(w / t_high, stats)
            }),
            Initial::Bump { k0, sigma_k, amplitude, .. } => Box::new(move |k: &[f64]| {
                amplitude * (-0.5 * sq_dist(k, &k0, periodic) / (sigma_k * sigma_k)).exp()
            }),
            Initial::Gaussians { terms } => Box::new(move |k: &[f64]| {
                terms
                    .iter()
                    .map(|t| t.amplitude * (-0.5 * sq_dist(k, &t.center, periodic) / (t.sigma * t.sigma)).exp())
                    .sum()
            }),
        })
    }

    /// Spatial profile at cell centre `r` in a periodic box of side `side`;
    /// 1 except for the bump.
    pub fn spatial_factor(&self, r: &[f64], side: f64) -> f64 {
        match self {
            Initial::Bump { r0, sigma_r, .. } => {
                let s2: f64 = r
                    .iter()
                    .enumerate()
                    .map(|(a, x)| {
                        let c = r0.as_ref().and_then(|v| v.get(a)).copied().unwrap_or(0.5 * side);
                        let mut d = (x - c).rem_euclid(side);
                        if d > 0.5 * side {
                            d -= side;
                        }
                        d * d
                    })
                    .sum();
                (-0.5 * s2 / (sigma_r * sigma_r)).exp()
            }
            _ => 1.0,
        }
    }

    pub fn distribution(
        &self,
        model: &DispersionModel,
        grid: Arc<MomentumGrid>,
        stats: Statistics,
    ) -> Result<Distribution, CliError> {
        if let Initial::Thermal { temperature, mu, drift } = self {
            self.check_dims(model.dim())?;
            let drift = drift.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
            return thermal_distribution_drifting(model, grid, *temperature, *mu, &drift, stats)
                .field("initial");
        }
        let f = self.momentum_fn(model, stats)?;
        Distribution::from_fn(grid, stats, |k| f(k)).field("initial")
    }
}

pub fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::field(field, format!("must be positive and finite, got {v}")))
    }
}

pub fn at_least(field: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::field(field, format!("must be at least {min}, got {v}")))
    }
}

pub fn statistics_of_theta(theta: i32) -> Result<Statistics, CliError> {
    Statistics::from_theta(theta).field("theta")
}
