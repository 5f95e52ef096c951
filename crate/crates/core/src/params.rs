//! Parameter ranges and the training frequency grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
    /// Maps `u` in `[0, 1]` onto the interval.
    pub fn at(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("{name}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Ranges of the physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterBounds {
    pub young: Range,
    pub alpha: Range,
    pub beta: Range,
    pub magnitude: Range,
    pub width: Range,
    pub friction: Range,
    /// Vehicle speed in km/h.
    pub speed_kmh: Range,
    pub axle_mean: f64,
    pub axle_std: f64,
    pub margin: Range,
}

impl Default for ParameterBounds {
    fn default() -> Self {
        Self {
            young: Range::new(29e9, 37e9),
            alpha: Range::new(0.566, 4.311),
            beta: Range::new(0.009, 0.021),
            magnitude: Range::new(1e6, 2e6),
            width: Range::new(0.02, 0.04),
            friction: Range::new(0.5, 0.7),
            speed_kmh: Range::new(15.0, 50.0),
            axle_mean: 3.0,
            axle_std: 0.5,
            margin: Range::new(0.10, 0.15),
        }
    }
}

impl ParameterBounds {
    pub fn validate(&self) -> Result<()> {
        self.young.validate("young")?;
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.magnitude.validate("magnitude")?;
        self.width.validate("width")?;
        self.friction.validate("friction")?;
        self.speed_kmh.validate("speed_kmh")?;
        self.margin.validate("margin")?;
        if !(self.width.lo > 0.0 && self.speed_kmh.lo > 0.0 && self.axle_std >= 0.0) {
            return Err(Error::Config("width, speed must be positive and axle_std non-negative".into()));
        }
        Ok(())
    }

    /// Characteristic load time `d_min / V_max` in seconds.
    pub fn sigma_t_ref(&self) -> f64 {
        self.margin.lo / (self.speed_kmh.hi / 3.6)
    }
}

/// Equispaced angular frequencies `{0, dw, ..., w_max}` with
/// `dw = 1 / (c_lower t_ref)` and `w_max = c_upper / t_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub c_lower: usize,
    pub c_upper: usize,
    pub sigma_t_ref: f64,
}

impl FrequencyGrid {
    pub fn new(c_lower: usize, c_upper: usize, sigma_t_ref: f64) -> Result<Self> {
        if c_lower == 0 || c_upper == 0 || !(sigma_t_ref > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "frequency grid c_lower={c_lower}, c_upper={c_upper}, t_ref={sigma_t_ref}"
            )));
        }
        Ok(Self { c_lower, c_upper, sigma_t_ref })
    }
    pub fn len(&self) -> usize {
        self.c_lower * self.c_upper + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn d_omega(&self) -> f64 {
        1.0 / (self.c_lower as f64 * self.sigma_t_ref)
    }
    pub fn omega_max(&self) -> f64 {
        self.c_upper as f64 / self.sigma_t_ref
    }
    pub fn omegas(&self) -> Vec<f64> {
        let dw = self.d_omega();
        (0..self.len()).map(|k| k as f64 * dw).collect()
    }
}
