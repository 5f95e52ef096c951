//! Normalized two-point correlation features of sensor signals and the
//! measurement noise model.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacement signals of the sensors of one component on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSignals {
    pub t_final: f64,
    /// `data[k][i][j]`: direction `k`, sensor `i`, time level `j`.
    pub data: Vec<Vec<Vec<f64>>>,
}

impl SensorSignals {
    /// Builds signals from row-major `(n_t + 1) x (d * n_sensors)` samples
    /// ordered direction-major (all x, then all y).
    pub fn from_rows(rows: &[f64], dims: usize, n_sensors: usize, t_final: f64) -> Result<Self> {
        let width = dims * n_sensors;
        if width == 0 || rows.len() % width != 0 || rows.len() / width < 2 {
            return Err(Error::DimensionMismatch(format!("{} samples for {width} signals", rows.len())));
        }
        let n_t = rows.len() / width;
        let mut data = vec![vec![Vec::with_capacity(n_t); n_sensors]; dims];
        for r in rows.chunks(width) {
            for k in 0..dims {
                for i in 0..n_sensors {
                    data[k][i].push(r[k * n_sensors + i]);
                }
            }
        }
        let s = Self { t_final, data };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || self.data.is_empty() || self.data[0].is_empty() {
            return Err(Error::InvalidParameter("empty sensor signals".into()));
        }
        let n = self.data[0][0].len();
        if n < 2 || self.data.iter().flatten().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch("sensor signals of unequal length".into()));
        }
        if self.data.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sensor signal".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.data.len()
    }
    pub fn n_sensors(&self) -> usize {
        self.data[0].len()
    }
    pub fn n_levels(&self) -> usize {
        self.data[0][0].len()
    }
    pub fn dt(&self) -> f64 {
        self.t_final / (self.n_levels() - 1) as f64
    }

    /// Largest absolute value over all sensors and times in direction `k`.
    pub fn direction_max(&self, k: usize) -> f64 {
        self.data[k].iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest absolute value of each signal, `[k][i]`.
    pub fn signal_maxima(&self) -> Vec<Vec<f64>> {
        self.data.iter().map(|d| d.iter().map(|s| s.iter().fold(0.0f64, |m, x| m.max(x.abs()))).collect()).collect()
    }
}

/// Normalized correlation `C_{i,j,k,l}(tau)` with `tau = shift * dt`.
///
/// Trapezoidal quadrature of `(1/T) int_0^{T - tau} u_k(x_i, t) u_l(x_j, t + tau) dt`
/// divided by the largest absolute displacements in directions `k` and `l`.
pub fn correlation(s: &SensorSignals, i: usize, j: usize, k: usize, l: usize, shift: usize) -> Result<f64> {
    let n = s.n_levels();
    if k >= s.dims() || l >= s.dims() || i >= s.n_sensors() || j >= s.n_sensors() || shift >= n {
        return Err(Error::InvalidParameter(format!("correlation indices ({i},{j},{k},{l}) shift {shift}")));
    }
    let (mk, ml) = (s.direction_max(k), s.direction_max(l));
    if mk == 0.0 || ml == 0.0 {
        return Err(Error::ZeroSignal(format!("direction {} has no signal", if mk == 0.0 { k } else { l })));
    }
    let a = &s.data[k][i];
    let b = &s.data[l][j];
    Ok(trapezoid_product(a, b, shift) * s.dt() / (s.t_final * mk * ml))
}

fn trapezoid_product(a: &[f64], b: &[f64], shift: usize) -> f64 {
    let m = a.len() - shift;
    if m < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 0..m {
        acc += a[t] * b[t + shift];
    }
    acc - 0.5 * (a[0] * b[shift] + a[m - 1] * b[m - 1 + shift])
}

/// Shipped feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// All zero-shift correlations of equal-direction sensor pairs.
    Ipv,
    /// The x-direction block of [`FeatureKind::Ipv`].
    Ipvx,
}

impl FeatureKind {
    pub fn len(self, dims: usize, n_sensors: usize) -> usize {
        match self {
            Self::Ipv => dims * n_sensors * n_sensors,
            Self::Ipvx => n_sensors * n_sensors,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Self::Ipv => "ipv",
            Self::Ipvx => "ipvx",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipv" => Ok(Self::Ipv),
            "ipvx" => Ok(Self::Ipvx),
            _ => Err(Error::Config(format!("unknown feature kind '{s}'"))),
        }
    }
}

/// Feature vector ordered direction-major, then first sensor, then second.
pub fn feature_vector(s: &SensorSignals, kind: FeatureKind) -> Result<Vec<f64>> {
    let dims = match kind {
        FeatureKind::Ipv => s.dims(),
        FeatureKind::Ipvx => 1,
    };
    let ns = s.n_sensors();
    let mut out = Vec::with_capacity(dims * ns * ns);
    for k in 0..dims {
        let m = s.direction_max(k);
        if m == 0.0 {
            return Err(Error::ZeroSignal(format!("direction {k} has no signal")));
        }
        let scale = s.dt() / (s.t_final * m * m);
        for i in 0..ns {
            for j in 0..ns {
                out.push(trapezoid_product(&s.data[k][i], &s.data[k][j], 0) * scale);
            }
        }
    }
    Ok(out)
}

/// The x block of an IPV vector.
pub fn ipvx_from_ipv(ipv: &[f64], n_sensors: usize) -> &[f64] {
    &ipv[..n_sensors * n_sensors]
}

/// Adds Gaussian noise with standard deviation `sigma * max_t |u|` to each
/// signal; maxima are taken before perturbation.
pub fn add_noise<R: Rng>(s: &SensorSignals, sigma: f64, rng: &mut R) -> Result<SensorSignals> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise factor {sigma}")));
    }
    let mut out = s.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let maxima = s.signal_maxima();
    for (k, dir) in out.data.iter_mut().enumerate() {
        for (i, sig) in dir.iter_mut().enumerate() {
            let std = sigma * maxima[k][i];
            for x in sig.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += std * z;
            }
        }
    }
    Ok(out)
}
