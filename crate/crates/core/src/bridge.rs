//! The 23-component bridge: topology, global parameter, vehicle schedule and
//! sensor layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{LibraryConfig, RefPort, Variant};
use crate::params::ParameterBounds;

pub const N_COMP: usize = 23;
/// Loaded components (0-based indices of 4, 8, 12, 16, 20).
pub const LOADED: [usize; 5] = [3, 7, 11, 15, 19];
/// Components that may carry a crack (0-based indices of 8 and 16).
pub const DAMAGEABLE: [usize; 2] = [7, 15];
/// Number of varying entries of the global parameter.
pub const N_PARAMS: usize = 45;

/// Variant of every component for the given damage labels (1 healthy, 2 cracked).
pub fn topology(damage: [u8; 2]) -> Vec<Variant> {
    (0..N_COMP)
        .map(|c| {
            let n = c + 1;
            if n == 1 {
                Variant::EndLeft
            } else if n == N_COMP {
                Variant::EndRight
            } else if n % 4 == 2 {
                Variant::Pier
            } else if n % 2 == 1 {
                Variant::Deck
            } else if let Some(k) = DAMAGEABLE.iter().position(|&d| d == c) {
                if damage[k] == 2 {
                    Variant::Cracked
                } else {
                    Variant::Loaded
                }
            } else {
                Variant::Loaded
            }
        })
        .collect()
}

/// Reference port of each interface `c | c+1`.
pub fn interface_ports(variants: &[Variant]) -> Result<Vec<RefPort>> {
    variants
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            RefPort::between(w[0], w[1]).ok_or_else(|| {
                Error::InvalidGeometry(format!("no reference port between components {} and {}", i + 1, i + 2))
            })
        })
        .collect()
}

/// Left end of each component along the deck and the total length.
pub fn component_offsets(lib: &LibraryConfig, variants: &[Variant]) -> (Vec<f64>, f64) {
    let mut x = 0.0;
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        out.push(x);
        x += lib.geometry(*v).deck_length();
    }
    (out, x)
}

/// Load parameters of one axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axle {
    pub magnitude: f64,
    pub width: f64,
    pub friction: f64,
}

/// The 45-entry global parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParameter {
    /// Damage labels of components 8 and 16 (1 healthy, 2 cracked).
    pub damage: [u8; 2],
    pub alpha: f64,
    pub beta: f64,
    pub young: Vec<f64>,
    /// Front axle first.
    pub axles: [Axle; 2],
    /// Speed in m/s.
    pub speed: f64,
    pub axle_distance: f64,
    /// Activation margins `(d1, d2)` of the loaded components.
    pub margins: [[f64; 2]; 5],
}

fn truncated_normal(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let n = Normal::new(mean, std).expect("valid normal");
    loop {
        let x: f64 = n.sample(rng);
        if (x - mean).abs() <= 4.0 * std {
            return x;
        }
    }
}

impl GlobalParameter {
    /// Independent draw from the parameter distribution.
    pub fn sample(b: &ParameterBounds, rng: &mut ChaCha8Rng) -> Self {
        let damage = [rng.random_range(1..=2u8), rng.random_range(1..=2u8)];
        let alpha = b.alpha.at(rng.random());
        let beta = b.beta.at(rng.random());
        let young = (0..N_COMP).map(|_| b.young.at(rng.random())).collect();
        let mut axle = || Axle {
            magnitude: b.magnitude.at(rng.random()),
            width: b.width.at(rng.random()),
            friction: b.friction.at(rng.random()),
        };
        let axles = [axle(), axle()];
        let speed = b.speed_kmh.at(rng.random()) / 3.6;
        let axle_distance = truncated_normal(b.axle_mean, b.axle_std, rng);
        let mut margins = [[0.0; 2]; 5];
        for m in margins.iter_mut() {
            *m = [b.margin.at(rng.random()), b.margin.at(rng.random())];
        }
        Self { damage, alpha, beta, young, axles, speed, axle_distance, margins }
    }

    pub fn sample_seeded(b: &ParameterBounds, seed: u64) -> Self {
        Self::sample(b, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Every uniform entry at the fraction `u` of its interval and the axle
    /// distance at `mean + k std`.
    pub fn uniform_at(b: &ParameterBounds, u: f64, k: f64, damage: [u8; 2]) -> Self {
        let axle = Axle { magnitude: b.magnitude.at(u), width: b.width.at(u), friction: b.friction.at(u) };
        Self {
            damage,
            alpha: b.alpha.at(u),
            beta: b.beta.at(u),
            young: vec![b.young.at(u); N_COMP],
            axles: [axle, axle],
            speed: b.speed_kmh.at(u) / 3.6,
            axle_distance: b.axle_mean + k * b.axle_std,
            margins: [[b.margin.at(u); 2]; 5],
        }
    }

    /// The four reference cases: mean healthy, mean with component 8
    /// cracked, lower bounds with 16 cracked, upper bounds with both cracked.
    pub fn example(b: &ParameterBounds, case: usize) -> Result<Self> {
        match case {
            1 => Ok(Self::uniform_at(b, 0.5, 0.0, [1, 1])),
            2 => Ok(Self::uniform_at(b, 0.5, 0.0, [2, 1])),
            3 => Ok(Self::uniform_at(b, 0.0, -4.0, [1, 2])),
            4 => Ok(Self::uniform_at(b, 1.0, 4.0, [2, 2])),
            _ => Err(Error::InvalidParameter(format!("example case {case} (expected 1..=4)"))),
        }
    }

    /// Flattened entries in the order of [`GlobalParameter::names`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.damage[0] as f64, self.damage[1] as f64, self.alpha, self.beta];
        v.extend(&self.young);
        for a in &self.axles {
            v.extend([a.magnitude, a.width, a.friction]);
        }
        v.push(self.speed);
        v.push(self.axle_distance);
        for m in &self.margins {
            v.extend(m);
        }
        v
    }

    pub fn names() -> Vec<String> {
        let mut n = vec!["theta_8".to_string(), "theta_16".into(), "alpha".into(), "beta".into()];
        n.extend((1..=N_COMP).map(|c| format!("E_{c}")));
        for a in 1..=2 {
            n.extend([format!("F_{a}"), format!("sigma_{a}"), format!("c_{a}")]);
        }
        n.push("V".into());
        n.push("d_a".into());
        for c in LOADED {
            n.extend([format!("d1_{}", c + 1), format!("d2_{}", c + 1)]);
        }
        n
    }

    pub fn validate(&self, b: &ParameterBounds) -> Result<()> {
        let tol = 1e-12;
        let within = |r: crate::params::Range, x: f64| x >= r.lo - tol * r.lo.abs().max(1.0) && x <= r.hi + tol * r.hi.abs().max(1.0);
        let ok = self.damage.iter().all(|&d| d == 1 || d == 2)
            && self.young.len() == N_COMP
            && within(b.alpha, self.alpha)
            && within(b.beta, self.beta)
            && self.young.iter().all(|&e| within(b.young, e))
            && self.axles.iter().all(|a| {
                within(b.magnitude, a.magnitude) && within(b.width, a.width) && within(b.friction, a.friction)
            })
            && within(b.speed_kmh, self.speed * 3.6)
            && (self.axle_distance - b.axle_mean).abs() <= 4.0 * b.axle_std + 1e-12
            && self.margins.iter().flatten().all(|&d| within(b.margin, d));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("global parameter outside its bounds".into()))
        }
    }
}

/// Axle trajectories along the deck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSchedule {
    pub speed: f64,
    pub axle_distance: f64,
    /// Largest axle width; sets the entry and exit margins.
    pub width: f64,
    pub bridge_length: f64,
}

impl VehicleSchedule {
    pub fn new(mu: &GlobalParameter, bridge_length: f64) -> Result<Self> {
        if !(mu.speed > 0.0) {
            return Err(Error::InvalidParameter(format!("vehicle speed {}", mu.speed)));
        }
        Ok(Self {
            speed: mu.speed,
            axle_distance: mu.axle_distance,
            width: mu.axles[0].width.max(mu.axles[1].width),
            bridge_length,
        })
    }

    /// Time for the rear axle to leave the deck.
    pub fn t_final(&self) -> f64 {
        (self.bridge_length + self.axle_distance + 8.0 * self.width) / self.speed
    }

    /// Position of axle `a` (0 front, 1 rear) at time `t`.
    pub fn position(&self, a: usize, t: f64) -> f64 {
        -4.0 * self.width + self.speed * t - if a == 1 { self.axle_distance } else { 0.0 }
    }
}

/// Load center of one axle on one loaded component, in component-local
/// coordinates relative to mid-span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSite {
    /// Index into [`LOADED`].
    pub slot: usize,
    pub axle: usize,
    pub l: f64,
}

/// How the switched moving load is sampled at a time level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LoadSampling {
    /// Point value at `t_j`.
    Point,
    /// Average over `[t_j - dt/2, t_j + dt/2]`: the on/off switch enters
    /// through its exact overlap fraction, the smooth part at the midpoint
    /// of the overlap. Keeps second order in time across the switches.
    #[default]
    CellAverage,
}

/// Activation window `[lo, hi]` of `axle` on loaded slot `slot`.
pub fn activation_window(mu: &GlobalParameter, slot: usize, axle: usize) -> (f64, f64) {
    let s = mu.axles[axle].width;
    let [d1, d2] = mu.margins[slot];
    (-d1 - 4.0 * s, d2 + 4.0 * s)
}

/// Weighted load sites at time `t` for step `dt`.
///
/// `mid_x[slot]` is the deck coordinate of the mid-span of each loaded slot.
pub fn load_sites(
    mu: &GlobalParameter,
    schedule: &VehicleSchedule,
    mid_x: &[f64],
    t: f64,
    dt: f64,
    sampling: LoadSampling,
) -> Vec<(LoadSite, f64)> {
    let mut out = Vec::new();
    for axle in 0..2 {
        for (slot, &xm) in mid_x.iter().enumerate() {
            let (lo, hi) = activation_window(mu, slot, axle);
            match sampling {
                LoadSampling::Point => {
                    let l = schedule.position(axle, t) - xm;
                    if l >= lo && l <= hi {
                        out.push((LoadSite { slot, axle, l }, 1.0));
                    }
                }
                LoadSampling::CellAverage => {
                    let x0 = schedule.position(axle, 0.0) - xm;
                    let (t_on, t_off) = ((lo - x0) / schedule.speed, (hi - x0) / schedule.speed);
                    let a = (t - 0.5 * dt).max(t_on);
                    let b = (t + 0.5 * dt).min(t_off);
                    if b > a {
                        let tm = 0.5 * (a + b);
                        let l = (schedule.position(axle, tm) - xm).clamp(lo, hi);
                        out.push((LoadSite { slot, axle, l }, (b - a) / dt));
                    }
                }
            }
        }
    }
    out
}

/// Sensor placement on the damageable components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    /// Distance of the two upper sensors from the crack position.
    pub top_offset: f64,
    /// Distance of the two lower sensors from the crack position.
    pub bottom_offset: f64,
}

impl SensorLayout {
    pub const NEAR: SensorLayout = SensorLayout { top_offset: 0.2, bottom_offset: 0.5 };
    pub const FAR: SensorLayout = SensorLayout { top_offset: 0.5, bottom_offset: 0.5 };

    /// Sensor coordinates in component coordinates, ordered
    /// (top left, top right, bottom left, bottom right).
    pub fn points(&self, length: f64, thickness: f64) -> [[f64; 2]; 4] {
        let xm = 0.5 * length;
        [
            [xm - self.top_offset, thickness],
            [xm + self.top_offset, thickness],
            [xm - self.bottom_offset, 0.0],
            [xm + self.bottom_offset, 0.0],
        ]
    }
}
