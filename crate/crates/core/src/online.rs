//! Two-level online reduction for one global parameter.
//!
//! Level 1 solves frequency-domain problems in the port-reduced component
//! space through a Petrov-Galerkin Schur complement on the global port-mode
//! unknowns. Level 2 compresses those solutions with a strong greedy into a
//! small space in which the time-domain problem is marched.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    activation_window, component_offsets, interface_ports, load_sites, topology, GlobalParameter, LoadSampling, LoadSite,
    SensorLayout, VehicleSchedule, DAMAGEABLE, LOADED, N_COMP,
};
use crate::error::{Error, Result};
use crate::fem::frequency_coefficients;
use crate::library::{eim_coefficients, ArchetypeLibrary, RefPort, Variant};
use crate::mesh::Side;
use crate::newmark::{newmark_march, DenseStructure, NewmarkScheme};
use crate::offline::OfflineCache;
use crate::params::FrequencyGrid;

/// Settings of the online stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub c_lower: usize,
    pub c_upper: usize,
    pub greedy_tol: f64,
    /// Largest number of greedy iterations allowed.
    pub max_basis: usize,
    pub n_steps: usize,
    pub richardson_tol: f64,
    /// Largest step count tried by the Richardson refinement.
    pub max_steps: usize,
    pub load_sampling: LoadSampling,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            c_lower: 10,
            c_upper: 5,
            greedy_tol: 1e-5,
            max_basis: 51,
            n_steps: 10_000,
            richardson_tol: 1e-4,
            max_steps: 80_000,
            load_sampling: LoadSampling::CellAverage,
            seed: 7,
        }
    }
}

/// Frequencies and load locations of the Level 1 training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTrainSet {
    pub omegas: Vec<f64>,
    pub loads: Vec<LoadSite>,
    pub seed: u64,
}

/// Per-component data of the Level 1 solve for a fixed parameter.
#[derive(Debug, Clone)]
struct ComponentPlan {
    variant: Variant,
    young: f64,
    /// Selected basis columns: liftings, their bubbles, inhomogeneity bubbles.
    sel: Vec<usize>,
    /// `(global port unknown, position of psi in sel, positions of bubbles)`.
    lifts: Vec<(usize, usize, Vec<usize>)>,
    xi: Vec<usize>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
}

/// A bridge instance: topology, parameters and Level 1 bookkeeping.
#[derive(Debug, Clone)]
pub struct BridgeSystem<'a> {
    pub lib: &'a ArchetypeLibrary,
    pub cache: &'a OfflineCache,
    pub mu: GlobalParameter,
    pub variants: Vec<Variant>,
    pub ports: Vec<RefPort>,
    pub port_offsets: Vec<usize>,
    pub n_port_unknowns: usize,
    /// Left end of each component along the deck.
    pub x_left: Vec<f64>,
    pub length: f64,
    pub schedule: VehicleSchedule,
    plans: Vec<ComponentPlan>,
}

fn select(m: &DMatrix<f64>, sel: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(sel.len(), sel.len(), |i, j| m[(sel[i], sel[j])])
}

impl<'a> BridgeSystem<'a> {
    pub fn new(lib: &'a ArchetypeLibrary, cache: &'a OfflineCache, mu: GlobalParameter) -> Result<Self> {
        if cache.library_hash != lib.hash() {
            return Err(Error::ArtifactMismatch("offline cache was built for a different library".into()));
        }
        if mu.young.len() != N_COMP {
            return Err(Error::InvalidParameter(format!("{} moduli for {N_COMP} components", mu.young.len())));
        }
        let variants = topology(mu.damage);
        let ports = interface_ports(&variants)?;
        let mut port_offsets = Vec::with_capacity(ports.len());
        let mut n = 0;
        for p in &ports {
            port_offsets.push(n);
            n += cache.port(*p).n_modes();
        }
        let (x_left, length) = component_offsets(&lib.config, &variants);
        let schedule = VehicleSchedule::new(&mu, length)?;
        let mut plans = Vec::with_capacity(N_COMP);
        for (c, &v) in variants.iter().enumerate() {
            let vc = cache.variant(v);
            let mut used = Vec::new();
            if c > 0 {
                for l in vc.lifts_for(Side::Left, ports[c - 1]) {
                    used.push((port_offsets[c - 1] + l.mode, l));
                }
            }
            if c + 1 < N_COMP {
                for l in vc.lifts_for(Side::Right, ports[c]) {
                    used.push((port_offsets[c] + l.mode, l));
                }
            }
            let mut sel: Vec<usize> = used.iter().map(|(_, l)| l.psi).collect();
            let mut lifts = Vec::with_capacity(used.len());
            for (k, (g, l)) in used.iter().enumerate() {
                let mut b = Vec::with_capacity(l.bubbles.len());
                for &col in &l.bubbles {
                    b.push(sel.len());
                    sel.push(col);
                }
                lifts.push((*g, k, b));
            }
            let xi: Vec<usize> = vc
                .inhomogeneity
                .iter()
                .map(|&col| {
                    sel.push(col);
                    sel.len() - 1
                })
                .collect();
            plans.push(ComponentPlan {
                variant: v,
                young: mu.young[c],
                mass: select(&vc.mass, &sel),
                stiffness: select(&vc.stiffness, &sel),
                sel,
                lifts,
                xi,
            });
        }
        Ok(Self { lib, cache, mu, variants, ports, port_offsets, n_port_unknowns: n, x_left, length, schedule, plans })
    }

    /// `(component, x of mid-span)` of a loaded slot.
    pub fn loaded_component(&self, slot: usize) -> (usize, f64) {
        let c = LOADED[slot];
        (c, self.x_left[c] + 0.5 * self.lib.config.length)
    }

    /// Activation window of axle `axle` on loaded slot `slot`.
    pub fn window(&self, slot: usize, axle: usize) -> (f64, f64) {
        activation_window(&self.mu, slot, axle)
    }

    /// Deck coordinates of the loaded mid-spans.
    pub fn loaded_mid_x(&self) -> Vec<f64> {
        (0..LOADED.len()).map(|s| self.loaded_component(s).1).collect()
    }

    /// Weighted load sites at time `t` for a step `dt`.
    pub fn active_loads(&self, t: f64, dt: f64, sampling: LoadSampling) -> Vec<(LoadSite, f64)> {
        load_sites(&self.mu, &self.schedule, &self.loaded_mid_x(), t, dt, sampling)
    }

    /// Surrogate load coefficients of a site.
    pub fn load_coefficients(&self, site: &LoadSite) -> Result<Vec<f64>> {
        let (c, _) = self.loaded_component(site.slot);
        let v = self.variants[c];
        let boundary = self.lib.get(v).loaded.as_ref().ok_or_else(|| Error::InvalidGeometry(format!("{v:?} is not loaded")))?;
        let eim = self.cache.variant(v).eim.as_ref().ok_or_else(|| Error::Corrupted(format!("{v:?} has no load surrogate")))?;
        Ok(eim_coefficients(boundary, eim, site.l, self.mu.axles[site.axle].width))
    }

    /// Load of a site projected on the local basis of its component.
    pub fn local_load(&self, site: &LoadSite) -> Result<(usize, DVector<f64>)> {
        let (c, _) = self.loaded_component(site.slot);
        let vc = self.cache.variant(self.variants[c]);
        let th = DVector::from_vec(self.load_coefficients(site)?);
        let a = self.mu.axles[site.axle];
        let f = (&vc.load_x * &th - &vc.load_y * &th * a.friction) * a.magnitude;
        Ok((c, f))
    }

    pub fn vehicle_final_time(&self) -> f64 {
        self.schedule.t_final()
    }
}

/// Frequency grid and seeded random load sites for Level 1.
pub fn build_online_train_set(sys: &BridgeSystem<'_>, grid: &FrequencyGrid, seed: u64) -> OnlineTrainSet {
    let omegas = grid.omegas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loads = (0..omegas.len())
        .map(|j| {
            let axle = j % 2;
            let windows: Vec<(f64, f64)> = (0..LOADED.len()).map(|s| sys.window(s, axle)).collect();
            let total: f64 = windows.iter().map(|(a, b)| b - a).sum();
            let mut u = rng.random::<f64>() * total;
            let mut site = LoadSite { slot: LOADED.len() - 1, axle, l: windows[LOADED.len() - 1].1 };
            for (s, (a, b)) in windows.iter().enumerate() {
                if u <= b - a {
                    site = LoadSite { slot: s, axle, l: a + u };
                    break;
                }
                u -= b - a;
            }
            site
        })
        .collect();
    OnlineTrainSet { omegas, loads, seed }
}

/// Level 1 solution in compressed form: coefficients over each component basis.
#[derive(Debug, Clone)]
pub struct Level1Solution {
    pub omega: f64,
    pub coeffs: Vec<DVector<Complex64>>,
}

fn cplx(m: &DMatrix<f64>, s: Complex64) -> DMatrix<Complex64> {
    m.map(|x| s * x)
}

/// Solves one frequency-domain problem in the port-reduced space.
///
/// `loads` holds per-component loads already projected on the local bases.
pub fn level1_solve(sys: &BridgeSystem<'_>, omega: f64, loads: &[(usize, DVector<f64>)]) -> Result<Level1Solution> {
    let np = sys.n_port_unknowns;
    let zero = Complex64::new(0.0, 0.0);
    let mut schur = DMatrix::<Complex64>::zeros(np, np);
    let mut rhs = DVector::<Complex64>::zeros(np);
    let mut trials = Vec::with_capacity(N_COMP);
    for (c, plan) in sys.plans.iter().enumerate() {
        let (sm, sa) = frequency_coefficients(omega, plan.young, sys.mu.alpha, sys.mu.beta);
        let k = cplx(&plan.mass, sm) + cplx(&plan.stiffness, sa);
        let ns = plan.sel.len();
        let mut f = DVector::<Complex64>::zeros(ns);
        for (lc, fl) in loads {
            if *lc == c {
                for (i, &col) in plan.sel.iter().enumerate() {
                    f[i] += Complex64::new(fl[col], 0.0);
                }
            }
        }
        // Inhomogeneity bubbles carry the local load.
        let mut b = DVector::<Complex64>::zeros(ns);
        if !plan.xi.is_empty() && f.iter().any(|z| *z != zero) {
            let kx = DMatrix::from_fn(plan.xi.len(), plan.xi.len(), |i, j| k[(plan.xi[i], plan.xi[j])]);
            let fx = DVector::from_fn(plan.xi.len(), |i, _| f[plan.xi[i]]);
            let g = kx.lu().solve(&fx).ok_or_else(|| singular_report(sys, omega, "inhomogeneity block"))?;
            for (i, &p) in plan.xi.iter().enumerate() {
                b[p] = g[i];
            }
        }
        // Lifting bubbles condensed into each lifted port mode.
        let mut t = Vec::with_capacity(plan.lifts.len());
        for (_, p, bub) in &plan.lifts {
            let mut v = DVector::<Complex64>::zeros(ns);
            v[*p] = Complex64::new(1.0, 0.0);
            if !bub.is_empty() {
                let kb = DMatrix::from_fn(bub.len(), bub.len(), |i, j| k[(bub[i], bub[j])]);
                let kp = DVector::from_fn(bub.len(), |i, _| -k[(bub[i], *p)]);
                let beta = kb.lu().solve(&kp).ok_or_else(|| singular_report(sys, omega, "lifting bubble block"))?;
                for (i, &q) in bub.iter().enumerate() {
                    v[q] = beta[i];
                }
            }
            t.push(v);
        }
        let kb = &k * &b;
        let kt: Vec<DVector<Complex64>> = t.iter().map(|v| &k * v).collect();
        for (gr, pr, _) in &plan.lifts {
            rhs[*gr] += f[*pr] - kb[*pr];
            for (s, (gs, _, _)) in plan.lifts.iter().enumerate() {
                schur[(*gr, *gs)] += kt[s][*pr];
            }
        }
        trials.push((t, b));
    }
    let lu = schur.lu();
    let u = lu.solve(&rhs).ok_or_else(|| singular_report(sys, omega, "Schur complement"))?;
    if !u.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(singular_report(sys, omega, "Schur complement"));
    }
    let mut coeffs = Vec::with_capacity(N_COMP);
    for (plan, (t, b)) in sys.plans.iter().zip(trials) {
        let mut w_sel = b;
        for ((g, _, _), v) in plan.lifts.iter().zip(&t) {
            w_sel += v * u[*g];
        }
        let nw = sys.cache.variant(plan.variant).n_basis();
        let mut w = DVector::<Complex64>::zeros(nw);
        for (i, &col) in plan.sel.iter().enumerate() {
            w[col] = w_sel[i];
        }
        coeffs.push(w);
    }
    Ok(Level1Solution { omega, coeffs })
}

fn singular_report(sys: &BridgeSystem<'_>, omega: f64, what: &str) -> Error {
    Error::Solver(format!("singular {what} at omega={omega}, damage={:?}, alpha={}, beta={}", sys.mu.damage, sys.mu.alpha, sys.mu.beta))
}

/// All Level 1 solves of a training set.
pub fn level1_sweep(sys: &BridgeSystem<'_>, train: &OnlineTrainSet) -> Result<Vec<Level1Solution>> {
    train
        .omegas
        .par_iter()
        .zip(train.loads.par_iter())
        .map(|(&w, site)| {
            let load = sys.local_load(site)?;
            level1_solve(sys, w, &[load])
        })
        .collect()
}

/// Real field in compressed form, one coefficient vector per component.
pub type CompressedField = Vec<DVector<f64>>;

/// Concatenation of `R_c w_c`, whose Euclidean norm is the H1 norm.
pub fn embed_field(sys: &BridgeSystem<'_>, field: &CompressedField) -> DVector<f64> {
    let parts: Vec<DVector<f64>> =
        sys.variants.iter().zip(field).map(|(v, w)| &sys.cache.variant(*v).embed * w).collect();
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut k = 0;
    for p in parts {
        out.rows_mut(k, p.len()).copy_from(&p);
        k += p.len();
    }
    out
}

/// H1 norm of a compressed field.
pub fn field_norm(sys: &BridgeSystem<'_>, field: &CompressedField) -> f64 {
    embed_field(sys, field).norm()
}

/// A greedy candidate: the real fields spanning one snapshot (real and
/// imaginary parts of a complex solution).
pub type Candidate = Vec<CompressedField>;

/// Real and imaginary parts of each Level 1 solution.
pub fn real_candidates(sols: &[Level1Solution]) -> Vec<Candidate> {
    sols.iter()
        .map(|s| {
            vec![
                s.coeffs.iter().map(|c| c.map(|z| z.re)).collect(),
                s.coeffs.iter().map(|c| c.map(|z| z.im)).collect(),
            ]
        })
        .collect()
}

/// Outcome of the strong greedy.
#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    /// H1-orthonormal real basis in compressed form.
    pub basis: Vec<CompressedField>,
    /// `errors[i]`: largest projection error after `i` iterations.
    pub errors: Vec<f64>,
    /// Candidate picked at each iteration.
    pub selected: Vec<usize>,
}

impl GreedyOutcome {
    /// Number of greedy iterations (snapshots added).
    pub fn iterations(&self) -> usize {
        self.selected.len()
    }

    /// Relative errors `errors[i] / errors[1]` for `i >= 1`.
    pub fn ratios(&self) -> Vec<f64> {
        if self.errors.len() < 2 {
            return Vec::new();
        }
        let d = self.errors[1];
        self.errors[1..].iter().map(|e| if d > 0.0 { e / d } else { 0.0 }).collect()
    }
}

/// Strong greedy over snapshots in the H1 norm.
pub fn strong_greedy(sys: &BridgeSystem<'_>, candidates: &[Candidate], tol: f64, max_iter: usize) -> Result<GreedyOutcome> {
    let emb: Vec<Vec<DVector<f64>>> =
        candidates.iter().map(|c| c.iter().map(|f| embed_field(sys, f)).collect()).collect();
    strong_greedy_embedded(candidates, &emb, tol, max_iter)
}

/// Strong greedy on candidates with precomputed Euclidean embeddings.
///
/// Each iteration adds every part of the worst-approximated candidate. The
/// loop stops once the largest error drops below `tol` times the error after
/// the first iteration, or after `max_iter` iterations.
pub fn strong_greedy_embedded(
    candidates: &[Candidate],
    embedded: &[Vec<DVector<f64>>],
    tol: f64,
    max_iter: usize,
) -> Result<GreedyOutcome> {
    let group_norm = |g: &[DVector<f64>]| g.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    let scale = embedded.iter().map(|g| group_norm(g)).fold(0.0f64, f64::max);
    if candidates.is_empty() || !(scale > 0.0) {
        return Err(Error::ZeroSignal("all greedy snapshots vanish".into()));
    }
    let floor = 1e-13 * scale;
    let mut resid: Vec<Vec<DVector<f64>>> = embedded.to_vec();
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut basis: Vec<CompressedField> = Vec::new();
    let mut errors = Vec::new();
    let mut selected = Vec::new();
    loop {
        let (m, e) = resid
            .iter()
            .enumerate()
            .map(|(i, g)| (i, group_norm(g)))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        errors.push(e);
        let i = selected.len();
        if i >= max_iter || e <= floor || (i >= 1 && e <= tol * errors[1]) {
            break;
        }
        for (part, y0) in candidates[m].iter().zip(&embedded[m]) {
            let mut y = y0.clone();
            let mut z = part.clone();
            for _ in 0..2 {
                for (qk, zk) in q.iter().zip(&basis) {
                    let c = qk.dot(&y);
                    y.axpy(-c, qk, 1.0);
                    for (a, b) in z.iter_mut().zip(zk) {
                        a.axpy(-c, b, 1.0);
                    }
                }
            }
            let n = y.norm();
            if !(n > floor) {
                continue;
            }
            y /= n;
            for a in z.iter_mut() {
                *a /= n;
            }
            for g in resid.iter_mut() {
                for r in g.iter_mut() {
                    let c = y.dot(r);
                    r.axpy(-c, &y, 1.0);
                }
            }
            q.push(y);
            basis.push(z);
        }
        selected.push(m);
    }
    Ok(GreedyOutcome { basis, errors, selected })
}

/// Sensor output rows of one damageable component for one layout.
#[derive(Debug, Clone)]
pub struct SensorBlock {
    pub comp: usize,
    pub layout: SensorLayout,
    pub points: [[f64; 2]; 4],
    /// `8 x N`: x displacements of the four sensors, then y displacements.
    pub q: DMatrix<f64>,
}

/// Row vectors over the local basis evaluating sensor displacements.
pub fn sensor_rows_local(sys: &BridgeSystem<'_>, comp: usize, layout: SensorLayout) -> Result<(DMatrix<f64>, [[f64; 2]; 4])> {
    let v = sys.variants[comp];
    let mesh = &sys.lib.get(v).mesh;
    let w = &sys.cache.variant(v).w;
    let g = &mesh.geometry;
    let pts = layout.points(g.length, g.thickness);
    let mut rows = DMatrix::zeros(8, w.ncols());
    for dir in 0..2 {
        for (s, p) in pts.iter().enumerate() {
            for (d, val) in mesh.point_evaluation(*p, dir)? {
                for col in 0..w.ncols() {
                    rows[(dir * 4 + s, col)] += val * w[(d, col)];
                }
            }
        }
    }
    Ok((rows, pts))
}

/// Reduced time-domain model.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub n: usize,
    /// Per component `n_w x N` coefficient blocks of the reduced basis.
    pub z: Vec<DMatrix<f64>>,
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// Per loaded slot `N x Q` projected surrogate load blocks.
    pub load_x: Vec<DMatrix<f64>>,
    pub load_y: Vec<DMatrix<f64>>,
    pub sensors: Vec<SensorBlock>,
}

impl ReducedModel {
    pub fn build(sys: &BridgeSystem<'_>, basis: &[CompressedField], layouts: &[SensorLayout]) -> Result<Self> {
        let n = basis.len();
        if n == 0 {
            return Err(Error::InsufficientSnapshots("empty reduced basis".into()));
        }
        let mut z = Vec::with_capacity(N_COMP);
        let (mut mass, mut stiffness) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
        for (c, v) in sys.variants.iter().enumerate() {
            let vc = sys.cache.variant(*v);
            let zc = DMatrix::from_fn(vc.n_basis(), n, |i, k| basis[k][c][i]);
            mass += zc.transpose() * &vc.mass * &zc;
            stiffness += zc.transpose() * &vc.stiffness * &zc * sys.mu.young[c];
            z.push(zc);
        }
        let damping = &mass * sys.mu.alpha + &stiffness * sys.mu.beta;
        let mut load_x = Vec::new();
        let mut load_y = Vec::new();
        for slot in 0..LOADED.len() {
            let (c, _) = sys.loaded_component(slot);
            let vc = sys.cache.variant(sys.variants[c]);
            load_x.push(z[c].transpose() * &vc.load_x);
            load_y.push(z[c].transpose() * &vc.load_y);
        }
        let mut sensors = Vec::new();
        for &layout in layouts {
            for &comp in DAMAGEABLE.iter() {
                let (rows, points) = sensor_rows_local(sys, comp, layout)?;
                sensors.push(SensorBlock { comp, layout, points, q: rows * &z[comp] });
            }
        }
        Ok(Self { n, z, mass, damping, stiffness, load_x, load_y, sensors })
    }

    /// Reduced load at time `t` for a step `dt`.
    pub fn load(&self, sys: &BridgeSystem<'_>, t: f64, dt: f64, sampling: LoadSampling, out: &mut [f64]) -> Result<()> {
        for (site, weight) in sys.active_loads(t, dt, sampling) {
            let th = DVector::from_vec(sys.load_coefficients(&site)?);
            let a = sys.mu.axles[site.axle];
            let f = (&self.load_x[site.slot] * &th - &self.load_y[site.slot] * &th * a.friction) * (weight * a.magnitude);
            for (o, v) in out.iter_mut().zip(f.iter()) {
                *o += v;
            }
        }
        Ok(())
    }

    /// Local FE field of component `c` for reduced coefficients `u`.
    pub fn expand_local(&self, sys: &BridgeSystem<'_>, c: usize, u: &[f64]) -> DVector<f64> {
        let w = &sys.cache.variant(sys.variants[c]).w;
        w * (&self.z[c] * DVector::from_column_slice(u))
    }

    pub fn structure(&self) -> DenseStructure {
        DenseStructure { mass: self.mass.clone(), damping: self.damping.clone(), stiffness: self.stiffness.clone() }
    }
}

/// Trajectory of a reduced march.
#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub n_steps: usize,
    pub dt: f64,
    /// Row-major `(n_steps + 1) x N` coefficient history.
    pub coeffs: Vec<f64>,
    /// Per sensor block, row-major `(n_steps + 1) x 8` outputs.
    pub outputs: Vec<Vec<f64>>,
}

impl ReducedTrajectory {
    pub fn state(&self, j: usize, n: usize) -> &[f64] {
        &self.coeffs[j * n..(j + 1) * n]
    }
    /// Output `k` (0..8) of sensor block `b` over time.
    pub fn output_series(&self, b: usize, k: usize) -> Vec<f64> {
        self.outputs[b].chunks(8).map(|r| r[k]).collect()
    }
}

/// Marches the reduced model over `[0, t_final]` with `n_steps` steps.
pub fn reduced_newmark_march(
    sys: &BridgeSystem<'_>,
    model: &ReducedModel,
    t_final: f64,
    n_steps: usize,
    sampling: LoadSampling,
) -> Result<ReducedTrajectory> {
    let ops = model.structure();
    let dt = t_final / n_steps as f64;
    let n = model.n;
    let mut coeffs = Vec::with_capacity((n_steps + 1) * n);
    let mut outputs: Vec<Vec<f64>> = vec![Vec::with_capacity((n_steps + 1) * 8); model.sensors.len()];
    newmark_march(
        &ops,
        NewmarkScheme::default(),
        t_final,
        n_steps,
        None,
        |_, t, f| model.load(sys, t, dt, sampling, f),
        |s| {
            coeffs.extend_from_slice(s.u);
            let u = DVector::from_column_slice(s.u);
            for (b, blk) in model.sensors.iter().enumerate() {
                outputs[b].extend((&blk.q * &u).iter());
            }
            Ok(())
        },
    )?;
    Ok(ReducedTrajectory { n_steps, dt: t_final / n_steps as f64, coeffs, outputs })
}

/// Normalized Richardson indicator from a fine and a coarse (twice the step)
/// trajectory of states with Euclidean norms.
pub fn richardson_indicator(fine: &[Vec<f64>], coarse: &[Vec<f64>], order: i32, zero_scale: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = fine.iter().skip(1).map(|u| norm(u)).fold(0.0, f64::max);
    if denom <= 1e-14 * zero_scale || denom == 0.0 {
        return 0.0;
    }
    let mut num: f64 = 0.0;
    for j in 1..coarse.len() {
        if 2 * j >= fine.len() {
            break;
        }
        let d: Vec<f64> = fine[2 * j].iter().zip(&coarse[j]).map(|(a, b)| a - b).collect();
        num = num.max(norm(&d));
    }
    num / ((2f64.powi(order) - 1.0) * denom)
}

/// Result of the Richardson step-size selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    /// `(n_steps, indicator)` for each refinement tried.
    pub history: Vec<(usize, f64)>,
    pub n_steps: usize,
    pub converged: bool,
}

fn split_states(t: &ReducedTrajectory, n: usize) -> Vec<Vec<f64>> {
    (0..=t.n_steps).map(|j| t.state(j, n).to_vec()).collect()
}

/// Indicator at `n_steps` for the reduced model.
pub fn richardson_check(
    sys: &BridgeSystem<'_>,
    model: &ReducedModel,
    t_final: f64,
    n_steps: usize,
    sampling: LoadSampling,
) -> Result<(f64, ReducedTrajectory)> {
    if n_steps < 2 || n_steps % 2 != 0 {
        return Err(Error::InvalidParameter(format!("Richardson check needs an even step count, got {n_steps}")));
    }
    let fine = reduced_newmark_march(sys, model, t_final, n_steps, sampling)?;
    let coarse = reduced_newmark_march(sys, model, t_final, n_steps / 2, sampling)?;
    let scale = load_scale(sys, model, t_final, n_steps, sampling);
    let eps = richardson_indicator(&split_states(&fine, model.n), &split_states(&coarse, model.n), 2, scale);
    Ok((eps, fine))
}

/// Displacement scale of the load, used to guard the indicator against 0/0.
fn load_scale(sys: &BridgeSystem<'_>, model: &ReducedModel, t_final: f64, n_steps: usize, sampling: LoadSampling) -> f64 {
    let dt = t_final / n_steps as f64;
    let mut fmax: f64 = 0.0;
    let stride = (n_steps / 200).max(1);
    let mut f = vec![0.0; model.n];
    for j in (0..=n_steps).step_by(stride) {
        f.iter_mut().for_each(|x| *x = 0.0);
        if model.load(sys, j as f64 * dt, dt, sampling, &mut f).is_ok() {
            fmax = fmax.max(f.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    fmax / model.stiffness.norm().max(f64::MIN_POSITIVE)
}

/// Doubles the step count from `n_start` until the indicator meets `tol`.
pub fn select_time_steps(
    sys: &BridgeSystem<'_>,
    model: &ReducedModel,
    t_final: f64,
    n_start: usize,
    tol: f64,
    n_cap: usize,
    sampling: LoadSampling,
) -> Result<(RichardsonReport, ReducedTrajectory)> {
    let mut n = n_start.max(2) + n_start % 2;
    let mut history = Vec::new();
    loop {
        let (eps, traj) = richardson_check(sys, model, t_final, n, sampling)?;
        history.push((n, eps));
        if eps <= tol {
            return Ok((RichardsonReport { history, n_steps: n, converged: true }, traj));
        }
        if 2 * n > n_cap {
            return Ok((RichardsonReport { history, n_steps: n, converged: false }, traj));
        }
        n *= 2;
    }
}

/// Timings and sizes of one online evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineStats {
    /// Greedy iterations (snapshots selected).
    pub n_greedy: usize,
    /// Real dimension of the reduced space.
    pub n_basis: usize,
    pub greedy_errors: Vec<f64>,
    pub level1_s: f64,
    pub greedy_s: f64,
    pub march_s: f64,
    pub total_s: f64,
}

/// Complete online evaluation for one parameter.
#[derive(Debug, Clone)]
pub struct OnlineEvaluation {
    pub model: ReducedModel,
    pub trajectory: ReducedTrajectory,
    pub t_final: f64,
    pub stats: OnlineStats,
}

/// Level 1 sweep, greedy, reduced model and a march at `cfg.n_steps`.
pub fn evaluate_online(
    sys: &BridgeSystem<'_>,
    cfg: &OnlineConfig,
    layouts: &[SensorLayout],
    max_iter: Option<usize>,
) -> Result<OnlineEvaluation> {
    let t0 = std::time::Instant::now();
    let grid = FrequencyGrid::new(cfg.c_lower, cfg.c_upper, sys.cache.frequencies.sigma_t_ref)?;
    let train = build_online_train_set(sys, &grid, cfg.seed);
    let sols = level1_sweep(sys, &train)?;
    let t1 = t0.elapsed().as_secs_f64();
    let cands = real_candidates(&sols);
    let cap = max_iter.unwrap_or(cfg.max_basis).min(cfg.max_basis).min(train.omegas.len());
    let greedy = strong_greedy(sys, &cands, cfg.greedy_tol, cap)?;
    let model = ReducedModel::build(sys, &greedy.basis, layouts)?;
    let t2 = t0.elapsed().as_secs_f64();
    let t_final = sys.vehicle_final_time();
    let trajectory = reduced_newmark_march(sys, &model, t_final, cfg.n_steps, cfg.load_sampling)?;
    let total = t0.elapsed().as_secs_f64();
    let stats = OnlineStats {
        n_greedy: greedy.iterations(),
        n_basis: model.n,
        greedy_errors: greedy.errors,
        level1_s: t1,
        greedy_s: t2 - t1,
        march_s: total - t2,
        total_s: total,
    };
    Ok(OnlineEvaluation { model, trajectory, t_final, stats })
}

/// Writes sensor outputs as CSV: `t`, then one column per block, direction and sensor.
pub fn write_sensor_csv<W: std::io::Write>(w: &mut W, model: &ReducedModel, traj: &ReducedTrajectory) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for b in &model.sensors {
        for dir in ["x", "y"] {
            for s in 1..=4 {
                header.push(format!("c{}_top{}_{dir}{s}", b.comp + 1, b.layout.top_offset));
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for j in 0..=traj.n_steps {
        write!(w, "{:e}", j as f64 * traj.dt)?;
        for o in &traj.outputs {
            for v in &o[j * 8..(j + 1) * 8] {
                write!(w, ",{v:e}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
