//! Full finite element model of the bridge for a given parameter, used as
//! the reference for the reduced model.

use num_complex::Complex64;

use crate::assembly::ChainAssembly;
use crate::bridge::{
    component_offsets, load_sites, topology, GlobalParameter, LoadSampling, LoadSite, SensorLayout, VehicleSchedule, DAMAGEABLE,
    LOADED,
};
use crate::error::{Error, Result};
use crate::fem::{frequency_coefficients, AffineOperatorSet};
use crate::library::{ArchetypeLibrary, Variant};
use crate::newmark::{newmark_march, NewmarkScheme, SparseStructure};
use crate::online::BridgeSystem;
use crate::sparse::{CsrMatrix, Scalar};

/// Sensor rows of one damageable component over global dofs.
#[derive(Debug, Clone)]
pub struct GlobalSensors {
    pub comp: usize,
    pub layout: SensorLayout,
    /// Eight sparse rows: x displacements of the four sensors, then y.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl GlobalSensors {
    pub fn evaluate(&self, u: &[f64]) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (k, r) in self.rows.iter().enumerate() {
            out[k] = r.iter().map(|&(d, v)| v * u[d]).sum();
        }
        out
    }
}

/// Assembled global operators of one bridge instance.
#[derive(Debug, Clone)]
pub struct FullOrderModel<'a> {
    pub lib: &'a ArchetypeLibrary,
    pub mu: GlobalParameter,
    pub variants: Vec<Variant>,
    pub chain: ChainAssembly,
    pub structure: SparseStructure,
    pub h1: CsrMatrix<f64>,
    pub x_left: Vec<f64>,
    pub schedule: VehicleSchedule,
}

impl<'a> FullOrderModel<'a> {
    pub fn new(lib: &'a ArchetypeLibrary, mu: GlobalParameter) -> Result<Self> {
        let variants = topology(mu.damage);
        let meshes: Vec<_> = variants.iter().map(|v| &lib.get(*v).mesh).collect();
        let chain = ChainAssembly::new(&meshes)?;
        let ops: Vec<&AffineOperatorSet> = variants.iter().map(|v| &lib.get(*v).ops).collect();
        let mass_c: Vec<_> = ops.iter().map(|o| &o.mass).collect();
        let stiff_c: Vec<_> = ops.iter().map(|o| &o.stiffness).collect();
        let h1_c: Vec<_> = ops.iter().map(|o| &o.h1).collect();
        let ones = vec![1.0; variants.len()];
        let mass = chain.assemble_with(&mass_c, &ones);
        let stiffness = chain.assemble_with(&stiff_c, &mu.young);
        let h1 = chain.assemble_with(&h1_c, &ones);
        let (x_left, length) = component_offsets(&lib.config, &variants);
        let schedule = VehicleSchedule::new(&mu, length)?;
        let structure = SparseStructure { mass, stiffness, alpha: mu.alpha, beta: mu.beta };
        Ok(Self { lib, mu, variants, chain, structure, h1, x_left, schedule })
    }

    pub fn n_dofs(&self) -> usize {
        self.chain.n_dofs
    }

    /// Adds `weight` times the exact load of one site.
    pub fn add_site_load(&self, site: &LoadSite, weight: f64, out: &mut [f64]) -> Result<()> {
        let c = LOADED[site.slot];
        let boundary = self.lib.get(self.variants[c]).loaded.as_ref().ok_or_else(|| Error::InvalidGeometry("component is not loaded".into()))?;
        let a = self.mu.axles[site.axle];
        let p = boundary.profile(site.l, a.width);
        let map = &self.chain.local_to_global[c];
        let f = weight * a.magnitude;
        for (v, d) in p.iter().zip(&boundary.dofs) {
            out[map[d[0]]] += f * v;
            out[map[d[1]]] -= a.friction * f * v;
        }
        Ok(())
    }

    /// Exact load at time `t` for a step `dt`.
    pub fn load(&self, t: f64, dt: f64, sampling: LoadSampling, out: &mut [f64]) -> Result<()> {
        let half = 0.5 * self.lib.config.length;
        let mid: Vec<f64> = LOADED.iter().map(|&c| self.x_left[c] + half).collect();
        for (site, w) in load_sites(&self.mu, &self.schedule, &mid, t, dt, sampling) {
            self.add_site_load(&site, w, out)?;
        }
        Ok(())
    }

    pub fn sensors(&self, layout: SensorLayout) -> Result<Vec<GlobalSensors>> {
        let mut out = Vec::new();
        for &comp in DAMAGEABLE.iter() {
            let mesh = &self.lib.get(self.variants[comp]).mesh;
            let g = &mesh.geometry;
            let pts = layout.points(g.length, g.thickness);
            let map = &self.chain.local_to_global[comp];
            let mut rows = Vec::with_capacity(8);
            for dir in 0..2 {
                for p in &pts {
                    rows.push(mesh.point_evaluation(*p, dir)?.into_iter().map(|(d, v)| (map[d], v)).collect());
                }
            }
            out.push(GlobalSensors { comp, layout, rows });
        }
        Ok(out)
    }

    /// Marches from rest; `observe(j, t, u)` sees every time level.
    pub fn march<B>(&self, t_final: f64, n_steps: usize, sampling: LoadSampling, mut observe: B) -> Result<()>
    where
        B: FnMut(usize, f64, &[f64]) -> Result<()>,
    {
        let dt = t_final / n_steps as f64;
        newmark_march(
            &self.structure,
            NewmarkScheme::default(),
            t_final,
            n_steps,
            None,
            |_, t, f| self.load(t, dt, sampling, f),
            |s| observe(s.step, s.time, s.u),
        )
    }

    /// Frequency-domain operator at `omega`.
    pub fn frequency_operator(&self, omega: f64) -> CsrMatrix<Complex64> {
        let ops: Vec<&AffineOperatorSet> = self.variants.iter().map(|v| &self.lib.get(*v).ops).collect();
        let coeffs: Vec<(Complex64, Complex64)> =
            self.mu.young.iter().map(|&e| frequency_coefficients(omega, e, self.mu.alpha, self.mu.beta)).collect();
        self.chain.assemble(&ops, &coeffs)
    }

    /// H1 norm of a global field.
    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        self.h1.bilinear(u, u).max(0.0).sqrt()
    }
}

/// Global FE vector of a compressed field (one coefficient vector per component).
pub fn expand_global<T: Scalar>(sys: &BridgeSystem<'_>, chain: &ChainAssembly, field: &[nalgebra::DVector<T>]) -> Vec<T> {
    let mut out = vec![T::zero(); chain.n_dofs];
    for (c, w) in field.iter().enumerate() {
        let basis = &sys.cache.variant(sys.variants[c]).w;
        let map = &chain.local_to_global[c];
        let mut local = vec![T::zero(); basis.nrows()];
        for (j, &coef) in w.iter().enumerate() {
            if coef == T::zero() {
                continue;
            }
            for (i, &b) in basis.column(j).iter().enumerate() {
                if b != 0.0 {
                    local[i] += T::from_real(b) * coef;
                }
            }
        }
        for (i, &g) in map.iter().enumerate() {
            out[g] = local[i];
        }
    }
    out
}

/// Relative H1 error of a global complex field against a reference.
fn complex_h1_rel(fom: &FullOrderModel<'_>, u: &[Complex64], reference: &[Complex64]) -> f64 {
    let h = |v: &[Complex64]| {
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v.iter().map(|z| z.im).collect();
        (fom.h1.bilinear(&re, &re) + fom.h1.bilinear(&im, &im)).max(0.0).sqrt()
    };
    let d: Vec<Complex64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
    h(&d) / h(reference).max(f64::MIN_POSITIVE)
}

/// Relative H1 error of a Level 1 solve against the FE frequency solve.
pub fn level1_error(sys: &BridgeSystem<'_>, fom: &FullOrderModel<'_>, omega: f64, site: &LoadSite) -> Result<f64> {
    let sol = crate::online::level1_solve(sys, omega, &[sys.local_load(site)?])?;
    let u = expand_global(sys, &fom.chain, &sol.coeffs);
    let mut f = vec![0.0; fom.n_dofs()];
    fom.add_site_load(site, 1.0, &mut f)?;
    let fc: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let reference = crate::sparse::LdltFactor::factor(&fom.frequency_operator(omega))?.solve(&fc);
    Ok(complex_h1_rel(fom, &u, &reference))
}

/// Reduced versus full trajectory on identical time grids.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryComparison {
    pub n_steps: usize,
    /// `max_t |u_RB - u_h|_H1 / max_t |u_h|_H1`.
    pub h1_relative: f64,
    /// Largest sensor output deviation over the largest output magnitude.
    pub output_relative: f64,
    pub fe_march_s: f64,
}

/// Marches the full model on the reduced trajectory's grid and compares.
pub fn compare_trajectories(
    sys: &BridgeSystem<'_>,
    fom: &FullOrderModel<'_>,
    model: &crate::online::ReducedModel,
    traj: &crate::online::ReducedTrajectory,
    t_final: f64,
    sampling: LoadSampling,
) -> Result<TrajectoryComparison> {
    let t0 = std::time::Instant::now();
    let n = model.n;
    let sensors: Vec<GlobalSensors> = {
        let mut v = Vec::new();
        let mut seen = Vec::new();
        for b in &model.sensors {
            if !seen.contains(&b.layout) {
                seen.push(b.layout);
                v.extend(fom.sensors(b.layout)?);
            }
        }
        v
    };
    let (mut err, mut norm, mut out_err, mut out_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    fom.march(t_final, traj.n_steps, sampling, |j, _, u| {
        let ur = nalgebra::DVector::from_column_slice(traj.state(j, n));
        let field: Vec<nalgebra::DVector<f64>> = model.z.iter().map(|z| z * &ur).collect();
        let g = expand_global(sys, &fom.chain, &field);
        let d: Vec<f64> = g.iter().zip(u).map(|(a, b)| a - b).collect();
        err = err.max(fom.h1_norm(&d));
        norm = norm.max(fom.h1_norm(u));
        for (b, s) in sensors.iter().enumerate() {
            let o = s.evaluate(u);
            for k in 0..8 {
                out_err = out_err.max((o[k] - traj.outputs[b][j * 8 + k]).abs());
                out_max = out_max.max(o[k].abs());
            }
        }
        Ok(())
    })?;
    if !(norm > 0.0) {
        return Err(Error::ZeroSignal("full order trajectory vanishes".into()));
    }
    Ok(TrajectoryComparison {
        n_steps: traj.n_steps,
        h1_relative: err / norm,
        output_relative: out_err / out_max.max(f64::MIN_POSITIVE),
        fe_march_s: t0.elapsed().as_secs_f64(),
    })
}
