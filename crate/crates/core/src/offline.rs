//! Offline construction of the port-reduced component spaces.
//!
//! Port spaces come from POD of port traces of two-component frequency
//! solves. Each port mode gets a static harmonic lifting into every archetype
//! it can attach to, plus lifting bubbles from POD of the dynamic lifting
//! remainders. Loaded archetypes also get an inhomogeneity bubble. All
//! parameter-independent projections are stored in an [`OfflineCache`].

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::assembly::ChainAssembly;
use crate::eim::EimSurrogate;
use crate::error::{Error, Result};
use crate::fem::{frequency_coefficients, AffineOperatorSet, LoadedBoundary};
use crate::library::{
    eim_coefficients, train_load_eim, Archetype, ArchetypeLibrary, EimTraining, RefPort, Variant, ALL_PORTS, ALL_VARIANTS,
};
use crate::mesh::{ComponentMesh, Side};
use crate::params::{FrequencyGrid, ParameterBounds};
use crate::pod::{orthonormalize, pod};
use crate::sparse::{linear_combination, CsrMatrix, LdltFactor};

/// Sizes and sample counts of the offline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineConfig {
    /// Port space size per reference port.
    pub port_sizes: [usize; 4],
    pub lifting_size: usize,
    pub inhomogeneity_size: usize,
    pub n_train_port: usize,
    pub n_train_bubble: usize,
    pub n_train_inhomogeneity: usize,
    /// Highest Legendre degree in the random port data.
    pub legendre_degree: usize,
    pub eim_tol: f64,
    pub seed: u64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            port_sizes: [3, 4, 4, 3],
            lifting_size: 2,
            inhomogeneity_size: 1,
            n_train_port: 200,
            n_train_bubble: 40,
            n_train_inhomogeneity: 60,
            legendre_degree: 6,
            eim_tol: 1e-6,
            seed: 2021,
        }
    }
}

/// Reduced port space of one reference port.
#[derive(Debug, Clone)]
pub struct PortSpace {
    pub port: RefPort,
    /// Modes as columns over the port dofs (bottom to top, x then y).
    pub modes: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub retained_energy: f64,
}

impl PortSpace {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }
}

/// Column bookkeeping of one port-mode lifting inside a variant basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftIndex {
    pub side: Side,
    pub port: RefPort,
    pub mode: usize,
    pub psi: usize,
    pub bubbles: Vec<usize>,
}

/// Parameter-independent data of one archetype variant.
#[derive(Debug, Clone)]
pub struct VariantCache {
    pub variant: Variant,
    /// Local basis `[liftings, lifting bubbles, inhomogeneity bubbles]`.
    pub w: DMatrix<f64>,
    pub lifts: Vec<LiftIndex>,
    pub inhomogeneity: Vec<usize>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    /// Projected x and y load vectors of each surrogate basis vector.
    pub load_x: DMatrix<f64>,
    pub load_y: DMatrix<f64>,
    /// Factor `R` with `R^T R = W^T X W`, rank-revealing.
    pub embed: DMatrix<f64>,
    pub eim: Option<EimSurrogate>,
}

impl VariantCache {
    pub fn n_basis(&self) -> usize {
        self.w.ncols()
    }
    pub fn lifts_for(&self, side: Side, port: RefPort) -> Vec<&LiftIndex> {
        self.lifts.iter().filter(|l| l.side == side && l.port == port).collect()
    }
}

/// Summary figures of the offline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineStats {
    pub port_sizes: Vec<usize>,
    pub port_retained_energy: Vec<f64>,
    pub lifting_size: usize,
    pub inhomogeneity_size: usize,
    pub eim_sizes: Vec<usize>,
    pub eim_training_error: Vec<f64>,
    pub wall_time_s: f64,
}

/// Everything the online stage needs from the offline stage.
#[derive(Debug, Clone)]
pub struct OfflineCache {
    pub library_hash: String,
    pub h: f64,
    pub frequencies: FrequencyGrid,
    pub ports: Vec<PortSpace>,
    pub variants: Vec<VariantCache>,
    pub stats: OfflineStats,
}

impl OfflineCache {
    pub fn variant(&self, v: Variant) -> &VariantCache {
        &self.variants[v.index()]
    }
    pub fn port(&self, p: RefPort) -> &PortSpace {
        &self.ports[p.index()]
    }
}

/// Consistent quadratic L2 mass matrix on a port, in port dof ordering.
pub fn port_mass_matrix(mesh: &ComponentMesh, side: Side) -> DMatrix<f64> {
    let nodes = mesh.port_nodes(side);
    let pos: std::collections::HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = 2 * nodes.len();
    let mut m = DMatrix::zeros(n, n);
    let local = [[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]];
    for e in mesh.boundary_edges.iter().filter(|e| e.tag == side.tag()) {
        let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[2]]);
        let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        for r in 0..3 {
            for s in 0..3 {
                let (pr, ps) = (pos[&e.nodes[r]], pos[&e.nodes[s]]);
                for c in 0..2 {
                    m[(2 * pr + c, 2 * ps + c)] += len / 30.0 * local[r][s];
                }
            }
        }
    }
    m
}

fn dense_to_csr(m: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut t = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                t.push((i, j, m[(i, j)]));
            }
        }
    }
    CsrMatrix::from_triplets(m.nrows(), m.ncols(), t)
}

fn legendre(k: usize, s: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, s);
    if k == 0 {
        return p0;
    }
    for n in 1..k {
        let p2 = ((2 * n + 1) as f64 * s * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Random smooth complex port data with decaying Legendre coefficients.
fn random_port_data(ys: &[f64], degree: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let (y0, y1) = (ys[0], *ys.last().unwrap());
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * ys.len()];
    for c in 0..2 {
        for k in 0..=degree {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let coef = Complex64::new(a, b) / (k as f64 + 1.0);
            for (i, &y) in ys.iter().enumerate() {
                let s = 2.0 * (y - y0) / (y1 - y0) - 1.0;
                out[2 * i + c] += coef * legendre(k, s);
            }
        }
    }
    out
}

/// Factored operator with prescribed values on a set of dofs.
struct ConstrainedSolver {
    a: CsrMatrix<Complex64>,
    free: Vec<usize>,
    fixed: Vec<usize>,
    factor: LdltFactor<Complex64>,
}

impl ConstrainedSolver {
    fn new(a: CsrMatrix<Complex64>, fixed: &[usize]) -> Result<Self> {
        let n = a.n_rows();
        let mut is_fixed = vec![false; n];
        for &d in fixed {
            is_fixed[d] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
        let factor = LdltFactor::factor(&a.submatrix(&free, &free))?;
        Ok(Self { a, free, fixed: fixed.to_vec(), factor })
    }

    fn solve(&self, f: &[Complex64], values: &[Complex64]) -> Vec<Complex64> {
        let n = self.a.n_rows();
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        for (k, &d) in self.fixed.iter().enumerate() {
            u[d] = values[k];
        }
        let au = self.a.mul_vec(&u);
        let mut rhs: Vec<Complex64> = self.free.iter().map(|&i| f[i] - au[i]).collect();
        self.factor.solve_in_place(&mut rhs);
        for (k, &i) in self.free.iter().enumerate() {
            u[i] = rhs[k];
        }
        u
    }
}

/// Random local parameters for training.
#[derive(Debug, Clone, Copy)]
struct LocalSample {
    e: f64,
    alpha: f64,
    beta: f64,
    omega: f64,
}

fn sample_local(b: &ParameterBounds, omegas: &[f64], rng: &mut ChaCha8Rng) -> LocalSample {
    LocalSample {
        e: b.young.at(rng.random()),
        alpha: b.alpha.at(rng.random()),
        beta: b.beta.at(rng.random()),
        omega: omegas[rng.random_range(0..omegas.len())],
    }
}

/// Random load position, width and friction on a loaded face.
fn sample_load(b: &ParameterBounds, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let sigma = b.width.at(rng.random());
    let d = b.margin.hi;
    let reach = d + 4.0 * b.width.hi;
    let l = -reach + 2.0 * reach * rng.random::<f64>();
    (l, sigma, b.friction.at(rng.random()))
}

fn load_vector(
    boundary: &LoadedBoundary,
    eim: &EimSurrogate,
    n: usize,
    l: f64,
    sigma: f64,
    friction: f64,
) -> Vec<f64> {
    let th = eim_coefficients(boundary, eim, l, sigma);
    let p = eim.reconstruct(&th);
    let mut f = vec![0.0; n];
    boundary.scatter(&p, 1.0, friction, &mut f);
    f
}

/// Trains the port space of one reference port.
#[allow(clippy::too_many_arguments)]
pub fn train_port_space(
    lib: &ArchetypeLibrary,
    eims: &[Option<EimSurrogate>],
    port: RefPort,
    n_modes: usize,
    n_train: usize,
    cfg: &OfflineConfig,
    bounds: &ParameterBounds,
    omegas: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<PortSpace> {
    if n_train == 0 {
        return Err(Error::InsufficientSnapshots("zero port training solves".into()));
    }
    let pairs = port.training_pairs();
    let mesh_l = &lib.get(Variant::Deck).mesh;
    let ys: Vec<f64> = mesh_l.port_nodes(Side::Left).iter().map(|&n| mesh_l.nodes[n][1]).collect();
    let np = 2 * ys.len();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let inner = port_mass_matrix(mesh_l, Side::Left);
    let norm = |v: &[Complex64]| -> f64 {
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v.iter().map(|z| z.im).collect();
        let q = |x: &[f64]| {
            let xv = nalgebra::DVector::from_column_slice(x);
            (xv.transpose() * &inner * &xv)[(0, 0)]
        };
        (q(&re) + q(&im)).sqrt()
    };
    let push = |v: &[Complex64], cols: &mut Vec<Vec<f64>>| {
        let nv = norm(v);
        if nv > 0.0 {
            cols.push(v.iter().map(|z| z.re / nv).collect());
            cols.push(v.iter().map(|z| z.im / nv).collect());
        }
    };
    let chains: Vec<ChainAssembly> = pairs
        .iter()
        .map(|(l, r)| ChainAssembly::new(&[&lib.get(*l).mesh, &lib.get(*r).mesh]))
        .collect::<Result<_>>()?;
    for s in 0..n_train {
        let k = s % pairs.len();
        let (vl, vr) = pairs[k];
        let chain = &chains[k];
        let p1 = sample_local(bounds, omegas, rng);
        let e2 = bounds.young.at(rng.random());
        let (sm, sa1) = frequency_coefficients(p1.omega, p1.e, p1.alpha, p1.beta);
        let (_, sa2) = frequency_coefficients(p1.omega, e2, p1.alpha, p1.beta);
        let ops: [&AffineOperatorSet; 2] = [&lib.get(vl).ops, &lib.get(vr).ops];
        let a = chain.assemble(&ops, &[(sm, sa1), (sm, sa2)]);
        let mut fixed = chain.left_outer.clone();
        fixed.extend_from_slice(&chain.right_outer);
        let solver = ConstrainedSolver::new(a, &fixed)?;
        let zero_f = vec![Complex64::new(0.0, 0.0); chain.n_dofs];
        let iface = &chain.interfaces[0];

        // Random outer-port data, no load.
        let mut g = Vec::with_capacity(fixed.len());
        if !chain.left_outer.is_empty() {
            g.extend(random_port_data(&ys, cfg.legendre_degree, rng));
        }
        if !chain.right_outer.is_empty() {
            g.extend(random_port_data(&ys, cfg.legendre_degree, rng));
        }
        let u = solver.solve(&zero_f, &g);
        let trace: Vec<Complex64> = iface.iter().map(|&d| u[d]).collect();
        push(&trace, &mut cols);

        // Load response with clamped outer ports.
        for (c, v) in [vl, vr].into_iter().enumerate() {
            if let (Some(b), Some(eim)) = (lib.get(v).loaded.as_ref(), eims[v.index()].as_ref()) {
                let (l, sigma, fr) = sample_load(bounds, rng);
                let fl = load_vector(b, eim, lib.get(v).ops.n_dofs(), l, sigma, fr);
                let mut f = zero_f.clone();
                let fl: Vec<Complex64> = fl.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                chain.scatter_add(c, &fl, &mut f);
                let zero_g = vec![Complex64::new(0.0, 0.0); fixed.len()];
                let u = solver.solve(&f, &zero_g);
                let trace: Vec<Complex64> = iface.iter().map(|&d| u[d]).collect();
                push(&trace, &mut cols);
            }
        }
    }
    let s = DMatrix::from_fn(np, cols.len(), |i, j| cols[j][i]);
    let x = dense_to_csr(&inner);
    let basis = pod(&s, Some(&x), n_modes)?;
    Ok(PortSpace { port, modes: basis.modes, eigenvalues: basis.eigenvalues, retained_energy: basis.retained_energy })
}

/// Interior blocks of an archetype, extracted once.
struct InteriorBlocks {
    mass_ii: CsrMatrix<f64>,
    stiff_ii: CsrMatrix<f64>,
    h1_ii: CsrMatrix<f64>,
    static_factor: LdltFactor<f64>,
}

impl InteriorBlocks {
    fn new(a: &Archetype) -> Result<Self> {
        let i = &a.interior;
        let stiff_ii = a.ops.stiffness.submatrix(i, i);
        let static_factor = LdltFactor::factor(&stiff_ii)?;
        Ok(Self {
            mass_ii: a.ops.mass.submatrix(i, i),
            stiff_ii,
            h1_ii: a.ops.h1.submatrix(i, i),
            static_factor,
        })
    }
}

/// Full local vector with `g` on the port of `side` and zero elsewhere.
fn port_vector(a: &Archetype, side: Side, g: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; a.ops.n_dofs()];
    for (k, &d) in a.port_dofs(side).iter().enumerate() {
        v[d] = g[k];
    }
    v
}

struct LiftData {
    side: Side,
    port: RefPort,
    mode: usize,
    /// Full local static lifting.
    psi: Vec<f64>,
    /// `-M_{I,P} g` and `-A0_{I,P} g` restricted to the interior.
    rhs_m: Vec<f64>,
    rhs_a: Vec<f64>,
}

/// Builds the static liftings of every port mode that fits the archetype.
fn static_liftings(a: &Archetype, blocks: &InteriorBlocks, ports: &[PortSpace]) -> Vec<LiftData> {
    let mut out = Vec::new();
    for side in [Side::Left, Side::Right] {
        for ps in ports {
            if !ps.port.fits(a.variant, side) {
                continue;
            }
            for k in 0..ps.n_modes() {
                let g: Vec<f64> = ps.modes.column(k).iter().copied().collect();
                let full_g = port_vector(a, side, &g);
                let mg = a.ops.mass.mul_vec(&full_g);
                let ag = a.ops.stiffness.mul_vec(&full_g);
                let rhs_m: Vec<f64> = a.interior.iter().map(|&d| -mg[d]).collect();
                let rhs_a: Vec<f64> = a.interior.iter().map(|&d| -ag[d]).collect();
                let psi_i = blocks.static_factor.solve(&rhs_a);
                let mut psi = full_g;
                for (k2, &d) in a.interior.iter().enumerate() {
                    psi[d] = psi_i[k2];
                }
                out.push(LiftData { side, port: ps.port, mode: k, psi, rhs_m, rhs_a });
            }
        }
    }
    out
}

fn interior_operator(blocks: &InteriorBlocks, p: LocalSample) -> Result<LdltFactor<Complex64>> {
    let (sm, sa) = frequency_coefficients(p.omega, p.e, p.alpha, p.beta);
    let a = linear_combination(&[(sm, &blocks.mass_ii), (sa, &blocks.stiff_ii)])?;
    LdltFactor::factor(&a)
}

fn embed_interior(a: &Archetype, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.ops.n_dofs()];
    for (k, &d) in a.interior.iter().enumerate() {
        out[d] = v[k];
    }
    out
}

/// Lifting bubbles: POD of the dynamic lifting remainders per port mode.
fn train_lifting_bubbles(
    a: &Archetype,
    blocks: &InteriorBlocks,
    lifts: &[LiftData],
    cfg: &OfflineConfig,
    bounds: &ParameterBounds,
    omegas: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DMatrix<f64>>> {
    let ni = a.interior.len();
    let mut snaps: Vec<Vec<Vec<f64>>> = vec![Vec::new(); lifts.len()];
    for _ in 0..cfg.n_train_bubble {
        let p = sample_local(bounds, omegas, rng);
        if p.omega == 0.0 {
            // Statics: the remainder vanishes identically.
            continue;
        }
        let (sm, sa) = frequency_coefficients(p.omega, p.e, p.alpha, p.beta);
        let f = interior_operator(blocks, p)?;
        for (li, lift) in lifts.iter().enumerate() {
            let mut rhs: Vec<Complex64> = (0..ni).map(|k| sm * lift.rhs_m[k] + sa * lift.rhs_a[k]).collect();
            f.solve_in_place(&mut rhs);
            let re: Vec<f64> = (0..ni).map(|k| rhs[k].re - lift.psi[a.interior[k]]).collect();
            let im: Vec<f64> = rhs.iter().map(|z| z.im).collect();
            snaps[li].push(re);
            snaps[li].push(im);
        }
    }
    let mut out = Vec::with_capacity(lifts.len());
    for s in snaps {
        if s.is_empty() {
            return Err(Error::InsufficientSnapshots("no dynamic lifting samples".into()));
        }
        let m = DMatrix::from_fn(ni, s.len(), |i, j| s[j][i]);
        out.push(pod(&m, Some(&blocks.h1_ii), cfg.lifting_size)?.modes);
    }
    Ok(out)
}

/// Inhomogeneity bubble of a loaded archetype.
fn train_inhomogeneity_bubble(
    a: &Archetype,
    blocks: &InteriorBlocks,
    eim: &EimSurrogate,
    cfg: &OfflineConfig,
    bounds: &ParameterBounds,
    omegas: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let boundary = a
        .loaded
        .as_ref()
        .ok_or_else(|| Error::InvalidGeometry(format!("{:?} has no loaded face", a.variant)))?;
    let ni = a.interior.len();
    let mut snaps = Vec::new();
    for _ in 0..cfg.n_train_inhomogeneity {
        let p = sample_local(bounds, omegas, rng);
        let (l, sigma, fr) = sample_load(bounds, rng);
        let f = load_vector(boundary, eim, a.ops.n_dofs(), l, sigma, fr);
        let mut rhs: Vec<Complex64> = a.interior.iter().map(|&d| Complex64::new(f[d], 0.0)).collect();
        interior_operator(blocks, p)?.solve_in_place(&mut rhs);
        let nrm = {
            let re: Vec<f64> = rhs.iter().map(|z| z.re).collect();
            let im: Vec<f64> = rhs.iter().map(|z| z.im).collect();
            (blocks.h1_ii.bilinear(&re, &re) + blocks.h1_ii.bilinear(&im, &im)).sqrt()
        };
        if nrm == 0.0 {
            continue;
        }
        snaps.push(rhs.iter().map(|z| z.re / nrm).collect::<Vec<f64>>());
        snaps.push(rhs.iter().map(|z| z.im / nrm).collect::<Vec<f64>>());
    }
    if snaps.is_empty() {
        return Err(Error::InsufficientSnapshots("inhomogeneity snapshots vanish".into()));
    }
    let m = DMatrix::from_fn(ni, snaps.len(), |i, j| snaps[j][i]);
    Ok(pod(&m, Some(&blocks.h1_ii), cfg.inhomogeneity_size)?.modes)
}

/// Rank-revealing factor `R` with `R^T R = G` for a symmetric PSD `G`.
pub fn gram_factor(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((g + g.transpose()) * 0.5);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x));
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > 1e-13 * lmax).collect();
    let n = g.nrows();
    DMatrix::from_fn(keep.len(), n, |r, c| {
        let k = keep[r];
        eig.eigenvalues[k].sqrt() * eig.eigenvectors[(c, k)]
    })
}

/// Assembles the cache entry of one variant from its basis functions.
fn build_variant_cache(
    a: &Archetype,
    lifts: &[LiftData],
    bubbles: &[DMatrix<f64>],
    inhom: Option<&DMatrix<f64>>,
    eim: Option<&EimSurrogate>,
) -> Result<VariantCache> {
    let n = a.ops.n_dofs();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut idx = Vec::new();
    for l in lifts {
        idx.push(LiftIndex { side: l.side, port: l.port, mode: l.mode, psi: cols.len(), bubbles: Vec::new() });
        cols.push(l.psi.clone());
    }
    for (li, b) in bubbles.iter().enumerate() {
        for k in 0..b.ncols() {
            idx[li].bubbles.push(cols.len());
            cols.push(embed_interior(a, b.column(k).as_slice()));
        }
    }
    let mut inhomogeneity = Vec::new();
    if let Some(x) = inhom {
        for k in 0..x.ncols() {
            inhomogeneity.push(cols.len());
            cols.push(embed_interior(a, x.column(k).as_slice()));
        }
    }
    let w = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let mass = a.ops.mass.project(&w);
    let stiffness = a.ops.stiffness.project(&w);
    let h1 = a.ops.h1.project(&w);
    let (load_x, load_y) = match (eim, a.loaded.as_ref()) {
        (Some(e), Some(b)) => {
            let q = e.len();
            let mut lx = DMatrix::zeros(cols.len(), q);
            let mut ly = DMatrix::zeros(cols.len(), q);
            for (qi, basis) in e.basis.iter().enumerate() {
                for (p, d) in basis.iter().zip(&b.dofs) {
                    for c in 0..cols.len() {
                        lx[(c, qi)] += p * w[(d[0], c)];
                        ly[(c, qi)] += p * w[(d[1], c)];
                    }
                }
            }
            (lx, ly)
        }
        _ => (DMatrix::zeros(cols.len(), 0), DMatrix::zeros(cols.len(), 0)),
    };
    let embed = gram_factor(&h1);
    Ok(VariantCache {
        variant: a.variant,
        w,
        lifts: idx,
        inhomogeneity,
        mass,
        stiffness,
        h1,
        load_x,
        load_y,
        embed,
        eim: eim.cloned(),
    })
}

/// Runs the whole offline stage.
pub fn build_offline_cache(
    lib: &ArchetypeLibrary,
    cfg: &OfflineConfig,
    bounds: &ParameterBounds,
    frequencies: FrequencyGrid,
) -> Result<OfflineCache> {
    let t0 = Instant::now();
    let omegas = frequencies.omegas();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eim_t = EimTraining::covering(bounds.margin.hi, bounds.width.lo, bounds.width.hi, cfg.eim_tol);
    let mut eims: Vec<Option<EimSurrogate>> = vec![None; ALL_VARIANTS.len()];
    let mut stats = OfflineStats::default();
    for v in ALL_VARIANTS {
        if let Some(b) = lib.get(v).loaded.as_ref() {
            let e = train_load_eim(b, &eim_t)?;
            stats.eim_sizes.push(e.len());
            stats.eim_training_error.push(*e.training_errors.last().unwrap_or(&0.0));
            eims[v.index()] = Some(e);
        }
    }
    let mut ports = Vec::new();
    for p in ALL_PORTS {
        let ps = train_port_space(lib, &eims, p, cfg.port_sizes[p.index()], cfg.n_train_port, cfg, bounds, &omegas, &mut rng)?;
        log::info!("port {:?}: {} modes, retained energy {:.8}", p, ps.n_modes(), ps.retained_energy);
        stats.port_sizes.push(ps.n_modes());
        stats.port_retained_energy.push(ps.retained_energy);
        ports.push(ps);
    }
    let mut variants = Vec::new();
    for v in ALL_VARIANTS {
        let a = lib.get(v);
        let blocks = InteriorBlocks::new(a)?;
        let lifts = static_liftings(a, &blocks, &ports);
        let bubbles = train_lifting_bubbles(a, &blocks, &lifts, cfg, bounds, &omegas, &mut rng)?;
        let inhom = match eims[v.index()].as_ref() {
            Some(e) if cfg.inhomogeneity_size > 0 => {
                Some(train_inhomogeneity_bubble(a, &blocks, e, cfg, bounds, &omegas, &mut rng)?)
            }
            _ => None,
        };
        let vc = build_variant_cache(a, &lifts, &bubbles, inhom.as_ref(), eims[v.index()].as_ref())?;
        log::info!("variant {:?}: {} basis functions", v, vc.n_basis());
        variants.push(vc);
    }
    stats.lifting_size = cfg.lifting_size;
    stats.inhomogeneity_size = cfg.inhomogeneity_size;
    stats.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(OfflineCache { library_hash: lib.hash(), h: lib.config.h, frequencies, ports, variants, stats })
}

/// Checks that bubble columns of a variant vanish on its ports.
pub fn bubbles_vanish_on_ports(a: &Archetype, vc: &VariantCache) -> bool {
    let mut port = Vec::new();
    for s in [Side::Left, Side::Right] {
        port.extend(a.port_dofs(s));
    }
    let mut cols: Vec<usize> = vc.lifts.iter().flat_map(|l| l.bubbles.clone()).collect();
    cols.extend(&vc.inhomogeneity);
    cols.iter().all(|&c| port.iter().all(|&d| vc.w[(d, c)] == 0.0))
}

/// Orthonormalizes the columns of a port mode matrix in the port inner product.
pub fn orthonormal_in_port(mesh: &ComponentMesh, modes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = dense_to_csr(&port_mass_matrix(mesh, Side::Left));
    let mut m = modes.clone();
    orthonormalize(&mut m, Some(&x))?;
    Ok(m)
}
