//! Quadratic finite element operators for plane-strain elastodynamics.
//!
//! The mass, unit-modulus stiffness and H1 inner-product matrices of a
//! component share a single sparsity pattern, so affine combinations are
//! value-wise sums.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, ComponentMesh};
use crate::sparse::{linear_combination, CsrMatrix};

/// Lame parameters `(lambda, mu)` of plane strain.
pub fn lame_parameters(e: f64, nu: f64) -> (f64, f64) {
    (nu * e / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
}

/// Density and Poisson ratio shared by all components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Material {
    pub density: f64,
    pub poisson: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self { density: 2400.0, poisson: 0.15 }
    }
}

// Degree-4 rule with 6 points on the reference triangle (barycentric, weight).
const QUAD6: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

// Degree-2 rule with 3 interior points.
const QUAD3: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

fn shape_grads(l: [f64; 3], gl: [[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let [a, b, c] = l;
    // dN/dL for each shape function, then chain rule through grad L.
    let d: [[f64; 3]; 6] = [
        [4.0 * a - 1.0, 0.0, 0.0],
        [0.0, 4.0 * b - 1.0, 0.0],
        [0.0, 0.0, 4.0 * c - 1.0],
        [4.0 * b, 4.0 * a, 0.0],
        [0.0, 4.0 * c, 4.0 * b],
        [4.0 * c, 0.0, 4.0 * a],
    ];
    let mut g = [[0.0; 2]; 6];
    for k in 0..6 {
        for i in 0..3 {
            g[k][0] += d[k][i] * gl[i][0];
            g[k][1] += d[k][i] * gl[i][1];
        }
    }
    g
}

/// Element matrices (12x12, dof order `2*node + comp`): mass with unit
/// density, unit-modulus stiffness and vector H1 (gradient plus mass).
fn element_matrices(p: [[f64; 2]; 3], nu: f64) -> ([[f64; 12]; 12], [[f64; 12]; 12], [[f64; 12]; 12]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det;
    let gl = [
        [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
        [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
        [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
    ];
    let (lam, mu) = lame_parameters(1.0, nu);
    let mut m = [[0.0; 12]; 12];
    let mut k = [[0.0; 12]; 12];
    let mut x = [[0.0; 12]; 12];
    for (l, w) in QUAD6 {
        let n = ComponentMesh::shape_values(l);
        let wa = w * area;
        for a in 0..6 {
            for b in 0..6 {
                let v = wa * n[a] * n[b];
                for c in 0..2 {
                    m[2 * a + c][2 * b + c] += v;
                    x[2 * a + c][2 * b + c] += v;
                }
            }
        }
    }
    for (l, w) in QUAD3 {
        let g = shape_grads(l, gl);
        let wa = w * area;
        for a in 0..6 {
            for b in 0..6 {
                let dot = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                for i in 0..2 {
                    x[2 * a + i][2 * b + i] += wa * dot;
                    for j in 0..2 {
                        let mut v = lam * g[a][i] * g[b][j] + mu * g[a][j] * g[b][i];
                        if i == j {
                            v += mu * dot;
                        }
                        k[2 * a + i][2 * b + j] += wa * v;
                    }
                }
            }
        }
    }
    (m, k, x)
}

/// Parameter-independent operators of one archetype variant: mass `M0`
/// (density included), unit-modulus stiffness `A0` and H1 matrix `X`.
#[derive(Debug, Clone)]
pub struct AffineOperatorSet {
    pub mass: CsrMatrix<f64>,
    pub stiffness: CsrMatrix<f64>,
    pub h1: CsrMatrix<f64>,
    pub material: Material,
}

impl AffineOperatorSet {
    pub fn n_dofs(&self) -> usize {
        self.mass.n_rows()
    }

    /// Time-domain `(M, C, A)` for modulus `e` and Rayleigh damping.
    pub fn time_operators(&self, e: f64, alpha: f64, beta: f64) -> Result<(CsrMatrix<f64>, CsrMatrix<f64>, CsrMatrix<f64>)> {
        let a = linear_combination::<f64>(&[(e, &self.stiffness)])?;
        let c = linear_combination::<f64>(&[(alpha, &self.mass), (beta * e, &self.stiffness)])?;
        Ok((self.mass.clone(), c, a))
    }

    /// Frequency-domain operator `(-w^2 + i w alpha) M0 + e (1 + i w beta) A0`.
    pub fn frequency_operator(&self, omega: f64, e: f64, alpha: f64, beta: f64) -> Result<CsrMatrix<Complex64>> {
        let (sm, sa) = frequency_coefficients(omega, e, alpha, beta);
        linear_combination(&[(sm, &self.mass), (sa, &self.stiffness)])
    }
}

/// Coefficients multiplying `M0` and `A0` in the frequency-domain operator.
pub fn frequency_coefficients(omega: f64, e: f64, alpha: f64, beta: f64) -> (Complex64, Complex64) {
    (
        Complex64::new(-omega * omega, omega * alpha),
        Complex64::new(e, e * omega * beta),
    )
}

/// Assembles the affine operators on the free dofs of a mesh.
pub fn assemble_affine_operators(mesh: &ComponentMesh, material: Material) -> Result<AffineOperatorSet> {
    let nu = material.poisson;
    if !(nu > -1.0 && nu < 0.5) || !(material.density > 0.0) {
        return Err(Error::InvalidParameter(format!("material {material:?}")));
    }
    let n = mesh.n_free_dofs();
    let cap = mesh.triangles.len() * 144;
    let mut tm = Vec::with_capacity(cap);
    let mut tk = Vec::with_capacity(cap);
    let mut tx = Vec::with_capacity(cap);
    for tri in &mesh.triangles {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let (m, k, x) = element_matrices(p, nu);
        let mut gd = [None; 12];
        for a in 0..6 {
            for c in 0..2 {
                gd[2 * a + c] = mesh.dofs.dof(tri[a], c);
            }
        }
        for r in 0..12 {
            let Some(gr) = gd[r] else { continue };
            for s in 0..12 {
                let Some(gs) = gd[s] else { continue };
                tm.push((gr, gs, material.density * m[r][s]));
                tk.push((gr, gs, k[r][s]));
                tx.push((gr, gs, x[r][s]));
            }
        }
    }
    Ok(AffineOperatorSet {
        mass: CsrMatrix::from_triplets(n, n, tm),
        stiffness: CsrMatrix::from_triplets(n, n, tk),
        h1: CsrMatrix::from_triplets(n, n, tx),
        material,
    })
}

/// Gaussian traction profile `exp(-(x - l)^2 / sigma^2)`.
#[inline]
pub fn gaussian(x: f64, l: f64, sigma: f64) -> f64 {
    let r = (x - l) / sigma;
    (-r * r).exp()
}

// 5-point Gauss-Legendre on [0, 1].
const GL5: [(f64, f64); 5] = [
    (0.046910077030668, 0.118463442528095),
    (0.230765344947158, 0.239314335249683),
    (0.5, 0.284444444444444),
    (0.769234655052842, 0.239314335249683),
    (0.953089922969332, 0.118463442528095),
];

/// Loaded upper face of a component with the consistent quadrature used for
/// the narrow Gaussian traction.
#[derive(Debug, Clone)]
pub struct LoadedBoundary {
    /// Mesh nodes on the loaded face, left to right.
    pub nodes: Vec<usize>,
    /// Horizontal positions of `nodes` relative to the component mid-span.
    pub x: Vec<f64>,
    /// Free x and y dofs of each node.
    pub dofs: Vec<[usize; 2]>,
    /// Edges as local indices `[end0, mid, end1]` with end coordinates.
    edges: Vec<([usize; 3], f64, f64)>,
}

impl LoadedBoundary {
    pub fn new(mesh: &ComponentMesh) -> Result<Self> {
        let nodes = mesh.tagged_nodes(BoundaryTag::NeumannLoaded);
        if nodes.is_empty() {
            return Err(Error::InvalidGeometry("component has no loaded face".into()));
        }
        let xmid = 0.5 * mesh.geometry.deck_length();
        let local: std::collections::HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut edges = Vec::new();
        for e in mesh.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::NeumannLoaded) {
            let ids = [local[&e.nodes[0]], local[&e.nodes[1]], local[&e.nodes[2]]];
            let (x0, x1) = (mesh.nodes[e.nodes[0]][0] - xmid, mesh.nodes[e.nodes[2]][0] - xmid);
            if x0 < x1 {
                edges.push((ids, x0, x1));
            } else {
                edges.push(([ids[2], ids[1], ids[0]], x1, x0));
            }
        }
        edges.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let mut dofs = Vec::with_capacity(nodes.len());
        for &n in &nodes {
            match (mesh.dofs.dof(n, 0), mesh.dofs.dof(n, 1)) {
                (Some(a), Some(b)) => dofs.push([a, b]),
                _ => return Err(Error::InvalidGeometry("clamped node on the loaded face".into())),
            }
        }
        let x = nodes.iter().map(|&n| mesh.nodes[n][0] - xmid).collect();
        Ok(Self { nodes, x, dofs, edges })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Accumulates into `out` the consistent nodal vector of the unit
    /// Gaussian profile centred at `l`. Only edges within `6 sigma` of the
    /// centre are visited.
    pub fn add_profile(&self, l: f64, sigma: f64, scale: f64, out: &mut [f64]) {
        let reach = 6.0 * sigma;
        for &(ids, x0, x1) in &self.edges {
            if x1 < l - reach || x0 > l + reach {
                continue;
            }
            self.integrate_edge(ids, x0, x1, l, sigma, scale, out);
        }
    }

    /// Single nodal entry of the profile vector.
    pub fn profile_entry(&self, node: usize, l: f64, sigma: f64) -> f64 {
        let mut out = vec![0.0; self.nodes.len()];
        let reach = 6.0 * sigma;
        for &(ids, x0, x1) in &self.edges {
            if !ids.contains(&node) || x1 < l - reach || x0 > l + reach {
                continue;
            }
            self.integrate_edge(ids, x0, x1, l, sigma, 1.0, &mut out);
        }
        out[node]
    }

    #[allow(clippy::too_many_arguments)]
    fn integrate_edge(&self, ids: [usize; 3], x0: f64, x1: f64, l: f64, sigma: f64, scale: f64, out: &mut [f64]) {
        let len = x1 - x0;
        let nsub = ((2.0 * len / sigma).ceil() as usize).max(1);
        let ds = 1.0 / nsub as f64;
        let mut acc = [0.0; 3];
        for k in 0..nsub {
            for &(q, w) in &GL5 {
                let s = (k as f64 + q) * ds;
                let g = gaussian(x0 + s * len, l, sigma) * w * ds * len;
                acc[0] += g * (1.0 - s) * (1.0 - 2.0 * s);
                acc[1] += g * 4.0 * s * (1.0 - s);
                acc[2] += g * s * (2.0 * s - 1.0);
            }
        }
        for k in 0..3 {
            out[ids[k]] += scale * acc[k];
        }
    }

    /// Profile vector over the loaded-face nodes.
    pub fn profile(&self, l: f64, sigma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        self.add_profile(l, sigma, 1.0, &mut out);
        out
    }

    /// Scatters a nodal profile to a full dof vector as the traction
    /// `(F g, -c F g)`.
    pub fn scatter(&self, profile: &[f64], f: f64, c_friction: f64, out: &mut [f64]) {
        for (p, d) in profile.iter().zip(&self.dofs) {
            out[d[0]] += f * p;
            out[d[1]] -= c_friction * f * p;
        }
    }
}

/// One axle load acting on a component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingLoad {
    pub magnitude: f64,
    pub width: f64,
    pub friction: f64,
    /// Left and right activation margins measured from mid-span.
    pub d1: f64,
    pub d2: f64,
}

impl MovingLoad {
    /// Whether the load centred at `l` (relative to mid-span) is applied.
    pub fn is_active(&self, l: f64) -> bool {
        l >= -self.d1 - 4.0 * self.width && l <= self.d2 + 4.0 * self.width
    }
}

/// Consistent load vector of an axle at `l` on a component's free dofs.
pub fn assemble_load_vector(boundary: &LoadedBoundary, n_dofs: usize, load: &MovingLoad, l: f64) -> Result<Vec<f64>> {
    if !(load.width > 0.0) || !load.magnitude.is_finite() {
        return Err(Error::InvalidParameter(format!("load {load:?}")));
    }
    let mut out = vec![0.0; n_dofs];
    if !load.is_active(l) {
        return Ok(out);
    }
    let (xmin, xmax) = (boundary.x[0], *boundary.x.last().unwrap());
    if l < xmin || l > xmax {
        return Err(Error::LoadOutside(format!("centre {l} outside [{xmin}, {xmax}]")));
    }
    let p = boundary.profile(l, load.width);
    boundary.scatter(&p, load.magnitude, load.friction, &mut out);
    Ok(out)
}
