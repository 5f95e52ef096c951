//! Structured quadratic triangle meshes for the component archetypes.
//!
//! Every archetype is a union of axis-aligned rectangles (deck, optional pier)
//! meshed on a uniform grid, each grid cell split into two triangles. Nodes are
//! addressed on the doubled grid so that edge midpoints have integer keys. A
//! crack is a zero-width vertical slit: nodes on the slit above the tip are
//! duplicated and the cells on either side reference their own copy.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Archetype of a bridge component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum ComponentKind {
    /// End span of length 1.5 L, clamped on its outer vertical face.
    Rect15L,
    /// Deck segment on a centered pier clamped at its foot.
    TShape,
    /// Unloaded deck segment.
    Rect,
    /// Deck segment with a loaded upper face.
    RectLoaded,
    /// Loaded deck segment with a crack at mid-span.
    RectLoadedCracked,
}

impl ComponentKind {
    pub fn is_loaded(self) -> bool {
        matches!(self, ComponentKind::RectLoaded | ComponentKind::RectLoadedCracked)
    }
    pub fn short_name(self) -> &'static str {
        match self {
            ComponentKind::Rect15L => "A1",
            ComponentKind::TShape => "T",
            ComponentKind::Rect => "R",
            ComponentKind::RectLoaded => "RL",
            ComponentKind::RectLoadedCracked => "RLC",
        }
    }
}

/// Crack description, positions in component coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crack {
    /// Horizontal position of the slit.
    pub center_x: f64,
    /// Depth measured down from the upper face.
    pub depth: f64,
    /// Opening of the slit; only zero (a doubled-node slit) is meshed.
    pub opening: f64,
}

/// Geometry of one archetype variant in component coordinates: the deck
/// occupies `[0, deck_length] x [0, thickness]`, a pier hangs below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentGeometry {
    pub kind: ComponentKind,
    /// Base component length `L` (the end span is 1.5 L long).
    pub length: f64,
    /// Deck thickness `H`.
    pub thickness: f64,
    /// Pier height below the deck (TShape only).
    pub pier_height: f64,
    /// Pier width (TShape only).
    pub pier_width: f64,
    pub crack: Option<Crack>,
    /// For the end span: clamp the right face instead of the left.
    pub mirrored: bool,
}

impl ComponentGeometry {
    pub fn new(kind: ComponentKind, length: f64, thickness: f64) -> Self {
        Self {
            kind,
            length,
            thickness,
            pier_height: 3.0 * thickness,
            pier_width: thickness,
            crack: None,
            mirrored: false,
        }
    }

    pub fn deck_length(&self) -> f64 {
        match self.kind {
            ComponentKind::Rect15L => 1.5 * self.length,
            _ => self.length,
        }
    }

    pub fn area(&self) -> f64 {
        let deck = self.deck_length() * self.thickness;
        match self.kind {
            ComponentKind::TShape => deck + self.pier_width * self.pier_height,
            _ => deck,
        }
    }

    pub fn has_left_port(&self) -> bool {
        !(self.kind == ComponentKind::Rect15L && !self.mirrored)
    }
    pub fn has_right_port(&self) -> bool {
        !(self.kind == ComponentKind::Rect15L && self.mirrored)
    }
}

/// Role of a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    DirichletClamped,
    NeumannFree,
    NeumannLoaded,
    PortLeft,
    PortRight,
}

/// Which of the two deck ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn tag(self) -> BoundaryTag {
        match self {
            Side::Left => BoundaryTag::PortLeft,
            Side::Right => BoundaryTag::PortRight,
        }
    }
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// Quadratic boundary edge `[end0, mid, end1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 3],
    pub tag: BoundaryTag,
}

/// Map from (node, component) to free degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    map: Vec<[Option<usize>; 2]>,
    n_free: usize,
}

impl DofMap {
    pub fn dof(&self, node: usize, comp: usize) -> Option<usize> {
        self.map[node][comp]
    }
    pub fn n_free(&self) -> usize {
        self.n_free
    }
    pub fn n_nodes(&self) -> usize {
        self.map.len()
    }
}

/// Quadratic triangle mesh of one archetype variant.
#[derive(Debug, Clone)]
pub struct ComponentMesh {
    pub geometry: ComponentGeometry,
    /// All quadratic nodes, vertices and edge midpoints.
    pub nodes: Vec<[f64; 2]>,
    pub is_vertex: Vec<bool>,
    /// Connectivity `[v0, v1, v2, m01, m12, m20]`, counter-clockwise.
    pub triangles: Vec<[usize; 6]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub dofs: DofMap,
    pub hx: f64,
    pub hy: f64,
}

fn grid_count(len: f64, h: f64) -> usize {
    ((len / h) - 1e-9).ceil().max(1.0) as usize
}

fn aligned(x: f64, spacing: f64) -> Option<i64> {
    let r = x / spacing;
    let k = r.round();
    if (r - k).abs() < 1e-8 {
        Some(k as i64)
    } else {
        None
    }
}

/// Builds the quadratic mesh of one archetype variant.
///
/// `h_target` is an upper bound on the element size; the grid spacing is
/// chosen to divide the deck exactly. Pier faces and a crack must fall on
/// grid lines.
pub fn generate_component_mesh(geometry: &ComponentGeometry, h_target: f64) -> Result<ComponentMesh> {
    let g = geometry;
    if !(g.length > 0.0 && g.thickness > 0.0 && h_target > 0.0) || !h_target.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "non-positive dimension (L={}, H={}, h={})",
            g.length, g.thickness, h_target
        )));
    }
    if h_target > g.thickness + 1e-12 {
        return Err(Error::InvalidGeometry(format!(
            "element size {h_target} exceeds the thickness {}",
            g.thickness
        )));
    }
    let ld = g.deck_length();
    let nx = grid_count(ld, h_target);
    let ny = grid_count(g.thickness, h_target);
    let hx = ld / nx as f64;
    let hy = g.thickness / ny as f64;

    // Pier cells.
    let mut pier: Option<(i64, i64, i64)> = None;
    if g.kind == ComponentKind::TShape {
        if !(g.pier_width > 0.0 && g.pier_width < ld && g.pier_height > 0.0) {
            return Err(Error::InvalidGeometry("pier dimensions".into()));
        }
        let x0 = 0.5 * (ld - g.pier_width);
        let x1 = 0.5 * (ld + g.pier_width);
        let (i0, i1) = match (aligned(x0, hx), aligned(x1, hx)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidGeometry(format!(
                    "pier faces at x={x0}, x={x1} are not on the grid (hx={hx})"
                )))
            }
        };
        let np = aligned(g.pier_height, hy).ok_or_else(|| {
            Error::InvalidGeometry(format!("pier height {} not a multiple of hy={hy}", g.pier_height))
        })?;
        pier = Some((i0, i1, np));
    }

    // Crack slit on the doubled grid.
    let mut slit: Option<(i64, i64)> = None;
    if let Some(c) = g.crack {
        if c.opening != 0.0 {
            return Err(Error::InvalidGeometry("only zero-width cracks are supported".into()));
        }
        if !(c.depth > 0.0 && c.depth < g.thickness) || !(c.center_x > 0.0 && c.center_x < ld) {
            return Err(Error::InvalidGeometry(format!("crack {c:?} outside the deck")));
        }
        let ic = aligned(c.center_x, hx).ok_or_else(|| {
            Error::CrackMisaligned(format!("crack position {} vs hx={hx}", c.center_x))
        })?;
        let jt = aligned(g.thickness - c.depth, hy).ok_or_else(|| {
            Error::CrackMisaligned(format!("crack tip height {} vs hy={hy}", g.thickness - c.depth))
        })?;
        slit = Some((2 * ic, 2 * jt));
    }

    let mut cells: Vec<(i64, i64)> = Vec::new();
    for i in 0..nx as i64 {
        for j in 0..ny as i64 {
            cells.push((i, j));
        }
    }
    if let Some((i0, i1, np)) = pier {
        for i in i0..i1 {
            for j in -np..0 {
                cells.push((i, j));
            }
        }
    }

    // Node keys on the doubled grid, with a side flag for slit copies.
    let key = |ii: i64, jj: i64, cell_i: i64| -> (i64, i64, u8) {
        if let Some((icc, jt)) = slit {
            if ii == icc && jj > jt {
                let side = if cell_i >= icc / 2 { 1 } else { 0 };
                return (ii, jj, side);
            }
        }
        (ii, jj, 0)
    };

    let mut tri_keys: Vec<[(i64, i64, u8); 6]> = Vec::with_capacity(cells.len() * 2);
    for &(i, j) in &cells {
        let (a, b) = (2 * i, 2 * j);
        let v00 = (a, b);
        let v10 = (a + 2, b);
        let v11 = (a + 2, b + 2);
        let v01 = (a, b + 2);
        for tri in [[v00, v10, v11], [v00, v11, v01]] {
            let m01 = ((tri[0].0 + tri[1].0) / 2, (tri[0].1 + tri[1].1) / 2);
            let m12 = ((tri[1].0 + tri[2].0) / 2, (tri[1].1 + tri[2].1) / 2);
            let m20 = ((tri[2].0 + tri[0].0) / 2, (tri[2].1 + tri[0].1) / 2);
            let pts = [tri[0], tri[1], tri[2], m01, m12, m20];
            let mut ks = [(0, 0, 0u8); 6];
            for (k, p) in pts.iter().enumerate() {
                ks[k] = key(p.0, p.1, i);
            }
            tri_keys.push(ks);
        }
    }

    let mut index: BTreeMap<(i64, i64, u8), usize> = BTreeMap::new();
    let mut vertex_keys: std::collections::HashSet<(i64, i64, u8)> = Default::default();
    for ks in &tri_keys {
        for (k, key) in ks.iter().enumerate() {
            index.insert(*key, 0);
            if k < 3 {
                vertex_keys.insert(*key);
            }
        }
    }
    let mut nodes = Vec::with_capacity(index.len());
    let mut is_vertex = Vec::with_capacity(index.len());
    for (n, (k, v)) in index.iter_mut().enumerate() {
        *v = n;
        nodes.push([k.0 as f64 * 0.5 * hx, k.1 as f64 * 0.5 * hy]);
        is_vertex.push(vertex_keys.contains(k));
    }
    let triangles: Vec<[usize; 6]> = tri_keys
        .iter()
        .map(|ks| {
            let mut t = [0usize; 6];
            for k in 0..6 {
                t[k] = index[&ks[k]];
            }
            t
        })
        .collect();

    // Boundary edges are the edges used by exactly one triangle.
    let mut edge_count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for t in &triangles {
        for (a, b, m) in [(t[0], t[1], t[3]), (t[1], t[2], t[4]), (t[2], t[0], t[5])] {
            let e = edge_count.entry((a.min(b), a.max(b))).or_insert((0, m));
            e.0 += 1;
        }
    }
    let eps = 1e-9 * ld.max(g.thickness);
    let mut boundary_edges = Vec::new();
    let mut sorted: Vec<_> = edge_count.into_iter().filter(|(_, (c, _))| *c == 1).collect();
    sorted.sort_by_key(|((a, b), _)| (*a, *b));
    for ((a, b), (_, m)) in sorted {
        let pa = nodes[a];
        let pb = nodes[b];
        let tag = if (pa[0] - pb[0]).abs() < eps {
            let x = pa[0];
            let on_deck = pa[1].min(pb[1]) >= -eps;
            if x.abs() < eps && on_deck {
                if g.has_left_port() {
                    BoundaryTag::PortLeft
                } else {
                    BoundaryTag::DirichletClamped
                }
            } else if (x - ld).abs() < eps && on_deck {
                if g.has_right_port() {
                    BoundaryTag::PortRight
                } else {
                    BoundaryTag::DirichletClamped
                }
            } else {
                BoundaryTag::NeumannFree
            }
        } else {
            let y = pa[1];
            if (y - g.thickness).abs() < eps && g.kind.is_loaded() {
                BoundaryTag::NeumannLoaded
            } else if g.kind == ComponentKind::TShape && (y + g.pier_height).abs() < eps {
                BoundaryTag::DirichletClamped
            } else {
                BoundaryTag::NeumannFree
            }
        };
        boundary_edges.push(BoundaryEdge { nodes: [a, m, b], tag });
    }

    let mut clamped = vec![false; nodes.len()];
    for e in &boundary_edges {
        if e.tag == BoundaryTag::DirichletClamped {
            for &n in &e.nodes {
                clamped[n] = true;
            }
        }
    }
    let mut map = vec![[None, None]; nodes.len()];
    let mut n_free = 0;
    for (n, m) in map.iter_mut().enumerate() {
        if !clamped[n] {
            m[0] = Some(n_free);
            m[1] = Some(n_free + 1);
            n_free += 2;
        }
    }

    Ok(ComponentMesh {
        geometry: g.clone(),
        nodes,
        is_vertex,
        triangles,
        boundary_edges,
        dofs: DofMap { map, n_free },
        hx,
        hy,
    })
}

impl ComponentMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn n_vertices(&self) -> usize {
        self.is_vertex.iter().filter(|&&v| v).count()
    }
    pub fn n_free_dofs(&self) -> usize {
        self.dofs.n_free()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c, ..] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Nodes lying on edges with the given tag, sorted bottom-to-top then
    /// left-to-right.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut ns: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.nodes)
            .collect();
        ns.sort_by(|&a, &b| {
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            (pa[1], pa[0]).partial_cmp(&(pb[1], pb[0])).unwrap()
        });
        ns.dedup();
        ns
    }

    /// Nodes of a port, bottom to top.
    pub fn port_nodes(&self, side: Side) -> Vec<usize> {
        self.tagged_nodes(side.tag())
    }

    /// Free dofs of a port, bottom to top, x before y at each node.
    pub fn port_dofs(&self, side: Side) -> Vec<usize> {
        let mut out = Vec::new();
        for n in self.port_nodes(side) {
            for c in 0..2 {
                if let Some(d) = self.dofs.dof(n, c) {
                    out.push(d);
                }
            }
        }
        out
    }

    /// Locates a point; returns the triangle and its barycentric coordinates.
    /// Points on a crack face resolve to the left copy.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let tol = 1e-10;
        for (t, tri) in self.triangles.iter().enumerate() {
            let (a, b, c) = (self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
            let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
            let l3 = 1.0 - l1 - l2;
            let m = l1.min(l2).min(l3);
            if m >= -tol {
                return Some((t, [l1, l2, l3]));
            }
        }
        None
    }

    /// Quadratic shape function values at barycentric coordinates.
    pub fn shape_values(l: [f64; 3]) -> [f64; 6] {
        let [a, b, c] = l;
        [
            a * (2.0 * a - 1.0),
            b * (2.0 * b - 1.0),
            c * (2.0 * c - 1.0),
            4.0 * a * b,
            4.0 * b * c,
            4.0 * c * a,
        ]
    }

    /// Sparse evaluation row for displacement component `comp` at point `p`.
    pub fn point_evaluation(&self, p: [f64; 2], comp: usize) -> Result<Vec<(usize, f64)>> {
        let (t, l) = self
            .locate(p)
            .ok_or_else(|| Error::InvalidGeometry(format!("point {p:?} outside the component")))?;
        let n = Self::shape_values(l);
        let mut row = Vec::new();
        for k in 0..6 {
            if n[k].abs() > 1e-14 {
                if let Some(d) = self.dofs.dof(self.triangles[t][k], comp) {
                    row.push((d, n[k]));
                }
            }
        }
        Ok(row)
    }

    /// Plain-text dump used for debugging.
    pub fn debug_dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {:?} nodes={} triangles={} free_dofs={} hx={} hy={}",
            self.geometry.kind,
            self.n_nodes(),
            self.triangles.len(),
            self.n_free_dofs(),
            self.hx,
            self.hy
        );
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "n {i} {} {} {}", p[0], p[1], self.is_vertex[i] as u8);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "t {} {} {} {} {} {}", t[0], t[1], t[2], t[3], t[4], t[5]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "e {} {} {} {:?}", e.nodes[0], e.nodes[1], e.nodes[2], e.tag);
        }
        s
    }
}
