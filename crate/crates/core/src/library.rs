//! Archetype component library: geometry variants, their meshes, FE
//! operators and load surrogates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eim::EimSurrogate;
use crate::error::{Error, Result};
use crate::fem::{assemble_affine_operators, AffineOperatorSet, LoadedBoundary, Material};
use crate::mesh::{generate_component_mesh, ComponentGeometry, ComponentKind, Crack, ComponentMesh, Side};

/// Concrete geometry variants instantiated in a system. The end span has a
/// mirrored variant whose clamped face is on the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    EndLeft,
    EndRight,
    Pier,
    Deck,
    Loaded,
    Cracked,
}

pub const ALL_VARIANTS: [Variant; 6] =
    [Variant::EndLeft, Variant::EndRight, Variant::Pier, Variant::Deck, Variant::Loaded, Variant::Cracked];

impl Variant {
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn kind(self) -> ComponentKind {
        match self {
            Variant::EndLeft | Variant::EndRight => ComponentKind::Rect15L,
            Variant::Pier => ComponentKind::TShape,
            Variant::Deck => ComponentKind::Rect,
            Variant::Loaded => ComponentKind::RectLoaded,
            Variant::Cracked => ComponentKind::RectLoadedCracked,
        }
    }
    pub fn has_port(self, side: Side) -> bool {
        match (self, side) {
            (Variant::EndLeft, Side::Left) | (Variant::EndRight, Side::Right) => false,
            _ => true,
        }
    }
    pub fn is_loaded(self) -> bool {
        self.kind().is_loaded()
    }
}

/// The four reference ports, identified by the unordered pair of archetypes
/// they join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum RefPort {
    EndPier,
    PierDeck,
    DeckLoaded,
    DeckCracked,
}

pub const ALL_PORTS: [RefPort; 4] = [RefPort::EndPier, RefPort::PierDeck, RefPort::DeckLoaded, RefPort::DeckCracked];

impl RefPort {
    pub fn index(self) -> usize {
        self as usize
    }
    /// Archetypes on the two sides (unordered).
    pub fn kinds(self) -> [ComponentKind; 2] {
        match self {
            RefPort::EndPier => [ComponentKind::Rect15L, ComponentKind::TShape],
            RefPort::PierDeck => [ComponentKind::TShape, ComponentKind::Rect],
            RefPort::DeckLoaded => [ComponentKind::Rect, ComponentKind::RectLoaded],
            RefPort::DeckCracked => [ComponentKind::Rect, ComponentKind::RectLoadedCracked],
        }
    }
    /// Reference port joining `left | right`, if any.
    pub fn between(left: Variant, right: Variant) -> Option<RefPort> {
        let (a, b) = (left.kind(), right.kind());
        ALL_PORTS.into_iter().find(|p| {
            let k = p.kinds();
            (k[0] == a && k[1] == b) || (k[0] == b && k[1] == a)
        })
    }
    /// Training pairs `(left, right)` in both orientations.
    pub fn training_pairs(self) -> Vec<(Variant, Variant)> {
        let mut out = Vec::new();
        for l in ALL_VARIANTS {
            for r in ALL_VARIANTS {
                if l.has_port(Side::Right) && r.has_port(Side::Left) && RefPort::between(l, r) == Some(self) {
                    out.push((l, r));
                }
            }
        }
        out
    }
    /// Whether a port of this reference type can sit on `side` of `v`.
    pub fn fits(self, v: Variant, side: Side) -> bool {
        v.has_port(side) && self.kinds().contains(&v.kind())
    }
}

/// Dimensions and discretization of the archetype library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub length: f64,
    pub thickness: f64,
    pub pier_height: f64,
    pub pier_width: f64,
    pub crack_depth: f64,
    pub h: f64,
    pub material: Material,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            length: 5.0,
            thickness: 1.0,
            pier_height: 3.0,
            pier_width: 1.0,
            crack_depth: 0.25,
            h: 0.25,
            material: Material::default(),
        }
    }
}

impl LibraryConfig {
    pub fn geometry(&self, v: Variant) -> ComponentGeometry {
        let mut g = ComponentGeometry::new(v.kind(), self.length, self.thickness);
        g.pier_height = self.pier_height;
        g.pier_width = self.pier_width;
        g.mirrored = v == Variant::EndRight;
        if v == Variant::Cracked {
            g.crack = Some(Crack { center_x: 0.5 * self.length, depth: self.crack_depth, opening: 0.0 });
        }
        g
    }

    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("library config serializes");
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}

/// One meshed archetype variant.
#[derive(Debug, Clone)]
pub struct Archetype {
    pub variant: Variant,
    pub mesh: ComponentMesh,
    pub ops: AffineOperatorSet,
    pub loaded: Option<LoadedBoundary>,
    /// Free dofs not on any port.
    pub interior: Vec<usize>,
}

impl Archetype {
    pub fn port_dofs(&self, side: Side) -> Vec<usize> {
        if self.variant.has_port(side) {
            self.mesh.port_dofs(side)
        } else {
            Vec::new()
        }
    }
}

/// All meshed variants.
#[derive(Debug, Clone)]
pub struct ArchetypeLibrary {
    pub config: LibraryConfig,
    pub archetypes: Vec<Archetype>,
}

impl ArchetypeLibrary {
    pub fn build(config: &LibraryConfig) -> Result<Self> {
        let mut archetypes = Vec::new();
        for v in ALL_VARIANTS {
            let mesh = generate_component_mesh(&config.geometry(v), config.h)?;
            let ops = assemble_affine_operators(&mesh, config.material)?;
            let loaded = if v.is_loaded() { Some(LoadedBoundary::new(&mesh)?) } else { None };
            let mut on_port = vec![false; mesh.n_free_dofs()];
            for s in [Side::Left, Side::Right] {
                if v.has_port(s) {
                    for d in mesh.port_dofs(s) {
                        on_port[d] = true;
                    }
                }
            }
            let interior = (0..mesh.n_free_dofs()).filter(|&d| !on_port[d]).collect();
            archetypes.push(Archetype { variant: v, mesh, ops, loaded, interior });
        }
        let lib = Self { config: config.clone(), archetypes };
        // All ports must have the same node layout.
        let n = lib.get(Variant::Deck).mesh.port_dofs(Side::Left).len();
        for a in &lib.archetypes {
            for s in [Side::Left, Side::Right] {
                let p = a.port_dofs(s);
                if !p.is_empty() && p.len() != n {
                    return Err(Error::InvalidGeometry(format!("{:?} port has {} dofs, expected {n}", a.variant, p.len())));
                }
            }
        }
        Ok(lib)
    }

    pub fn get(&self, v: Variant) -> &Archetype {
        &self.archetypes[v.index()]
    }

    pub fn port_dof_count(&self) -> usize {
        self.get(Variant::Deck).mesh.port_dofs(Side::Left).len()
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }
}

/// Training grid for the load surrogate over centre location and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EimTraining {
    pub l_min: f64,
    pub l_max: f64,
    pub n_l: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub n_sigma: usize,
    pub tol: f64,
    pub q_max: usize,
}

impl EimTraining {
    /// Window covering activation margins up to `d_max` for widths up to
    /// `sigma_max`, with at least 8 points per `sigma_min`.
    pub fn covering(d_max: f64, sigma_min: f64, sigma_max: f64, tol: f64) -> Self {
        let reach = d_max + 4.0 * sigma_max;
        let n_l = ((2.0 * reach) / (sigma_min / 8.0)).ceil() as usize + 1;
        Self { l_min: -reach, l_max: reach, n_l, sigma_min, sigma_max, n_sigma: 5, tol, q_max: 200 }
    }

    pub fn l_grid(&self, refine: usize) -> Vec<f64> {
        let n = (self.n_l - 1) * refine + 1;
        (0..n).map(|k| self.l_min + (self.l_max - self.l_min) * k as f64 / (n - 1) as f64).collect()
    }

    pub fn sigma_grid(&self, refine: usize) -> Vec<f64> {
        let n = ((self.n_sigma - 1) * refine + 1).max(1);
        if n == 1 {
            return vec![self.sigma_min];
        }
        (0..n).map(|k| self.sigma_min + (self.sigma_max - self.sigma_min) * k as f64 / (n - 1) as f64).collect()
    }
}

/// Trains the surrogate of the unit x-traction profile on a loaded face.
pub fn train_load_eim(boundary: &LoadedBoundary, t: &EimTraining) -> Result<EimSurrogate> {
    let mut snaps = Vec::new();
    for s in t.sigma_grid(1) {
        for l in t.l_grid(1) {
            snaps.push(boundary.profile(l, s));
        }
    }
    EimSurrogate::train(&snaps, t.tol, t.q_max)
}

/// Max relative error of the surrogate on a grid `refine` times denser.
pub fn validate_load_eim(boundary: &LoadedBoundary, eim: &EimSurrogate, t: &EimTraining, refine: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for s in t.sigma_grid(refine) {
        for l in t.l_grid(refine) {
            let p = boundary.profile(l, s);
            worst = worst.max(eim.relative_error(&p));
        }
    }
    worst
}

/// Evaluates the surrogate coefficients for a profile centred at `l`,
/// computing only the magic entries.
pub fn eim_coefficients(boundary: &LoadedBoundary, eim: &EimSurrogate, l: f64, sigma: f64) -> Vec<f64> {
    let vals: Vec<f64> = eim.magic.iter().map(|&m| boundary.profile_entry(m, l, sigma)).collect();
    eim.coefficients(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_ports_cover_pairs() {
        assert_eq!(RefPort::between(Variant::EndLeft, Variant::Pier), Some(RefPort::EndPier));
        assert_eq!(RefPort::between(Variant::Pier, Variant::EndRight), Some(RefPort::EndPier));
        assert_eq!(RefPort::between(Variant::Cracked, Variant::Deck), Some(RefPort::DeckCracked));
        assert_eq!(RefPort::between(Variant::Deck, Variant::Deck), None);
        assert_eq!(RefPort::EndPier.training_pairs(), vec![(Variant::EndLeft, Variant::Pier), (Variant::Pier, Variant::EndRight)]);
        assert_eq!(RefPort::DeckLoaded.training_pairs().len(), 2);
    }

    #[test]
    fn default_library_builds() {
        let lib = ArchetypeLibrary::build(&LibraryConfig::default()).unwrap();
        assert_eq!(lib.port_dof_count(), 18);
        for a in &lib.archetypes {
            assert!((a.mesh.total_area() - a.mesh.geometry.area()).abs() < 1e-9);
        }
    }
}
