//! Assembly of component chains joined at matching ports.
//!
//! Components are placed left to right; the right port of component `c` is
//! identified dof-by-dof with the left port of component `c + 1`. The same
//! machinery builds the two-component training systems and the full bridge.

use crate::error::{Error, Result};
use crate::fem::AffineOperatorSet;
use crate::mesh::{ComponentMesh, Side};
use crate::sparse::{CsrMatrix, Scalar};

/// Local-to-global dof maps for a chain of components.
#[derive(Debug, Clone)]
pub struct ChainAssembly {
    pub n_dofs: usize,
    /// `local_to_global[c][i]` for the free dofs of component `c`.
    pub local_to_global: Vec<Vec<usize>>,
    /// Global dofs of the uncoupled left port of the first component.
    pub left_outer: Vec<usize>,
    /// Global dofs of the uncoupled right port of the last component.
    pub right_outer: Vec<usize>,
    /// Global dofs of each internal interface `c | c+1`.
    pub interfaces: Vec<Vec<usize>>,
}

impl ChainAssembly {
    pub fn new(meshes: &[&ComponentMesh]) -> Result<Self> {
        if meshes.is_empty() {
            return Err(Error::InvalidGeometry("empty component chain".into()));
        }
        let mut n = 0usize;
        let mut l2g: Vec<Vec<usize>> = Vec::with_capacity(meshes.len());
        let mut interfaces = Vec::new();
        for (c, m) in meshes.iter().enumerate() {
            let mut map = vec![usize::MAX; m.n_free_dofs()];
            if c > 0 {
                let prev = meshes[c - 1];
                let pr = prev.port_dofs(Side::Right);
                let pl = m.port_dofs(Side::Left);
                if pr.is_empty() || pr.len() != pl.len() {
                    return Err(Error::InvalidGeometry(format!(
                        "ports of components {} and {} do not match ({} vs {} dofs)",
                        c - 1,
                        c,
                        pr.len(),
                        pl.len()
                    )));
                }
                let (nr, nl) = (prev.port_nodes(Side::Right), m.port_nodes(Side::Left));
                for (a, b) in nr.iter().zip(&nl) {
                    if (prev.nodes[*a][1] - m.nodes[*b][1]).abs() > 1e-9 {
                        return Err(Error::InvalidGeometry(format!("port nodes of components {} and {c} misaligned", c - 1)));
                    }
                }
                let mut iface = Vec::with_capacity(pl.len());
                for (a, b) in pr.iter().zip(&pl) {
                    map[*b] = l2g[c - 1][*a];
                    iface.push(map[*b]);
                }
                interfaces.push(iface);
            }
            for v in map.iter_mut() {
                if *v == usize::MAX {
                    *v = n;
                    n += 1;
                }
            }
            l2g.push(map);
        }
        let left_outer = meshes[0].port_dofs(Side::Left).iter().map(|&d| l2g[0][d]).collect();
        let last = meshes.len() - 1;
        let right_outer = meshes[last].port_dofs(Side::Right).iter().map(|&d| l2g[last][d]).collect();
        Ok(Self { n_dofs: n, local_to_global: l2g, left_outer, right_outer, interfaces })
    }

    /// Assembles `sum_c (sm_c M0_c + sa_c A0_c)`.
    pub fn assemble<S: Scalar>(&self, ops: &[&AffineOperatorSet], coeffs: &[(S, S)]) -> CsrMatrix<S> {
        let mut t = Vec::new();
        for (c, o) in ops.iter().enumerate() {
            let (sm, sa) = coeffs[c];
            let map = &self.local_to_global[c];
            for i in 0..o.mass.n_rows() {
                let rm = o.mass.row(i);
                let rk = o.stiffness.row(i);
                for ((j, m), (_, k)) in rm.zip(rk) {
                    t.push((map[i], map[j], sm * S::from_real(m) + sa * S::from_real(k)));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs, self.n_dofs, t)
    }

    /// Assembles a single per-component matrix family, e.g. the H1 matrices.
    pub fn assemble_with<S: Scalar>(&self, mats: &[&CsrMatrix<f64>], scale: &[S]) -> CsrMatrix<S> {
        let mut t = Vec::new();
        for (c, m) in mats.iter().enumerate() {
            let map = &self.local_to_global[c];
            for i in 0..m.n_rows() {
                for (j, v) in m.row(i) {
                    t.push((map[i], map[j], scale[c] * S::from_real(v)));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs, self.n_dofs, t)
    }

    pub fn scatter_add<S: Scalar>(&self, c: usize, local: &[S], global: &mut [S]) {
        for (i, &g) in self.local_to_global[c].iter().enumerate() {
            global[g] += local[i];
        }
    }

    pub fn gather<S: Scalar>(&self, c: usize, global: &[S]) -> Vec<S> {
        self.local_to_global[c].iter().map(|&g| global[g]).collect()
    }
}

/// Solves `A u = f` with `u` prescribed on `fixed` dofs.
pub fn solve_with_dirichlet<S: Scalar>(a: &CsrMatrix<S>, f: &[S], fixed: &[usize], values: &[S]) -> Result<Vec<S>> {
    let n = a.n_rows();
    let mut is_fixed = vec![false; n];
    let mut u = vec![S::zero(); n];
    for (k, &d) in fixed.iter().enumerate() {
        is_fixed[d] = true;
        u[d] = values[k];
    }
    let au = a.mul_vec(&u);
    let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
    let rhs: Vec<S> = free.iter().map(|&i| f[i] - au[i]).collect();
    let aff = a.submatrix(&free, &free);
    let x = crate::sparse::LdltFactor::factor(&aff)?.solve(&rhs);
    for (k, &i) in free.iter().enumerate() {
        u[i] = x[k];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_component_mesh, ComponentGeometry, ComponentKind};

    #[test]
    fn chain_shares_port_dofs() {
        let g = ComponentGeometry::new(ComponentKind::Rect, 5.0, 1.0);
        let m = generate_component_mesh(&g, 0.5).unwrap();
        let ch = ChainAssembly::new(&[&m, &m, &m]).unwrap();
        let np = m.port_dofs(Side::Left).len();
        assert_eq!(ch.n_dofs, 3 * m.n_free_dofs() - 2 * np);
        assert_eq!(ch.interfaces.len(), 2);
        assert_eq!(ch.left_outer.len(), np);
    }
}
