//! Proper orthogonal decomposition by the method of snapshots.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// POD modes orthonormal in the chosen inner product.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// Modes as columns.
    pub modes: DMatrix<f64>,
    /// All correlation eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Fraction of the snapshot energy captured by the retained modes.
    pub retained_energy: f64,
}

/// Inner product `x^T X y`, Euclidean when `x_mat` is `None`.
pub fn inner(x_mat: Option<&CsrMatrix<f64>>, a: &[f64], b: &[f64]) -> f64 {
    match x_mat {
        Some(m) => m.bilinear(a, b),
        None => a.iter().zip(b).map(|(p, q)| p * q).sum(),
    }
}

/// Computes `n_modes` POD modes of the snapshot columns.
pub fn pod(snapshots: &DMatrix<f64>, x_mat: Option<&CsrMatrix<f64>>, n_modes: usize) -> Result<PodBasis> {
    let n = snapshots.nrows();
    let m = snapshots.ncols();
    if let Some(x) = x_mat {
        if x.n_rows() != n {
            return Err(Error::DimensionMismatch(format!("inner product {} vs snapshots {n}", x.n_rows())));
        }
    }
    if m == 0 || n_modes == 0 {
        return Err(Error::InsufficientSnapshots(format!("{m} snapshots for {n_modes} modes")));
    }
    let xs: DMatrix<f64> = match x_mat {
        Some(x) => {
            let mut out = DMatrix::zeros(n, m);
            let mut y = vec![0.0; n];
            for j in 0..m {
                x.mul_vec_into(snapshots.column(j).as_slice(), &mut y);
                out.column_mut(j).copy_from_slice(&y);
            }
            out
        }
        None => snapshots.clone(),
    };
    let c = snapshots.transpose() * &xs;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InsufficientSnapshots("snapshots have zero energy".into()));
    }
    let lmax = eigenvalues[0];
    let usable = eigenvalues.iter().take_while(|&&l| l > lmax * 1e-14).count();
    if usable < n_modes {
        return Err(Error::InsufficientSnapshots(format!(
            "snapshot rank {usable} below the requested {n_modes} modes"
        )));
    }
    let mut modes = DMatrix::zeros(n, n_modes);
    for (k, &idx) in order.iter().take(n_modes).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let mode = snapshots * v / eigenvalues[k].sqrt();
        modes.column_mut(k).copy_from(&mode);
    }
    orthonormalize(&mut modes, x_mat)?;
    let retained: f64 = eigenvalues.iter().take(n_modes).sum();
    Ok(PodBasis { modes, eigenvalues, retained_energy: retained / total })
}

/// Modified Gram-Schmidt (two passes) of the columns in place.
pub fn orthonormalize(w: &mut DMatrix<f64>, x_mat: Option<&CsrMatrix<f64>>) -> Result<()> {
    for k in 0..w.ncols() {
        for _pass in 0..2 {
            for j in 0..k {
                let p = inner(x_mat, w.column(j).as_slice(), w.column(k).as_slice());
                let cj = w.column(j).clone_owned();
                let mut ck = w.column_mut(k);
                ck -= cj * p;
            }
        }
        let nk = inner(x_mat, w.column(k).as_slice(), w.column(k).as_slice()).sqrt();
        if !(nk > 1e-300) {
            return Err(Error::InsufficientSnapshots(format!("dependent column {k}")));
        }
        let mut ck = w.column_mut(k);
        ck /= nk;
    }
    Ok(())
}
