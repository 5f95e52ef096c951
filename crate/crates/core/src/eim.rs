//! Empirical interpolation of parametrized vectors.
//!
//! The greedy picks, at each iteration, the worst-approximated training
//! vector, then the entry of its residual with the largest magnitude as the
//! next interpolation (magic) index. The interpolation matrix is unit lower
//! triangular by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EimSurrogate {
    /// Basis vectors, each normalized to 1 at its magic index.
    pub basis: Vec<Vec<f64>>,
    /// Magic indices in selection order.
    pub magic: Vec<usize>,
    /// `interp[i][q] = basis[q][magic[i]]`, lower triangular.
    pub interp: Vec<Vec<f64>>,
    /// Max relative training error after each added basis vector.
    pub training_errors: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl EimSurrogate {
    pub fn len(&self) -> usize {
        self.basis.len()
    }
    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Coefficients from the values of the target at the magic indices.
    pub fn coefficients(&self, magic_values: &[f64]) -> Vec<f64> {
        let q = self.basis.len();
        let mut th = vec![0.0; q];
        for i in 0..q {
            let mut s = magic_values[i];
            for k in 0..i {
                s -= self.interp[i][k] * th[k];
            }
            th[i] = s / self.interp[i][i];
        }
        th
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.basis.first().map_or(0, |b| b.len());
        let mut out = vec![0.0; n];
        for (c, b) in coeffs.iter().zip(&self.basis) {
            for (o, x) in out.iter_mut().zip(b) {
                *o += c * x;
            }
        }
        out
    }

    /// Interpolant of a full vector.
    pub fn interpolate(&self, v: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> = self.magic.iter().map(|&m| v[m]).collect();
        self.reconstruct(&self.coefficients(&vals))
    }

    /// Relative max-norm interpolation error of `v`.
    pub fn relative_error(&self, v: &[f64]) -> f64 {
        let r = self.interpolate(v);
        let e = v.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let nv = max_abs(v);
        if nv == 0.0 {
            e
        } else {
            e / nv
        }
    }

    /// Greedy construction on training vectors until the max relative error
    /// drops to `tol` or `q_max` vectors are selected.
    pub fn train(snapshots: &[Vec<f64>], tol: f64, q_max: usize) -> Result<Self> {
        let first = snapshots.first().ok_or_else(|| Error::InsufficientSnapshots("no EIM snapshots".into()))?;
        let n = first.len();
        if snapshots.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch("EIM snapshots of different lengths".into()));
        }
        let norms: Vec<f64> = snapshots.iter().map(|s| max_abs(s)).collect();
        if norms.iter().all(|&x| x == 0.0) {
            return Err(Error::InsufficientSnapshots("all EIM snapshots vanish".into()));
        }
        let mut eim = EimSurrogate { basis: vec![], magic: vec![], interp: vec![], training_errors: vec![] };
        // Residuals of all snapshots with respect to the current interpolant.
        let mut residuals: Vec<Vec<f64>> = snapshots.to_vec();
        loop {
            let (worst, err) = residuals
                .iter()
                .zip(&norms)
                .enumerate()
                .map(|(k, (r, &nv))| (k, if nv > 0.0 { max_abs(r) / nv } else { 0.0 }))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            if !eim.basis.is_empty() {
                eim.training_errors.push(err);
            }
            if err <= tol || eim.basis.len() >= q_max.min(n) {
                break;
            }
            let r = residuals[worst].clone();
            let (m, _) = r.iter().enumerate().fold((0, 0.0f64), |a, (i, &x)| if x.abs() > a.1 { (i, x.abs()) } else { a });
            let piv = r[m];
            if piv == 0.0 {
                break;
            }
            let b: Vec<f64> = r.iter().map(|x| x / piv).collect();
            // Update residuals: the new interpolant adds b * residual[m].
            for res in residuals.iter_mut() {
                let c = res[m];
                if c != 0.0 {
                    for (x, y) in res.iter_mut().zip(&b) {
                        *x -= c * y;
                    }
                }
            }
            eim.magic.push(m);
            eim.basis.push(b);
            let q = eim.basis.len();
            eim.interp = (0..q).map(|i| (0..q).map(|k| eim.basis[k][eim.magic[i]]).collect()).collect();
        }
        if eim.basis.is_empty() {
            return Err(Error::InsufficientSnapshots("EIM selected no basis vector".into()));
        }
        let last = *eim.training_errors.last().unwrap_or(&f64::INFINITY);
        if last > tol {
            log::warn!("EIM stopped at Q={} with training error {last:e} > {tol:e}", eim.len());
        }
        Ok(eim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_low_rank_family() {
        let snaps: Vec<Vec<f64>> = (0..20)
            .map(|k| {
                let a = k as f64 / 19.0;
                (0..30).map(|i| (1.0 - a) * (i as f64).sin() + a * (i as f64 * 0.1).cos()).collect()
            })
            .collect();
        let e = EimSurrogate::train(&snaps, 1e-12, 10).unwrap();
        assert_eq!(e.len(), 2);
        for s in &snaps {
            assert!(e.relative_error(s) < 1e-12);
        }
        for i in 0..e.len() {
            assert!((e.interp[i][i] - 1.0).abs() < 1e-15);
            for k in i + 1..e.len() {
                assert!(e.interp[i][k].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_rejected() {
        assert!(EimSurrogate::train(&[], 1e-6, 5).is_err());
        assert!(EimSurrogate::train(&[vec![0.0; 4]], 1e-6, 5).is_err());
    }
}
