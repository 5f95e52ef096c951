//! Newmark-beta time integration in acceleration form.
//!
//! The step matrix `M + dt gamma C + dt^2 beta A` is factored once; each
//! step solves for the new acceleration and updates velocity and displacement.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::{linear_combination, CsrMatrix, LdltFactor};

/// Newmark parameters; `(1/4, 1/2)` is the unconditionally stable
/// average-acceleration scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewmarkScheme {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for NewmarkScheme {
    fn default() -> Self {
        Self { beta: 0.25, gamma: 0.5 }
    }
}

/// Factored linear solve.
pub trait Solve {
    fn solve_in_place(&self, b: &mut [f64]);
}

/// Operators of `M u'' + C u' + A u = f`.
pub trait StructuralOperators {
    type Factor: Solve;
    fn dim(&self) -> usize;
    fn apply_mass(&self, x: &[f64], y: &mut [f64]);
    fn apply_damping(&self, x: &[f64], y: &mut [f64]);
    fn apply_stiffness(&self, x: &[f64], y: &mut [f64]);
    /// Factors `M + cc C + ca A`.
    fn factor_combination(&self, cc: f64, ca: f64) -> Result<Self::Factor>;
}

impl Solve for LdltFactor<f64> {
    fn solve_in_place(&self, b: &mut [f64]) {
        LdltFactor::solve_in_place(self, b)
    }
}

/// Sparse operators with Rayleigh damping `C = alpha M + beta A`.
#[derive(Debug, Clone)]
pub struct SparseStructure {
    pub mass: CsrMatrix<f64>,
    pub stiffness: CsrMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl StructuralOperators for SparseStructure {
    type Factor = LdltFactor<f64>;
    fn dim(&self) -> usize {
        self.mass.n_rows()
    }
    fn apply_mass(&self, x: &[f64], y: &mut [f64]) {
        self.mass.mul_vec_into(x, y)
    }
    fn apply_damping(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; y.len()];
        self.mass.mul_vec_into(x, y);
        self.stiffness.mul_vec_into(x, &mut t);
        for (a, b) in y.iter_mut().zip(&t) {
            *a = self.alpha * *a + self.beta * b;
        }
    }
    fn apply_stiffness(&self, x: &[f64], y: &mut [f64]) {
        self.stiffness.mul_vec_into(x, y)
    }
    fn factor_combination(&self, cc: f64, ca: f64) -> Result<Self::Factor> {
        let t = linear_combination::<f64>(&[
            (1.0 + cc * self.alpha, &self.mass),
            (ca + cc * self.beta, &self.stiffness),
        ])?;
        LdltFactor::factor(&t)
    }
}

/// Dense LU factor.
pub struct DenseFactor(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl Solve for DenseFactor {
    fn solve_in_place(&self, b: &mut [f64]) {
        let mut v = nalgebra::DVector::from_column_slice(b);
        self.0.solve_mut(&mut v);
        b.copy_from_slice(v.as_slice());
    }
}

/// Dense operators with an explicit damping matrix.
#[derive(Debug, Clone)]
pub struct DenseStructure {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

fn dense_apply(m: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let n = m.nrows();
    y.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = m.column(j);
        for i in 0..n {
            y[i] += col[i] * xj;
        }
    }
}

impl StructuralOperators for DenseStructure {
    type Factor = DenseFactor;
    fn dim(&self) -> usize {
        self.mass.nrows()
    }
    fn apply_mass(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.mass, x, y)
    }
    fn apply_damping(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.damping, x, y)
    }
    fn apply_stiffness(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.stiffness, x, y)
    }
    fn factor_combination(&self, cc: f64, ca: f64) -> Result<Self::Factor> {
        let t = &self.mass + &self.damping * cc + &self.stiffness * ca;
        let lu = t.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular { pivot: 0, magnitude: 0.0 });
        }
        Ok(DenseFactor(lu))
    }
}

/// State passed to observers at every time level.
pub struct StepState<'a> {
    pub step: usize,
    pub time: f64,
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub a: &'a [f64],
}

/// Integrates from rest (or from `initial` displacement/velocity) over
/// `n_steps` uniform steps of `t_final / n_steps`.
///
/// `load(j, t, f)` fills the load at time level `j` (f is zeroed first);
/// `observe` is called at every level including `j = 0`.
pub fn newmark_march<O, L, B>(
    ops: &O,
    scheme: NewmarkScheme,
    t_final: f64,
    n_steps: usize,
    initial: Option<(&[f64], &[f64])>,
    mut load: L,
    mut observe: B,
) -> Result<()>
where
    O: StructuralOperators,
    L: FnMut(usize, f64, &mut [f64]) -> Result<()>,
    B: FnMut(&StepState<'_>) -> Result<()>,
{
    if n_steps == 0 || !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!("n_steps={n_steps}, t_final={t_final}")));
    }
    let n = ops.dim();
    let dt = t_final / n_steps as f64;
    let (beta, gamma) = (scheme.beta, scheme.gamma);
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    if let Some((u0, v0)) = initial {
        u.copy_from_slice(u0);
        v.copy_from_slice(v0);
    }
    let mut f = vec![0.0; n];
    load(0, 0.0, &mut f)?;
    // Initial acceleration from M a0 = f0 - C v0 - A u0.
    let mut t1 = vec![0.0; n];
    let mut rhs = f.clone();
    ops.apply_damping(&v, &mut t1);
    rhs.iter_mut().zip(&t1).for_each(|(r, c)| *r -= c);
    ops.apply_stiffness(&u, &mut t1);
    rhs.iter_mut().zip(&t1).for_each(|(r, c)| *r -= c);
    let mass = ops.factor_combination(0.0, 0.0)?;
    mass.solve_in_place(&mut rhs);
    let mut a = rhs;
    observe(&StepState { step: 0, time: 0.0, u: &u, v: &v, a: &a })?;

    let step = ops.factor_combination(dt * gamma, dt * dt * beta)?;
    let mut pv = vec![0.0; n];
    let mut pu = vec![0.0; n];
    let mut r = vec![0.0; n];
    for j in 1..=n_steps {
        let t = j as f64 * dt;
        f.iter_mut().for_each(|x| *x = 0.0);
        load(j, t, &mut f)?;
        for i in 0..n {
            pv[i] = v[i] + dt * (1.0 - gamma) * a[i];
            pu[i] = u[i] + dt * v[i] + dt * dt * (0.5 - beta) * a[i];
        }
        r.copy_from_slice(&f);
        ops.apply_damping(&pv, &mut t1);
        r.iter_mut().zip(&t1).for_each(|(x, c)| *x -= c);
        ops.apply_stiffness(&pu, &mut t1);
        r.iter_mut().zip(&t1).for_each(|(x, c)| *x -= c);
        step.solve_in_place(&mut r);
        for i in 0..n {
            let an = r[i];
            v[i] = pv[i] + dt * gamma * an;
            u[i] = pu[i] + dt * dt * beta * an;
            a[i] = an;
        }
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("displacement at step {j}")));
        }
        observe(&StepState { step: j, time: t, u: &u, v: &v, a: &a })?;
    }
    Ok(())
}

/// Convenience wrapper returning the displacement history `(n_steps+1) x n`.
pub fn newmark_displacements<O, L>(ops: &O, t_final: f64, n_steps: usize, load: L) -> Result<Vec<Vec<f64>>>
where
    O: StructuralOperators,
    L: FnMut(usize, f64, &mut [f64]) -> Result<()>,
{
    let mut out = Vec::with_capacity(n_steps + 1);
    newmark_march(ops, NewmarkScheme::default(), t_final, n_steps, None, load, |s| {
        out.push(s.u.to_vec());
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sdof() -> DenseStructure {
        DenseStructure {
            mass: DMatrix::from_element(1, 1, 1.0),
            damping: DMatrix::zeros(1, 1),
            stiffness: DMatrix::from_element(1, 1, 1.0),
        }
    }

    #[test]
    fn step_force_response() {
        let t = std::f64::consts::PI;
        let n = (t / 1e-3).round() as usize;
        let u = newmark_displacements(&sdof(), t, n, |_, _, f| {
            f[0] = 1.0;
            Ok(())
        })
        .unwrap();
        let exact = 1.0 - t.cos();
        assert!((u[n][0] - exact).abs() < 1e-5);
    }

    #[test]
    fn zero_load_stays_at_rest() {
        let u = newmark_displacements(&sdof(), 1.0, 10, |_, _, _| Ok(())).unwrap();
        assert!(u.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(newmark_displacements(&sdof(), 1.0, 0, |_, _, _| Ok(())).is_err());
    }
}
