//! Right-hand sides of every model variant plus the quadratic energy.
//!
//! States of the two-scale model are flat slices `[x_0 .. x_{n_x-1}, y_0 .. y_{n_y-1}]`
//! where the fast index is `k = i * j + jj` (row-major by slow index). The fast
//! chain is a single cyclic ring of length `n_x * j`, which realizes both fast
//! boundary conditions at once.

use nalgebra::{DMatrix, DVector};

use crate::calibrate::CalibrationRecord;
use crate::error::{check_len, Error, Result};
use crate::integrate::{Linearized, VectorField};

/// Smallest ring that keeps the `i-2, i-1, i+1` stencil entries distinct.
pub const MIN_RING: usize = 4;

/// Full parameterization of the two-scale rescaled Lorenz system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_x: usize,
    pub j: usize,
    pub f_x: f64,
    pub f_y: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub epsilon: f64,
    pub calib_x: CalibrationRecord,
    pub calib_y: CalibrationRecord,
}

impl ModelParams {
    pub fn n_y(&self) -> usize {
        self.n_x * self.j
    }

    /// Length of the flat `[x; y]` state.
    pub fn dim(&self) -> usize {
        self.n_x + self.n_y()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < MIN_RING {
            return Err(Error::InvalidDimension {
                what: "n_x (must be at least 4)",
                expected: MIN_RING,
                got: self.n_x,
            });
        }
        if self.j == 0 {
            return Err(Error::InvalidInput("j must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        for calib in [&self.calib_x, &self.calib_y] {
            if !(calib.beta > 0.0) {
                return Err(Error::DegenerateCalibration { beta: calib.beta });
            }
        }
        Ok(())
    }

    pub fn slow_stencil(&self) -> StencilCoef {
        StencilCoef::rescaled(self.f_x, &self.calib_x)
    }

    pub fn fast_stencil(&self) -> StencilCoef {
        StencilCoef::rescaled(self.f_y, &self.calib_y)
    }
}

/// Slow and fast parts of a two-scale state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl State {
    pub fn zeros(p: &ModelParams) -> Self {
        Self {
            x: vec![0.0; p.n_x],
            y: vec![0.0; p.n_y()],
        }
    }

    pub fn from_flat(flat: &[f64], n_x: usize) -> Self {
        Self {
            x: flat[..n_x].to_vec(),
            y: flat[n_x..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + self.y.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    fn check(&self, p: &ModelParams) -> Result<()> {
        check_len("slow state", p.n_x, self.x.len())?;
        check_len("fast state", p.n_y(), self.y.len())
    }
}

/// Coefficients of the L96 ring stencil in factored form:
/// `(q_a + advect)(q_b - q_c) - damping * q_i + constant`.
///
/// The plain model is `advect = 0, damping = 1, constant = F`; the rescaled
/// model uses `advect = mean/beta, damping = 1/beta, constant = (F - mean)/beta^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilCoef {
    pub advect: f64,
    pub damping: f64,
    pub constant: f64,
}

impl StencilCoef {
    pub fn plain(forcing: f64) -> Self {
        Self {
            advect: 0.0,
            damping: 1.0,
            constant: forcing,
        }
    }

    pub fn rescaled(forcing: f64, calib: &CalibrationRecord) -> Self {
        let inv_beta = 1.0 / calib.beta;
        Self {
            advect: calib.mean * inv_beta,
            damping: inv_beta,
            constant: (forcing - calib.mean) * inv_beta * inv_beta,
        }
    }

    /// Only the energy-conserving quadratic advection survives.
    pub fn conservative() -> Self {
        Self {
            advect: 0.0,
            damping: 0.0,
            constant: 0.0,
        }
    }
}

/// Orientation of the ring stencil.
///
/// `Forward` is the slow pattern `q_{i-1}(q_{i+1} - q_{i-2})`, `Reversed` the fast
/// pattern `q_{k+1}(q_{k-1} - q_{k+2})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Forward,
    Reversed,
}

#[inline(always)]
fn wrap(i: usize, off: isize, n: usize) -> usize {
    let k = i as isize + off;
    if k < 0 {
        (k + n as isize) as usize
    } else if k >= n as isize {
        (k - n as isize) as usize
    } else {
        k as usize
    }
}

#[inline(always)]
fn offsets(o: Orientation) -> (isize, isize, isize) {
    // (multiplier, plus, minus) neighbours
    match o {
        Orientation::Forward => (-1, 1, -2),
        Orientation::Reversed => (1, -1, 2),
    }
}

/// Evaluates the ring stencil on `q` into `out`. `q.len() >= 4` is assumed.
pub fn ring_stencil(q: &[f64], c: &StencilCoef, o: Orientation, out: &mut [f64]) {
    let n = q.len();
    let (a, b, m) = offsets(o);
    let term = |i: usize| {
        (q[wrap(i, a, n)] + c.advect) * (q[wrap(i, b, n)] - q[wrap(i, m, n)]) - c.damping * q[i]
            + c.constant
    };
    // Interior needs no wrapping: all offsets lie within [-2, 2].
    out[0] = term(0);
    out[1] = term(1);
    match o {
        Orientation::Forward => {
            for i in 2..n - 1 {
                out[i] = (q[i - 1] + c.advect) * (q[i + 1] - q[i - 2]) - c.damping * q[i]
                    + c.constant;
            }
        }
        Orientation::Reversed => {
            for i in 2..n - 2 {
                out[i] = (q[i + 1] + c.advect) * (q[i - 1] - q[i + 2]) - c.damping * q[i]
                    + c.constant;
            }
            out[n - 2] = term(n - 2);
        }
    }
    out[n - 1] = term(n - 1);
}

/// Jacobian-vector product of [`ring_stencil`] at `q` applied to `v`.
pub fn ring_stencil_jvp(q: &[f64], v: &[f64], c: &StencilCoef, o: Orientation, out: &mut [f64]) {
    let n = q.len();
    let (a, b, m) = offsets(o);
    for i in 0..n {
        let (ia, ib, im) = (wrap(i, a, n), wrap(i, b, n), wrap(i, m, n));
        out[i] = v[ia] * (q[ib] - q[im]) + (q[ia] + c.advect) * (v[ib] - v[im]) - c.damping * v[i];
    }
}

fn check_ring(len: usize) -> Result<()> {
    if len < MIN_RING {
        Err(Error::InvalidDimension {
            what: "ring length (must be at least 4)",
            expected: MIN_RING,
            got: len,
        })
    } else {
        Ok(())
    }
}

/// Uncoupled Lorenz-96: `dx_i = x_{i-1}(x_{i+1} - x_{i-2}) - x_i + f`.
pub fn l96_rhs(x: &[f64], f: f64) -> Result<Vec<f64>> {
    check_ring(x.len())?;
    let mut out = vec![0.0; x.len()];
    ring_stencil(x, &StencilCoef::plain(f), Orientation::Forward, &mut out);
    Ok(out)
}

/// Lorenz-96 rescaled to zero mean and unit variance by `calib`.
pub fn rescaled_l96_rhs(q: &[f64], calib: &CalibrationRecord) -> Result<Vec<f64>> {
    if !(calib.beta > 0.0) {
        return Err(Error::DegenerateCalibration { beta: calib.beta });
    }
    check_ring(q.len())?;
    let mut out = vec![0.0; q.len()];
    ring_stencil(
        q,
        &StencilCoef::rescaled(calib.f, calib),
        Orientation::Forward,
        &mut out,
    );
    Ok(out)
}

/// Single-scale ring model (plain or rescaled L96) as a vector field.
#[derive(Debug, Clone)]
pub struct RingModel {
    pub n: usize,
    pub coef: StencilCoef,
    pub orientation: Orientation,
}

impl RingModel {
    pub fn lorenz96(n: usize, forcing: f64) -> Result<Self> {
        check_ring(n)?;
        Ok(Self {
            n,
            coef: StencilCoef::plain(forcing),
            orientation: Orientation::Forward,
        })
    }

    pub fn rescaled(n: usize, calib: &CalibrationRecord) -> Result<Self> {
        check_ring(n)?;
        if !(calib.beta > 0.0) {
            return Err(Error::DegenerateCalibration { beta: calib.beta });
        }
        Ok(Self {
            n,
            coef: StencilCoef::rescaled(calib.f, calib),
            orientation: Orientation::Forward,
        })
    }
}

impl VectorField for RingModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, s: &[f64], out: &mut [f64]) {
        ring_stencil(s, &self.coef, self.orientation, out);
    }
}

impl Linearized for RingModel {
    fn jvp(&self, s: &[f64], v: &[f64], out: &mut [f64]) {
        ring_stencil_jvp(s, v, &self.coef, self.orientation, out);
    }
}

/// The two-scale rescaled Lorenz model on flat `[x; y]` states.
#[derive(Debug, Clone)]
pub struct TwoScaleModel {
    n_x: usize,
    j: usize,
    slow: StencilCoef,
    fast: StencilCoef,
    lambda_x: f64,
    lambda_y: f64,
    inv_eps: f64,
}

impl TwoScaleModel {
    pub fn new(p: &ModelParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            n_x: p.n_x,
            j: p.j,
            slow: p.slow_stencil(),
            fast: p.fast_stencil(),
            lambda_x: p.lambda_x,
            lambda_y: p.lambda_y,
            inv_eps: 1.0 / p.epsilon,
        })
    }

    /// Same model with every constant and linear (forcing, damping, mean advection)
    /// term removed; conserves `E = E_x + eps * E_y` exactly in continuous time.
    pub fn conservative(p: &ModelParams) -> Result<Self> {
        let mut m = Self::new(p)?;
        m.slow = StencilCoef::conservative();
        m.fast = StencilCoef::conservative();
        Ok(m)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }
}

impl VectorField for TwoScaleModel {
    fn dim(&self) -> usize {
        self.n_x * (1 + self.j)
    }

    fn eval(&self, s: &[f64], out: &mut [f64]) {
        let (x, y) = s.split_at(self.n_x);
        let (dx, dy) = out.split_at_mut(self.n_x);
        ring_stencil(x, &self.slow, Orientation::Forward, dx);
        ring_stencil(y, &self.fast, Orientation::Reversed, dy);
        let w = self.lambda_y / self.j as f64;
        for (i, (dxi, block)) in dx.iter_mut().zip(y.chunks_exact(self.j)).enumerate() {
            *dxi -= w * block.iter().sum::<f64>();
            let push = self.lambda_x * x[i];
            for d in &mut dy[i * self.j..(i + 1) * self.j] {
                *d = self.inv_eps * (*d + push);
            }
        }
    }
}

impl Linearized for TwoScaleModel {
    fn jvp(&self, s: &[f64], v: &[f64], out: &mut [f64]) {
        let (x, y) = s.split_at(self.n_x);
        let (vx, vy) = v.split_at(self.n_x);
        let (dx, dy) = out.split_at_mut(self.n_x);
        ring_stencil_jvp(x, vx, &self.slow, Orientation::Forward, dx);
        ring_stencil_jvp(y, vy, &self.fast, Orientation::Reversed, dy);
        let w = self.lambda_y / self.j as f64;
        for (i, (dxi, block)) in dx.iter_mut().zip(vy.chunks_exact(self.j)).enumerate() {
            *dxi -= w * block.iter().sum::<f64>();
            let push = self.lambda_x * vx[i];
            for d in &mut dy[i * self.j..(i + 1) * self.j] {
                *d = self.inv_eps * (*d + push);
            }
        }
    }
}

/// Derivative of the two-scale model as a [`State`].
pub fn two_scale_rhs(s: &State, p: &ModelParams) -> Result<State> {
    s.check(p)?;
    let model = TwoScaleModel::new(p)?;
    let flat = s.to_flat();
    let mut out = vec![0.0; flat.len()];
    model.eval(&flat, &mut out);
    Ok(State::from_flat(&out, p.n_x))
}

/// Fast subsystem with the slow state frozen, integrated in its own time at unit
/// separation ratio.
#[derive(Debug, Clone)]
pub struct FastLimitingModel {
    j: usize,
    fast: StencilCoef,
    push: Vec<f64>,
}

impl FastLimitingModel {
    pub fn new(p: &ModelParams, x_fixed: &[f64]) -> Result<Self> {
        p.validate()?;
        check_len("frozen slow state", p.n_x, x_fixed.len())?;
        Ok(Self {
            j: p.j,
            fast: p.fast_stencil(),
            push: x_fixed.iter().map(|xi| p.lambda_x * xi).collect(),
        })
    }
}

impl VectorField for FastLimitingModel {
    fn dim(&self) -> usize {
        self.push.len() * self.j
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        ring_stencil(z, &self.fast, Orientation::Reversed, out);
        for (block, push) in out.chunks_exact_mut(self.j).zip(&self.push) {
            for d in block {
                *d += push;
            }
        }
    }
}

impl Linearized for FastLimitingModel {
    fn jvp(&self, z: &[f64], v: &[f64], out: &mut [f64]) {
        ring_stencil_jvp(z, v, &self.fast, Orientation::Reversed, out);
    }
}

pub fn fast_limiting_rhs(z: &[f64], x_fixed: &[f64], p: &ModelParams) -> Result<Vec<f64>> {
    check_len("fast state", p.n_y(), z.len())?;
    let model = FastLimitingModel::new(p, x_fixed)?;
    let mut out = vec![0.0; z.len()];
    model.eval(z, &mut out);
    Ok(out)
}

/// A vector field with an extra constant forcing added to every evaluation.
#[derive(Debug, Clone)]
pub struct Forced<F> {
    pub inner: F,
    pub forcing: Vec<f64>,
}

impl<F: VectorField> VectorField for Forced<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, s: &[f64], out: &mut [f64]) {
        self.inner.eval(s, out);
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
    }
}

impl<F: Linearized> Linearized for Forced<F> {
    fn jvp(&self, s: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.jvp(s, v, out);
    }
}

/// Block-sum coupling matrix of the Lorenz model: `(L y)_i = -sum_j y_{i,j}`.
pub fn lorenz_coupling_matrix(n_x: usize, j: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_x, n_x * j, |i, k| if k / j == i { -1.0 } else { 0.0 })
}

/// Linear energy-preserving coupling generated from `L` and the energy metrics.
///
/// The state-independent factors `S_x^{-1/2} L S_y^{1/2}` and
/// `-S_y^{-1/2} L^T S_x^{1/2}` are formed once at construction.
#[derive(Debug, Clone)]
pub struct CouplingSpec {
    pub l: DMatrix<f64>,
    pub s_x: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
    slow_from_fast: DMatrix<f64>,
    fast_from_slow: DMatrix<f64>,
}

/// Unique SPD square root and inverse square root, after a Cholesky check.
fn spd_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::InvalidDimension {
            what,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let sym_err = (m - m.transpose()).amax();
    if sym_err > 1e-12 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite { what });
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite { what });
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotPositiveDefinite { what });
    }
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let inv_root =
        v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose();
    Ok((root, inv_root))
}

impl CouplingSpec {
    pub fn new(l: DMatrix<f64>, s_x: DMatrix<f64>, s_y: DMatrix<f64>) -> Result<Self> {
        check_len("s_x", l.nrows(), s_x.nrows())?;
        check_len("s_y", l.ncols(), s_y.nrows())?;
        let (sx_half, sx_inv_half) = spd_sqrt(&s_x, "s_x")?;
        let (sy_half, sy_inv_half) = spd_sqrt(&s_y, "s_y")?;
        let slow_from_fast = &sx_inv_half * &l * &sy_half;
        let fast_from_slow = -(&sy_inv_half * l.transpose() * &sx_half);
        Ok(Self {
            l,
            s_x,
            s_y,
            slow_from_fast,
            fast_from_slow,
        })
    }

    pub fn n_x(&self) -> usize {
        self.l.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.l.ncols()
    }

    /// `f' = S_x^{-1/2} L S_y^{1/2} y`.
    pub fn slow_term(&self) -> &DMatrix<f64> {
        &self.slow_from_fast
    }

    /// `g' = -S_y^{-1/2} L^T S_x^{1/2} x`.
    pub fn fast_term(&self) -> &DMatrix<f64> {
        &self.fast_from_slow
    }

    pub fn coupling_terms(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("slow state", self.n_x(), x.len())?;
        check_len("fast state", self.n_y(), y.len())?;
        let f = &self.slow_from_fast * DVector::from_column_slice(y);
        let g = &self.fast_from_slow * DVector::from_column_slice(x);
        Ok((f.as_slice().to_vec(), g.as_slice().to_vec()))
    }
}

pub fn coupling_terms(c: &CouplingSpec, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    c.coupling_terms(x, y)
}

/// Quadratic energies of a two-scale state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub total: f64,
    pub slow: f64,
    pub fast: f64,
}

/// `E_x = (lambda_x / 2) sum x^2`, `E_y = (lambda_y / 2J) sum y^2`, `E = E_x + eps E_y`.
pub fn total_energy(s: &State, p: &ModelParams) -> Energy {
    energy_of_flat_parts(&s.x, &s.y, p)
}

pub(crate) fn energy_of_flat_parts(x: &[f64], y: &[f64], p: &ModelParams) -> Energy {
    let slow = 0.5 * p.lambda_x * x.iter().map(|v| v * v).sum::<f64>();
    let fast = 0.5 * p.lambda_y / p.j as f64 * y.iter().map(|v| v * v).sum::<f64>();
    Energy {
        total: slow + p.epsilon * fast,
        slow,
        fast,
    }
}

/// Ornstein-Uhlenbeck fast process `dz = (h - Gamma z + forcing) ds + sigma dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUParams {
    pub h: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl OUParams {
    pub fn new(h: DVector<f64>, gamma: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = h.len();
        check_len("gamma rows", n, gamma.nrows())?;
        check_len("gamma cols", n, gamma.ncols())?;
        check_len("sigma rows", n, sigma.nrows())?;
        let sym = (&gamma + gamma.transpose()) * 0.5;
        if sym.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                what: "symmetric part of gamma",
            });
        }
        Ok(Self { h, gamma, sigma })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    /// Stationary mean `Gamma^{-1}(h + forcing)`.
    pub fn stationary_mean(&self, forcing: &[f64]) -> Result<DVector<f64>> {
        check_len("forcing", self.dim(), forcing.len())?;
        let rhs = &self.h + DVector::from_column_slice(forcing);
        self.gamma
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular { what: "gamma" })
    }
}

pub fn ou_drift(z: &[f64], q: &OUParams, forcing: &[f64]) -> Result<Vec<f64>> {
    check_len("OU state", q.dim(), z.len())?;
    check_len("forcing", q.dim(), forcing.len())?;
    let mut out = vec![0.0; z.len()];
    OuDrift {
        params: q,
        forcing,
    }
    .eval(z, &mut out);
    Ok(out)
}

/// Deterministic drift of an OU process as a vector field.
#[derive(Debug, Clone, Copy)]
pub struct OuDrift<'a> {
    pub params: &'a OUParams,
    pub forcing: &'a [f64],
}

impl VectorField for OuDrift<'_> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let g = &self.params.gamma;
        let n = z.len();
        for r in 0..n {
            let mut acc = self.params.h[r] + self.forcing[r];
            for c in 0..n {
                acc -= g[(r, c)] * z[c];
            }
            out[r] = acc;
        }
    }
}

impl Linearized for OuDrift<'_> {
    fn jvp(&self, _z: &[f64], v: &[f64], out: &mut [f64]) {
        let g = &self.params.gamma;
        let n = v.len();
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc -= g[(r, c)] * v[c];
            }
            out[r] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calib(f: f64, n: usize, mean: f64, beta: f64) -> CalibrationRecord {
        CalibrationRecord::from_moments(f, n, mean, beta)
    }

    fn params() -> ModelParams {
        ModelParams {
            n_x: 5,
            j: 3,
            f_x: 6.0,
            f_y: 12.0,
            lambda_x: 0.25,
            lambda_y: 0.25,
            epsilon: 0.01,
            calib_x: calib(6.0, 5, 1.9, 3.1),
            calib_y: calib(12.0, 15, 2.7, 4.4),
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn l96_zero_state_is_pure_forcing() {
        assert_eq!(l96_rhs(&[0.0; 5], 8.0).unwrap(), vec![8.0; 5]);
    }

    #[test]
    fn l96_unit_spike() {
        let f = 7.5;
        let out = l96_rhs(&[1.0, 0.0, 0.0, 0.0, 0.0], f).unwrap();
        assert_eq!(out, vec![f - 1.0, f, f, f, f]);
    }

    #[test]
    fn l96_uniform_fixed_point() {
        for f in [-3.0, 0.5, 6.0, 8.0, 24.0] {
            let out = l96_rhs(&[f; 7], f).unwrap();
            assert!(out.iter().all(|&v| v == 0.0), "{out:?}");
        }
    }

    #[test]
    fn l96_rejects_short_rings() {
        assert!(matches!(
            l96_rhs(&[0.0; 3], 8.0),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn rescaled_zero_state_is_constant() {
        let c = calib(6.0, 8, 1.8, 3.2);
        let out = rescaled_l96_rhs(&[0.0; 8], &c).unwrap();
        let expect = (6.0 - 1.8) / (3.2 * 3.2);
        for v in out {
            assert_relative_eq!(v, expect, max_relative = 1e-15);
        }
    }

    #[test]
    fn rescaled_identity_calibration_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_vec(&mut rng, 9);
        let c = calib(6.0, 9, 0.0, 1.0);
        assert_eq!(rescaled_l96_rhs(&q, &c).unwrap(), l96_rhs(&q, 6.0).unwrap());
    }

    #[test]
    fn rescaled_rejects_zero_beta() {
        let c = calib(6.0, 8, 6.0, 0.0);
        assert!(matches!(
            rescaled_l96_rhs(&[0.0; 8], &c),
            Err(Error::DegenerateCalibration { .. })
        ));
    }

    #[test]
    fn reversed_stencil_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_vec(&mut rng, 12);
        let c = StencilCoef {
            advect: 0.3,
            damping: 0.7,
            constant: 0.1,
        };
        let mut out = vec![0.0; 12];
        ring_stencil(&q, &c, Orientation::Reversed, &mut out);
        let n = 12;
        for k in 0..n {
            let e = (q[(k + 1) % n] + c.advect) * (q[(k + n - 1) % n] - q[(k + 2) % n])
                - c.damping * q[k]
                + c.constant;
            assert_relative_eq!(out[k], e, max_relative = 1e-14);
        }
    }

    #[test]
    fn two_scale_decouples_when_coupling_is_off() {
        let mut p = params();
        p.lambda_x = 0.0;
        p.lambda_y = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = State {
            x: random_vec(&mut rng, 5),
            y: random_vec(&mut rng, 15),
        };
        let d = two_scale_rhs(&s, &p).unwrap();
        assert_eq!(d.x, rescaled_l96_rhs(&s.x, &p.calib_x).unwrap());
        let mut fast = vec![0.0; 15];
        ring_stencil(&s.y, &p.fast_stencil(), Orientation::Reversed, &mut fast);
        let inv = 1.0 / p.epsilon;
        let expect: Vec<f64> = fast.iter().map(|v| inv * (v + 0.0)).collect();
        assert_eq!(d.y, expect);
    }

    #[test]
    fn two_scale_zero_state() {
        let p = params();
        let d = two_scale_rhs(&State::zeros(&p), &p).unwrap();
        let cx = (p.f_x - p.calib_x.mean) / p.calib_x.beta.powi(2);
        let cy = (p.f_y - p.calib_y.mean) / p.calib_y.beta.powi(2) / p.epsilon;
        d.x.iter()
            .for_each(|&v| assert_relative_eq!(v, cx, max_relative = 1e-14));
        d.y.iter()
            .for_each(|&v| assert_relative_eq!(v, cy, max_relative = 1e-14));
    }

    #[test]
    fn two_scale_rejects_mismatched_state() {
        let p = params();
        let s = State {
            x: vec![0.0; 4],
            y: vec![0.0; 15],
        };
        assert!(two_scale_rhs(&s, &p).is_err());
    }

    #[test]
    fn fast_limiting_is_epsilon_times_fast_block() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let s = State {
                x: random_vec(&mut rng, 5),
                y: random_vec(&mut rng, 15),
            };
            let d = two_scale_rhs(&s, &p).unwrap();
            let g = fast_limiting_rhs(&s.y, &s.x, &p).unwrap();
            let inv = 1.0 / p.epsilon;
            for (a, b) in g.iter().zip(&d.y) {
                assert_eq!(inv * a, *b);
            }
        }
    }

    #[test]
    fn fast_limiting_without_slow_push() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_vec(&mut rng, 15);
        let g = fast_limiting_rhs(&z, &[0.0; 5], &p).unwrap();
        let mut plain = vec![0.0; 15];
        ring_stencil(&z, &p.fast_stencil(), Orientation::Reversed, &mut plain);
        assert_eq!(g, plain);
    }

    #[test]
    fn fast_limiting_at_mean_slow_state() {
        let p = params();
        let xbar = 0.37;
        let g = fast_limiting_rhs(&[0.0; 15], &[xbar; 5], &p).unwrap();
        let expect = (p.f_y - p.calib_y.mean) / p.calib_y.beta.powi(2) + p.lambda_x * xbar;
        g.iter()
            .for_each(|&v| assert_relative_eq!(v, expect, max_relative = 1e-14));
    }

    #[test]
    fn fast_limiting_dimension_errors() {
        let p = params();
        assert!(fast_limiting_rhs(&[0.0; 14], &[0.0; 5], &p).is_err());
        assert!(fast_limiting_rhs(&[0.0; 15], &[0.0; 4], &p).is_err());
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let p = params();
        let model = TwoScaleModel::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_vec(&mut rng, 20);
        let v = random_vec(&mut rng, 20);
        let mut jv = vec![0.0; 20];
        model.jvp(&s, &v, &mut jv);
        let h = 1e-6;
        let plus: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let (mut fp, mut fm) = (vec![0.0; 20], vec![0.0; 20]);
        model.eval(&plus, &mut fp);
        model.eval(&minus, &mut fm);
        for k in 0..20 {
            let fd = (fp[k] - fm[k]) / (2.0 * h);
            assert!((fd - jv[k]).abs() < 1e-5 * (1.0 + jv[k].abs()), "{k}: {fd} vs {}", jv[k]);
        }
    }

    #[test]
    fn identity_metric_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let c = CouplingSpec::new(l.clone(), DMatrix::identity(3, 3), DMatrix::identity(6, 6))
            .unwrap();
        let x = random_vec(&mut rng, 3);
        let y = random_vec(&mut rng, 6);
        let (f, g) = c.coupling_terms(&x, &y).unwrap();
        let fe = &l * DVector::from_column_slice(&y);
        let ge = -(l.transpose() * DVector::from_column_slice(&x));
        for (a, b) in f.iter().zip(fe.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
        for (a, b) in g.iter().zip(ge.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn coupling_rejects_indefinite_metric() {
        let l = DMatrix::zeros(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CouplingSpec::new(l, bad, DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn lorenz_coupling_reproduces_model_terms() {
        let p = params();
        let (lx, ly, j) = (p.lambda_x, p.lambda_y / p.j as f64, p.j);
        let n_y = p.n_y();
        let c = CouplingSpec::new(
            lorenz_coupling_matrix(p.n_x, j),
            DMatrix::identity(p.n_x, p.n_x) * lx,
            DMatrix::identity(n_y, n_y) * ly,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_vec(&mut rng, p.n_x);
        let y = random_vec(&mut rng, n_y);
        let (f, g) = c.coupling_terms(&x, &y).unwrap();
        // Model terms: slow -(lambda_y/J) sum_j y_ij, fast (inside the bracket) +lambda_x x_i.
        // They equal the generated terms times sqrt(lambda_x * lambda_y / J).
        let scale = (lx * ly).sqrt();
        for i in 0..p.n_x {
            let model = -ly * y[i * j..(i + 1) * j].iter().sum::<f64>();
            assert_relative_eq!(model, scale * f[i], max_relative = 1e-12);
        }
        for k in 0..n_y {
            assert_relative_eq!(lx * x[k / j], scale * g[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn energy_of_zero_and_unit_states() {
        let mut p = params();
        p.n_x = 10;
        let s = State {
            x: vec![0.0; 10],
            y: vec![0.0; 30],
        };
        assert_eq!(
            total_energy(&s, &p),
            Energy {
                total: 0.0,
                slow: 0.0,
                fast: 0.0
            }
        );
        let s = State {
            x: vec![1.0; 10],
            y: vec![0.0; 30],
        };
        let e = total_energy(&s, &p);
        assert_eq!(e.slow, 1.25);
        assert_eq!(e.total, 1.25);
    }

    fn ou(gamma: DMatrix<f64>, h: DVector<f64>) -> OUParams {
        let n = h.len();
        OUParams::new(h, gamma, DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn ou_drift_fixed_point_and_unit_case() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -0.5, 1.0]);
        let q = ou(g.clone(), DVector::from_vec(vec![1.0, -3.0]));
        let z = q.stationary_mean(&[0.0, 0.0]).unwrap();
        let d = ou_drift(z.as_slice(), &q, &[0.0, 0.0]).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-14));

        let q = ou(DMatrix::identity(3, 3), DVector::zeros(3));
        assert_eq!(
            ou_drift(&[1.0, 0.0, 0.0], &q, &[0.0; 3]).unwrap(),
            vec![-1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn ou_rejects_bad_gamma_and_dimensions() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(OUParams::new(DVector::zeros(2), g, DMatrix::identity(2, 2)).is_err());
        let q = ou(DMatrix::identity(2, 2), DVector::zeros(2));
        assert!(ou_drift(&[0.0; 3], &q, &[0.0; 2]).is_err());
    }
}
