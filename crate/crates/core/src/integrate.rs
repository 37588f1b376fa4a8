//! Fixed-step integration: Heun (explicit trapezoid) RK2, tangent-map
//! co-integration, and Euler-Maruyama for the OU process.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::OUParams;
use crate::error::{check_len, Error, Result};

/// An autonomous vector field on flat state slices.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, state: &[f64], out: &mut [f64]);
}

/// A vector field that can also apply its Jacobian.
pub trait Linearized: VectorField {
    /// `out = J(state) v`.
    fn jvp(&self, state: &[f64], v: &[f64], out: &mut [f64]);

    fn jacobian(&self, state: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            self.jvp(state, &e, &mut col);
            m.column_mut(c).copy_from_slice(&col);
            e[c] = 0.0;
        }
        m
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, state: &[f64], out: &mut [f64]) {
        (**self).eval(state, out)
    }
}

impl<T: Linearized + ?Sized> Linearized for &T {
    fn jvp(&self, state: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).jvp(state, v, out)
    }
}

/// Closure-backed vector field.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, state: &[f64], out: &mut [f64]) {
        (self.f)(state, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub sample_stride: usize,
    pub seed: u64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, sample_stride: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            sample_stride,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidInput("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt_sample(&self) -> f64 {
        self.dt * self.sample_stride as f64
    }
}

/// Number of steps of size `dt` covering `t_len`, tolerant to round-off in
/// `t_len / dt` (so `t_len = 10 dt` is exactly 10 steps).
pub fn step_count(t_len: f64, dt: f64) -> u64 {
    let r = t_len / dt;
    let near = r.round();
    if (r - near).abs() <= 1e-9 * near.max(1.0) {
        near as u64
    } else {
        r.ceil() as u64
    }
}

/// Reusable Heun stepper that owns its stage buffers.
#[derive(Debug, Clone)]
pub struct Rk2 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk2 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `s` in place by one step. Returns `false` if the result is not finite.
    #[inline]
    pub fn step<F: VectorField + ?Sized>(&mut self, field: &F, s: &mut [f64], dt: f64) -> bool {
        field.eval(s, &mut self.k1);
        for ((st, &si), &k) in self.stage.iter_mut().zip(s.iter()).zip(&self.k1) {
            *st = si + dt * k;
        }
        field.eval(&self.stage, &mut self.k2);
        let half = 0.5 * dt;
        let mut check = 0.0;
        for ((si, &a), &b) in s.iter_mut().zip(&self.k1).zip(&self.k2) {
            *si += half * (a + b);
            check += *si;
        }
        check.is_finite()
    }
}

/// One Heun step: `k1 = f(s)`, `k2 = f(s + dt k1)`, `s + dt/2 (k1 + k2)`.
pub fn rk2_step<F: VectorField + ?Sized>(field: &F, s: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    check_len("state", field.dim(), s.len())?;
    let mut out = s.to_vec();
    if Rk2::new(s.len()).step(field, &mut out, dt) {
        Ok(out)
    } else {
        Err(Error::BlowUp { step: 1, time: dt })
    }
}

/// Streaming consumer of every integration step (including the initial state).
pub trait Observer {
    fn observe(&mut self, step: u64, t: f64, state: &[f64]);
}

impl<F: FnMut(u64, f64, &[f64])> Observer for F {
    fn observe(&mut self, step: u64, t: f64, state: &[f64]) {
        self(step, t, state)
    }
}

/// Uniformly sampled time series of states, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt_sample: f64,
    pub dim: usize,
    pub data: Vec<f64>,
    pub cfg: IntegratorConfig,
    pub model: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt_sample
    }

    /// Samples of one component.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.states().map(|s| s[c]).collect()
    }
}

/// Integrates `field` from `s0` over `t_len`, feeding every step to `observers`
/// and storing every `sample_stride`-th state (the initial state included).
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    s0: &[f64],
    t_len: f64,
    cfg: &IntegratorConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    integrate_from(field, s0, 0.0, t_len, cfg, observers, "")
}

pub fn integrate_from<F: VectorField + ?Sized>(
    field: &F,
    s0: &[f64],
    t0: f64,
    t_len: f64,
    cfg: &IntegratorConfig,
    observers: &mut [&mut dyn Observer],
    model: &str,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_len > 0.0) {
        return Err(Error::InvalidInput(format!("t_len must be positive, got {t_len}")));
    }
    check_len("initial state", field.dim(), s0.len())?;
    let n_steps = step_count(t_len, cfg.dt);
    let stride = cfg.sample_stride as u64;
    let mut data = Vec::with_capacity(((n_steps / stride + 1) as usize) * s0.len());
    let mut s = s0.to_vec();
    let mut rk = Rk2::new(s.len());
    data.extend_from_slice(&s);
    for o in observers.iter_mut() {
        o.observe(0, t0, &s);
    }
    for step in 1..=n_steps {
        let t = t0 + step as f64 * cfg.dt;
        if !rk.step(field, &mut s, cfg.dt) {
            return Err(Error::BlowUp { step, time: t });
        }
        for o in observers.iter_mut() {
            o.observe(step, t, &s);
        }
        if step % stride == 0 {
            data.extend_from_slice(&s);
        }
    }
    Ok(Trajectory {
        t0,
        dt_sample: cfg.dt_sample(),
        dim: s.len(),
        data,
        cfg: *cfg,
        model: model.to_owned(),
    })
}

/// Integrates without storing samples; returns the final state.
pub fn advance<F: VectorField + ?Sized>(
    field: &F,
    s: &mut [f64],
    t_len: f64,
    dt: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<()> {
    let n_steps = step_count(t_len, dt);
    let mut rk = Rk2::new(s.len());
    for step in 1..=n_steps {
        if !rk.step(field, s, dt) {
            return Err(Error::BlowUp {
                step,
                time: step as f64 * dt,
            });
        }
        for o in observers.iter_mut() {
            o.observe(step, step as f64 * dt, s);
        }
    }
    Ok(())
}

/// Derivative of the flow with respect to the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMap {
    pub base_state: Vec<f64>,
    pub elapsed: f64,
    pub m: DMatrix<f64>,
}

impl TangentMap {
    pub fn identity(s0: &[f64]) -> Self {
        Self {
            base_state: s0.to_vec(),
            elapsed: 0.0,
            m: DMatrix::identity(s0.len(), s0.len()),
        }
    }
}

/// Heun applied to the augmented system `(s, T)`; the matrix update is the exact
/// derivative of the discrete base step, so chain-rule composition holds to round-off.
#[derive(Debug, Clone)]
pub struct TangentStepper {
    rk: Rk2,
    mk1: DMatrix<f64>,
    mk2: DMatrix<f64>,
    mstage: DMatrix<f64>,
    base: Vec<f64>,
}

impl TangentStepper {
    pub fn new(dim: usize) -> Self {
        Self {
            rk: Rk2::new(dim),
            mk1: DMatrix::zeros(dim, dim),
            mk2: DMatrix::zeros(dim, dim),
            mstage: DMatrix::zeros(dim, dim),
            base: vec![0.0; dim],
        }
    }

    pub fn step<F: Linearized + ?Sized>(
        &mut self,
        field: &F,
        s: &mut [f64],
        m: &mut DMatrix<f64>,
        dt: f64,
    ) -> bool {
        let n = s.len();
        self.base.copy_from_slice(s);
        let ok = self.rk.step(field, s, dt);
        // rk.stage holds s + dt k1 after the step
        for c in 0..n {
            field.jvp(
                &self.base,
                m.column(c).as_slice(),
                self.mk1.column_mut(c).as_mut_slice(),
            );
        }
        self.mstage.copy_from(m);
        axpy(&mut self.mstage, dt, &self.mk1);
        for c in 0..n {
            field.jvp(
                &self.rk.stage,
                self.mstage.column(c).as_slice(),
                self.mk2.column_mut(c).as_mut_slice(),
            );
        }
        let half = 0.5 * dt;
        axpy(m, half, &self.mk1);
        axpy(m, half, &self.mk2);
        ok
    }
}

fn axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

/// Co-integrates the base state and tangent map for `t_len`.
pub fn propagate_tangent<F: Linearized + ?Sized>(
    field: &F,
    s0: &[f64],
    t_len: f64,
    cfg: &IntegratorConfig,
) -> Result<TangentMap> {
    cfg.validate()?;
    check_len("initial state", field.dim(), s0.len())?;
    let mut map = TangentMap::identity(s0);
    if t_len <= 0.0 {
        return Ok(map);
    }
    let n_steps = step_count(t_len, cfg.dt);
    let mut stepper = TangentStepper::new(s0.len());
    for step in 1..=n_steps {
        if !stepper.step(field, &mut map.base_state, &mut map.m, cfg.dt) {
            return Err(Error::BlowUp {
                step,
                time: step as f64 * cfg.dt,
            });
        }
    }
    map.elapsed = n_steps as f64 * cfg.dt;
    Ok(map)
}

/// `z + dt * drift(z) + sqrt(dt) * sigma * noise`.
pub fn euler_maruyama_step(
    q: &OUParams,
    z: &[f64],
    forcing: &[f64],
    dt: f64,
    noise_draw: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    check_len("OU state", q.dim(), z.len())?;
    check_len("forcing", q.dim(), forcing.len())?;
    check_len("noise draw", q.noise_dim(), noise_draw.len())?;
    let mut out = z.to_vec();
    let mut em = EulerMaruyama::new(q);
    em.step_with(q, &mut out, forcing, dt, noise_draw);
    Ok(out)
}

/// Allocation-free Euler-Maruyama stepper for an OU process.
#[derive(Debug, Clone)]
pub struct EulerMaruyama {
    drift: DVector<f64>,
    kick: DVector<f64>,
    noise: DVector<f64>,
}

impl EulerMaruyama {
    pub fn new(q: &OUParams) -> Self {
        Self {
            drift: DVector::zeros(q.dim()),
            kick: DVector::zeros(q.dim()),
            noise: DVector::zeros(q.noise_dim()),
        }
    }

    pub fn step_with(
        &mut self,
        q: &OUParams,
        z: &mut [f64],
        forcing: &[f64],
        dt: f64,
        noise_draw: &[f64],
    ) {
        self.noise.copy_from_slice(noise_draw);
        self.apply(q, z, forcing, dt);
    }

    pub fn step(
        &mut self,
        q: &OUParams,
        z: &mut [f64],
        forcing: &[f64],
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) {
        for v in self.noise.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        self.apply(q, z, forcing, dt);
    }

    fn apply(&mut self, q: &OUParams, z: &mut [f64], forcing: &[f64], dt: f64) {
        let zv = DVector::from_column_slice(z);
        self.drift.copy_from(&q.h);
        self.drift.gemv(-1.0, &q.gamma, &zv, 1.0);
        self.kick.gemv(dt.sqrt(), &q.sigma, &self.noise, 0.0);
        for (r, zi) in z.iter_mut().enumerate() {
            *zi += dt * (self.drift[r] + forcing[r]) + self.kick[r];
        }
    }
}

/// Samples an OU path with Euler-Maruyama, storing every `sample_stride`-th state.
pub fn simulate_ou(
    q: &OUParams,
    z0: &[f64],
    forcing: &[f64],
    t_len: f64,
    cfg: &IntegratorConfig,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_len("OU state", q.dim(), z0.len())?;
    check_len("forcing", q.dim(), forcing.len())?;
    let n_steps = step_count(t_len, cfg.dt);
    let stride = cfg.sample_stride as u64;
    let mut rng = member_rng(cfg.seed, stream);
    let mut em = EulerMaruyama::new(q);
    let mut z = z0.to_vec();
    let mut data = Vec::with_capacity(((n_steps / stride + 1) as usize) * z.len());
    data.extend_from_slice(&z);
    for step in 1..=n_steps {
        em.step(q, &mut z, forcing, cfg.dt, &mut rng);
        if step % stride == 0 {
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    step,
                    time: step as f64 * cfg.dt,
                });
            }
            data.extend_from_slice(&z);
        }
    }
    Ok(Trajectory {
        t0: 0.0,
        dt_sample: cfg.dt_sample(),
        dim: z.len(),
        data,
        cfg: *cfg,
        model: "ornstein-uhlenbeck".into(),
    })
}

/// Independent generator for ensemble member `stream` under `seed`.
///
/// ChaCha streams make members independent of each other and of evaluation order.
pub fn member_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Vector of independent standard normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
