//! Time integration of the closed-loop master equation.
//!
//! [`ClosedLoop`] evaluates
//! `L_p + γ L_fb(t) + L_noise + L_unc(t)` in structured form (products of
//! `d x d` matrices, never the `d² x d²` superoperator). [`integrate`] drives
//! any [`Dynamics`] with an adaptive Dormand–Prince 5(4) scheme, landing
//! exactly on output times and transient-noise events, and records the
//! plant error `D(t) = ½ ||tr_C σ(t) - ρ_D(t)||_1` when the dynamics carry a
//! reference trajectory.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::liouville::{embed_plant, LindbladGenerator};
use crate::protocol::{computational_basis, FeedbackProtocol, FrameMap};
use crate::qmat::{
    basis_vector, c, eig_hermitian, identity, max_abs, norm_2, partial_trace, projector, trace,
    trace_norm, CMatrix, CVector, DensityMatrix, HermitianEigen, HermitianMatrix, Subsystem,
};

/// Tolerance on `Σ K^dag K = I` for transient channels.
pub const KRAUS_TOL: f64 = 1e-10;

/// Right-hand side `dx/dt = f(t, x)` of a linear matrix ODE.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &CMatrix) -> CMatrix;
    /// Desired plant trajectory, if the dynamics have one.
    fn reference(&self) -> Option<&Reference> {
        None
    }
    /// Times where the right-hand side may jump. Steps never cross them.
    fn breakpoints(&self, _span: (f64, f64)) -> Vec<f64> {
        Vec::new()
    }
    /// Right-hand side for a step that started at `step_start`; lets
    /// piecewise dynamics pick the piece by the step rather than by `t`.
    fn rhs_in_step(&self, _step_start: f64, t: f64, x: &CMatrix) -> CMatrix {
        self.rhs(t, x)
    }
}

impl Dynamics for LindbladGenerator {
    fn dim(&self) -> usize {
        LindbladGenerator::dim(self)
    }

    fn rhs(&self, _t: f64, x: &CMatrix) -> CMatrix {
        self.apply(x)
    }
}

/// A time-dependent Hamiltonian perturbation `H_unc(t)` with a declared bound
/// on the induced norm of `-i[H_unc(t), ·]`.
pub trait Uncertainty: Send + Sync + fmt::Debug {
    fn hamiltonian(&self, t: f64) -> CMatrix;
    fn bound(&self) -> f64;
}

/// `H_unc(t) = a sin(ω t + φ) H`.
#[derive(Debug, Clone)]
pub struct SinusoidalDrift {
    pub operator: HermitianMatrix,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl SinusoidalDrift {
    /// Scales `operator` so that the declared bound equals `bound`.
    pub fn with_bound(operator: HermitianMatrix, bound: f64, omega: f64) -> Result<Self> {
        let n = norm_2(operator.matrix());
        if n == 0.0 || !(bound >= 0.0) {
            return Err(Error::InvalidArgument(
                "drift operator must be nonzero and the bound nonnegative".into(),
            ));
        }
        Ok(Self {
            operator,
            amplitude: bound / (2.0 * n),
            omega,
            phase: 0.0,
        })
    }
}

impl Uncertainty for SinusoidalDrift {
    fn hamiltonian(&self, t: f64) -> CMatrix {
        self.operator
            .matrix()
            .scale(self.amplitude * (self.omega * t + self.phase).sin())
    }

    fn bound(&self) -> f64 {
        2.0 * self.amplitude.abs() * norm_2(self.operator.matrix())
    }
}

/// Instantaneous channel `σ -> Σ K σ K^dag` applied at `time`.
#[derive(Debug, Clone)]
pub struct TransientEvent {
    pub time: f64,
    pub kraus: Vec<CMatrix>,
}

#[derive(Debug, Clone, Default)]
pub struct NoiseModel {
    pub persistent: Option<LindbladGenerator>,
    pub transient_events: Vec<TransientEvent>,
    pub uncertainty: Option<Arc<dyn Uncertainty>>,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(g) = &self.persistent {
            if g.dim() != dim {
                return Err(Error::Dimension(format!(
                    "persistent noise acts on dimension {}, system on {dim}",
                    g.dim()
                )));
            }
        }
        validate_events(&self.transient_events, dim)
    }
}

pub fn validate_events(events: &[TransientEvent], dim: usize) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for e in events {
        if !(e.time >= 0.0 && e.time.is_finite()) {
            return Err(Error::InvalidArgument(format!("event time {} must be finite and >= 0", e.time)));
        }
        if e.time <= last {
            return Err(Error::InvalidArgument("event times must be strictly increasing".into()));
        }
        last = e.time;
        if e.kraus.is_empty() {
            return Err(Error::InvalidKraus {
                time: e.time,
                deviation: 1.0,
            });
        }
        let mut sum = CMatrix::zeros(dim, dim);
        for k in &e.kraus {
            if k.shape() != (dim, dim) {
                return Err(Error::Dimension(format!(
                    "Kraus operator at t = {} is {}x{}, expected {dim}x{dim}",
                    e.time,
                    k.nrows(),
                    k.ncols()
                )));
            }
            sum += k.adjoint() * k;
        }
        let deviation = crate::qmat::max_abs_diff(&sum, &identity(dim));
        if deviation > KRAUS_TOL {
            return Err(Error::InvalidKraus {
                time: e.time,
                deviation,
            });
        }
    }
    Ok(())
}

pub fn apply_channel(kraus: &[CMatrix], x: &CMatrix) -> CMatrix {
    kraus
        .iter()
        .fold(CMatrix::zeros(x.nrows(), x.ncols()), |acc, k| acc + k * x * k.adjoint())
}

/// Projectors onto every computational basis state of the composite.
pub fn decoherence_channel(dims: &[usize]) -> Vec<CMatrix> {
    let n: usize = dims.iter().product();
    (0..n).map(|k| projector(&basis_vector(n, k))).collect()
}

/// The plant Hamiltonian and initial vector defining `ρ_D(t)`.
#[derive(Debug, Clone)]
pub struct Reference {
    dims: (usize, usize),
    eigen: HermitianEigen,
    phi0: CVector,
}

impl Reference {
    pub fn new(h_p: &HermitianMatrix, phi0: &CVector, d_c: usize) -> Result<Self> {
        if phi0.len() != h_p.dim() {
            return Err(Error::Dimension(format!(
                "phi0 has length {}, plant dimension is {}",
                phi0.len(),
                h_p.dim()
            )));
        }
        Ok(Self {
            dims: (h_p.dim(), d_c),
            eigen: eig_hermitian(h_p),
            phi0: phi0.clone(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn desired(&self, t: f64) -> DensityMatrix {
        let u = self.eigen.map(|l| Complex64::from_polar(1.0, -l * t));
        let psi = u * &self.phi0;
        DensityMatrix::new_unchecked(HermitianMatrix::hermitize(&projector(&psi)).into_inner())
    }
}

/// `ρ_D(t) = e^{-iH_P t} |φ0><φ0| e^{iH_P t}`.
pub fn desired_state(h_p: &HermitianMatrix, phi0: &CVector, t: f64) -> Result<DensityMatrix> {
    Ok(Reference::new(h_p, phi0, 1)?.desired(t))
}

/// Composite dynamics `L_p + γ L_fb(t) + L_noise + L_unc(t)`.
///
/// `gamma = 0` drops the feedback terms altogether.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    dim: usize,
    gamma: f64,
    frame: FrameMap,
    /// `γ H_I(0)` in the eigenbasis of `H_P ⊗ I_C`.
    interaction_eig: Option<CMatrix>,
    h_static: CMatrix,
    couplings: Vec<CMatrix>,
    damping: CMatrix,
    uncertainty: Option<Arc<dyn Uncertainty>>,
    reference: Reference,
}

impl ClosedLoop {
    pub fn new(h_p: &HermitianMatrix, protocol: &FeedbackProtocol, gamma: f64, noise: &NoiseModel) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gain must be finite and >= 0, got {gamma}")));
        }
        let (d_p, d_c) = (protocol.plant_dim(), protocol.controller_dim());
        if h_p.dim() != d_p {
            return Err(Error::Dimension(format!(
                "plant Hamiltonian is {}x{}, protocol plant dimension is {d_p}",
                h_p.dim(),
                h_p.dim()
            )));
        }
        let dim = d_p * d_c;
        noise.validate(dim)?;
        let frame = FrameMap::new(h_p, d_c);
        let mut h_static = embed_plant(h_p.matrix(), d_c);
        let mut couplings = Vec::new();
        let mut interaction_eig = None;
        if gamma > 0.0 {
            let p = protocol.with_gamma(gamma)?;
            let v = &frame.eigen().vectors;
            interaction_eig = Some(v.adjoint() * p.h_i0().matrix() * v);
            couplings.extend(p.couplings());
        }
        if let Some(g) = &noise.persistent {
            if let Some(h) = g.hamiltonian() {
                h_static += h.matrix();
            }
            couplings.extend(g.couplings().iter().cloned());
        }
        let damping = couplings
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, l| acc + l.adjoint() * l);
        Ok(Self {
            dim,
            gamma,
            frame,
            interaction_eig,
            h_static,
            couplings,
            damping,
            uncertainty: noise.uncertainty.clone(),
            reference: Reference::new(h_p, protocol.phi0(), d_c)?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Total Hamiltonian at time `t`.
    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let mut h = self.h_static.clone();
        if let Some(hi) = &self.interaction_eig {
            let ph = self.frame.phases(t);
            let rotated = CMatrix::from_fn(self.dim, self.dim, |j, k| hi[(j, k)] * ph[j] * ph[k].conj());
            let v = &self.frame.eigen().vectors;
            h += v * rotated * v.adjoint();
        }
        if let Some(u) = &self.uncertainty {
            h += u.hamiltonian(t);
        }
        h
    }

    /// `-iH(t) - ½ Σ L^dag L`.
    fn effective(&self, t: f64) -> CMatrix {
        self.hamiltonian(t) * c(0.0, -1.0) - self.damping.scale(0.5)
    }

    /// The frozen generator at time `t` (for piecewise-constant studies).
    pub fn frozen_at(&self, t: f64) -> Result<LindbladGenerator> {
        LindbladGenerator::new(
            self.dim,
            Some(HermitianMatrix::hermitize(&self.hamiltonian(t))),
            self.couplings.clone(),
        )
    }

    pub fn frame(&self) -> &FrameMap {
        &self.frame
    }
}

impl Dynamics for ClosedLoop {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, x: &CMatrix) -> CMatrix {
        let k = self.effective(t);
        let mut out = &k * x + x * k.adjoint();
        for l in &self.couplings {
            out += l * x * l.adjoint();
        }
        out
    }

    fn reference(&self) -> Option<&Reference> {
        Some(&self.reference)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_steps: 5_000_000,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorMeta {
    pub steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub events_applied: usize,
    /// Largest `|tr σ - 1|` seen at a sample, before renormalisation.
    pub max_trace_drift: f64,
    /// Smallest eigenvalue seen at a sample.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDiagnostics {
    pub trace_drift: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub diagnostics: Vec<SampleDiagnostics>,
    /// Empty unless the dynamics carry a [`Reference`].
    pub plant_states: Vec<DensityMatrix>,
    /// `D(t)`, empty unless the dynamics carry a [`Reference`].
    pub errors: Vec<f64>,
    pub meta: IntegratorMeta,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) stepper with first-same-as-last reuse.
pub struct Stepper<'a, D: Dynamics + ?Sized> {
    dynamics: &'a D,
    opts: IntegratorOptions,
    h: Option<f64>,
    fsal: Option<(f64, CMatrix)>,
    pub meta: IntegratorMeta,
}

impl<'a, D: Dynamics + ?Sized> Stepper<'a, D> {
    pub fn new(dynamics: &'a D, opts: IntegratorOptions) -> Self {
        Self {
            dynamics,
            opts,
            h: opts.initial_step,
            fsal: None,
            meta: IntegratorMeta {
                min_eigenvalue: f64::INFINITY,
                ..Default::default()
            },
        }
    }

    fn eval(&mut self, step_start: f64, t: f64, x: &CMatrix) -> CMatrix {
        self.meta.rhs_evaluations += 1;
        self.dynamics.rhs_in_step(step_start, t, x)
    }

    /// Invalidates the cached derivative after `x` changed discontinuously.
    pub fn reset(&mut self) {
        self.fsal = None;
    }

    fn initial_step(&self, x: &CMatrix, f0: &CMatrix, span: f64) -> f64 {
        let scale = self.opts.atol + self.opts.rtol * max_abs(x);
        let d0 = max_abs(x) / scale;
        let d1 = max_abs(f0) / scale;
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span)
    }

    /// Integrates `x` from `*t` to exactly `t_stop`.
    pub fn advance(&mut self, t: &mut f64, x: &mut CMatrix, t_stop: f64) -> Result<()> {
        if t_stop < *t {
            return Err(Error::InvalidArgument(format!("cannot integrate backwards from {} to {t_stop}", *t)));
        }
        while *t < t_stop {
            let k1 = match self.fsal.take() {
                Some((tf, k)) if tf == *t => k,
                _ => self.eval(*t, *t, x),
            };
            let remaining = t_stop - *t;
            let mut h = self.h.unwrap_or_else(|| self.initial_step(x, &k1, remaining));
            let landing = h >= remaining;
            if landing {
                h = remaining;
            }
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integration {
                    time: *t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            if self.meta.steps + self.meta.rejected_steps >= self.opts.max_steps {
                return Err(Error::Integration {
                    time: *t,
                    reason: format!("step budget of {} exhausted", self.opts.max_steps),
                });
            }
            let mut k: Vec<CMatrix> = Vec::with_capacity(7);
            k.push(k1);
            for s in 1..7 {
                let mut y = x.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        y += kj.scale(h * a);
                    }
                }
                let ks = self.eval(*t, *t + DP_C[s] * h, &y);
                if s == 6 {
                    // stage 7 is evaluated at the proposed solution
                    let err = k
                        .iter()
                        .chain(std::iter::once(&ks))
                        .zip(DP_E)
                        .fold(CMatrix::zeros(x.nrows(), x.ncols()), |acc, (kj, e)| acc + kj.scale(h * e));
                    let ratio = err
                        .iter()
                        .zip(x.iter().zip(y.iter()))
                        .map(|(e, (a, b))| e.norm() / (self.opts.atol + self.opts.rtol * a.norm().max(b.norm())))
                        .fold(0.0, f64::max);
                    if ratio <= 1.0 {
                        self.meta.steps += 1;
                        *t = if landing { t_stop } else { *t + h };
                        *x = y;
                        self.fsal = Some((*t, ks));
                        let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                        // a landing step may be artificially short; keep the longer proposal
                        let proposal = h * grow;
                        self.h = Some(if landing { proposal.max(self.h.unwrap_or(proposal)) } else { proposal });
                    } else {
                        self.meta.rejected_steps += 1;
                        self.fsal = Some((*t, k.swap_remove(0)));
                        self.h = Some(h * (0.9 * ratio.powf(-0.2)).clamp(0.2, 1.0));
                    }
                    break;
                }
                k.push(ks);
            }
        }
        Ok(())
    }
}

fn check_span(span: (f64, f64), grid: &[f64]) -> Result<()> {
    let (t0, t1) = span;
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!("span ({t0}, {t1}) must satisfy t0 < t1")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("output grid is empty".into()));
    }
    let mut last = f64::NEG_INFINITY;
    for &g in grid {
        if !(g >= t0 && g <= t1) {
            return Err(Error::InvalidArgument(format!("output time {g} outside span ({t0}, {t1})")));
        }
        if g < last {
            return Err(Error::InvalidArgument("output grid must be nondecreasing".into()));
        }
        last = g;
    }
    Ok(())
}

/// Integrates a density matrix over `span`, sampling on `grid` and applying
/// `events` that fall inside the span. A sample at an event time records
/// the post-event state.
pub fn integrate<D: Dynamics + ?Sized>(
    dynamics: &D,
    sigma0: &DensityMatrix,
    span: (f64, f64),
    events: &[TransientEvent],
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_span(span, grid)?;
    let dim = dynamics.dim();
    if sigma0.dim() != dim {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, dynamics {dim}",
            sigma0.dim()
        )));
    }
    validate_events(events, dim)?;
    let mut stepper = Stepper::new(dynamics, *opts);
    let mut t = span.0;
    let mut x = sigma0.matrix().clone();
    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        diagnostics: Vec::with_capacity(grid.len()),
        plant_states: Vec::new(),
        errors: Vec::new(),
        meta: IntegratorMeta::default(),
    };
    let mut pending = events
        .iter()
        .filter(|e| e.time >= span.0 && e.time <= span.1)
        .peekable();
    let mut breaks = breakpoints_in(dynamics, span).into_iter().peekable();
    for &sample in grid {
        loop {
            let next_event = pending.peek().map(|e| e.time).filter(|&te| te <= sample);
            let next_break = breaks.peek().copied().filter(|&tb| tb <= sample);
            match (next_event, next_break) {
                (Some(te), tb) if tb.is_none_or(|tb| te <= tb) => {
                    let e = pending.next().expect("peeked");
                    stepper.advance(&mut t, &mut x, te)?;
                    x = apply_channel(&e.kraus, &x);
                    stepper.reset();
                    stepper.meta.events_applied += 1;
                }
                (_, Some(tb)) => {
                    breaks.next();
                    stepper.advance(&mut t, &mut x, tb)?;
                    stepper.reset();
                }
                _ => break,
            }
        }
        stepper.advance(&mut t, &mut x, sample)?;
        let (state, diag) = checked_sample(&mut x, t)?;
        stepper.meta.max_trace_drift = stepper.meta.max_trace_drift.max(diag.trace_drift.abs());
        stepper.meta.min_eigenvalue = stepper.meta.min_eigenvalue.min(diag.min_eigenvalue);
        traj.times.push(t);
        traj.states.push(state);
        traj.diagnostics.push(diag);
    }
    traj.meta = stepper.meta;
    if let Some(r) = dynamics.reference() {
        attach_reference(&mut traj, r)?;
    }
    Ok(traj)
}

/// Diagnoses the integrator state at a sample; renormalises its trace when
/// the drift is below `1e-8`.
fn checked_sample(x: &mut CMatrix, t: f64) -> Result<(DensityMatrix, SampleDiagnostics)> {
    let drift = trace(x).re - 1.0;
    let h = HermitianMatrix::hermitize(x);
    let min_eigenvalue = eig_hermitian(&h).values[0];
    if drift.abs() > 1e-6 || min_eigenvalue < -1e-6 || !drift.is_finite() {
        return Err(Error::Integration {
            time: t,
            reason: format!("trace drift {drift:e}, min eigenvalue {min_eigenvalue:e}"),
        });
    }
    if drift != 0.0 && drift.abs() < 1e-8 {
        *x = x.unscale(1.0 + drift);
    }
    let state = DensityMatrix::new_unchecked(HermitianMatrix::hermitize(x).into_inner());
    Ok((
        state,
        SampleDiagnostics {
            trace_drift: drift,
            min_eigenvalue,
        },
    ))
}

fn breakpoints_in<D: Dynamics + ?Sized>(dynamics: &D, span: (f64, f64)) -> Vec<f64> {
    let mut b: Vec<f64> = dynamics
        .breakpoints(span)
        .into_iter()
        .filter(|&t| t > span.0 && t < span.1)
        .collect();
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

fn attach_reference(traj: &mut Trajectory, r: &Reference) -> Result<()> {
    traj.plant_states.clear();
    traj.errors.clear();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let plant = DensityMatrix::new_unchecked(partial_trace(s.matrix(), r.dims(), Subsystem::Controller)?);
        let d = 0.5 * trace_norm(&(plant.matrix() - r.desired(*t).matrix()));
        traj.plant_states.push(plant);
        traj.errors.push(d);
    }
    Ok(())
}

/// Integrates an arbitrary operator (not necessarily a state) from `t0` to
/// each time in `times`.
pub fn integrate_operator<D: Dynamics + ?Sized>(
    dynamics: &D,
    x0: &CMatrix,
    t0: f64,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<CMatrix>> {
    let mut stepper = Stepper::new(dynamics, *opts);
    let mut t = t0;
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(times.len());
    let end = times.iter().copied().fold(t0, f64::max);
    let mut breaks = breakpoints_in(dynamics, (t0, end)).into_iter().peekable();
    for &s in times {
        while let Some(tb) = breaks.next_if(|&tb| tb <= s) {
            stepper.advance(&mut t, &mut x, tb)?;
            stepper.reset();
        }
        stepper.advance(&mut t, &mut x, s)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// `(t, D(t))` for an existing trajectory against `ρ_D` from `h_p`, `phi0`.
pub fn error_signal(traj: &Trajectory, h_p: &HermitianMatrix, phi0: &CVector) -> Result<Vec<(f64, f64)>> {
    if traj.states.is_empty() {
        return Err(Error::InvalidArgument("trajectory is empty".into()));
    }
    let d_c = traj.states[0].dim() / h_p.dim();
    let r = Reference::new(h_p, phi0, d_c)?;
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let plant = partial_trace(s.matrix(), r.dims(), Subsystem::Controller)?;
            Ok((t, 0.5 * trace_norm(&(plant - r.desired(t).matrix()))))
        })
        .collect()
}

/// Maximum of the full trace norm `||tr_C σ - ρ_D||_1 = 2 D` over the last
/// `tail_fraction` of the sampled window.
pub fn plateau(traj: &Trajectory, tail_fraction: f64) -> f64 {
    let (Some(&first), Some(&last)) = (traj.times.first(), traj.times.last()) else {
        return f64::NAN;
    };
    let cutoff = last - tail_fraction.clamp(0.0, 1.0) * (last - first);
    traj.times
        .iter()
        .zip(&traj.errors)
        .filter(|(t, _)| **t >= cutoff)
        .map(|(_, d)| 2.0 * d)
        .fold(f64::NAN, f64::max)
}

/// `p_i = <b_i| ρ |b_i>`.
pub fn outcome_probabilities(state: &DensityMatrix, basis: &[CVector]) -> Vec<f64> {
    basis
        .iter()
        .map(|b| b.dotc(&(state.matrix() * b)).re)
        .collect()
}

/// Horizon extension rule for the finite-horizon limsup surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauRule {
    pub initial_horizon: f64,
    pub tail_fraction: f64,
    pub growth: f64,
    pub rel_change: f64,
    pub max_extensions: usize,
    /// Tail maxima both below this count as converged.
    pub abs_floor: f64,
    /// Output spacing.
    pub dt: f64,
}

impl PlateauRule {
    /// Initial horizon `40 / (γ α)`.
    pub fn for_rate(gamma_alpha: f64) -> Self {
        Self {
            initial_horizon: 40.0 / gamma_alpha,
            ..Self::default()
        }
    }
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            initial_horizon: 40.0,
            tail_fraction: 0.2,
            growth: 1.5,
            rel_change: 0.05,
            max_extensions: 8,
            abs_floor: 1e-10,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlateauRun {
    pub trajectory: Trajectory,
    pub plateau: f64,
    pub horizon: f64,
    pub extensions: usize,
    pub converged: bool,
}

/// Integrates from `t0`, extending the horizon by `growth` until the tail
/// maximum changes by less than `rel_change` between consecutive horizons.
pub fn auto_plateau<D: Dynamics + ?Sized>(
    dynamics: &D,
    sigma0: &DensityMatrix,
    t0: f64,
    events: &[TransientEvent],
    rule: &PlateauRule,
    opts: &IntegratorOptions,
) -> Result<PlateauRun> {
    if !(rule.initial_horizon > 0.0 && rule.growth > 1.0 && rule.dt > 0.0) {
        return Err(Error::InvalidArgument("plateau rule needs positive horizon, growth > 1 and dt > 0".into()));
    }
    let mut horizon = rule.initial_horizon;
    let mut traj = integrate(
        dynamics,
        sigma0,
        (t0, t0 + horizon),
        events,
        &uniform_grid(t0, t0 + horizon, rule.dt),
        opts,
    )?;
    let mut value = plateau(&traj, rule.tail_fraction);
    for extensions in 1..=rule.max_extensions {
        let start = t0 + horizon;
        let end = t0 + horizon * rule.growth;
        let grid: Vec<f64> = uniform_grid(t0, end, rule.dt)
            .into_iter()
            .filter(|&g| g > start)
            .collect();
        let last = traj.states.last().expect("nonempty trajectory").clone();
        let later: Vec<TransientEvent> = events.iter().filter(|e| e.time > start).cloned().collect();
        let more = integrate(dynamics, &last, (start, end), &later, &grid, opts)?;
        extend(&mut traj, more);
        horizon *= rule.growth;
        let next = plateau(&traj, rule.tail_fraction);
        let converged = (next - value).abs() <= rule.rel_change * value.abs().max(next.abs())
            || (next.abs() < rule.abs_floor && value.abs() < rule.abs_floor);
        value = next;
        if converged {
            return Ok(PlateauRun {
                trajectory: traj,
                plateau: value,
                horizon,
                extensions,
                converged: true,
            });
        }
    }
    Ok(PlateauRun {
        trajectory: traj,
        plateau: value,
        horizon,
        extensions: rule.max_extensions,
        converged: false,
    })
}

fn extend(traj: &mut Trajectory, more: Trajectory) {
    traj.times.extend(more.times);
    traj.states.extend(more.states);
    traj.diagnostics.extend(more.diagnostics);
    traj.plant_states.extend(more.plant_states);
    traj.errors.extend(more.errors);
    let m = &mut traj.meta;
    m.steps += more.meta.steps;
    m.rejected_steps += more.meta.rejected_steps;
    m.rhs_evaluations += more.meta.rhs_evaluations;
    m.events_applied += more.meta.events_applied;
    m.max_trace_drift = m.max_trace_drift.max(more.meta.max_trace_drift);
    m.min_eigenvalue = m.min_eigenvalue.min(more.meta.min_eigenvalue);
}

/// Points `t0, t0 + dt, ...` up to and including `t1`.
pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt).round().max(1.0) as usize;
    (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect()
}

fn probability_labels(d_p: usize) -> Vec<String> {
    if d_p.is_power_of_two() && d_p > 1 {
        let bits = d_p.trailing_zeros() as usize;
        (0..d_p).map(|k| format!("p_{k:0bits$b}")).collect()
    } else {
        (0..d_p).map(|k| format!("p_{k}")).collect()
    }
}

/// Writes `t,D,trace_drift,min_eig[,p_..]` with 17 significant digits.
/// Probability columns appear when the trajectory carries plant states.
pub fn write_csv<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    let d_p = traj.plant_states.first().map(|p| p.dim());
    let labels = d_p.map(probability_labels).unwrap_or_default();
    let mut header = String::from("t,D,trace_drift,min_eig");
    for l in &labels {
        header.push(',');
        header.push_str(l);
    }
    writeln!(w, "{header}")?;
    let basis = d_p.map(computational_basis);
    for i in 0..traj.times.len() {
        let d = traj.errors.get(i).copied().unwrap_or(f64::NAN);
        let diag = traj.diagnostics[i];
        write!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            traj.times[i], d, diag.trace_drift, diag.min_eigenvalue
        )?;
        if let (Some(b), Some(p)) = (&basis, traj.plant_states.get(i)) {
            for x in outcome_probabilities(p, b) {
                write!(w, ",{x:.16e}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
