//! Spectral certification of feedback protocols.
//!
//! The error bound for persistent noise needs four numbers: the feedback
//! generator must have a one-dimensional kernel spanned by a density matrix,
//! its restriction `R` to the traceless operators must be Hurwitz, a decay
//! pair `(K, alpha)` with `||exp(R t)|| <= K exp(-alpha t)` in the norm
//! induced by the trace norm, and an upper bound on the induced norm of the
//! noise generator. This module computes all of them and assembles them into
//! a [`SpectralCertificate`].
//!
//! Induced trace norms are not computable in closed form. Lower estimates
//! come from ascent over rank-one inputs `|u><v|` (the extreme points of the
//! trace-norm ball); upper bounds come from the triangle inequality on the
//! Lindblad structure. The certificate uses the upper bound for the noise.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::liouville::{unvec, vec_of, LindbladGenerator};
use crate::protocol::FeedbackProtocol;
use crate::qmat::{
    c, eig_general, expm, kron_vec, norm_2, random, trace, CMatrix, CVector,
    DensityMatrix, HermitianMatrix,
};

/// Singular values below `rank_tol * sigma_max` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Kernel {
    pub dim: usize,
    pub basis: Vec<CMatrix>,
    pub singular_values: Vec<f64>,
}

/// Numerical null space of the vectorized generator.
pub fn kernel(g: &LindbladGenerator) -> Kernel {
    kernel_with_tol(g, DEFAULT_RANK_TOL)
}

pub fn kernel_with_tol(g: &LindbladGenerator, rank_tol: f64) -> Kernel {
    let d = g.dim();
    let n = d * d;
    let svd = g.matrix().clone().svd(false, true);
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let sigma_max = sigma.iter().fold(0.0_f64, |a, &b| a.max(b));
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let null_vectors: Vec<CVector> = if sigma_max == 0.0 {
        (0..n).map(|k| crate::qmat::basis_vector(n, k)).collect()
    } else {
        sigma
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < rank_tol * sigma_max)
            .map(|(i, _)| v_t.row(i).adjoint())
            .collect()
    };
    let basis = null_vectors
        .iter()
        .map(|v| normalize_kernel_element(unvec(v, d)))
        .collect();
    Kernel {
        dim: null_vectors.len(),
        basis,
        singular_values: sigma,
    }
}

fn normalize_kernel_element(x: CMatrix) -> CMatrix {
    let tr = trace(&x);
    if tr.norm() <= 1e-8 * crate::qmat::max_abs(&x) {
        return x;
    }
    let y = x / tr;
    let dev = crate::qmat::max_abs_diff(&y, &y.adjoint());
    if dev <= 1e-6 * crate::qmat::max_abs(&y) {
        HermitianMatrix::hermitize(&y).into_inner()
    } else {
        y
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub unique: bool,
    pub state: Option<DensityMatrix>,
    pub kernel_dim: usize,
    /// Largest real part over the traceless restriction.
    pub restricted_abscissa: f64,
}

/// Whether the generator has exactly one steady state among density
/// matrices and no other purely imaginary modes.
pub fn unique_density_steady(g: &LindbladGenerator) -> Result<SteadyState> {
    let k = kernel(g);
    let r = restrict_traceless(g);
    let abscissa = r.abscissa()?;
    let scale = crate::qmat::max_abs(&r.matrix).max(1.0);
    let mut out = SteadyState {
        unique: false,
        state: None,
        kernel_dim: k.dim,
        restricted_abscissa: abscissa,
    };
    if k.dim != 1 || abscissa >= -1e-9 * scale {
        return Ok(out);
    }
    let x = &k.basis[0];
    if trace(x).re.abs() < 0.5 {
        // traceless kernel element: not normalizable to a state
        return Ok(out);
    }
    if let Ok(state) = DensityMatrix::new(HermitianMatrix::hermitize(x).into_inner()) {
        out.unique = true;
        out.state = Some(state);
    }
    Ok(out)
}

/// Hilbert–Schmidt orthonormal basis of the traceless `d x d` matrices
/// (generalized Gell-Mann matrices, normalised to unit Frobenius norm).
pub fn traceless_basis(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(d * d - 1);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in (j + 1)..d {
            let mut sym = CMatrix::zeros(d, d);
            sym[(j, k)] = c(s, 0.0);
            sym[(k, j)] = c(s, 0.0);
            out.push(sym);
            let mut anti = CMatrix::zeros(d, d);
            anti[(j, k)] = c(0.0, -s);
            anti[(k, j)] = c(0.0, s);
            out.push(anti);
        }
    }
    for l in 1..d {
        let norm = ((l * (l + 1)) as f64).sqrt();
        let mut diag = CMatrix::zeros(d, d);
        for m in 0..l {
            diag[(m, m)] = c(1.0 / norm, 0.0);
        }
        diag[(l, l)] = c(-(l as f64) / norm, 0.0);
        out.push(diag);
    }
    out
}

/// A superoperator restricted to the traceless operators, written in an
/// orthonormal basis of that subspace.
#[derive(Debug, Clone)]
pub struct TracelessRestriction {
    /// Operator dimension `d`; the restriction is `(d²-1) x (d²-1)`.
    pub operator_dim: Option<usize>,
    pub matrix: CMatrix,
    /// `d² x (d²-1)`, columns `vec(B_i)`.
    coordinates: Option<CMatrix>,
}

/// `R[i,j] = <B_i, L(B_j)>_HS`.
pub fn restrict_traceless(g: &LindbladGenerator) -> TracelessRestriction {
    let d = g.dim();
    let basis = traceless_basis(d);
    let mut coords = CMatrix::zeros(d * d, basis.len());
    for (j, b) in basis.iter().enumerate() {
        coords.set_column(j, &vec_of(b));
    }
    let matrix = coords.adjoint() * g.matrix() * &coords;
    TracelessRestriction {
        operator_dim: Some(d),
        matrix,
        coordinates: Some(coords),
    }
}

impl TracelessRestriction {
    /// A bare matrix with no operator interpretation; norms of its
    /// exponential are measured in the spectral norm.
    pub fn from_matrix(matrix: CMatrix) -> Self {
        Self {
            operator_dim: None,
            matrix,
            coordinates: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        eig_general(&self.matrix)
    }

    pub fn abscissa(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Coordinates of a traceless operator.
    pub fn coords_of(&self, x: &CMatrix) -> Option<CVector> {
        self.coordinates.as_ref().map(|b| b.adjoint() * vec_of(x))
    }

    /// Operator with the given coordinates.
    pub fn lift(&self, coords: &CVector) -> Option<CMatrix> {
        let d = self.operator_dim?;
        self.coordinates.as_ref().map(|b| unvec(&(b * coords), d))
    }

    fn lift_map(&self, e: &CMatrix) -> Option<CMatrix> {
        self.coordinates.as_ref().map(|b| b * e * b.adjoint())
    }

    /// Lower estimate of `||exp(R t)||` in the norm this restriction carries.
    pub fn exp_norm_estimate(&self, t: f64, restarts: usize, seed: u64) -> f64 {
        let e = expm(&self.matrix.scale(t));
        match (self.operator_dim, self.lift_map(&e)) {
            (Some(d), Some(lifted)) => rank_one_ascent(&lifted, d, true, restarts.max(1), seed),
            _ => norm_2(&e),
        }
    }
}

/// A superoperator given either by Lindblad structure or by its vectorized
/// matrix.
#[derive(Debug, Clone, Copy)]
pub enum Superop<'a> {
    Generator(&'a LindbladGenerator),
    Matrix { dim: usize, matrix: &'a CMatrix },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSandwich {
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_RESTARTS: usize = 32;
pub const DEFAULT_SEED: u64 = 0x00c0_ffee;

/// Sandwich `lower <= ||S||_{1->1} <= upper` for the norm induced by the
/// trace norm.
///
/// `lower` is the best value found by alternating maximisation over rank-one
/// inputs from `restarts` seeded random starts. `upper` is
/// `2 Σ ||L_k||² + 2 ||H||` for structured generators and `d ||S||_2`
/// otherwise.
pub fn induced_trace_norm_estimate(s: Superop<'_>, restarts: usize) -> NormSandwich {
    induced_trace_norm_estimate_seeded(s, restarts, DEFAULT_SEED)
}

pub fn induced_trace_norm_estimate_seeded(s: Superop<'_>, restarts: usize, seed: u64) -> NormSandwich {
    let (dim, matrix, upper) = match s {
        Superop::Generator(g) => {
            let h = g.hamiltonian().map_or(0.0, |h| norm_2(h.matrix()));
            let l: f64 = g.couplings().iter().map(|l| norm_2(l).powi(2)).sum();
            (g.dim(), g.matrix(), 2.0 * l + 2.0 * h)
        }
        Superop::Matrix { dim, matrix } => (dim, matrix, dim as f64 * norm_2(matrix)),
    };
    let lower = if crate::qmat::max_abs(matrix) == 0.0 {
        0.0
    } else {
        rank_one_ascent(matrix, dim, false, restarts.max(1), seed).min(upper.max(0.0) + upper * 1e-12)
    };
    NormSandwich { lower, upper }
}

/// Best `||S(|u><v|)||_1` over unit `u, v` found by alternating
/// maximisation. With `traceless`, `u ⊥ v` is enforced so every input is
/// trace-free.
fn rank_one_ascent(m: &CMatrix, d: usize, traceless: bool, restarts: usize, seed: u64) -> f64 {
    let op = Operand::new(m, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..restarts)
        .map(|_| {
            let (u, v) = random_start(&mut rng, d, traceless);
            ascend_from(&op, u, v, traceless).value
        })
        .fold(0.0, f64::max)
}

fn random_start(rng: &mut ChaCha8Rng, d: usize, traceless: bool) -> (CVector, CVector) {
    let u = random::unit_vector(rng, d);
    let mut v = random::unit_vector(rng, d);
    if traceless {
        v = orthonormalize_against(&v, &u).unwrap_or_else(|| other_direction(&u));
    }
    (u, v)
}

fn other_direction(u: &CVector) -> CVector {
    let d = u.len();
    (0..d)
        .find_map(|k| orthonormalize_against(&crate::qmat::basis_vector(d, k), u))
        .expect("d >= 2 leaves an orthogonal direction")
}

fn orthonormalize_against(v: &CVector, u: &CVector) -> Option<CVector> {
    let w = v - u * u.dotc(v);
    let n = w.norm();
    (n > 1e-12).then(|| w.unscale(n))
}

/// A superoperator matrix stored with its adjoint; both products then run
/// as column dot products.
struct Operand {
    m: CMatrix,
    m_adj: CMatrix,
    d: usize,
}

impl Operand {
    fn new(m: &CMatrix, d: usize) -> Self {
        Self {
            m: m.clone(),
            m_adj: m.adjoint(),
            d,
        }
    }

    /// `S(|u><v|)`.
    fn image(&self, u: &CVector, v: &CVector) -> CMatrix {
        unvec(&self.m_adj.ad_mul(&kron_vec(&v.conjugate(), u)), self.d)
    }

    /// `S^dag(W)`.
    fn pullback(&self, w: &CMatrix) -> CMatrix {
        unvec(&self.m.ad_mul(&vec_of(w)), self.d)
    }
}

#[cfg(test)]
fn image(m: &CMatrix, d: usize, u: &CVector, v: &CVector) -> CMatrix {
    Operand::new(m, d).image(u, v)
}

/// Partial isometry `W` with `Re tr(W^dag Y) = ||Y||_1`, returned with
/// `||Y||_1`.
fn polar_factor(y: &CMatrix) -> (CMatrix, f64) {
    let svd = y.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let tol = svd.singular_values.max() * 1e-14;
    let mut w = CMatrix::zeros(y.nrows(), y.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            w += u.column(k) * v_t.row(k);
        }
    }
    (w, svd.singular_values.sum())
}

struct AscentResult {
    value: f64,
    u: CVector,
    v: CVector,
}

fn ascend_from(op: &Operand, mut u: CVector, mut v: CVector, traceless: bool) -> AscentResult {
    let (mut w, mut value) = polar_factor(&op.image(&u, &v));
    let mut best = (value, u.clone(), v.clone());
    for _ in 0..60 {
        let previous = value;
        let z = op.pullback(&w);
        let mut a = &z * &v;
        if traceless {
            a -= &v * v.dotc(&a);
        }
        let na = a.norm();
        if na > 1e-300 {
            u = a.unscale(na);
        }
        (w, _) = polar_factor(&op.image(&u, &v));
        let z = op.pullback(&w);
        let mut b = z.adjoint() * &u;
        if traceless {
            b -= &u * u.dotc(&b);
        }
        let nb = b.norm();
        if nb > 1e-300 {
            v = b.unscale(nb);
        }
        (w, value) = polar_factor(&op.image(&u, &v));
        if value > best.0 {
            best = (value, u.clone(), v.clone());
        }
        if value - previous <= 1e-6 * value.max(1e-300) {
            break;
        }
    }
    AscentResult {
        value: best.0,
        u: best.1,
        v: best.2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayOptions {
    /// Safety margin subtracted from the negated spectral abscissa.
    pub epsilon_alpha: f64,
    /// Multiplier applied to the grid maximum.
    pub slack: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            epsilon_alpha: 1e-6,
            slack: 1.05,
            restarts: 1,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPair {
    pub k: f64,
    pub alpha: f64,
}

/// `n` evenly spaced points on `[t0, t1]`.
pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n)
            .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Default verification grid: 200 points on `[0, 20]`.
pub fn default_decay_grid() -> Vec<f64> {
    linspace(0.0, 20.0, 200)
}

/// Constructive `(K, alpha)` with `||exp(R t)|| <= K exp(-alpha t)` on the
/// grid (and at `t = 0`), from [`exp_norm_profile`].
pub fn decay_pair(r: &TracelessRestriction, time_grid: &[f64], opts: &DecayOptions) -> Result<DecayPair> {
    let abscissa = r.abscissa()?;
    let alpha = -abscissa - opts.epsilon_alpha;
    if !(abscissa < 0.0 && alpha > 0.0) {
        return Err(Error::NotHurwitz { abscissa });
    }
    let mut times: Vec<f64> = time_grid.to_vec();
    times.push(0.0);
    let worst = exp_norm_profile(r, &times, opts.restarts, opts.seed)?
        .into_iter()
        .map(|(t, n)| n * (alpha * t).exp())
        .fold(0.0, f64::max);
    Ok(DecayPair {
        k: opts.slack * worst,
        alpha,
    })
}

/// `(t, estimate of ||exp(R t)||)` over the sorted, deduplicated grid.
///
/// Exponentials are accumulated step by step (one `expm` per distinct step
/// length); each norm estimate is warm started from the optimiser of the
/// previous point plus `restarts` seeded random starts.
pub fn exp_norm_profile(r: &TracelessRestriction, grid: &[f64], restarts: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if let Some(&t) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("time grid contains {t}")));
    }
    let mut times: Vec<f64> = grid.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = crate::qmat::identity(r.dim());
    let mut step: Option<(f64, CMatrix)> = None;
    let mut last_t = 0.0;
    let mut warm: Option<(CVector, CVector)> = None;
    let mut out = Vec::with_capacity(times.len());
    for &t in &times {
        let dt = t - last_t;
        if dt > 0.0 {
            let reuse = matches!(&step, Some((h, _)) if (h - dt).abs() <= 1e-12 * dt);
            if !reuse {
                step = Some((dt, expm(&r.matrix.scale(dt))));
            }
            e = &e * &step.as_ref().expect("step set above").1;
        }
        last_t = t;
        let n = match (r.operator_dim, r.lift_map(&e)) {
            (Some(d), Some(lifted)) => {
                let op = Operand::new(&lifted, d);
                let mut starts: Vec<(CVector, CVector)> = warm.take().into_iter().collect();
                starts.extend((0..restarts).map(|_| random_start(&mut rng, d, true)));
                let best = starts
                    .into_iter()
                    .map(|(u, v)| ascend_from(&op, u, v, true))
                    .max_by(|a, b| a.value.total_cmp(&b.value))
                    .expect("at least one start");
                warm = Some((best.u, best.v));
                best.value
            }
            _ => norm_2(&e),
        };
        out.push((t, n));
    }
    Ok(out)
}

/// Everything the persistent-noise error bound needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCertificate {
    pub gamma: f64,
    pub kernel_dim: usize,
    pub steady_state: Option<DensityMatrix>,
    pub is_unique_density_steady: bool,
    /// `alpha` of the unit-gain feedback generator.
    pub abscissa_alpha: f64,
    pub prefactor_k: f64,
    pub noise_norm_estimate: f64,
    pub noise_norm_upper: f64,
    /// `K * noise_norm_upper / (gamma * alpha)`.
    pub bound_value: f64,
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub decay: DecayOptions,
    pub decay_grid: Vec<f64>,
    pub noise_restarts: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            decay: DecayOptions::default(),
            decay_grid: default_decay_grid(),
            noise_restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Hypothesis checks without the decay estimate.
pub fn check_hypotheses(p: &FeedbackProtocol) -> Result<SteadyState> {
    unique_density_steady(&p.unit_generator())
}

pub fn certify(p: &FeedbackProtocol, noise: &LindbladGenerator) -> Result<SpectralCertificate> {
    certify_with(p, noise, &CertifyOptions::default())
}

pub fn certify_with(
    p: &FeedbackProtocol,
    noise: &LindbladGenerator,
    opts: &CertifyOptions,
) -> Result<SpectralCertificate> {
    if noise.dim() != p.dim() {
        return Err(Error::Dimension(format!(
            "noise generator acts on dimension {}, protocol on {}",
            noise.dim(),
            p.dim()
        )));
    }
    let unit = p.unit_generator();
    let steady = unique_density_steady(&unit)?;
    if !steady.unique {
        return Err(Error::NotHurwitz {
            abscissa: steady.restricted_abscissa,
        });
    }
    let restriction = restrict_traceless(&unit);
    let pair = decay_pair(&restriction, &opts.decay_grid, &opts.decay)?;
    Ok(assemble(p.gamma(), &steady, pair, noise_norms(noise, opts.noise_restarts)))
}

/// Certificate for a different gain from already computed unit-gain data.
pub fn assemble(gamma: f64, steady: &SteadyState, pair: DecayPair, noise: NormSandwich) -> SpectralCertificate {
    SpectralCertificate {
        gamma,
        kernel_dim: steady.kernel_dim,
        steady_state: steady.state.clone(),
        is_unique_density_steady: steady.unique,
        abscissa_alpha: pair.alpha,
        prefactor_k: pair.k,
        noise_norm_estimate: noise.lower,
        noise_norm_upper: noise.upper,
        bound_value: pair.k * noise.upper / (gamma * pair.alpha),
    }
}

pub fn noise_norms(noise: &LindbladGenerator, restarts: usize) -> NormSandwich {
    if noise.is_zero() {
        NormSandwich { lower: 0.0, upper: 0.0 }
    } else {
        induced_trace_norm_estimate(Superop::Generator(noise), restarts)
    }
}

impl SpectralCertificate {
    /// `key: value` lines.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gamma: {:.17e}", self.gamma);
        let _ = writeln!(s, "kernel_dim: {}", self.kernel_dim);
        let _ = writeln!(s, "is_unique_density_steady: {}", self.is_unique_density_steady);
        let _ = writeln!(s, "abscissa_alpha: {:.17e}", self.abscissa_alpha);
        let _ = writeln!(s, "prefactor_K: {:.17e}", self.prefactor_k);
        let _ = writeln!(s, "noise_norm_estimate: {:.17e}", self.noise_norm_estimate);
        let _ = writeln!(s, "noise_norm_upper: {:.17e}", self.noise_norm_upper);
        let _ = writeln!(s, "bound_value: {:.17e}", self.bound_value);
        if let Some(state) = &self.steady_state {
            let purity = state.purity();
            let _ = writeln!(s, "steady_state_purity: {purity:.17e}");
        }
        s
    }
}

/// Trace of the identity-direction contribution `tr(L(I))/d`.
pub fn identity_direction_trace(g: &LindbladGenerator) -> Complex64 {
    let d = g.dim();
    trace(&g.apply(&crate::qmat::identity(d))) / c(d as f64, 0.0)
}
