//! Dense complex-matrix kernel.
//!
//! Everything above this module speaks in terms of [`CMatrix`]: operators on
//! the plant, the controller and the composite, superoperators in vectorized
//! form, and Kraus operators. The kernel is deliberately small: tensor
//! products, partial traces, the matrix exponential, two eigensolvers and the
//! trace norm.
//!
//! # Conventions
//!
//! * Composite spaces are ordered plant first, controller second. An index
//!   pair `(i_p, i_c)` flattens to `i_p * d_c + i_c`.
//! * Single-qubit kets follow `|0> = (0, 1)^T`, `|1> = (1, 0)^T`. This is the
//!   reverse of the usual computational ordering, and it is what makes the
//!   explicit matrices of the two-qubit example come out right. Use
//!   [`qubit_ket`] instead of indexing raw basis vectors.

use nalgebra::storage::RawStorage;
use nalgebra::{DMatrix, DVector, Dim, Matrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Numerical tolerances used when validating matrix-valued inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `max|A - A^dag|` allowed, relative to `max|A|`.
    pub hermiticity: f64,
    /// `|tr(rho) - 1|` allowed for density matrices.
    pub trace: f64,
    /// Smallest eigenvalue allowed for density matrices is `-psd`.
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-12,
            trace: 1e-10,
            psd: 1e-10,
        }
    }
}

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Entrywise maximum modulus.
pub fn max_abs<R: Dim, C: Dim, S: RawStorage<Complex64, R, C>>(a: &Matrix<Complex64, R, C, S>) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Entrywise max-abs difference; panics on shape mismatch.
pub fn max_abs_diff<R, C, S1, S2>(a: &Matrix<Complex64, R, C, S1>, b: &Matrix<Complex64, R, C, S2>) -> f64
where
    R: Dim,
    C: Dim,
    S1: RawStorage<Complex64, R, C>,
    S2: RawStorage<Complex64, R, C>,
{
    assert_eq!(a.shape(), b.shape(), "max_abs_diff: shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()))
}

/// Tolerance-parameterized equality. Shapes must agree.
pub fn approx_eq(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    a.shape() == b.shape() && max_abs_diff(a, b) <= tol
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Ket for a string of qubit labels, e.g. `"00"` or `"101"`.
///
/// Uses `|0> = (0,1)^T` and `|1> = (1,0)^T` on every factor.
pub fn qubit_ket(bits: &str) -> Result<CVector> {
    if bits.is_empty() {
        return Err(Error::InvalidArgument("empty qubit label".into()));
    }
    let mut out = CMatrix::from_element(1, 1, ONE);
    for ch in bits.chars() {
        let single = match ch {
            '0' => CMatrix::from_column_slice(2, 1, &[ZERO, ONE]),
            '1' => CMatrix::from_column_slice(2, 1, &[ONE, ZERO]),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "qubit label {bits:?} contains {other:?}"
                )))
            }
        };
        out = kron(&out, &single);
    }
    Ok(CVector::from_column_slice(out.as_slice()))
}

/// `|u><v|`.
pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

/// `|v><v|`.
pub fn projector(v: &CVector) -> CMatrix {
    outer(v, v)
}

/// Standard basis vector `e_k` of length `n`.
pub fn basis_vector(n: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[k] = ONE;
    v
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

/// `a b - b a`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Kronecker product: `(a ⊗ b)[i*p + k, j*q + l] = a[i,j] b[k,l]` for `b` of
/// shape `p x q`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |r, col| {
        a[(r / br, col / bc)] * b[(r % br, col % bc)]
    })
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    CVector::from_fn(a.len() * b.len(), |r, _| a[r / b.len()] * b[r % b.len()])
}

/// Left-to-right Kronecker product of a list of factors.
pub fn kron_all(factors: &[CMatrix]) -> CMatrix {
    factors
        .iter()
        .fold(CMatrix::from_element(1, 1, ONE), |acc, f| kron(&acc, f))
}

/// Which factor of a bipartite plant ⊗ controller space to trace out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Plant,
    Controller,
}

/// Partial trace over one factor of a plant ⊗ controller operator.
pub fn partial_trace(x: &CMatrix, dims: (usize, usize), over: Subsystem) -> Result<CMatrix> {
    let (dp, dc) = dims;
    let n = dp * dc;
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!(
            "partial_trace: operator is {}x{}, dims ({dp}, {dc}) require {n}x{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(match over {
        Subsystem::Controller => CMatrix::from_fn(dp, dp, |i, j| {
            (0..dc).map(|k| x[(i * dc + k, j * dc + k)]).sum()
        }),
        Subsystem::Plant => CMatrix::from_fn(dc, dc, |i, j| {
            (0..dp).map(|k| x[(k * dc + i, k * dc + j)]).sum()
        }),
    })
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_1(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn norm_2(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m: f64, &s| m.max(s))
}

/// Matrix exponential by scaling and squaring with diagonal Padé
/// approximants of degree 3..13 (the degree is chosen from the 1-norm).
pub fn expm(a: &CMatrix) -> CMatrix {
    assert!(a.is_square(), "expm: matrix must be square");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    const THETA: [(usize, f64); 4] = [
        (3, 1.495_585_217_958_292e-2),
        (5, 2.539_398_330_063_23e-1),
        (7, 9.504_178_996_162_932e-1),
        (9, 2.097_847_961_257_068),
    ];
    const THETA_13: f64 = 5.371_920_351_148_152;

    let a_norm = norm_1(a);
    if a_norm == 0.0 {
        return identity(n);
    }
    for &(m, theta) in &THETA {
        if a_norm <= theta {
            return pade(a, m);
        }
    }
    let s = ((a_norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a.scale(0.5_f64.powi(s));
    let mut r = pade(&scaled, 13);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17_297_280.0,
            8_648_640.0,
            1_995_840.0,
            277_200.0,
            25_200.0,
            1_512.0,
            56.0,
            1.0,
        ],
        9 => &[
            17_643_225_600.0,
            8_821_612_800.0,
            2_075_673_600.0,
            302_702_400.0,
            30_270_240.0,
            2_162_160.0,
            110_880.0,
            3_960.0,
            90.0,
            1.0,
        ],
        13 => &[
            64_764_752_532_480_000.0,
            32_382_376_266_240_000.0,
            7_771_770_303_897_600.0,
            1_187_353_796_428_800.0,
            129_060_195_264_000.0,
            10_559_470_521_600.0,
            670_442_572_800.0,
            33_522_128_640.0,
            1_323_241_920.0,
            40_840_800.0,
            960_960.0,
            16_380.0,
            182.0,
            1.0,
        ],
        _ => unreachable!("unsupported Padé degree {m}"),
    }
}

fn pade(a: &CMatrix, m: usize) -> CMatrix {
    let n = a.nrows();
    let b = pade_coefficients(m);
    let id = identity(n);
    let a2 = a * a;
    let (u, v) = if m == 13 {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let inner_u = &a6 * (a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]));
        let u = a * (inner_u
            + a6.scale(b[7])
            + a4.scale(b[5])
            + a2.scale(b[3])
            + id.scale(b[1]));
        let inner_v = &a6 * (a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]));
        let v = inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + id.scale(b[0]);
        (u, v)
    } else {
        let mut u_poly = id.scale(b[1]);
        let mut v_poly = id.scale(b[0]);
        let mut power = id.clone();
        for k in 1..=(m / 2) {
            power = &power * &a2;
            u_poly += power.scale(b[2 * k + 1]);
            v_poly += power.scale(b[2 * k]);
        }
        (a * u_poly, v_poly)
    };
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("expm: singular Padé denominator")
}

/// A matrix validated as Hermitian within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().hermiticity)
    }

    pub fn with_tolerance(m: CMatrix, rel_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let deviation = max_abs_diff(&m, &m.adjoint());
        if deviation > rel_tol * max_abs(&m) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + m^dag)/2` without checking.
    pub fn hermitize(m: &CMatrix) -> Self {
        Self((m + m.adjoint()).scale(0.5))
    }

    pub fn zeros(n: usize) -> Self {
        Self(zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }
}

impl AsRef<CMatrix> for HermitianMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// `h = V diag(values) V^dag` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMatrix {
        let d = CVector::from_iterator(self.values.len(), self.values.iter().map(|&x| c(x, 0.0)));
        &self.vectors * CMatrix::from_diagonal(&d) * self.vectors.adjoint()
    }

    /// `V f(Λ) V^dag` for a complex scalar function of the eigenvalues.
    pub fn map(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let fj = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are sorted ascending; each eigenvector is rephased so that its
/// first entry of non-negligible modulus is real and positive.
pub fn eig_hermitian(h: &HermitianMatrix) -> HermitianEigen {
    let n = h.dim();
    let eig = nalgebra::SymmetricEigen::new(h.matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .find(|z| z.norm() > 1e-12)
            .copied()
            .unwrap_or(ONE);
        let phase = pivot.conj() / pivot.norm();
        for i in 0..n {
            vectors[(i, dst)] = col[i] * phase;
        }
    }
    HermitianEigen { values, vectors }
}

/// Eigenvalues of a general square matrix via a Schur decomposition.
pub fn eig_general(m: &CMatrix) -> Result<Vec<Complex64>> {
    assert!(m.is_square(), "eig_general: matrix must be square");
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().all(|z| z.im == 0.0) {
        let re = m.map(|z| z.re);
        for eps in SCHUR_LADDER {
            if let Some(s) = nalgebra::Schur::try_new(re.clone(), eps, 2_000) {
                return Ok(s.complex_eigenvalues().iter().copied().collect());
            }
        }
    }
    if let Some(values) = complex_schur_eigenvalues(m) {
        return Ok(values);
    }
    // Highly degenerate spectra can stall deflation; a fixed unitary
    // similarity leaves the eigenvalues alone but scrambles that structure.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5c_b0);
    let q = random::unitary(&mut rng, m.nrows());
    complex_schur_eigenvalues(&(q.adjoint() * m * &q)).ok_or(Error::NoConvergence)
}

/// Deflation tolerances tried in order.
const SCHUR_LADDER: [f64; 4] = [f64::EPSILON, 1e-14, 1e-13, 1e-12];

fn complex_schur_eigenvalues(m: &CMatrix) -> Option<Vec<Complex64>> {
    SCHUR_LADDER.iter().find_map(|&eps| {
        nalgebra::Schur::try_new(m.clone(), eps, 2_000).map(|s| s.unpack().1.diagonal().iter().copied().collect())
    })
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(m: &CMatrix) -> Result<f64> {
    Ok(eig_general(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Sum of singular values.
///
/// Hermitian inputs use the eigenvalue moduli directly; everything else goes
/// through an SVD.
pub fn trace_norm(x: &CMatrix) -> f64 {
    assert!(x.is_square(), "trace_norm: matrix must be square");
    let scale = max_abs(x);
    if scale == 0.0 {
        return 0.0;
    }
    if max_abs_diff(x, &x.adjoint()) <= 1e-14 * scale {
        let h = HermitianMatrix::hermitize(x);
        return eig_hermitian(&h).values.iter().map(|v| v.abs()).sum();
    }
    x.singular_values().sum()
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerances(m, &Tolerances::default())
    }

    pub fn with_tolerances(m: CMatrix, tol: &Tolerances) -> Result<Self> {
        let h = HermitianMatrix::with_tolerance(m, tol.hermiticity.max(1e-12))?;
        let tr = trace(h.matrix());
        if (tr - ONE).norm() > tol.trace {
            return Err(Error::NotDensity(format!("trace = {tr}")));
        }
        let min = eig_hermitian(&h).values.first().copied().unwrap_or(0.0);
        if min < -tol.psd {
            return Err(Error::NotDensity(format!("minimum eigenvalue = {min:e}")));
        }
        Ok(Self(h.into_inner()))
    }

    /// Wraps a matrix without validation; callers must guarantee the invariants.
    pub fn new_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("state vector has norm {norm}")));
        }
        Ok(Self(projector(psi)))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(identity(n).scale(1.0 / n as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eig_hermitian(&HermitianMatrix::hermitize(&self.0)).values[0]
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        Self(kron(&self.0, &other.0))
    }

    /// Half the trace norm of the difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        0.5 * trace_norm(&(&self.0 - &other.0))
    }
}

impl AsRef<CMatrix> for DensityMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// Orthonormality defect `max|G - I|` of the columns of `vectors`.
pub fn gram_deviation(vectors: &[CVector]) -> f64 {
    let mut dev = 0.0_f64;
    for (i, u) in vectors.iter().enumerate() {
        for (j, v) in vectors.iter().enumerate() {
            let g = u.dotc(v);
            let target = if i == j { ONE } else { ZERO };
            dev = dev.max((g - target).norm());
        }
    }
    dev
}

/// Seeded random matrices and states for tests, sweeps and oracles.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> HermitianMatrix {
        HermitianMatrix::hermitize(&gaussian(rng, n, n))
    }

    /// Haar-random unitary (QR of a Ginibre matrix with phase correction).
    pub fn unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
        let qr = gaussian(rng, n, n).qr();
        let (mut q, r) = qr.unpack();
        for j in 0..n {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
            for i in 0..n {
                q[(i, j)] *= phase;
            }
        }
        q
    }

    pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
        let g = gaussian(rng, n, 1);
        let v = CVector::from_column_slice(g.as_slice());
        let norm = v.norm();
        v.unscale(norm)
    }

    /// Full-rank random density matrix (Ginibre ensemble).
    pub fn density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityMatrix {
        let g = gaussian(rng, n, n);
        let m = &g * g.adjoint();
        let tr = trace(&m).re;
        DensityMatrix::new_unchecked(HermitianMatrix::hermitize(&m.unscale(tr)).into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kron_identity_and_pauli() {
        assert!(approx_eq(&kron(&identity(2), &identity(2)), &identity(4), 0.0));
        let xx = kron(&sigma_x(), &sigma_x());
        let anti = CMatrix::from_fn(4, 4, |i, j| if i + j == 3 { ONE } else { ZERO });
        assert!(approx_eq(&xx, &anti, 0.0));
    }

    #[test]
    fn kron_index_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random::gaussian(&mut rng, 2, 3);
        let b = random::gaussian(&mut rng, 3, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..3 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 3 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_mixed_product_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Vec<CMatrix> = (0..4).map(|_| random::gaussian(&mut rng, 2, 2)).collect();
        let lhs = kron(&m[0], &m[1]) * kron(&m[2], &m[3]);
        let rhs = kron(&(&m[0] * &m[2]), &(&m[1] * &m[3]));
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn qubit_basis_convention() {
        let k0 = qubit_ket("0").unwrap();
        let k1 = qubit_ket("1").unwrap();
        assert_eq!(k0.as_slice(), &[ZERO, ONE]);
        assert_eq!(k1.as_slice(), &[ONE, ZERO]);
        // |00> is the last raw basis vector of C^4.
        assert_eq!(qubit_ket("00").unwrap(), basis_vector(4, 3));
        assert_eq!(qubit_ket("11").unwrap(), basis_vector(4, 0));
        // sigma_z |0> = -|0>.
        assert_eq!(sigma_z() * &k0, -k0.clone());
        assert!(qubit_ket("0a").is_err());
    }

    #[test]
    fn partial_trace_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random::gaussian(&mut rng, 4, 4);
        let b = random::gaussian(&mut rng, 2, 2);
        let ab = kron(&a, &b);
        let over_c = partial_trace(&ab, (4, 2), Subsystem::Controller).unwrap();
        assert!(max_abs_diff(&over_c, &(&a * trace(&b))) < 1e-12);
        let over_p = partial_trace(&ab, (4, 2), Subsystem::Plant).unwrap();
        assert!(max_abs_diff(&over_p, &(&b * trace(&a))) < 1e-12);
    }

    #[test]
    fn partial_trace_maximally_mixed() {
        let x = identity(8).scale(1.0 / 8.0);
        let r = partial_trace(&x, (4, 2), Subsystem::Controller).unwrap();
        assert!(approx_eq(&r, &identity(4).scale(0.25), 1e-15));
    }

    #[test]
    fn partial_trace_bell_state_by_index_sum() {
        let psi = (qubit_ket("00").unwrap() + qubit_ket("11").unwrap()).unscale(2f64.sqrt());
        let rho = projector(&psi);
        // Index-summation oracle: r[i,j] = sum_k rho[(i,k),(j,k)].
        let mut oracle = CMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    oracle[(i, j)] += rho[(2 * i + k, 2 * j + k)];
                }
            }
        }
        let r = partial_trace(&rho, (2, 2), Subsystem::Controller).unwrap();
        assert!(approx_eq(&r, &oracle, 1e-15));
        assert!(approx_eq(&r, &identity(2).scale(0.5), 1e-15));
    }

    #[test]
    fn partial_trace_dimension_error() {
        assert!(partial_trace(&identity(6), (4, 2), Subsystem::Controller).is_err());
    }

    #[test]
    fn expm_closed_forms() {
        assert!(approx_eq(&expm(&zeros(3)), &identity(3), 0.0));
        let rot = expm(&(sigma_x() * c(0.0, -std::f64::consts::FRAC_PI_2)));
        assert!(max_abs_diff(&rot, &(sigma_x() * c(0.0, -1.0))) < 1e-14);
    }

    #[test]
    fn expm_inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let g = random::gaussian(&mut rng, 8, 8);
            let m = g.scale(2.0 / norm_2(&g));
            let prod = expm(&m) * expm(&(-&m));
            assert!(max_abs_diff(&prod, &identity(8)) < 1e-10);
        }
    }

    #[test]
    fn expm_against_taylor_series_large_norm() {
        // Scaling-and-squaring branch vs. a long Taylor series on a scaled copy.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random::gaussian(&mut rng, 5, 5);
        let m = g.scale(12.0 / norm_1(&g));
        let small = m.scale(1.0 / 64.0);
        let mut term = identity(5);
        let mut sum = identity(5);
        for k in 1..40 {
            term = &term * &small / c(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..6 {
            sum = &sum * &sum;
        }
        let e = expm(&m);
        assert!(max_abs_diff(&e, &sum) < 1e-9 * max_abs(&sum));
    }

    #[test]
    fn expm_skew_hermitian_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random::hermitian(&mut rng, 8);
        let u = expm(&(h.matrix() * c(0.0, -3.0)));
        assert!(max_abs_diff(&(u.adjoint() * &u), &identity(8)) < 1e-10);
    }

    #[test]
    fn eig_hermitian_paulis() {
        let e = eig_hermitian(&HermitianMatrix::new(sigma_z()).unwrap());
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let xx = HermitianMatrix::new(kron(&sigma_x(), &sigma_x())).unwrap();
        let e = eig_hermitian(&xx);
        for (v, want) in e.values.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((v - want).abs() < 1e-13);
        }
    }

    #[test]
    fn eig_hermitian_reconstruction_and_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random::hermitian(&mut rng, 8);
        let e = eig_hermitian(&h);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(max_abs_diff(&e.reconstruct(), h.matrix()) < 1e-12 * max_abs(h.matrix()).max(1.0));
        assert!(max_abs_diff(&(e.vectors.adjoint() * &e.vectors), &identity(8)) < 1e-10);
        for col in e.vectors.column_iter() {
            let first = col.iter().find(|z| z.norm() > 1e-12).unwrap();
            assert!(first.im.abs() < 1e-14 && first.re > 0.0);
        }
    }

    #[test]
    fn hermitian_rejects_non_hermitian() {
        let mut m = sigma_x();
        m[(0, 1)] = c(2.0, 0.0);
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn eig_general_small_cases() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, c(2.0, 3.0)]));
        let mut ev = eig_general(&d).unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((ev[0] - ONE).norm() < 1e-14 && (ev[1] - c(2.0, 3.0)).norm() < 1e-14);
        let nil = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(eig_general(&nil).unwrap().iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn eig_general_residuals_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random::gaussian(&mut rng, 10, 10);
        let scale = norm_2(&m);
        for lam in eig_general(&m).unwrap() {
            // smallest singular value of (m - lam I) is the residual of the best eigenvector
            let shifted = &m - identity(10) * lam;
            let smin = shifted
                .svd(false, false)
                .singular_values
                .iter()
                .fold(f64::INFINITY, |a: f64, &b| a.min(b));
            assert!(smin <= 1e-8 * scale, "residual {smin}");
        }
    }

    #[test]
    fn trace_norm_basic() {
        assert!((trace_norm(&identity(4)) - 4.0).abs() < 1e-14);
        let rank_one = outer(&qubit_ket("0").unwrap(), &qubit_ket("1").unwrap());
        assert!((trace_norm(&rank_one) - 1.0).abs() < 1e-14);
        assert_eq!(trace_norm(&zeros(3)), 0.0);
    }

    #[test]
    fn trace_norm_difference_of_states_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random::density(&mut rng, 4);
            let b = random::density(&mut rng, 4);
            let d = trace_norm(&(a.matrix() - b.matrix()));
            assert!((0.0..=2.0 + 1e-12).contains(&d));
        }
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(identity(2).scale(0.5)).is_ok());
        assert!(DensityMatrix::new(identity(2)).is_err());
        assert!(DensityMatrix::new(sigma_z().scale(0.5) + identity(2).scale(0.5)).is_ok());
        let neg = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn eig_general_handles_degenerate_unitary_restriction() {
        let h = HermitianMatrix::new(kron_all(&[sigma_x(), sigma_x(), sigma_x()])).unwrap();
        let g = crate::liouville::make_generator(Some(h), vec![]).unwrap();
        let r = crate::spectra::restrict_traceless(&g);
        let eig = eig_general(&r.matrix).unwrap();
        assert_eq!(eig.len(), 63);
        // spectrum of -i[H, .] is {0, ±2i} for H with eigenvalues ±1
        assert!(eig.iter().all(|z| z.re.abs() < 1e-9 && ((z.im.abs() - 2.0).abs() < 1e-9 || z.im.abs() < 1e-9)));
    }
}
