//! Coherent feedback protocols and the rotating frame of the plant
//! Hamiltonian.
//!
//! A [`FeedbackProtocol`] is an interaction Hamiltonian `H_I(0)` on the
//! plant ⊗ controller space, a list of couplings acting on the controller
//! only, a gain `gamma`, and the controller state that completes the target
//! steady state `|φ0><φ0| ⊗ ρ_C`. Operators are stored at unit gain; the
//! gain is applied on demand (`H -> γH`, `L -> √γ L`), so changing `gamma`
//! leaves the unit-gain spectral data bit-for-bit unchanged.
//!
//! The time-dependent interaction is `H_I(t) = U_P(t) H_I(0) U_P(t)^dag` with
//! `U_P(t) = exp(-i (H_P ⊗ I_C) t)`, evaluated through a [`FrameMap`] that
//! diagonalises `H_P ⊗ I_C` once.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::liouville::{embed_controller, LindbladGenerator};
use crate::qmat::{
    basis_vector, c, eig_hermitian, gram_deviation, identity, kron, kron_vec, outer, partial_trace,
    projector, CMatrix, CVector, DensityMatrix, HermitianEigen, HermitianMatrix, Subsystem,
};

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FeedbackProtocol {
    d_p: usize,
    d_c: usize,
    gamma: f64,
    phi0: CVector,
    plant_basis: Vec<CVector>,
    controller_basis: Vec<CVector>,
    unit_interaction: HermitianMatrix,
    unit_controller_couplings: Vec<CMatrix>,
    controller_state: DensityMatrix,
}

/// Plant-space basis in label order `|0>, |1>, ..., |d-1>`.
///
/// Label `k` sits at raw index `d - 1 - k`, which for `d = 2^n` reproduces
/// [`crate::qmat::qubit_ket`] on every binary label (`|00>, |01>, |10>, |11>`
/// for two qubits).
pub fn computational_basis(d: usize) -> Vec<CVector> {
    (0..d).map(|k| basis_vector(d, d - 1 - k)).collect()
}

/// Orthonormal basis of `C^d` whose first element is `phi0`, completed by
/// Gram–Schmidt over [`computational_basis`].
pub fn complete_basis(phi0: &CVector) -> Result<Vec<CVector>> {
    let d = phi0.len();
    check_unit(phi0)?;
    let mut basis = vec![phi0.clone()];
    for candidate in computational_basis(d) {
        if basis.len() == d {
            break;
        }
        let mut v = candidate;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let overlap = b.dotc(&v);
                v -= b * overlap;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v.unscale(norm));
        }
    }
    Ok(basis)
}

fn check_unit(v: &CVector) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidArgument(format!("vector has norm {n}, expected 1")));
    }
    Ok(())
}

/// Builds the dark-state design with one controller coupling.
///
/// With plant basis `{ν_p^k}` (`ν_p^0 = φ0`) and controller basis
/// `{ν_c^0, ν_c^1}`:
///
/// ```text
/// L_C     = √γ |ν_c^0><ν_c^1|
/// H_I(0)  = γ ( Σ_{k=0}^{d-2} |ν_p^k, ν_c^1><ν_p^{k+1}, ν_c^0|
///             + Σ_{k=1}^{d-1} |ν_p^k, ν_c^0><ν_p^{k-1}, ν_c^1| )
/// ```
///
/// `plant_basis` defaults to [`complete_basis`] of `phi0`; the controller
/// basis defaults to `|0>, |1>` in the qubit convention of [`crate::qmat`].
pub fn build_design(
    phi0: &CVector,
    plant_basis: Option<Vec<CVector>>,
    gamma: f64,
) -> Result<FeedbackProtocol> {
    let controller_basis = vec![
        crate::qmat::qubit_ket("0").expect("valid label"),
        crate::qmat::qubit_ket("1").expect("valid label"),
    ];
    build_design_with_controller(phi0, plant_basis, controller_basis, gamma)
}

pub fn build_design_with_controller(
    phi0: &CVector,
    plant_basis: Option<Vec<CVector>>,
    controller_basis: Vec<CVector>,
    gamma: f64,
) -> Result<FeedbackProtocol> {
    let d_p = phi0.len();
    if d_p < 2 {
        return Err(Error::InvalidArgument(format!(
            "the design needs a plant of dimension >= 2, got {d_p}"
        )));
    }
    check_gamma(gamma)?;
    check_unit(phi0)?;
    let plant_basis = match plant_basis {
        Some(b) => b,
        None => complete_basis(phi0)?,
    };
    if plant_basis.len() != d_p || plant_basis.iter().any(|v| v.len() != d_p) {
        return Err(Error::Dimension(format!(
            "plant basis must hold {d_p} vectors of length {d_p}"
        )));
    }
    let deviation = gram_deviation(&plant_basis);
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let first_gap = (&plant_basis[0] - phi0).norm();
    if first_gap > ORTHONORMAL_TOL {
        return Err(Error::InvalidArgument(format!(
            "first plant basis vector must equal phi0 (distance {first_gap:e})"
        )));
    }
    if controller_basis.len() != 2 || controller_basis.iter().any(|v| v.len() != 2) {
        return Err(Error::Dimension("the design uses a two-level controller".into()));
    }
    let deviation = gram_deviation(&controller_basis);
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }

    let (c0, c1) = (&controller_basis[0], &controller_basis[1]);
    let joint = kron_vec;
    let n = 2 * d_p;
    let mut h = CMatrix::zeros(n, n);
    for k in 0..d_p - 1 {
        h += outer(&joint(&plant_basis[k], c1), &joint(&plant_basis[k + 1], c0));
    }
    for k in 1..d_p {
        h += outer(&joint(&plant_basis[k], c0), &joint(&plant_basis[k - 1], c1));
    }
    let lowering = outer(c0, c1);
    Ok(FeedbackProtocol {
        d_p,
        d_c: 2,
        gamma,
        phi0: phi0.clone(),
        plant_basis,
        controller_basis: controller_basis.clone(),
        unit_interaction: HermitianMatrix::new(h)?,
        unit_controller_couplings: vec![lowering],
        controller_state: DensityMatrix::pure(c0)?,
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gain must be positive, got {gamma}")));
    }
    Ok(())
}

impl FeedbackProtocol {
    /// A protocol from user-supplied unit-gain operators.
    ///
    /// `interaction` acts on the composite space; `controller_couplings` act
    /// on the controller factor and are embedded as `I_P ⊗ L`.
    pub fn custom(
        phi0: &CVector,
        d_c: usize,
        interaction: HermitianMatrix,
        controller_couplings: Vec<CMatrix>,
        controller_state: DensityMatrix,
        gamma: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        check_unit(phi0)?;
        let d_p = phi0.len();
        if interaction.dim() != d_p * d_c {
            return Err(Error::Dimension(format!(
                "interaction Hamiltonian is {0}x{0}, expected {1}x{1}",
                interaction.dim(),
                d_p * d_c
            )));
        }
        if controller_state.dim() != d_c {
            return Err(Error::Dimension(format!(
                "controller state is {0}x{0}, expected {d_c}x{d_c}",
                controller_state.dim()
            )));
        }
        for (k, l) in controller_couplings.iter().enumerate() {
            if l.shape() != (d_c, d_c) {
                return Err(Error::Dimension(format!(
                    "controller coupling {k} is {}x{}, expected {d_c}x{d_c}",
                    l.nrows(),
                    l.ncols()
                )));
            }
        }
        Ok(Self {
            d_p,
            d_c,
            gamma,
            phi0: phi0.clone(),
            plant_basis: complete_basis(phi0)?,
            controller_basis: (0..d_c).map(|k| basis_vector(d_c, d_c - 1 - k)).collect(),
            unit_interaction: interaction,
            unit_controller_couplings: controller_couplings,
            controller_state,
        })
    }

    /// Same operators, different gain.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    pub fn plant_dim(&self) -> usize {
        self.d_p
    }

    pub fn controller_dim(&self) -> usize {
        self.d_c
    }

    pub fn dim(&self) -> usize {
        self.d_p * self.d_c
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn phi0(&self) -> &CVector {
        &self.phi0
    }

    pub fn plant_basis(&self) -> &[CVector] {
        &self.plant_basis
    }

    pub fn controller_basis(&self) -> &[CVector] {
        &self.controller_basis
    }

    pub fn controller_state(&self) -> &DensityMatrix {
        &self.controller_state
    }

    /// `H_I(0)` at unit gain.
    pub fn unit_interaction(&self) -> &HermitianMatrix {
        &self.unit_interaction
    }

    /// `H_I(0)` at the protocol gain.
    pub fn h_i0(&self) -> HermitianMatrix {
        self.unit_interaction.scale(self.gamma)
    }

    /// Controller-factor couplings at the protocol gain.
    pub fn controller_couplings(&self) -> Vec<CMatrix> {
        let root = self.gamma.sqrt();
        self.unit_controller_couplings.iter().map(|l| l.scale(root)).collect()
    }

    /// Couplings embedded on the composite, `I_P ⊗ L_C,k`, at the protocol gain.
    pub fn couplings(&self) -> Vec<CMatrix> {
        self.controller_couplings()
            .iter()
            .map(|l| embed_controller(l, self.d_p))
            .collect()
    }

    /// `L_fb(0)` at unit gain.
    pub fn unit_generator(&self) -> LindbladGenerator {
        let couplings = self
            .unit_controller_couplings
            .iter()
            .map(|l| embed_controller(l, self.d_p))
            .collect();
        LindbladGenerator::new(self.dim(), Some(self.unit_interaction.clone()), couplings)
            .expect("protocol operators have consistent dimensions")
    }

    /// `γ L_fb(0)`.
    pub fn generator(&self) -> LindbladGenerator {
        LindbladGenerator::new(self.dim(), Some(self.h_i0()), self.couplings())
            .expect("protocol operators have consistent dimensions")
    }
}

/// Cached diagonalisation of `H_P ⊗ I_C` giving `U_P(t) = V e^{-iΛt} V^dag`.
#[derive(Debug, Clone)]
pub struct FrameMap {
    h_frame: HermitianMatrix,
    eigen: HermitianEigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `U x U^dag`
    Forward,
    /// `U^dag x U`
    Inverse,
}

impl FrameMap {
    pub fn new(h_p: &HermitianMatrix, d_c: usize) -> Self {
        let h_frame = HermitianMatrix::hermitize(&kron(h_p.matrix(), &identity(d_c)));
        let eigen = eig_hermitian(&h_frame);
        Self { h_frame, eigen }
    }

    pub fn dim(&self) -> usize {
        self.h_frame.dim()
    }

    pub fn h_frame(&self) -> &HermitianMatrix {
        &self.h_frame
    }

    pub fn eigen(&self) -> &HermitianEigen {
        &self.eigen
    }

    /// Phases `e^{-i λ_j t}` in the eigenbasis.
    pub fn phases(&self, t: f64) -> Vec<Complex64> {
        self.eigen
            .values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * t))
            .collect()
    }

    /// `U_P(t) = exp(-i (H_P ⊗ I_C) t)`.
    pub fn unitary(&self, t: f64) -> CMatrix {
        self.eigen.map(|l| Complex64::from_polar(1.0, -l * t))
    }

    pub fn conjugate(&self, x: &CMatrix, t: f64, direction: Direction) -> CMatrix {
        let u = self.unitary(t);
        match direction {
            Direction::Forward => &u * x * u.adjoint(),
            Direction::Inverse => u.adjoint() * x * &u,
        }
    }
}

/// `U_P(t) x U_P(t)^dag` or its inverse.
pub fn frame_conjugate(f: &FrameMap, x: &CMatrix, t: f64, direction: Direction) -> CMatrix {
    f.conjugate(x, t, direction)
}

/// `H_I(t) = U_P(t) H_I(0) U_P(t)^dag` at the protocol gain.
pub fn h_i_at(p: &FeedbackProtocol, f: &FrameMap, t: f64) -> HermitianMatrix {
    HermitianMatrix::hermitize(&f.conjugate(p.h_i0().matrix(), t, Direction::Forward))
}

/// The target steady state `|φ0><φ0| ⊗ ρ_C`.
pub fn steady_candidate(p: &FeedbackProtocol) -> DensityMatrix {
    DensityMatrix::new_unchecked(kron(&projector(&p.phi0), p.controller_state.matrix()))
}

/// Checks that `op` has the form `I_P ⊗ B` and returns `B`.
pub fn controller_block(op: &CMatrix, dims: (usize, usize), tol: f64) -> Option<CMatrix> {
    let block = partial_trace(op, dims, Subsystem::Plant).ok()?.unscale(dims.0 as f64);
    let rebuilt = embed_controller(&block, dims.0);
    (crate::qmat::max_abs_diff(&rebuilt, op) <= tol).then_some(block)
}

/// `-i H_I(0) - ½ Σ (I_P ⊗ L^dag L)` at the protocol gain.
pub fn effective_nonhermitian(p: &FeedbackProtocol) -> CMatrix {
    let mut k = p.h_i0().matrix() * c(0.0, -1.0);
    for l in p.couplings() {
        k -= (l.adjoint() * &l).scale(0.5);
    }
    k
}
