//! Lindblad generators in structured and vectorized form.
//!
//! A [`LindbladGenerator`] stores a Hamiltonian and a list of coupling
//! operators and acts as
//!
//! ```text
//! L(X) = -i[H, X] + Σ_k ( L_k X L_k^dag - ½ L_k^dag L_k X - ½ X L_k^dag L_k )
//! ```
//!
//! The structured form is what the integrator uses (a handful of `d x d`
//! products per evaluation). The `d² x d²` matrix in the column-stacking
//! convention `vec(A X B) = (B^T ⊗ A) vec(X)` is built on demand and cached
//! for exponentials and spectral work.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::qmat::{c, expm, identity, kron, CMatrix, CVector, HermitianMatrix};

#[derive(Debug)]
pub struct LindbladGenerator {
    dim: usize,
    hamiltonian: Option<HermitianMatrix>,
    couplings: Vec<CMatrix>,
    // -iH - ½ Σ L^dag L
    effective: CMatrix,
    vectorized: OnceLock<CMatrix>,
}

impl Clone for LindbladGenerator {
    fn clone(&self) -> Self {
        let vectorized = OnceLock::new();
        if let Some(m) = self.vectorized.get() {
            let _ = vectorized.set(m.clone());
        }
        Self {
            dim: self.dim,
            hamiltonian: self.hamiltonian.clone(),
            couplings: self.couplings.clone(),
            effective: self.effective.clone(),
            vectorized,
        }
    }
}

/// A superoperator as a `d² x d²` matrix acting on column-stacked operators.
#[derive(Debug, Clone)]
pub struct VectorizedSuperop {
    pub dim: usize,
    pub matrix: CMatrix,
}

/// Column-stacking vectorization.
pub fn vec_of(x: &CMatrix) -> CVector {
    CVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// Builds `X -> -i[h, X] + Σ_k D[L_k](X)`. An absent Hamiltonian is zero.
pub fn make_generator(h: Option<HermitianMatrix>, couplings: Vec<CMatrix>) -> Result<LindbladGenerator> {
    let dim = match (&h, couplings.first()) {
        (Some(h), _) => h.dim(),
        (None, Some(l)) => l.nrows(),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "generator needs a Hamiltonian or at least one coupling to fix its dimension".into(),
            ))
        }
    };
    LindbladGenerator::new(dim, h, couplings)
}

impl LindbladGenerator {
    pub fn new(dim: usize, h: Option<HermitianMatrix>, couplings: Vec<CMatrix>) -> Result<Self> {
        if let Some(h) = &h {
            if h.dim() != dim {
                return Err(Error::Dimension(format!(
                    "Hamiltonian is {0}x{0}, generator dimension is {dim}",
                    h.dim()
                )));
            }
        }
        for (k, l) in couplings.iter().enumerate() {
            if l.shape() != (dim, dim) {
                return Err(Error::Dimension(format!(
                    "coupling {k} is {}x{}, generator dimension is {dim}",
                    l.nrows(),
                    l.ncols()
                )));
            }
        }
        let mut effective = CMatrix::zeros(dim, dim);
        if let Some(h) = &h {
            effective -= h.matrix() * c(0.0, 1.0);
        }
        for l in &couplings {
            effective -= (l.adjoint() * l).scale(0.5);
        }
        Ok(Self {
            dim,
            hamiltonian: h,
            couplings,
            effective,
            vectorized: OnceLock::new(),
        })
    }

    /// The zero generator on `C^dim`.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, None, Vec::new()).expect("zero generator is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> Option<&HermitianMatrix> {
        self.hamiltonian.as_ref()
    }

    pub fn couplings(&self) -> &[CMatrix] {
        &self.couplings
    }

    pub fn is_zero(&self) -> bool {
        self.hamiltonian
            .as_ref()
            .is_none_or(|h| h.matrix().iter().all(|z| *z == c(0.0, 0.0)))
            && self.couplings.iter().all(|l| l.iter().all(|z| *z == c(0.0, 0.0)))
    }

    /// Structured action on an operator.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        let mut out = &self.effective * x + x * self.effective.adjoint();
        for l in &self.couplings {
            out += l * x * l.adjoint();
        }
        out
    }

    /// The vectorized `d² x d²` matrix (computed once, then cached).
    pub fn matrix(&self) -> &CMatrix {
        self.vectorized.get_or_init(|| self.build_matrix())
    }

    pub fn vectorize(&self) -> VectorizedSuperop {
        VectorizedSuperop {
            dim: self.dim,
            matrix: self.matrix().clone(),
        }
    }

    fn build_matrix(&self) -> CMatrix {
        let d = self.dim;
        let id = identity(d);
        let mut m = CMatrix::zeros(d * d, d * d);
        if let Some(h) = &self.hamiltonian {
            let h = h.matrix();
            m += (kron(&id, h) - kron(&h.transpose(), &id)) * c(0.0, -1.0);
        }
        for l in &self.couplings {
            let ldl = l.adjoint() * l;
            m += kron(&l.conjugate(), l);
            m -= kron(&id, &ldl).scale(0.5);
            m -= kron(&ldl.transpose(), &id).scale(0.5);
        }
        m
    }

    /// `gamma * L`, realised on structure: `H -> γH`, `L_k -> √γ L_k`.
    pub fn scale(&self, gamma: f64) -> Result<Self> {
        gen_scale(self, gamma)
    }
}

/// Positive rescaling that keeps the result a Lindblad generator.
pub fn gen_scale(g: &LindbladGenerator, gamma: f64) -> Result<LindbladGenerator> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "generator scale must be positive and finite, got {gamma}"
        )));
    }
    let root = gamma.sqrt();
    LindbladGenerator::new(
        g.dim,
        g.hamiltonian.as_ref().map(|h| h.scale(gamma)),
        g.couplings.iter().map(|l| l.scale(root)).collect(),
    )
}

/// Sum of two generators: Hamiltonians add, coupling lists concatenate.
pub fn gen_add(a: &LindbladGenerator, b: &LindbladGenerator) -> Result<LindbladGenerator> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "cannot add generators of dimension {} and {}",
            a.dim, b.dim
        )));
    }
    let h = match (&a.hamiltonian, &b.hamiltonian) {
        (Some(x), Some(y)) => Some(HermitianMatrix::hermitize(&(x.matrix() + y.matrix()))),
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    };
    let couplings = a.couplings.iter().chain(&b.couplings).cloned().collect();
    LindbladGenerator::new(a.dim, h, couplings)
}

/// `op ⊗ I_{d_c}`.
pub fn embed_plant(op: &CMatrix, d_c: usize) -> CMatrix {
    kron(op, &identity(d_c))
}

/// `I_{d_p} ⊗ op`.
pub fn embed_controller(op: &CMatrix, d_p: usize) -> CMatrix {
    kron(&identity(d_p), op)
}

impl VectorizedSuperop {
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        unvec(&(&self.matrix * vec_of(x)), self.dim)
    }
}

/// Propagator `exp(L t)` of a time-independent generator.
pub fn semigroup_step(v: &VectorizedSuperop, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("propagation time must be >= 0, got {t}")));
    }
    Ok(expm(&v.matrix.scale(t)))
}
