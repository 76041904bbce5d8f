//! The two-qubit example and gain sweeps.
//!
//! The plant is two qubits with `H_P = σx ⊗ σx` and target `|00>`, regulated
//! by the built-in design with a qubit controller. Noise models and initial
//! states used throughout the tests, the CLI and the guide are built here.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::liouville::{embed_plant, make_generator, LindbladGenerator};
use crate::propagate::{
    auto_plateau, decoherence_channel, ClosedLoop, IntegratorOptions, NoiseModel, PlateauRule, PlateauRun,
    SinusoidalDrift, TransientEvent,
};
use crate::protocol::{build_design, computational_basis, FeedbackProtocol};
use crate::qmat::{
    identity, kron, kron_all, outer, projector, qubit_ket, sigma_x, sigma_z, CMatrix, CVector, DensityMatrix,
    HermitianMatrix,
};
use crate::spectra::{
    assemble, check_hypotheses, decay_pair, noise_norms, restrict_traceless, CertifyOptions, DecayPair,
    NormSandwich, SpectralCertificate, SteadyState,
};

pub const PLANT_DIM: usize = 4;
pub const CONTROLLER_DIM: usize = 2;

pub fn pauli_xx() -> HermitianMatrix {
    HermitianMatrix::new(kron(&sigma_x(), &sigma_x())).expect("σx⊗σx is Hermitian")
}

pub fn phi0() -> CVector {
    qubit_ket("00").expect("valid label")
}

/// `|0><1|` on one qubit.
pub fn ket0bra1() -> CMatrix {
    outer(&qubit_ket("0").expect("valid"), &qubit_ket("1").expect("valid"))
}

pub fn design(gamma: f64) -> Result<FeedbackProtocol> {
    build_design(&phi0(), None, gamma)
}

/// Plant couplings `0.5 |0><1| ⊗ I`, `0.5 I ⊗ σz`, `0.5 σx ⊗ |0><1|`.
pub fn plant_noise_couplings() -> Vec<CMatrix> {
    vec![
        kron(&ket0bra1(), &identity(2)).scale(0.5),
        kron(&identity(2), &sigma_z()).scale(0.5),
        kron(&sigma_x(), &ket0bra1()).scale(0.5),
    ]
}

/// The plant couplings embedded on plant ⊗ controller.
pub fn persistent_noise() -> LindbladGenerator {
    let couplings = plant_noise_couplings()
        .iter()
        .map(|l| embed_plant(l, CONTROLLER_DIM))
        .collect();
    make_generator(None, couplings).expect("couplings have matching dimensions")
}

/// Like [`persistent_noise`], but the third coupling acts jointly on the
/// second plant qubit and the controller: `0.5 I ⊗ σx ⊗ |0><1|`.
/// Every coupling keeps its operator norm.
pub fn correlated_noise() -> LindbladGenerator {
    let couplings = vec![
        kron_all(&[ket0bra1(), identity(2), identity(2)]).scale(0.5),
        kron_all(&[identity(2), sigma_z(), identity(2)]).scale(0.5),
        kron_all(&[identity(2), sigma_x(), ket0bra1()]).scale(0.5),
    ];
    make_generator(None, couplings).expect("couplings have matching dimensions")
}

/// Sinusoidal Hamiltonian error on the composite with `||L_unc(t)|| <= bound`.
pub fn drift(bound: f64) -> Result<SinusoidalDrift> {
    let op = HermitianMatrix::new(kron_all(&[sigma_z(), sigma_z(), sigma_x()]))?;
    SinusoidalDrift::with_bound(op, bound, 1.7)
}

/// Product of diagonal mixtures, weights in label order (`|00>, |01>, ...`
/// for the plant, `|0>, |1>` for the controller).
pub fn product_diagonal(plant: &[f64], controller: &[f64]) -> Result<DensityMatrix> {
    let diag = |w: &[f64]| -> CMatrix {
        computational_basis(w.len())
            .iter()
            .zip(w)
            .fold(CMatrix::zeros(w.len(), w.len()), |acc, (b, &p)| acc + projector(b).scale(p))
    };
    DensityMatrix::new(kron(&diag(plant), &diag(controller)))
}

/// `(0.8, 0.1, 0.05, 0.05) ⊗ (0.9, 0.1)` on the diagonal.
pub fn initial_state() -> DensityMatrix {
    product_diagonal(&[0.8, 0.1, 0.05, 0.05], &[0.9, 0.1]).expect("valid weights")
}

/// Complete dephasing of plant and controller at `t_a`.
pub fn decoherence_event(t_a: f64) -> TransientEvent {
    TransientEvent {
        time: t_a,
        kraus: decoherence_channel(&[2, 2, CONTROLLER_DIM]),
    }
}

/// Fully specified closed-loop run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub h_p: HermitianMatrix,
    pub protocol: FeedbackProtocol,
    pub noise: NoiseModel,
    pub sigma0: DensityMatrix,
    pub t0: f64,
    pub opts: IntegratorOptions,
}

impl Setup {
    pub fn closed_loop(&self, gamma: f64) -> Result<ClosedLoop> {
        ClosedLoop::new(&self.h_p, &self.protocol, gamma, &self.noise)
    }
}

/// Unit-gain spectral data shared by every gain.
#[derive(Debug, Clone)]
pub struct UnitCertificate {
    pub steady: SteadyState,
    pub pair: DecayPair,
    pub noise: NormSandwich,
    /// Declared bound on the uncertainty term, added to the noise norm.
    pub uncertainty_bound: f64,
}

impl UnitCertificate {
    pub fn compute(protocol: &FeedbackProtocol, noise: &NoiseModel, opts: &CertifyOptions) -> Result<Self> {
        let steady = check_hypotheses(protocol)?;
        if !steady.unique {
            return Err(Error::NotHurwitz {
                abscissa: steady.restricted_abscissa,
            });
        }
        let pair = decay_pair(&restrict_traceless(&protocol.unit_generator()), &opts.decay_grid, &opts.decay)?;
        let zero = LindbladGenerator::zero(protocol.dim());
        let norms = noise_norms(noise.persistent.as_ref().unwrap_or(&zero), opts.noise_restarts);
        Ok(Self {
            steady,
            pair,
            noise: norms,
            uncertainty_bound: noise.uncertainty.as_ref().map_or(0.0, |u| u.bound()),
        })
    }

    /// `K (||L_noise||_upper + L) / (γ α)`.
    pub fn at_gain(&self, gamma: f64) -> SpectralCertificate {
        let noise = NormSandwich {
            lower: self.noise.lower,
            upper: self.noise.upper + self.uncertainty_bound,
        };
        assemble(gamma, &self.steady, self.pair, noise)
    }
}

#[derive(Debug)]
pub struct SweepItem {
    pub gamma: f64,
    pub run: Result<PlateauRun>,
    pub certificate: Option<SpectralCertificate>,
}

impl SweepItem {
    pub fn plateau(&self) -> Option<f64> {
        self.run.as_ref().ok().map(|r| r.plateau)
    }

    /// `plateau <= bound + 1e-9`; `None` without a certificate.
    pub fn within_bound(&self) -> Option<bool> {
        let bound = self.certificate.as_ref()?.bound_value;
        self.plateau().map(|p| p <= bound + 1e-9)
    }
}

#[derive(Debug)]
pub struct SweepReport {
    pub items: Vec<SweepItem>,
}

impl SweepReport {
    /// Plateaus strictly decrease with the gain over `gamma > 0`.
    pub fn decreasing(&self) -> bool {
        let mut fed: Vec<(f64, Option<f64>)> = self
            .items
            .iter()
            .filter(|i| i.gamma > 0.0)
            .map(|i| (i.gamma, i.plateau()))
            .collect();
        fed.sort_by(|a, b| a.0.total_cmp(&b.0));
        fed.iter().all(|(_, p)| p.is_some())
            && fed.windows(2).all(|w| w[1].1.unwrap() < w[0].1.unwrap())
    }

    /// The `gamma = 0` plateau exceeds every other; `None` without one.
    pub fn baseline_largest(&self) -> Option<bool> {
        let base = self.items.iter().find(|i| i.gamma == 0.0)?.plateau()?;
        Some(
            self.items
                .iter()
                .filter(|i| i.gamma > 0.0)
                .all(|i| i.plateau().is_some_and(|p| p < base)),
        )
    }

    pub fn all_within_bound(&self) -> bool {
        self.items
            .iter()
            .filter(|i| i.gamma > 0.0)
            .all(|i| i.within_bound() == Some(true))
    }
}

/// Runs every gain to its plateau. Gains above zero are certified from one
/// shared unit-gain computation; `gamma = 0` runs without feedback over the
/// longest horizon of the sweep.
pub fn sweep(setup: &Setup, gammas: &[f64], certify_opts: &CertifyOptions, base_rule: &PlateauRule) -> Result<SweepReport> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("gain list is empty".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::InvalidArgument(format!("gain {g} must be finite and >= 0")));
    }
    let unit = if gammas.iter().any(|&g| g > 0.0) {
        Some(UnitCertificate::compute(&setup.protocol, &setup.noise, certify_opts)?)
    } else {
        None
    };
    let rate = |g: f64| unit.as_ref().map(|u| g * u.pair.alpha);
    let min_positive = gammas.iter().copied().filter(|&g| g > 0.0).fold(f64::INFINITY, f64::min);
    let baseline_horizon = rate(min_positive)
        .filter(|r| r.is_finite())
        .map_or(base_rule.initial_horizon, |r| 40.0 / r);
    let items = gammas
        .par_iter()
        .map(|&gamma| {
            let rule = PlateauRule {
                initial_horizon: if gamma > 0.0 {
                    40.0 / rate(gamma).expect("unit data exists for positive gains")
                } else {
                    baseline_horizon
                },
                ..*base_rule
            };
            let run = setup.closed_loop(gamma).and_then(|sys| {
                auto_plateau(&sys, &setup.sigma0, setup.t0, &setup.noise.transient_events, &rule, &setup.opts)
            });
            SweepItem {
                gamma,
                run,
                certificate: unit.as_ref().filter(|_| gamma > 0.0).map(|u| u.at_gain(gamma)),
            }
        })
        .collect();
    Ok(SweepReport { items })
}

/// Setup with the persistent plant noise and the diagonal initial state.
pub fn noisy_setup() -> Setup {
    Setup {
        h_p: pauli_xx(),
        protocol: design(1.0).expect("valid design"),
        noise: NoiseModel {
            persistent: Some(persistent_noise()),
            ..Default::default()
        },
        sigma0: initial_state(),
        t0: 0.0,
        opts: IntegratorOptions::default(),
    }
}
