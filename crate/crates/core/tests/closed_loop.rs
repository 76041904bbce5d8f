use cqfb::discretize::{discretized_trajectory, exact_trajectory, CellRule, PiecewiseProtocol, Scenario};
use cqfb::liouville::{semigroup_step, unvec, vec_of};
use cqfb::propagate::{integrate, integrate_operator, ClosedLoop, IntegratorOptions, NoiseModel};
use cqfb::protocol::{steady_candidate, Direction, FrameMap};
use cqfb::qmat::{kron, max_abs_diff, random, trace_norm, CMatrix};
use cqfb::scenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 5.0;

fn design_loop() -> (ClosedLoop, cqfb::protocol::FeedbackProtocol) {
    let p = scenario::design(GAMMA).unwrap();
    let sys = ClosedLoop::new(&scenario::pauli_xx(), &p, GAMMA, &NoiseModel::none()).unwrap();
    (sys, p)
}

#[test]
fn frame_transformed_state_follows_the_frozen_generator() {
    let (sys, p) = design_loop();
    let frame = FrameMap::new(&scenario::pauli_xx(), scenario::CONTROLLER_DIM);
    let fb = p.generator().vectorize();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sigma0 = random::density(&mut rng, 8);
    let times = [0.5, 1.0, 2.0];
    let traj = integrate(&sys, &sigma0, (0.0, 2.0), &[], &times, &IntegratorOptions::default()).unwrap();
    for (state, &t) in traj.states.iter().zip(&times) {
        let theta = frame.conjugate(state.matrix(), t, Direction::Inverse);
        let expected = unvec(&(semigroup_step(&fb, t).unwrap() * vec_of(sigma0.matrix())), 8);
        assert!(max_abs_diff(&theta, &expected) < 1e-7, "t = {t}");
    }
}

#[test]
fn propagator_from_nonzero_start() {
    let (sys, p) = design_loop();
    let frame = FrameMap::new(&scenario::pauli_xx(), scenario::CONTROLLER_DIM);
    let fb = p.generator().vectorize();
    let d = 8;
    for (t0, t1) in [(0.0, 1.0), (0.5, 2.0)] {
        let mut integrated = CMatrix::zeros(d * d, d * d);
        for j in 0..d * d {
            let e = unvec(&cqfb::qmat::basis_vector(d * d, j), d);
            let out = integrate_operator(&sys, &e, t0, &[t1], &IntegratorOptions::default()).unwrap();
            integrated.set_column(j, &vec_of(&out[0]));
        }
        let super_of = |u: CMatrix| kron(&u.conjugate(), &u);
        let analytic = super_of(frame.unitary(t1))
            * semigroup_step(&fb, t1 - t0).unwrap()
            * super_of(frame.unitary(t0).adjoint());
        assert!(max_abs_diff(&integrated, &analytic) < 1e-7, "({t0}, {t1})");
    }
}

#[test]
fn target_state_is_invariant_to_integrator_precision() {
    let (sys, p) = design_loop();
    let grid = cqfb::spectra::linspace(0.0, 5.0, 200);
    let traj = integrate(&sys, &steady_candidate(&p), (0.0, 5.0), &[], &grid, &IntegratorOptions::default()).unwrap();
    assert!(traj.errors.iter().all(|&d| d < 1e-8));
    assert!(traj.meta.max_trace_drift < 1e-10);
}

#[test]
fn fine_midpoint_grid_is_close_to_exact() {
    let s = Scenario {
        h_p: scenario::pauli_xx(),
        noise: NoiseModel::none(),
        sigma0: scenario::initial_state(),
        span: (0.0, 2.0),
        grid: vec![2.0],
        opts: IntegratorOptions::default(),
    };
    let base = scenario::design(GAMMA).unwrap();
    let exact = exact_trajectory(&base, &s).unwrap();
    let pw = discretized_trajectory(&PiecewiseProtocol::new(base, 512, CellRule::Midpoint).unwrap(), &s).unwrap();
    let err = trace_norm(&(exact.states[0].matrix() - pw.states[0].matrix()));
    assert!(err < 1e-3, "error {err}");
}

#[test]
fn decoherence_event_produces_a_jump() {
    let (sys, p) = design_loop();
    let grid = [0.5, 0.999, 1.0, 1.5];
    let traj = integrate(
        &sys,
        &steady_candidate(&p),
        (0.0, 1.5),
        &[scenario::decoherence_event(1.0)],
        &grid,
        &IntegratorOptions::default(),
    )
    .unwrap();
    assert!(traj.errors[1] < 1e-8);
    assert!(traj.errors[2] > 0.1);
    assert_eq!(traj.meta.events_applied, 1);
}
