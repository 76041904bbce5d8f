//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p cqfb --test acceptance`.

use std::time::{Duration, Instant};

use cqfb::discretize::{convergence_table, CellRule, Scenario};
use cqfb::liouville::{make_generator, semigroup_step, unvec, vec_of, LindbladGenerator};
use cqfb::propagate::{
    auto_plateau, integrate, integrate_operator, ClosedLoop, IntegratorOptions, NoiseModel, PlateauRule,
};
use cqfb::protocol::{effective_nonhermitian, steady_candidate, FrameMap};
use cqfb::qmat::{
    self, basis_vector, kron, kron_vec, max_abs, max_abs_diff, partial_trace, random, trace, trace_norm, CMatrix,
    DensityMatrix, Subsystem,
};
use cqfb::scenario::{self, Setup};
use cqfb::spectra::{
    decay_pair, exp_norm_profile, kernel, linspace, restrict_traceless, unique_density_steady, CertifyOptions,
    DecayOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 5.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// `α` of the unit-gain design, shared by several criteria.
fn design_alpha() -> f64 {
    let r = restrict_traceless(&scenario::design(1.0).unwrap().unit_generator());
    decay_pair(&r, &[0.0], &DecayOptions::default()).unwrap().alpha
}

fn invariance() -> Outcome {
    let start = Instant::now();
    let p = scenario::design(GAMMA).unwrap();
    let sys = ClosedLoop::new(&scenario::pauli_xx(), &p, GAMMA, &NoiseModel::none()).unwrap();
    let grid = linspace(0.0, 5.0, 500);
    let traj = integrate(&sys, &steady_candidate(&p), (0.0, 5.0), &[], &grid, &IntegratorOptions::default()).unwrap();
    let worst = traj.errors.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-6 && within(elapsed, 5.0),
        format!("max D on [0,5] = {worst:.3e} (< 1e-6), {:.2} s (< 5 s)", elapsed.as_secs_f64()),
    )
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let alpha = design_alpha();
    let p = scenario::design(GAMMA).unwrap();
    let h_p = scenario::pauli_xx();
    let sys = ClosedLoop::new(&h_p, &p, GAMMA, &NoiseModel::none()).unwrap();
    let opts = IntegratorOptions::default();
    let rule = PlateauRule::for_rate(GAMMA * alpha);
    let events = [scenario::decoherence_event(1.0)];
    let run = auto_plateau(&sys, &steady_candidate(&p), 0.0, &events, &rule, &opts).unwrap();
    let traj = &run.trajectory;
    let at = traj.times.iter().position(|&t| t >= 1.0).unwrap();
    let before = traj.errors[..at].iter().copied().fold(0.0, f64::max);
    let jump = traj.errors[at];
    let end = *traj.errors.last().unwrap();
    let mut ok = before < 1e-6 && jump > 1e-2 && end < 1e-3;

    let mut worst_random: f64 = 0.0;
    let horizon = 40.0 / (GAMMA * alpha);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sigma0 = random::density(&mut rng, 8);
        for t0 in [0.0, 1.0, 3.0] {
            let t_end = t0 + horizon;
            let traj = integrate(&sys, &sigma0, (t0, t_end), &[], &[t_end], &opts).unwrap();
            worst_random = worst_random.max(traj.errors[0]);
        }
    }
    ok &= worst_random < 1e-3;
    let elapsed = start.elapsed();
    ok &= within(elapsed, 30.0);
    outcome(
        ok,
        format!(
            "D before t_a = {before:.2e}, D(t_a) = {jump:.3}, D(T={:.1}) = {end:.2e}; 30 random injections max D(end) = {worst_random:.2e} (< 1e-3); {:.1} s (< 30 s)",
            run.horizon,
            elapsed.as_secs_f64()
        ),
    )
}

fn propagator_identity() -> Outcome {
    let start = Instant::now();
    let p = scenario::design(GAMMA).unwrap();
    let h_p = scenario::pauli_xx();
    let sys = ClosedLoop::new(&h_p, &p, GAMMA, &NoiseModel::none()).unwrap();
    let frame = FrameMap::new(&h_p, 2);
    let fb = p.generator().vectorize();
    let d = 8;
    let times = [1.0, 2.0];
    let mut worst: f64 = 0.0;
    let mut integrated = vec![CMatrix::zeros(d * d, d * d); times.len()];
    for j in 0..d * d {
        let e = unvec(&basis_vector(d * d, j), d);
        let outs = integrate_operator(&sys, &e, 0.0, &times, &IntegratorOptions::default()).unwrap();
        for (k, x) in outs.iter().enumerate() {
            integrated[k].set_column(j, &vec_of(x));
        }
    }
    for (k, &t) in times.iter().enumerate() {
        let u = frame.unitary(t);
        let frame_super = kron(&u.conjugate(), &u);
        let analytic = frame_super * semigroup_step(&fb, t).unwrap();
        worst = worst.max(max_abs_diff(&integrated[k], &analytic));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-7 && within(elapsed, 5.0),
        format!("max |G(t,0) - U_t e^(γL t)| at t = 1, 2: {worst:.2e} (< 1e-7), {:.2} s (< 5 s)", elapsed.as_secs_f64()),
    )
}

fn persistent_bound() -> Outcome {
    let start = Instant::now();
    let setup = scenario::noisy_setup();
    let report = scenario::sweep(&setup, &[0.0, 5.0, 10.0, 15.0, 20.0], &CertifyOptions::default(), &PlateauRule::default()).unwrap();
    let mut parts = Vec::new();
    for item in &report.items {
        let bound = item.certificate.as_ref().map_or("n/a".to_string(), |c| format!("{:.3}", c.bound_value));
        parts.push(format!("γ={}: {:.4}/{bound}", item.gamma, item.plateau().unwrap_or(f64::NAN)));
    }
    let elapsed = start.elapsed();
    let ok = report.all_within_bound()
        && report.decreasing()
        && report.baseline_largest() == Some(true)
        && within(elapsed, 60.0);
    outcome(
        ok,
        format!(
            "plateau/bound {}; decreasing = {}, baseline largest = {:?}; {:.1} s (< 60 s)",
            parts.join(", "),
            report.decreasing(),
            report.baseline_largest(),
            elapsed.as_secs_f64()
        ),
    )
}

fn design_certification() -> Outcome {
    let p = scenario::design(1.0).unwrap();
    let g = p.unit_generator();
    let k = kernel(&g);
    let steady = unique_density_steady(&g).unwrap();
    let gap = steady
        .state
        .as_ref()
        .map_or(f64::INFINITY, |s| trace_norm(&(s.matrix() - steady_candidate(&p).matrix())));
    let dark = kron_vec(p.phi0(), &p.controller_basis()[0]);
    let l_dark = p.couplings().iter().map(|l| (l * &dark).norm()).fold(0.0, f64::max);
    let k_dark = (effective_nonhermitian(&p) * &dark).norm();
    let ok = k.dim == 1 && gap < 1e-10 && steady.restricted_abscissa < 0.0 && l_dark < 1e-12 && k_dark < 1e-12;
    outcome(
        ok,
        format!(
            "kernel dim = {}, |σ - σ_ini|_1 = {gap:.1e}, abscissa = {:.4}, dark-state residuals {l_dark:.1e}, {k_dark:.1e}",
            k.dim, steady.restricted_abscissa
        ),
    )
}

fn restriction_decay() -> Outcome {
    let r = restrict_traceless(&scenario::design(1.0).unwrap().unit_generator());
    let eig = r.eigenvalues().unwrap();
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let pair = decay_pair(&r, &cqfb::spectra::default_decay_grid(), &DecayOptions::default()).unwrap();
    let shifted: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) * 0.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut scattered: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..20.0)).collect();
    scattered.sort_by(f64::total_cmp);
    let mut worst_ratio: f64 = 0.0;
    for (grid, seed) in [(shifted, 11), (scattered, 12)] {
        for (t, n) in exp_norm_profile(&r, &grid, 2, seed).unwrap() {
            worst_ratio = worst_ratio.max(n / (pair.k * (-pair.alpha * t).exp()));
        }
    }
    outcome(
        r.dim() == 63 && max_re < 0.0 && worst_ratio <= 1.0,
        format!(
            "dim = {}, max Re λ = {max_re:.4}, K = {:.4}, α = {:.6}, max estimate/(K e^(-αt)) on two fresh grids = {worst_ratio:.4}",
            r.dim(),
            pair.k,
            pair.alpha
        ),
    )
}

fn correlated_noise() -> Outcome {
    let setup = Setup {
        noise: NoiseModel {
            persistent: Some(scenario::correlated_noise()),
            ..Default::default()
        },
        ..scenario::noisy_setup()
    };
    let report = scenario::sweep(&setup, &[10.0], &CertifyOptions::default(), &PlateauRule::default()).unwrap();
    let item = &report.items[0];
    let bound = item.certificate.as_ref().map_or(f64::NAN, |c| c.bound_value);
    outcome(
        item.within_bound() == Some(true),
        format!("γ = 10: plateau = {:.4} ≤ bound = {bound:.4}", item.plateau().unwrap_or(f64::NAN)),
    )
}

fn robustness() -> Outcome {
    let mut setup = scenario::noisy_setup();
    setup.noise.uncertainty = Some(std::sync::Arc::new(scenario::drift(0.05).unwrap()));
    let report = scenario::sweep(&setup, &[5.0, 20.0], &CertifyOptions::default(), &PlateauRule::default()).unwrap();
    let p5 = report.items[0].plateau().unwrap_or(f64::NAN);
    let p20 = report.items[1].plateau().unwrap_or(f64::NAN);
    let bounded = report.all_within_bound();
    outcome(
        p20 * 2.0 <= p5 && bounded,
        format!("‖L_unc‖ ≤ 0.05: plateau γ=5 {p5:.4}, γ=20 {p20:.4} (ratio {:.2} ≥ 2), within K(‖L‖+L)/(γα): {bounded}", p5 / p20),
    )
}

fn piecewise_convergence() -> Outcome {
    let s = Scenario {
        h_p: scenario::pauli_xx(),
        noise: NoiseModel::none(),
        sigma0: scenario::initial_state(),
        span: (0.0, 2.0),
        grid: vec![2.0],
        opts: IntegratorOptions {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        },
    };
    let base = scenario::design(GAMMA).unwrap();
    let cells = [32, 64, 128, 256];
    let mut ok = true;
    let mut parts = Vec::new();
    for (rule, lo, hi) in [(CellRule::Left, 0.8, 1.3), (CellRule::Midpoint, 1.7, 2.4)] {
        let rows = convergence_table(&base, &s, &cells, rule).unwrap();
        let orders: Vec<f64> = rows[1..].iter().map(|r| r.observed_order).collect();
        ok &= orders.iter().all(|o| (lo..=hi).contains(o));
        ok &= rows.windows(2).all(|w| w[1].terminal_error < w[0].terminal_error);
        parts.push(format!(
            "{rule:?} orders {:?} in [{lo}, {hi}]",
            orders.iter().map(|o| (o * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn numerical_kernel() -> Outcome {
    const N: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut worst = [0.0_f64; 6];

    for _ in 0..N {
        let (a, b) = (random::gaussian(&mut rng, 2, 3), random::gaussian(&mut rng, 3, 2));
        let (c, d) = (random::gaussian(&mut rng, 3, 2), random::gaussian(&mut rng, 2, 3));
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        worst[0] = worst[0].max(max_abs_diff(&lhs, &rhs) / max_abs(&rhs).max(1.0));
    }
    if worst[0] > 1e-12 {
        failures.push("mixed product");
    }

    for _ in 0..N {
        let x = random::gaussian(&mut rng, 6, 6);
        for over in [Subsystem::Plant, Subsystem::Controller] {
            let reduced = partial_trace(&x, (2, 3), over).unwrap();
            worst[1] = worst[1].max(trace_norm(&reduced) - trace_norm(&x));
        }
    }
    if worst[1] > 1e-10 {
        failures.push("partial-trace contraction");
    }

    let random_generator = |rng: &mut ChaCha8Rng| -> LindbladGenerator {
        let h = random::hermitian(rng, 3);
        let ls = (0..2).map(|_| random::gaussian(rng, 3, 3).scale(0.5)).collect();
        make_generator(Some(h), ls).unwrap()
    };
    for _ in 0..N {
        let g = random_generator(&mut rng);
        let rho = random::density(&mut rng, 3);
        for t in [0.1, 1.0, 10.0] {
            let out = unvec(&(semigroup_step(&g.vectorize(), t).unwrap() * vec_of(rho.matrix())), 3);
            let out = DensityMatrix::new_unchecked(qmat::HermitianMatrix::hermitize(&out).into_inner());
            worst[2] = worst[2].max(-out.min_eigenvalue()).max((trace(out.matrix()).re - 1.0).abs());
        }
    }
    if worst[2] > 1e-9 {
        failures.push("CPTP propagation");
    }

    for _ in 0..N {
        let g = random_generator(&mut rng);
        let x = random::gaussian(&mut rng, 3, 3);
        let direct = g.apply(&x);
        let via = unvec(&(g.matrix() * vec_of(&x)), 3);
        worst[3] = worst[3].max(max_abs_diff(&direct, &via) / max_abs(&direct).max(1.0));
        let (a, b) = (random::gaussian(&mut rng, 3, 3), random::gaussian(&mut rng, 3, 3));
        let stacked = kron(&b.transpose(), &a) * vec_of(&x);
        worst[4] = worst[4].max(max_abs_diff(&stacked, &vec_of(&(&a * &x * &b))) / max_abs(&stacked).max(1.0));
    }
    if worst[3] > 1e-12 || worst[4] > 1e-12 {
        failures.push("vectorization");
    }

    for _ in 0..N {
        let g = random_generator(&mut rng).vectorize();
        let (s, t) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let joint = semigroup_step(&g, s + t).unwrap();
        let split = semigroup_step(&g, s).unwrap() * semigroup_step(&g, t).unwrap();
        worst[5] = worst[5].max(max_abs_diff(&joint, &split));
    }
    if worst[5] > 1e-9 {
        failures.push("semigroup");
    }

    outcome(
        failures.is_empty(),
        format!(
            "{N} instances each: mixed product {:.1e}, contraction {:.1e}, CPTP {:.1e}, vec {:.1e}/{:.1e}, semigroup {:.1e}{}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            worst[5],
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("invariance under perfect conditions", invariance),
        ("recovery after transient noise", recovery),
        ("propagator identity", propagator_identity),
        ("persistent-noise bound across gains", persistent_bound),
        ("design certification", design_certification),
        ("traceless restriction and decay pair", restriction_decay),
        ("correlated plant-controller noise", correlated_noise),
        ("robustness to implementation error", robustness),
        ("piecewise-constant convergence", piecewise_convergence),
        ("numerical kernel invariants", numerical_kernel),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
