use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cqfb::discretize::{convergence_table, write_table_csv, CellRule, ConvergenceRow, Scenario};
use cqfb::propagate::{auto_plateau, integrate, plateau, write_csv, PlateauRule, Trajectory};
use cqfb::scenario::{sweep, UnitCertificate};
use cqfb::spectra::{check_hypotheses, linspace, CertifyOptions, DecayOptions};

use crate::config::{Built, ConfigError, RuleName, ScenarioConfig};

/// Overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol_rel: Option<f64>,
    pub tol_abs: Option<f64>,
}

#[derive(Debug)]
pub enum Failure {
    Validation(ConfigError),
    Usage(String),
    Integration(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) | Failure::Usage(_) => 2,
            Failure::Integration(_) | Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "invalid config: {e}"),
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Integration(m) => write!(f, "integration failed: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e)
    }
}

fn core_failure(e: cqfb::Error) -> Failure {
    match e {
        cqfb::Error::Integration { .. } | cqfb::Error::NoConvergence => Failure::Integration(e.to_string()),
        other => Failure::Validation(ConfigError {
            field: String::new(),
            message: other.to_string(),
        }),
    }
}

/// Human-readable lines plus the overall verdict.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub pass: bool,
}

pub fn load(path: &Path, o: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = o.tol_rel {
        cfg.run.tol_rel = t;
    }
    if let Some(t) = o.tol_abs {
        cfg.run.tol_abs = t;
    }
    Ok(cfg)
}

fn certify_options(cfg: &ScenarioConfig) -> CertifyOptions {
    CertifyOptions {
        decay: DecayOptions {
            seed: cfg.run.seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn output_path(o: &Overrides, name: &str) -> PathBuf {
    o.out.as_deref().unwrap_or(Path::new(".")).join(name)
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(traj, &mut buf).expect("writing to memory");
    buf
}

/// `name.csv` with `tag` inserted before the extension.
fn tagged(name: &str, tag: &str) -> String {
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{tag}.{ext}"),
        None => format!("{name}_{tag}"),
    }
}

fn gnuplot_script(files: &[(String, String)], ylabel: &str, columns: &str) -> String {
    let mut s = format!("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset ylabel '{ylabel}'\nplot ");
    let plots: Vec<String> = files
        .iter()
        .map(|(file, title)| format!("'{file}' using {columns} with lines title '{title}'"))
        .collect();
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("none".into(), |v| format!("{v:.6e}"))
}

fn check_expectations(cfg: &ScenarioConfig, traj: &Trajectory, lines: &mut Vec<String>) -> bool {
    let e = &cfg.expect;
    let mut pass = true;
    let mut record = |name: &str, ok: bool, detail: String| {
        lines.push(format!("check {name}: {} ({detail})", if ok { "pass" } else { "fail" }));
        pass &= ok;
    };
    if let Some([t, v]) = e.max_d_before {
        let worst = traj
            .times
            .iter()
            .zip(&traj.errors)
            .filter(|(s, _)| **s < t)
            .map(|(_, d)| *d)
            .fold(0.0, f64::max);
        record("max_d_before", worst < v, format!("max D before {t} = {worst:.3e}"));
    }
    if let Some([t, v]) = e.jump_at {
        let d = traj.times.iter().position(|&s| s >= t).map(|i| traj.errors[i]);
        record("jump_at", d.is_some_and(|d| d > v), format!("D({t}) = {}", fmt_opt(d)));
    }
    if let Some(v) = e.final_d_below {
        let d = traj.errors.last().copied();
        record("final_d_below", d.is_some_and(|d| d < v), format!("final D = {}", fmt_opt(d)));
    }
    pass
}

pub fn run(path: &Path, o: &Overrides) -> Result<Outcome, Failure> {
    let cfg = load(path, o)?;
    let Built { setup, gamma, t_end } = cfg.build()?;
    let unit = if gamma > 0.0 && check_hypotheses(&setup.protocol).map_err(core_failure)?.unique {
        Some(UnitCertificate::compute(&setup.protocol, &setup.noise, &certify_options(&cfg)).map_err(core_failure)?)
    } else {
        None
    };
    let certificate = unit.as_ref().map(|u| u.at_gain(gamma));
    let sys = setup.closed_loop(gamma).map_err(core_failure)?;
    let traj = match t_end {
        Some(t1) => integrate(
            &sys,
            &setup.sigma0,
            (setup.t0, t1),
            &setup.noise.transient_events,
            &linspace(setup.t0, t1, cfg.run.samples),
            &setup.opts,
        )
        .map_err(core_failure)?,
        None => {
            let rule = PlateauRule {
                initial_horizon: unit.as_ref().map_or(40.0, |u| 40.0 / (gamma * u.pair.alpha)),
                tail_fraction: cfg.run.tail_fraction,
                dt: cfg.run.dt,
                ..Default::default()
            };
            auto_plateau(&sys, &setup.sigma0, setup.t0, &setup.noise.transient_events, &rule, &setup.opts)
                .map_err(core_failure)?
                .trajectory
        }
    };
    let value = plateau(&traj, cfg.run.tail_fraction);
    let bound = certificate.as_ref().map(|c| c.bound_value);

    let mut lines = vec![format!(
        "steps={} rejected={} events={} horizon={}",
        traj.meta.steps,
        traj.meta.rejected_steps,
        traj.meta.events_applied,
        traj.times.last().copied().unwrap_or(setup.t0)
    )];
    let mut pass = check_expectations(&cfg, &traj, &mut lines);
    if let (Some(b), None) = (bound, t_end) {
        pass &= value <= b + 1e-9;
    }
    if let Some(csv) = &cfg.outputs.csv {
        write_atomic(&output_path(o, csv), &trajectory_csv(&traj))?;
        if let Some(gp) = &cfg.outputs.gnuplot {
            let script = gnuplot_script(&[(csv.clone(), format!("gamma={gamma}"))], "D(t)", "1:2");
            write_atomic(&output_path(o, gp), script.as_bytes())?;
        }
    }
    if let (Some(report), Some(c)) = (&cfg.outputs.report, &certificate) {
        write_atomic(&output_path(o, report), c.to_report().as_bytes())?;
    }
    lines.push(format!("plateau={value:.6e} bound={} pass={pass}", fmt_opt(bound)));
    Ok(Outcome { lines, pass })
}

/// Parses `0,5,10`; an empty list is a usage error.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        return Err(Failure::Usage(format!("{what} list is empty")));
    }
    items
        .iter()
        .map(|x| x.parse().map_err(|_| Failure::Usage(format!("cannot parse {x:?} in {what} list"))))
        .collect()
}

pub fn sweep_cmd(path: &Path, gammas: Option<Vec<f64>>, o: &Overrides) -> Result<Outcome, Failure> {
    let cfg = load(path, o)?;
    let gammas = gammas
        .or_else(|| cfg.sweep.as_ref().map(|s| s.gammas.clone()))
        .unwrap_or_default();
    if gammas.is_empty() {
        return Err(Failure::Usage("no gains given (use --gamma or a [sweep] section)".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Failure::Usage(format!("gain {g} must be finite and >= 0")));
    }
    let Built { setup, .. } = cfg.build()?;
    let rule = PlateauRule {
        tail_fraction: cfg.run.tail_fraction,
        dt: cfg.run.dt,
        ..Default::default()
    };
    let report = sweep(&setup, &gammas, &certify_options(&cfg), &rule).map_err(core_failure)?;

    let mut lines = Vec::new();
    let mut plots = Vec::new();
    let mut integration_errors = Vec::new();
    for item in &report.items {
        let bound = item.certificate.as_ref().map(|c| c.bound_value);
        match &item.run {
            Ok(run) => {
                lines.push(format!(
                    "gamma={} plateau={:.6e} bound={} within={} horizon={} converged={}",
                    item.gamma,
                    run.plateau,
                    fmt_opt(bound),
                    item.within_bound().map_or("n/a".into(), |b| b.to_string()),
                    run.horizon,
                    run.converged
                ));
                if let Some(csv) = &cfg.outputs.csv {
                    let name = tagged(csv, &format!("g{}", item.gamma));
                    write_atomic(&output_path(o, &name), &trajectory_csv(&run.trajectory))?;
                    plots.push((name, format!("gamma={}", item.gamma)));
                }
            }
            Err(e) => {
                lines.push(format!("gamma={} error: {e}", item.gamma));
                integration_errors.push(item.gamma);
            }
        }
    }
    if let (Some(gp), false) = (&cfg.outputs.gnuplot, plots.is_empty()) {
        write_atomic(&output_path(o, gp), gnuplot_script(&plots, "D(t)", "1:2").as_bytes())?;
    }
    let positive = gammas.iter().filter(|&&g| g > 0.0).count();
    let decreasing = positive < 2 || report.decreasing();
    let baseline = report.baseline_largest().unwrap_or(true);
    let within = report.all_within_bound();
    let pass = integration_errors.is_empty() && decreasing && baseline && within;
    lines.push(format!(
        "monotone={decreasing} baseline_largest={baseline} all_within_bound={within} pass={pass}"
    ));
    if !integration_errors.is_empty() {
        return Err(Failure::Integration(format!(
            "{}\nfailed gains: {integration_errors:?}",
            lines.join("\n")
        )));
    }
    Ok(Outcome { lines, pass })
}

pub fn certify_cmd(path: &Path, o: &Overrides) -> Result<Outcome, Failure> {
    let cfg = load(path, o)?;
    let Built { setup, gamma, .. } = cfg.build()?;
    if gamma <= 0.0 {
        return Err(ConfigError {
            field: "protocol.gamma".into(),
            message: "certification needs a positive gain".into(),
        }
        .into());
    }
    let steady = check_hypotheses(&setup.protocol).map_err(core_failure)?;
    let (report, pass) = if steady.unique {
        let unit = UnitCertificate::compute(&setup.protocol, &setup.noise, &certify_options(&cfg)).map_err(core_failure)?;
        let c = unit.at_gain(gamma);
        let pass = c.is_unique_density_steady && c.abscissa_alpha > 0.0;
        (c.to_report(), pass)
    } else {
        (
            format!(
                "gamma: {gamma:.17e}\nkernel_dim: {}\nis_unique_density_steady: false\nrestricted_abscissa: {:.17e}\n",
                steady.kernel_dim, steady.restricted_abscissa
            ),
            false,
        )
    };
    if let Some(r) = &cfg.outputs.report {
        write_atomic(&output_path(o, r), report.as_bytes())?;
    }
    let mut lines: Vec<String> = report.lines().map(str::to_owned).collect();
    lines.push(format!("pass={pass}"));
    Ok(Outcome { lines, pass })
}

fn order_ok(rows: &[ConvergenceRow], bracket: Option<[f64; 2]>) -> bool {
    let decreasing = rows.windows(2).all(|w| w[1].terminal_error < w[0].terminal_error);
    let in_bracket = bracket.is_none_or(|[lo, hi]| rows[1..].iter().all(|r| (lo..=hi).contains(&r.observed_order)));
    decreasing && in_bracket
}

pub fn discretize_cmd(path: &Path, cells: Option<Vec<usize>>, o: &Overrides) -> Result<Outcome, Failure> {
    let cfg = load(path, o)?;
    let section = cfg.discretize.as_ref().ok_or_else(|| ConfigError {
        field: "discretize".into(),
        message: "section is required".into(),
    })?;
    let cells = cells.unwrap_or_else(|| section.cells.clone());
    if cells.len() < 2 || cells[0] == 0 || cells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::Usage("cells must be at least two strictly increasing positive counts".into()));
    }
    let Built { setup, gamma, .. } = cfg.build()?;
    if !(section.t_end > setup.t0) {
        return Err(ConfigError {
            field: "discretize.t_end".into(),
            message: "must exceed run.t0".into(),
        }
        .into());
    }
    let s = Scenario {
        h_p: setup.h_p.clone(),
        noise: setup.noise.clone(),
        sigma0: setup.sigma0.clone(),
        span: (setup.t0, section.t_end),
        grid: vec![section.t_end],
        opts: setup.opts,
    };
    let base = setup.protocol.with_gamma(gamma).map_err(core_failure)?;
    let mut lines = Vec::new();
    let mut pass = true;
    for &rule in &section.rules {
        let (cell_rule, name, bracket) = match rule {
            RuleName::Left => (CellRule::Left, "left", cfg.expect.left_order),
            RuleName::Midpoint => (CellRule::Midpoint, "midpoint", cfg.expect.midpoint_order),
        };
        let rows = convergence_table(&base, &s, &cells, cell_rule).map_err(core_failure)?;
        for r in &rows {
            lines.push(format!("rule={name} n={} error={:.6e} order={:.4}", r.n, r.terminal_error, r.observed_order));
        }
        let ok = order_ok(&rows, bracket);
        lines.push(format!("rule={name} pass={ok}"));
        pass &= ok;
        if let Some(csv) = &cfg.outputs.csv {
            let mut buf = Vec::new();
            write_table_csv(&rows, &mut buf).expect("writing to memory");
            write_atomic(&output_path(o, &tagged(csv, name)), &buf)?;
        }
    }
    lines.push(format!("pass={pass}"));
    Ok(Outcome { lines, pass })
}
