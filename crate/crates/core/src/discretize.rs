//! Piecewise-constant approximations of the rotating interaction.
//!
//! The span is cut into `n` equal cells and `H_I(t)` is frozen inside each
//! cell at its left endpoint or midpoint. Everything else (plant
//! Hamiltonian, couplings, noise) is kept as in the exact dynamics, so the
//! difference to [`ClosedLoop`] isolates the discretisation of the
//! interaction. Left-endpoint sampling is first order in the cell width,
//! midpoint sampling second order.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::propagate::{integrate, ClosedLoop, Dynamics, IntegratorOptions, NoiseModel, Reference, Trajectory};
use crate::protocol::FeedbackProtocol;
use crate::qmat::{trace_norm, CMatrix, DensityMatrix, HermitianMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRule {
    Left,
    Midpoint,
}

impl CellRule {
    fn offset(self) -> f64 {
        match self {
            CellRule::Left => 0.0,
            CellRule::Midpoint => 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseProtocol {
    pub base: FeedbackProtocol,
    pub n_cells: usize,
    pub cell_rule: CellRule,
}

impl PiecewiseProtocol {
    pub fn new(base: FeedbackProtocol, n_cells: usize, cell_rule: CellRule) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidArgument("n_cells must be at least 1".into()));
        }
        Ok(Self {
            base,
            n_cells,
            cell_rule,
        })
    }
}

/// Everything except the protocol discretisation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub h_p: HermitianMatrix,
    pub noise: NoiseModel,
    pub sigma0: DensityMatrix,
    pub span: (f64, f64),
    pub grid: Vec<f64>,
    pub opts: IntegratorOptions,
}

/// Closed-loop dynamics whose time dependence is frozen cell by cell.
#[derive(Debug, Clone)]
pub struct PiecewiseDynamics {
    inner: ClosedLoop,
    t0: f64,
    width: f64,
    n_cells: usize,
    rule: CellRule,
}

impl PiecewiseDynamics {
    pub fn new(inner: ClosedLoop, span: (f64, f64), n_cells: usize, rule: CellRule) -> Result<Self> {
        if n_cells == 0 || !(span.0 < span.1) {
            return Err(Error::InvalidArgument("need n_cells >= 1 and a nonempty span".into()));
        }
        Ok(Self {
            inner,
            t0: span.0,
            width: (span.1 - span.0) / n_cells as f64,
            n_cells,
            rule,
        })
    }

    fn boundary(&self, j: usize) -> f64 {
        self.t0 + self.width * j as f64
    }

    fn cell_of(&self, t: f64) -> usize {
        let x = (t - self.t0) / self.width;
        // a step starting on a boundary belongs to the cell on its right
        let j = (x + 1e-9).floor().max(0.0) as usize;
        j.min(self.n_cells - 1)
    }

    /// Time at which the interaction is frozen in cell `j`.
    pub fn sample_time(&self, j: usize) -> f64 {
        self.t0 + self.width * (j as f64 + self.rule.offset())
    }
}

impl Dynamics for PiecewiseDynamics {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn rhs(&self, t: f64, x: &CMatrix) -> CMatrix {
        self.inner.rhs(self.sample_time(self.cell_of(t)), x)
    }

    fn rhs_in_step(&self, step_start: f64, _t: f64, x: &CMatrix) -> CMatrix {
        self.inner.rhs(self.sample_time(self.cell_of(step_start)), x)
    }

    fn breakpoints(&self, _span: (f64, f64)) -> Vec<f64> {
        (1..self.n_cells).map(|j| self.boundary(j)).collect()
    }

    fn reference(&self) -> Option<&Reference> {
        self.inner.reference()
    }
}

fn closed_loop(base: &FeedbackProtocol, s: &Scenario) -> Result<ClosedLoop> {
    ClosedLoop::new(&s.h_p, base, base.gamma(), &s.noise)
}

/// Trajectory under the piecewise-constant interaction.
pub fn discretized_trajectory(p: &PiecewiseProtocol, s: &Scenario) -> Result<Trajectory> {
    let dynamics = PiecewiseDynamics::new(closed_loop(&p.base, s)?, s.span, p.n_cells, p.cell_rule)?;
    integrate(&dynamics, &s.sigma0, s.span, &s.noise.transient_events, &s.grid, &s.opts)
}

/// Exact-interaction trajectory for the same scenario.
pub fn exact_trajectory(base: &FeedbackProtocol, s: &Scenario) -> Result<Trajectory> {
    integrate(&closed_loop(base, s)?, &s.sigma0, s.span, &s.noise.transient_events, &s.grid, &s.opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub terminal_error: f64,
    /// `NaN` on the first row.
    pub observed_order: f64,
}

/// Terminal trace-norm error against the exact dynamics for each cell count,
/// with observed orders between consecutive rows.
pub fn convergence_table(
    base: &FeedbackProtocol,
    s: &Scenario,
    cells: &[usize],
    rule: CellRule,
) -> Result<Vec<ConvergenceRow>> {
    if cells.len() < 2 || cells.windows(2).any(|w| w[0] >= w[1]) || cells[0] == 0 {
        return Err(Error::InvalidArgument(
            "cells must be at least two strictly increasing positive counts".into(),
        ));
    }
    let terminal = |traj: Trajectory| -> Result<CMatrix> {
        traj.states
            .last()
            .map(|x| x.matrix().clone())
            .ok_or_else(|| Error::InvalidArgument("empty output grid".into()))
    };
    let exact = terminal(exact_trajectory(base, s)?)?;
    let errors: Vec<f64> = cells
        .par_iter()
        .map(|&n| {
            let p = PiecewiseProtocol::new(base.clone(), n, rule)?;
            Ok(trace_norm(&(terminal(discretized_trajectory(&p, s)?)? - &exact)))
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, &n)| ConvergenceRow {
            n,
            terminal_error: errors[i],
            observed_order: if i == 0 {
                f64::NAN
            } else {
                (errors[i - 1] / errors[i]).ln() / (n as f64 / cells[i - 1] as f64).ln()
            },
        })
        .collect())
}

/// `n,terminal_error,observed_order`.
pub fn write_table_csv<W: Write>(rows: &[ConvergenceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,terminal_error,observed_order")?;
    for r in rows {
        writeln!(w, "{},{:.16e},{:.16e}", r.n, r.terminal_error, r.observed_order)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::build_design;
    use crate::qmat::{max_abs_diff, qubit_ket, random};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_frame_single_cell_is_exact() {
        let p = build_design(&qubit_ket("00").unwrap(), None, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let s = Scenario {
            h_p: HermitianMatrix::zeros(4),
            noise: NoiseModel::none(),
            sigma0: random::density(&mut rng, 8),
            span: (0.0, 1.0),
            grid: vec![0.5, 1.0],
            opts: IntegratorOptions::default(),
        };
        let exact = exact_trajectory(&p, &s).unwrap();
        let pw = discretized_trajectory(&PiecewiseProtocol::new(p, 1, CellRule::Left).unwrap(), &s).unwrap();
        for (a, b) in exact.states.iter().zip(&pw.states) {
            assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-9);
        }
    }

    #[test]
    fn cells_and_sample_times() {
        let p = build_design(&qubit_ket("00").unwrap(), None, 1.0).unwrap();
        let inner = ClosedLoop::new(&HermitianMatrix::zeros(4), &p, 1.0, &NoiseModel::none()).unwrap();
        let d = PiecewiseDynamics::new(inner, (0.0, 2.0), 4, CellRule::Midpoint).unwrap();
        assert_eq!(d.breakpoints((0.0, 2.0)), vec![0.5, 1.0, 1.5]);
        assert_eq!(d.cell_of(0.5), 1);
        assert_eq!(d.cell_of(0.4999), 0);
        assert_eq!(d.cell_of(2.0), 3);
        assert_eq!(d.sample_time(1), 0.75);
        assert!(PiecewiseProtocol::new(p, 0, CellRule::Left).is_err());
    }
}
