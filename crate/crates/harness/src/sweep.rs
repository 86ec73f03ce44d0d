use std::io::Write;

use metampc_core::closedloop::{run_schedule, ControlContext, Schedule};
use serde::{Deserialize, Serialize};

use crate::pool::map_indexed;
use crate::{HarnessError, Provenance, TestSet};

/// Per-episode means over the test set for one fixed schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub period: usize,
    pub horizon: usize,
    pub total_cost: f64,
    pub control_cost: f64,
    pub computation_cost: f64,
    pub constraint_cost: f64,
    pub violations: usize,
    pub unconverged: usize,
    pub solve_time: f64,
    /// Set when a solve failed; the cell is then invalid.
    pub failure: Option<String>,
}

impl SweepCell {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none() && self.total_cost.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub periods: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Period-major.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, period: usize, horizon: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.period == period && c.horizon == horizon)
    }

    /// Valid cell of lowest total cost.
    pub fn argmin(&self) -> Option<&SweepCell> {
        self.cells.iter().filter(|c| c.is_valid()).min_by(|a, b| a.total_cost.total_cmp(&b.total_cost))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &Provenance) -> Result<(), HarnessError> {
        provenance.write_comment(&mut w)?;
        let mut csv = csv::Writer::from_writer(w);
        for c in &self.cells {
            csv.serialize(c)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Fixed-schedule MPC with LQR correction between computations, run over the
/// test set for every `(period, horizon)` pair.
pub fn baseline_sweep(
    ctx: &ControlContext,
    test_set: &TestSet,
    periods: &[usize],
    horizons: &[usize],
    workers: usize,
) -> Result<SweepGrid, HarnessError> {
    let pairs: Vec<(usize, usize)> = periods.iter().flat_map(|&k| horizons.iter().map(move |&n| (k, n))).collect();
    let weights = ctx.default_weights();
    ctx.evaluator(&weights).map_err(|e| HarnessError::Numeric(e.to_string()))?;
    let cells = map_indexed(
        pairs.len(),
        workers,
        || ctx.evaluator(&weights).expect("checked above"),
        |lqr, i| {
            let (period, horizon) = pairs[i];
            let mut cell = SweepCell {
                period,
                horizon,
                total_cost: 0.0,
                control_cost: 0.0,
                computation_cost: 0.0,
                constraint_cost: 0.0,
                violations: 0,
                unconverged: 0,
                solve_time: 0.0,
                failure: None,
            };
            let n = test_set.len() as f64;
            for spec in test_set.episodes() {
                match run_schedule(ctx, lqr, spec, Schedule { period, horizon }) {
                    Ok(s) => {
                        cell.total_cost += s.total_cost() / n;
                        cell.control_cost += s.control_cost / n;
                        cell.computation_cost += s.computation_cost / n;
                        cell.constraint_cost += s.constraint_cost / n;
                        cell.violations += s.violated as usize;
                        cell.unconverged += s.unconverged;
                        cell.solve_time += s.solve_time;
                    }
                    Err(e) => {
                        cell.failure = Some(e.to_string());
                        cell.total_cost = f64::NAN;
                        break;
                    }
                }
            }
            cell
        },
    );
    Ok(SweepGrid { periods: periods.to_vec(), horizons: horizons.to_vec(), cells })
}
