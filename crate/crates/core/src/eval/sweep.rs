use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda: f64,
    /// `None` when training or scoring failed.
    pub score: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Index into `cells`.
    pub selected: Option<usize>,
}

pub const SWEEP_KS: [usize; 4] = [8, 16, 32, 64];
pub const SWEEP_LAMBDAS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// Scores every `(K, lambda)` cell with `run`; failed cells are kept in the
/// table but never selected. The minimum score wins, ties going to the
/// smaller lambda, then the smaller K.
pub fn hyperparam_sweep(
    ks: &[usize],
    lambdas: &[f64],
    mut run: impl FnMut(usize, f64) -> Result<f64>,
) -> SweepResult {
    let mut cells = Vec::with_capacity(ks.len() * lambdas.len());
    for &k in ks {
        for &lambda in lambdas {
            let (score, status) = match run(k, lambda) {
                Ok(s) if s.is_finite() => (Some(s), "ok".to_string()),
                Ok(s) => (None, format!("failed: score {s}")),
                Err(e) => (None, format!("failed: {e}")),
            };
            cells.push(SweepCell {
                k,
                lambda,
                score,
                status,
            });
        }
    }
    let selected = select_cell(&cells);
    SweepResult { cells, selected }
}

pub fn select_cell(cells: &[SweepCell]) -> Option<usize> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.score.map(|s| (i, s, c.lambda, c.k)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(a.3.cmp(&b.3))
        })
        .map(|t| t.0)
}

impl SweepResult {
    pub fn selected_cell(&self) -> Option<&SweepCell> {
        self.selected.map(|i| &self.cells[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,lambda,score,status,selected\n");
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.k,
                c.lambda,
                c.score.map(|v| format!("{v:e}")).unwrap_or_default(),
                c.status.replace(',', ";"),
                u8::from(self.selected == Some(i))
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn single_cell_is_selected() {
        let r = hyperparam_sweep(&[16], &[10.0], |_, _| Ok(0.3));
        assert_eq!(r.selected, Some(0));
    }

    #[test]
    fn ties_prefer_small_lambda_then_small_k() {
        let r = hyperparam_sweep(&[32, 8], &[100.0, 1.0], |k, l| {
            Ok(if l == 1.0 || k == 8 { 1.0 } else { 2.0 })
        });
        let c = r.selected_cell().unwrap();
        assert_eq!((c.k, c.lambda), (8, 1.0));
    }

    #[test]
    fn failures_are_excluded_and_grid_is_complete() {
        let r = hyperparam_sweep(&SWEEP_KS, &SWEEP_LAMBDAS, |k, l| {
            if k == 8 {
                Err(Error::TrainingAborted("diverged".into()))
            } else if l == 1000.0 {
                Ok(f64::NAN)
            } else {
                Ok(k as f64 + l)
            }
        });
        assert_eq!(r.cells.len(), 16);
        assert_eq!(r.to_csv().lines().count(), 17);
        let c = r.selected_cell().unwrap();
        assert_eq!((c.k, c.lambda), (16, 1.0));
        assert!(r.cells[0].score.is_none());
    }
}
