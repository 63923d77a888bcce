//! Record grids and per-run trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{Iterate, ModelConfig, ProblemInstance};
use crate::statistic::StatRegistry;

pub const DEFAULT_RECORD_POINTS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordGrid {
    pub times: Vec<f64>,
}

impl RecordGrid {
    /// `n` equally spaced points on [0, T], both ends included.
    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(DlnError::Parameter(format!("horizon must be positive, got {t_end}")));
        }
        if n < 2 {
            return Err(DlnError::Parameter("record grid needs at least 2 points".into()));
        }
        let times = (0..n).map(|j| t_end * j as f64 / (n - 1) as f64).collect();
        Ok(RecordGrid { times })
    }

    pub fn standard(t_end: f64) -> Result<Self> {
        Self::uniform(t_end, DEFAULT_RECORD_POINTS)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[0] > w[1]) || times[0] < 0.0 {
            return Err(DlnError::Parameter("record times must be nonnegative and sorted".into()));
        }
        Ok(RecordGrid { times })
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Step index ⌊t·d⌋ for each grid time. The relative 1e-9 slack keeps
    /// times that are exact multiples of 1/d from rounding down a step.
    pub fn sgd_steps(&self, d: usize) -> Vec<u64> {
        self.times.iter().map(|t| floor_steps(t * d as f64)).collect()
    }

    /// Euler–Maruyama step index ⌊t/dt⌋ for each grid time.
    pub fn sde_steps(&self, dt: f64) -> Vec<u64> {
        self.times.iter().map(|t| floor_steps(t / dt)).collect()
    }

    pub fn check_within(&self, horizon: f64) -> Result<()> {
        if self.end() > horizon * (1.0 + 1e-12) {
            return Err(DlnError::Parameter(format!(
                "record grid ends at {} beyond horizon {horizon}",
                self.end()
            )));
        }
        Ok(())
    }
}

fn floor_steps(x: f64) -> u64 {
    (x + 1e-9 * x.max(1.0)).floor() as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub run_id: u64,
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[s][j]`: statistic `s` at grid time `j`.
    pub values: Vec<Vec<f64>>,
    /// First time a non-finite value appeared; later values are +∞.
    pub diverged_at: Option<f64>,
}

impl TrajectoryRecord {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.series(name).and_then(|s| s.last().copied())
    }
}

/// Shared bookkeeping for engines: fills grid slots as the step counter passes
/// them and censors the remainder once the run diverges.
pub(crate) struct Recorder<'a> {
    steps: Vec<u64>,
    next: usize,
    registry: &'a StatRegistry,
    pub record: TrajectoryRecord,
    pub snapshots: Option<Vec<Iterate>>,
}

impl<'a> Recorder<'a> {
    pub fn new(grid: &RecordGrid, steps: Vec<u64>, registry: &'a StatRegistry, run_id: u64, keep_paths: bool) -> Self {
        Recorder {
            steps,
            next: 0,
            registry,
            record: TrajectoryRecord {
                run_id,
                times: grid.times.clone(),
                names: registry.names(),
                values: vec![Vec::with_capacity(grid.len()); registry.len()],
                diverged_at: None,
            },
            snapshots: keep_paths.then(Vec::new),
        }
    }

    pub fn done(&self) -> bool {
        self.next >= self.steps.len()
    }

    /// Records every grid slot due at `step`. Returns false if the iterate
    /// (or a statistic) is non-finite, after censoring.
    pub fn observe(&mut self, step: u64, t: f64, config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> bool {
        while self.next < self.steps.len() && self.steps[self.next] == step {
            let vals = if x.is_finite() { self.registry.eval_all(config, inst, x).ok() } else { None };
            match vals {
                Some(v) if v.iter().all(|x| x.is_finite()) => {
                    for (s, val) in v.into_iter().enumerate() {
                        self.record.values[s].push(val);
                    }
                    if let Some(snaps) = self.snapshots.as_mut() {
                        snaps.push(x.clone());
                    }
                }
                _ => {
                    self.censor(t);
                    return false;
                }
            }
            self.next += 1;
        }
        true
    }

    pub fn censor(&mut self, t: f64) {
        if self.record.diverged_at.is_none() {
            self.record.diverged_at = Some(t);
        }
        let n = self.steps.len();
        for s in self.record.values.iter_mut() {
            s.resize(n, f64::INFINITY);
        }
        self.next = n;
    }

    pub fn finish(self) -> (TrajectoryRecord, Option<Vec<Iterate>>) {
        (self.record, self.snapshots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints() {
        let g = RecordGrid::uniform(20.0, 512).unwrap();
        assert_eq!(g.times[0], 0.0);
        assert_eq!(g.end(), 20.0);
        assert_eq!(g.len(), 512);
        assert!(RecordGrid::uniform(0.0, 10).is_err());
    }

    #[test]
    fn step_indices_floor() {
        let g = RecordGrid::from_times(vec![0.0, 0.3, 1.0, 2.5]).unwrap();
        assert_eq!(g.sgd_steps(10), vec![0, 3, 10, 25]);
        assert_eq!(g.sgd_steps(4), vec![0, 1, 4, 10]);
        assert_eq!(g.sde_steps(0.25), vec![0, 1, 4, 10]);
    }
}
