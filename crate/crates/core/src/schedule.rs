//! Stepsize schedules on the rescaled clock t = k/d.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant(f64),
    /// `values[j]` applies on `[breakpoints[j-1], breakpoints[j])`; needs
    /// `values.len() == breakpoints.len() + 1`.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl StepSchedule {
    pub fn constant(gamma: f64) -> Self {
        StepSchedule::Constant(gamma)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::Constant(g) => check_gamma(*g),
            StepSchedule::Piecewise { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(DlnError::Parameter(format!(
                        "piecewise schedule needs {} values, got {}",
                        breakpoints.len() + 1,
                        values.len()
                    )));
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DlnError::Parameter(
                        "schedule breakpoints must be strictly increasing".into(),
                    ));
                }
                values.iter().try_for_each(|g| check_gamma(*g))
            }
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            StepSchedule::Constant(g) => *g,
            StepSchedule::Piecewise { breakpoints, values } => {
                values[breakpoints.partition_point(|b| *b <= t)]
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            StepSchedule::Constant(g) => *g,
            StepSchedule::Piecewise { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if g.is_finite() && g >= 0.0 {
        Ok(())
    } else {
        Err(DlnError::Parameter(format!("stepsize must be finite and >= 0, got {g}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_lookup() {
        let s = StepSchedule::Piecewise {
            breakpoints: vec![1.0, 2.0],
            values: vec![0.1, 0.2, 0.3],
        };
        s.validate().unwrap();
        assert_eq!(s.at(0.0), 0.1);
        assert_eq!(s.at(0.999), 0.1);
        assert_eq!(s.at(1.0), 0.2);
        assert_eq!(s.at(5.0), 0.3);
        assert_eq!(s.sup(), 0.3);
    }

    #[test]
    fn rejects_bad_shapes() {
        let s = StepSchedule::Piecewise {
            breakpoints: vec![1.0],
            values: vec![0.1],
        };
        assert!(s.validate().is_err());
        assert!(StepSchedule::Constant(-1.0).validate().is_err());
    }
}
