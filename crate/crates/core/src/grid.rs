//! Decreasing time grids on [0, 1].

use crate::error::{Error, Result};

/// Discretization of t from 1 (noise side) down to 0 (data side).
///
/// Interior points are a uniform grid passed through the resolution-shift
/// warp `shift * u / (1 + (shift - 1) * u)`. The first `skip` intervals are
/// present in `times` but inactive: editing and integration start at
/// `times[skip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    shift: f64,
    skip: usize,
}

/// One active Euler interval of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    /// Index of the interval within the full grid.
    pub index: usize,
    pub t: f64,
    pub t_next: f64,
}

impl GridStep {
    /// Signed step, negative when moving toward the data side.
    pub fn dt(&self) -> f64 {
        self.t_next - self.t
    }
}

pub fn warp(u: f64, shift: f64) -> f64 {
    shift * u / (1.0 + (shift - 1.0) * u)
}

pub fn make_time_grid(n_steps: usize, shift: f64, skip: usize) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    if !(shift >= 1.0) || !shift.is_finite() {
        return Err(Error::invalid(format!("shift must be >= 1, got {shift}")));
    }
    if skip >= n_steps {
        return Err(Error::invalid(format!(
            "skip must be below n_steps ({skip} >= {n_steps})"
        )));
    }
    let mut times: Vec<f64> = (0..=n_steps)
        .map(|i| {
            let u = (n_steps - i) as f64 / n_steps as f64;
            warp(u, shift)
        })
        .collect();
    times[0] = 1.0;
    times[n_steps] = 0.0;
    Ok(TimeGrid { times, shift, skip })
}

impl TimeGrid {
    /// Builds a grid from explicit times; they must run strictly from 1 to 0.
    pub fn from_times(times: Vec<f64>, skip: usize) -> Result<TimeGrid> {
        if times.len() < 2 {
            return Err(Error::invalid("a grid needs at least two points"));
        }
        if times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(Error::invalid("grid must start at 1 and end at 0"));
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("grid times must be strictly decreasing"));
        }
        if skip >= times.len() - 1 {
            return Err(Error::invalid("skip must be below the step count"));
        }
        Ok(TimeGrid {
            times,
            shift: 1.0,
            skip,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn skip(&self) -> usize {
        self.skip
    }

    /// Time at which active steps begin.
    pub fn start_time(&self) -> f64 {
        self.times[self.skip]
    }

    pub fn active_steps(&self) -> usize {
        self.n_steps() - self.skip
    }

    /// Same times with a different skip count. `skip == n_steps` is allowed
    /// and leaves no active step.
    pub fn with_skip(&self, skip: usize) -> Result<TimeGrid> {
        if skip > self.n_steps() {
            return Err(Error::invalid("skip exceeds the step count"));
        }
        Ok(TimeGrid {
            skip,
            ..self.clone()
        })
    }

    /// Active intervals, from `times[skip]` down to 0.
    pub fn steps(&self) -> impl DoubleEndedIterator<Item = GridStep> + ExactSizeIterator + '_ {
        (self.skip..self.n_steps()).map(move |i| GridStep {
            index: i,
            t: self.times[i],
            t_next: self.times[i + 1],
        })
    }
}
