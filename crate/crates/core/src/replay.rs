//! FIFO trajectory memory and minibatch sampling.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::frames::{FireMap, ObservationFrame};

/// Consecutive weeks of observations with their ground-truth fire maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start_week: i64,
    pub frames: Vec<(Arc<ObservationFrame>, Arc<FireMap>)>,
}

impl Trajectory {
    pub fn new(frames: Vec<(Arc<ObservationFrame>, Arc<FireMap>)>) -> Result<Self> {
        let start_week = frames.first().map(|(y, _)| y.week).unwrap_or(0);
        for (i, (y, f)) in frames.iter().enumerate() {
            let week = start_week + i as i64;
            if y.week != week || f.week != week {
                return Err(Error::Domain(format!(
                    "trajectory frame {i} has weeks (obs {}, fire {}), expected {week}",
                    y.week, f.week
                )));
            }
        }
        Ok(Self { start_week, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of admissible window starts for `K` inputs at horizon `T`.
    pub fn window_count(&self, k: usize, t: usize) -> usize {
        (self.frames.len() + 1).saturating_sub(window_len(k, t))
    }
}

/// Frames spanned by one training window: inputs `y_0..y_{K-1}`, observation
/// targets `y_1..y_K`, fire targets `f_{1+T}..f_{K+T}`.
pub fn window_len(k: usize, t: usize) -> usize {
    k + t + 1
}

/// One training window starting at `start` inside a stored trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub frames: Vec<(Arc<ObservationFrame>, Arc<FireMap>)>,
    pub k: usize,
    pub t: usize,
}

impl Window {
    /// Encoder inputs `y_0..y_{K-1}`.
    pub fn inputs(&self) -> impl Iterator<Item = &ObservationFrame> {
        self.frames[..self.k].iter().map(|(y, _)| y.as_ref())
    }

    /// Observation target for the state after input `j`: `y_{j+1}`.
    pub fn obs_target(&self, j: usize) -> &ObservationFrame {
        &self.frames[j + 1].0
    }

    /// Fire target for the state after input `j`: `f_{j+1+T}`.
    pub fn fire_target(&self, j: usize) -> &FireMap {
        &self.frames[j + 1 + self.t].1
    }

    pub fn start_week(&self) -> i64 {
        self.frames[0].0.week
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub windows: Vec<Window>,
}

/// Bounded FIFO of recent trajectories.
#[derive(Clone, Debug)]
pub struct TrajectoryBuffer {
    capacity: usize,
    k: usize,
    t: usize,
    entries: VecDeque<Trajectory>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize, k: usize, t: usize) -> Result<Self> {
        if capacity == 0 || k == 0 {
            return Err(Error::Config("replay capacity and window length must be positive".into()));
        }
        Ok(Self {
            capacity,
            k,
            t,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends `traj`, evicting the oldest entry when full.
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        let required = window_len(self.k, self.t);
        if traj.len() < required {
            return Err(Error::TrajectoryLength {
                len: traj.len(),
                required,
            });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(traj);
        Ok(())
    }

    /// Draws `l` windows with replacement: a trajectory uniformly among the
    /// admissible ones, then a start offset uniformly within it.
    pub fn sample<R: Rng + ?Sized>(&self, l: usize, rng: &mut R) -> Result<Minibatch> {
        let admissible: Vec<&Trajectory> = self
            .entries
            .iter()
            .filter(|t| t.window_count(self.k, self.t) > 0)
            .collect();
        if admissible.is_empty() {
            return Err(Error::Sampling(format!(
                "no stored trajectory admits a window of {} frames",
                window_len(self.k, self.t)
            )));
        }
        let span = window_len(self.k, self.t);
        let windows = (0..l)
            .map(|_| {
                let traj = admissible[rng.random_range(0..admissible.len())];
                let start = rng.random_range(0..traj.window_count(self.k, self.t));
                Window {
                    frames: traj.frames[start..start + span].to_vec(),
                    k: self.k,
                    t: self.t,
                }
            })
            .collect();
        Ok(Minibatch { windows })
    }
}
