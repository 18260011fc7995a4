//! Frame-level value types shared by the data, model, replay and eval modules.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One week of observed grids `y_k`, channel-major then row-major.
///
/// Channel 0 carries fire detection confidence, the rest climate covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFrame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub week: i64,
    pub data: Vec<f32>,
}

impl ObservationFrame {
    pub fn new(channels: usize, height: usize, width: usize, week: i64, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension {
                op: "observation_frame",
                lhs: vec![channels, height, width],
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            week,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, week: i64) -> Self {
        Self {
            channels,
            height,
            width,
            week,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FireMapKind {
    /// Binary occupancy.
    GroundTruth,
    /// Probabilities strictly inside (0,1).
    PredictedRisk,
}

/// `H×W` fire occupancy `f_k` or predicted risk `f̂_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FireMap {
    pub height: usize,
    pub width: usize,
    pub week: i64,
    pub kind: FireMapKind,
    pub data: Vec<f32>,
}

impl FireMap {
    pub fn ground_truth(height: usize, width: usize, week: i64, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension {
                op: "fire_map",
                lhs: vec![height, width],
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain("ground-truth fire maps must be binary".into()));
        }
        Ok(Self {
            height,
            width,
            week,
            kind: FireMapKind::GroundTruth,
            data,
        })
    }

    pub fn predicted(height: usize, width: usize, week: i64, data: Vec<f32>) -> Self {
        Self {
            height,
            width,
            week,
            kind: FireMapKind::PredictedRisk,
            data,
        }
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }
}

/// Recurrent state `h_k`; `week` is the index of the first frame it has not yet seen.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState<T> {
    pub vector: Vec<T>,
    pub week: i64,
}

impl<T: Scalar> HiddenState<T> {
    pub fn zeros(width: usize, week: i64) -> Self {
        Self {
            vector: vec![T::zero(); width],
            week,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|v| v.is_finite())
    }
}

/// Aligned observation and ground-truth sequences over consecutive weeks.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSequence {
    pub frames: Vec<Arc<ObservationFrame>>,
    pub fires: Vec<Arc<FireMap>>,
}

impl LabelledSequence {
    pub fn new(frames: Vec<ObservationFrame>, fires: Vec<FireMap>) -> Result<Self> {
        if frames.len() != fires.len() {
            return Err(Error::Config(format!(
                "{} observation frames but {} fire maps",
                frames.len(),
                fires.len()
            )));
        }
        for (i, (y, f)) in frames.iter().zip(&fires).enumerate() {
            if y.week != f.week || (y.height, y.width) != (f.height, f.width) {
                return Err(Error::Config(format!("observation and fire map {i} disagree in week or grid size")));
            }
            if i > 0 && y.week != frames[i - 1].week + 1 {
                return Err(Error::Config(format!("week {} does not follow week {}", y.week, frames[i - 1].week)));
            }
        }
        Ok(Self {
            frames: frames.into_iter().map(Arc::new).collect(),
            fires: fires.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_week(&self) -> Option<i64> {
        self.frames.first().map(|y| y.week)
    }
}
