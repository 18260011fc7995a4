//! Dataset containers, the synthetic simulator, CSV ingestion and splitting.

mod ingest;
mod sim;
mod split;
mod stack;

use std::path::{Path, PathBuf};

pub use ingest::{
    denormalise, ingest_csv_rasters, normalise, truth_from_fire_channel, ChannelSource, FilledWeek, IngestManifest,
    QaReport,
};
pub use sim::{generate_dataset, min_weeks, SimConfig, SimWorld, SyntheticDataset};
pub use split::{temporal_split, train_len};
pub use stack::{GridStack, StackHeader, MAGIC};

use crate::error::{Error, Result};
use crate::frames::LabelledSequence;

pub const OBS_FILE: &str = "obs.gstk";
pub const TRUTH_FILE: &str = "truth.gstk";

/// An observation stack with its aligned ground-truth stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub obs: GridStack,
    pub truth: GridStack,
}

impl Dataset {
    pub fn new(obs: GridStack, truth: GridStack) -> Result<Self> {
        let (o, t) = (&obs.header, &truth.header);
        if t.channels != 1
            || (o.height, o.width, o.frame_count, o.first_week) != (t.height, t.width, t.frame_count, t.first_week)
        {
            return Err(Error::Config(
                "truth stack must be single-channel and aligned with the observations".into(),
            ));
        }
        Ok(Self { obs, truth })
    }

    pub fn obs_path(dir: &Path) -> PathBuf {
        dir.join(OBS_FILE)
    }

    pub fn truth_path(dir: &Path) -> PathBuf {
        dir.join(TRUTH_FILE)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::new(GridStack::read(&Self::obs_path(dir))?, GridStack::read(&Self::truth_path(dir))?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.obs.write(&Self::obs_path(dir))?;
        self.truth.write(&Self::truth_path(dir))
    }

    pub fn len(&self) -> usize {
        self.obs.frame_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, ratio: f64) -> Result<(Dataset, Dataset)> {
        let (ot, ov) = temporal_split(&self.obs, ratio)?;
        let (tt, tv) = temporal_split(&self.truth, ratio)?;
        Ok((Dataset::new(ot, tt)?, Dataset::new(ov, tv)?))
    }

    pub fn sequence(&self) -> Result<LabelledSequence> {
        LabelledSequence::new(self.obs.frames(), self.truth.fire_maps()?)
    }
}

impl From<SyntheticDataset> for Dataset {
    fn from(d: SyntheticDataset) -> Self {
        Self {
            obs: d.obs,
            truth: d.truth,
        }
    }
}
