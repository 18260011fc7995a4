//! The online training loop: stream a frame, refresh the replay memory,
//! sample a minibatch and take one step per parameter group.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_gradients, Objective};
use super::schedule::TturSchedule;
use crate::error::{Error, Result};
use crate::frames::{HiddenState, LabelledSequence};
use crate::model::{Checkpoint, Dims, Model, ParamGroup, Variant};
use crate::numerics::{clip_global_norm, Adam, Tensor};
use crate::replay::{window_len, Trajectory, TrajectoryBuffer};

/// Seed offset separating minibatch sampling from initialisation.
const SAMPLING_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub dims: Dims,
    pub schedule: TturSchedule,
    /// Windows per minibatch `L`.
    pub batch_size: usize,
    /// Inputs per window `K`.
    pub window: usize,
    /// Replay capacity `N`.
    pub buffer_capacity: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_interval: u64,
    /// Per-group global gradient norm bound.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DynamicAutoenc,
            dims: Dims::default(),
            schedule: TturSchedule::default(),
            batch_size: 8,
            window: 12,
            buffer_capacity: 64,
            iterations: 500,
            seed: 0,
            checkpoint_interval: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 || self.window == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("batch_size, window and buffer_capacity must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Frames spanned by one window (`K + T + 1`).
    pub fn span(&self) -> usize {
        window_len(self.window, self.dims.horizon)
    }
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub n: u64,
    pub eps_pred: f64,
    pub eps_sys: f64,
    /// Absent for variants without an observation decoder.
    pub l_sys: Option<f64>,
    pub l_pred: f64,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam_sys: Adam<f32>,
    pub adam_pred: Adam<f32>,
    /// Completed iterations.
    pub n: u64,
    /// Stream frames consumed, including the warm-up.
    pub consumed: u64,
    /// State tracking the stream with the current parameters.
    pub online: HiddenState<f32>,
    pub history: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    config: TrainConfig,
    n: u64,
    consumed: u64,
    online_week: i64,
    adam_steps: [u64; 2],
    history: Vec<LossRecord>,
}

fn group_sizes(model: &Model<f32>, group: ParamGroup) -> Vec<usize> {
    model
        .params
        .group_indices(group)
        .into_iter()
        .map(|i| model.params.entries()[i].tensor.len())
        .collect()
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a LabelledSequence,
    buffer: TrajectoryBuffer,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Fresh model; consumes the first `K + T` frames without updating.
    pub fn new(config: TrainConfig, data: &'a LabelledSequence) -> Result<Self> {
        check_data(&config, data)?;
        let model = Model::init(config.variant, config.dims, config.seed)?;
        let state = TrainState {
            adam_sys: Adam::new(&group_sizes(&model, ParamGroup::Sys)),
            adam_pred: Adam::new(&group_sizes(&model, ParamGroup::Pred)),
            online: model.zero_state(data.frames[0].week),
            model,
            n: 0,
            consumed: 0,
            history: Vec::new(),
        };
        let buffer = TrajectoryBuffer::new(config.buffer_capacity, config.window, config.dims.horizon)?;
        let mut trainer = Self {
            config,
            data,
            buffer,
            state,
        };
        for _ in 0..trainer.config.span() - 1 {
            trainer.consume()?;
        }
        Ok(trainer)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, data: &'a LabelledSequence, ck: &Checkpoint) -> Result<Self> {
        check_data(&config, data)?;
        let saved: SavedState = ck
            .state
            .clone()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Config("checkpoint carries no training state".into()))?;
        let mut expected = saved.config.clone();
        expected.iterations = config.iterations;
        expected.checkpoint_interval = config.checkpoint_interval;
        if expected != config {
            return Err(Error::Config("resume configuration differs from the checkpointed run".into()));
        }
        let model = ck.model.clone();
        let moments = |group: &str, which: &str, idx: Vec<usize>| -> Result<Vec<Vec<f32>>> {
            idx.into_iter()
                .map(|i| {
                    let name = format!("adam.{group}.{which}.{}", model.params.entries()[i].name);
                    ck.aux(&name)
                        .map(|t| t.data().to_vec())
                        .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))
                })
                .collect()
        };
        let sys_idx = model.params.group_indices(ParamGroup::Sys);
        let pred_idx = model.params.group_indices(ParamGroup::Pred);
        let adam_sys = Adam::from_parts(
            saved.adam_steps[0],
            moments("sys", "m", sys_idx.clone())?,
            moments("sys", "v", sys_idx)?,
        )?;
        let adam_pred = Adam::from_parts(
            saved.adam_steps[1],
            moments("pred", "m", pred_idx.clone())?,
            moments("pred", "v", pred_idx)?,
        )?;
        let online = HiddenState {
            vector: ck
                .aux("online.h")
                .ok_or_else(|| Error::Config("checkpoint lacks `online.h`".into()))?
                .data()
                .to_vec(),
            week: saved.online_week,
        };
        let mut buffer = TrajectoryBuffer::new(config.buffer_capacity, config.window, config.dims.horizon)?;
        for c in replayed_window_ends(&config, data.len(), saved.consumed) {
            buffer.push(window_at(&config, data, c)?)?;
        }
        Ok(Self {
            config,
            data,
            buffer,
            state: TrainState {
                model,
                adam_sys,
                adam_pred,
                n: saved.n,
                consumed: saved.consumed,
                online,
                history: saved.history,
            },
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn buffer(&self) -> &TrajectoryBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Streams the next frame: advances the online state and stores the
    /// window that ends at it. The stream wraps to the start of the split.
    fn consume(&mut self) -> Result<()> {
        let m = self.data.len();
        let i = (self.state.consumed % m as u64) as usize;
        if i == 0 {
            self.state.online = self.state.model.zero_state(self.data.frames[0].week);
        }
        self.state.online = self.state.model.step(&self.state.online, &self.data.frames[i])?;
        if i + 1 >= self.config.span() {
            self.buffer.push(window_at(&self.config, self.data, self.state.consumed)?)?;
        }
        self.state.consumed += 1;
        Ok(())
    }

    /// One iteration of the loop; returns its metrics row.
    pub fn step(&mut self) -> Result<LossRecord> {
        let n = self.state.n;
        self.consume()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SAMPLING_SALT);
        rng.set_stream(n);
        let batch = self.buffer.sample(self.config.batch_size, &mut rng)?;
        let bg = batch_gradients(&self.state.model, &batch, Objective::Joint)?;
        let at = |e: Error| match e {
            Error::NonFiniteGradient { param, .. } => Error::NonFiniteGradient {
                param,
                iteration: Some(n),
            },
            other => other,
        };
        let l_pred = bg.l_pred.map(f64::from).unwrap_or(f64::NAN);
        let l_sys = bg.l_sys.map(f64::from);
        if !l_pred.is_finite() || l_sys.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {n}")));
        }

        let (eps_pred, eps_sys) = self.config.schedule.step_sizes(n);
        let clip = self.config.clip_norm as f32;
        let mut grads: Vec<Option<Vec<f32>>> = bg.grads.into_iter().map(Some).collect();
        let params = self.state.model.params.entries_mut();
        for (group, adam, lr) in [
            (ParamGroup::Sys, &mut self.state.adam_sys, eps_sys),
            (ParamGroup::Pred, &mut self.state.adam_pred, eps_pred),
        ] {
            let idx: Vec<usize> = (0..params.len()).filter(|&i| params[i].network.group() == group).collect();
            let mut g: Vec<Vec<f32>> = idx.iter().map(|&i| grads[i].take().unwrap_or_default()).collect();
            if let Some(bad) = idx.iter().zip(&g).find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(at(Error::NonFiniteGradient {
                    param: params[*bad.0].name.clone(),
                    iteration: None,
                }));
            }
            clip_global_norm(&mut g, clip);
            let mut targets: Vec<(&str, &mut Tensor<f32>)> = params
                .iter_mut()
                .filter(|p| p.network.group() == group)
                .map(|p| (p.name.as_str(), &mut p.tensor))
                .collect();
            let refs: Vec<&[f32]> = g.iter().map(Vec::as_slice).collect();
            adam.step(&mut targets, &refs, lr as f32).map_err(at)?;
        }

        let record = LossRecord {
            n,
            eps_pred,
            eps_sys,
            l_sys,
            l_pred,
        };
        self.state.history.push(record);
        self.state.n += 1;
        Ok(record)
    }

    /// Snapshot of parameters, optimiser moments and loop counters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let s = &self.state;
        let mut ck = Checkpoint::from_model(s.model.clone());
        ck.iteration = s.n;
        for (group, tag, adam) in [(ParamGroup::Sys, "sys", &s.adam_sys), (ParamGroup::Pred, "pred", &s.adam_pred)] {
            let idx = s.model.params.group_indices(group);
            for (which, moments) in [("m", adam.first_moments()), ("v", adam.second_moments())] {
                for (&i, data) in idx.iter().zip(moments) {
                    let p = &s.model.params.entries()[i];
                    ck.aux.push((
                        format!("adam.{tag}.{which}.{}", p.name),
                        Tensor::new(p.tensor.shape().to_vec(), data.clone())?,
                    ));
                }
            }
        }
        ck.aux.push(("online.h".into(), Tensor::new(vec![s.online.vector.len()], s.online.vector.clone())?));
        let saved = SavedState {
            config: self.config.clone(),
            n: s.n,
            consumed: s.consumed,
            online_week: s.online.week,
            adam_steps: [s.adam_sys.steps(), s.adam_pred.steps()],
            history: s.history.clone(),
        };
        ck.state = Some(serde_json::to_value(saved)?);
        Ok(ck)
    }

    /// Runs until `config.iterations` iterations are complete. With `out`,
    /// writes periodic checkpoints, `final.json`/`final.bin` and `metrics.csv`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
        }
        while self.state.n < self.config.iterations {
            self.step()?;
            let n = self.state.n;
            if let Some(dir) = out {
                if self.config.checkpoint_interval > 0 && n % self.config.checkpoint_interval == 0 {
                    self.checkpoint()?.write(&checkpoint_path(dir, n))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint()?.write(&dir.join("final.json"))?;
            write_metrics(&dir.join("metrics.csv"), &self.state.history)?;
        }
        Ok(())
    }
}

pub fn checkpoint_path(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("ckpt-{n:06}.json"))
}

fn check_data(config: &TrainConfig, data: &LabelledSequence) -> Result<()> {
    config.validate()?;
    let d = &config.dims;
    if data.len() < config.span() {
        return Err(Error::Config(format!(
            "training stream has {} weeks; K + T + 1 = {} are needed",
            data.len(),
            config.span()
        )));
    }
    let dims = data.frames[0].dims();
    if dims != (d.channels, d.height, d.width) {
        return Err(Error::Config(format!(
            "dataset frames are {dims:?} but the model expects {:?}",
            (d.channels, d.height, d.width)
        )));
    }
    Ok(())
}

/// The window ending at global stream position `c`.
fn window_at(config: &TrainConfig, data: &LabelledSequence, c: u64) -> Result<Trajectory> {
    let i = (c % data.len() as u64) as usize;
    let start = i + 1 - config.span();
    let frames = (start..=i)
        .map(|j| (data.frames[j].clone(), data.fires[j].clone()))
        .collect();
    Trajectory::new(frames)
}

/// Stream positions, oldest first, whose windows are in the buffer after
/// `consumed` frames.
fn replayed_window_ends(config: &TrainConfig, m: usize, consumed: u64) -> Vec<u64> {
    let mut ends: Vec<u64> = (0..consumed)
        .rev()
        .filter(|&c| (c % m as u64) as usize + 1 >= config.span())
        .take(config.buffer_capacity)
        .collect();
    ends.reverse();
    ends
}

/// Writes the metrics log (`n,eps_pred,eps_sys,l_sys,l_pred`).
pub fn write_metrics(path: &Path, history: &[LossRecord]) -> Result<()> {
    let rows = history.iter().map(|r| {
        [
            r.n.to_string(),
            r.eps_pred.to_string(),
            r.eps_sys.to_string(),
            r.l_sys.map_or_else(|| "nan".to_string(), |v| v.to_string()),
            r.l_pred.to_string(),
        ]
    });
    write_csv_rows(path, &["n", "eps_pred", "eps_sys", "l_sys", "l_pred"], rows)
}

/// Writes a header row followed by `rows`.
pub fn write_csv_rows<const N: usize>(
    path: &Path,
    header: &[&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Trains from scratch per `config`; see [`Trainer::run`] for `out`.
pub fn train_run(config: TrainConfig, data: &LabelledSequence, out: Option<&Path>) -> Result<TrainState> {
    let mut trainer = Trainer::new(config, data)?;
    trainer.run(out)?;
    Ok(trainer.into_state())
}

/// Continues a checkpointed run up to `config.iterations`.
pub fn resume_run(config: TrainConfig, data: &LabelledSequence, ck: &Checkpoint, out: Option<&Path>) -> Result<TrainState> {
    let mut trainer = Trainer::resume(config, data, ck)?;
    trainer.run(out)?;
    Ok(trainer.into_state())
}
