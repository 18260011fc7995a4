//! Dynamic auto-encoder and its two ablation baselines.
//!
//! All variants share the same building blocks:
//!
//! * **Encoder**: two stride-2 3×3 convolutions followed by a linear map to
//!   a feature vector of width `E`.
//! * **RNN**: a gated recurrent unit, `h_{k+1} = GRU(h_k, Encoder(y_k))`.
//! * **Decoder₁**: linear map from the state to a coarse grid, then two
//!   nearest-upsample + 3×3 convolution stages, sigmoid head. Predicts the
//!   next observation `ŷ_{k+1}` from `h_{k+1}`.
//! * **Decoder₂**: same shape as Decoder₁ with a single output channel.
//!   Predicts the fire map `f̂_{k+T}` from `h_k`.
//!
//! The static generative baseline has no recurrence: its "state" after
//! seeing `y_k` is simply `Encoder(y_k)`.

mod checkpoint;
mod params;

pub use checkpoint::{manifest_path, Checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_FORMAT};
pub use params::{Network, Param, ParamGroup, ParamSet, Variant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{FireMap, HiddenState, ObservationFrame};
use crate::numerics::{gru_cell, Conv2dGeometry, GruVars, Tape, Tensor, Var, BCE_CLAMP};
use crate::scalar::Scalar;

const KERNEL: usize = 3;

/// Static model dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Observation channels `C`.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// RNN state width `S`.
    pub state: usize,
    /// Encoder feature width `E`.
    pub feature: usize,
    /// Fire prediction horizon `T` in weeks.
    pub horizon: usize,
    /// Channels of the first encoder conv / last decoder conv input.
    #[serde(default = "default_conv1")]
    pub conv1: usize,
    /// Channels of the second encoder conv / coarse decoder grid.
    #[serde(default = "default_conv2")]
    pub conv2: usize,
}

fn default_conv1() -> usize {
    4
}

fn default_conv2() -> usize {
    8
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            channels: 5,
            height: 16,
            width: 16,
            state: 64,
            feature: 64,
            horizon: 4,
            conv1: default_conv1(),
            conv2: default_conv2(),
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("state", self.state),
            ("feature", self.feature),
            ("horizon", self.horizon),
            ("conv1", self.conv1),
            ("conv2", self.conv2),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension `{name}` must be positive")));
        }
        Ok(())
    }

    /// Grid size after the first stride-2 layer.
    pub fn half(&self) -> (usize, usize) {
        (self.height.div_ceil(2), self.width.div_ceil(2))
    }

    /// Grid size after the second stride-2 layer.
    pub fn quarter(&self) -> (usize, usize) {
        let (h, w) = self.half();
        (h.div_ceil(2), w.div_ceil(2))
    }

    fn coarse_len(&self) -> usize {
        let (h, w) = self.quarter();
        self.conv2 * h * w
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Parameter shapes of a variant, in canonical set order.
pub fn param_layout(variant: Variant, dims: &Dims) -> Vec<(String, Network, Vec<usize>)> {
    let d = dims;
    let k = KERNEL;
    let mut out = Vec::new();
    let mut push = |name: &str, net: Network, shape: Vec<usize>| out.push((name.to_string(), net, shape));

    push("enc.conv1.w", Network::Encoder, vec![d.conv1, d.channels, k, k]);
    push("enc.conv1.b", Network::Encoder, vec![d.conv1]);
    push("enc.conv2.w", Network::Encoder, vec![d.conv2, d.conv1, k, k]);
    push("enc.conv2.b", Network::Encoder, vec![d.conv2]);
    push("enc.fc.w", Network::Encoder, vec![d.coarse_len(), d.feature]);
    push("enc.fc.b", Network::Encoder, vec![d.feature]);

    if variant.has(Network::Rnn) {
        for gate in ["z", "r", "h"] {
            push(&format!("rnn.w_{gate}"), Network::Rnn, vec![d.feature, d.state]);
            push(&format!("rnn.u_{gate}"), Network::Rnn, vec![d.state, d.state]);
            push(&format!("rnn.b_{gate}"), Network::Rnn, vec![d.state]);
        }
    }
    let state_width = if variant.has(Network::Rnn) { d.state } else { d.feature };
    let mut decoder = |prefix: &str, net: Network, out_channels: usize| {
        push(&format!("{prefix}.fc.w"), net, vec![state_width, d.coarse_len()]);
        push(&format!("{prefix}.fc.b"), net, vec![d.coarse_len()]);
        push(&format!("{prefix}.conv1.w"), net, vec![d.conv1, d.conv2, k, k]);
        push(&format!("{prefix}.conv1.b"), net, vec![d.conv1]);
        push(&format!("{prefix}.conv2.w"), net, vec![out_channels, d.conv1, k, k]);
        push(&format!("{prefix}.conv2.b"), net, vec![out_channels]);
    };
    if variant.has(Network::Decoder1) {
        decoder("dec1", Network::Decoder1, d.channels);
    }
    decoder("dec2", Network::Decoder2, 1);
    out
}

/// A model variant with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub variant: Variant,
    pub dims: Dims,
    pub seed: u64,
    pub params: ParamSet<T>,
}

/// Outputs of [`Model::forward_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `h_1..h_K`.
    pub states: Vec<HiddenState<T>>,
    /// `ŷ_1..ŷ_K`; `None` for variants without an observation decoder.
    pub obs_predictions: Option<Vec<ObservationFrame>>,
    /// `f̂_{1+T}..f̂_{K+T}`.
    pub fire_predictions: Vec<FireMap>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialised model; deterministic in `seed`.
    pub fn init(variant: Variant, dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let entries = param_layout(variant, &dims)
            .into_iter()
            .map(|(name, network, shape)| Param {
                name,
                network,
                tensor: Tensor::zeros(shape),
            })
            .collect();
        let mut params = ParamSet::new(entries);
        params.initialise(seed);
        Ok(Self {
            variant,
            dims,
            seed,
            params,
        })
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(variant: Variant, dims: Dims, seed: u64, params: ParamSet<T>) -> Result<Self> {
        dims.validate()?;
        let layout = param_layout(variant, &dims);
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "{variant} expects {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, net, shape), p) in layout.iter().zip(params.iter()) {
            if *name != p.name || *net != p.network || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self {
            variant,
            dims,
            seed,
            params,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            variant: self.variant,
            dims: self.dims,
            seed: self.seed,
            params: self.params.cast(),
        }
    }

    /// Width of the hidden state: `S`, or `E` for the static variant.
    pub fn state_width(&self) -> usize {
        if self.variant.has(Network::Rnn) {
            self.dims.state
        } else {
            self.dims.feature
        }
    }

    pub fn zero_state(&self, week: i64) -> HiddenState<T> {
        HiddenState::zeros(self.state_width(), week)
    }

    fn check_frame(&self, frame: &ObservationFrame) -> Result<()> {
        let d = &self.dims;
        if frame.dims() != (d.channels, d.height, d.width) {
            return Err(Error::Config(format!(
                "frame dims {:?} do not match model dims {:?}",
                frame.dims(),
                (d.channels, d.height, d.width)
            )));
        }
        Ok(())
    }

    fn check_state(&self, h: &HiddenState<T>) -> Result<()> {
        if h.vector.len() != self.state_width() {
            return Err(Error::Dimension {
                op: "hidden_state",
                lhs: vec![h.vector.len()],
                rhs: vec![self.state_width()],
            });
        }
        Ok(())
    }

    /// Binds parameters to `tape`. With `trainable`, they become gradient leaves.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound> {
        self.bind_where(tape, |_| trainable)
    }

    /// Binds parameters, making those selected by `trainable` gradient leaves.
    pub fn bind_where(&self, tape: &mut Tape<T>, trainable: impl Fn(&Param<T>) -> bool) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable(p) {
                    tape.param(p.tensor.clone())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        Bound::from_vars(self, vars)
    }

    /// Binds parameters as slices of one flat tape variable laid out as
    /// [`ParamSet::flatten`].
    pub fn bind_flat(&self, tape: &mut Tape<T>, flat: Var) -> Result<Bound> {
        let mut off = 0;
        let mut vars = Vec::with_capacity(self.params.len());
        for p in self.params.iter() {
            vars.push(tape.slice(flat, off, p.tensor.shape())?);
            off += p.tensor.len();
        }
        Bound::from_vars(self, vars)
    }

    pub fn frame_var(&self, tape: &mut Tape<T>, frame: &ObservationFrame) -> Result<Var> {
        self.check_frame(frame)?;
        let d = &self.dims;
        Ok(tape.constant(Tensor::from_f32(vec![d.channels, d.height, d.width], &frame.data)?))
    }

    pub fn state_var(&self, tape: &mut Tape<T>, h: &HiddenState<T>) -> Result<Var> {
        self.check_state(h)?;
        Ok(tape.constant(Tensor::new(vec![1, h.vector.len()], h.vector.clone())?))
    }

    /// Feature vector `Encoder(y)` of width `E`.
    pub fn encode(&self, frame: &ObservationFrame) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let y = self.frame_var(&mut tape, frame)?;
        let f = b.encode(self, &mut tape, y)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// `h_{k+1} = RNN(h_k, feature)`.
    pub fn rnn_step(&self, h: &HiddenState<T>, feature: &[T]) -> Result<HiddenState<T>> {
        if !self.variant.has(Network::Rnn) {
            return Err(Error::UnsupportedVariant {
                op: "rnn_step",
                variant: self.variant.to_string(),
            });
        }
        if feature.len() != self.dims.feature {
            return Err(Error::Dimension {
                op: "rnn_step",
                lhs: vec![feature.len()],
                rhs: vec![self.dims.feature],
            });
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let hv = self.state_var(&mut tape, h)?;
        let x = tape.constant(Tensor::new(vec![1, feature.len()], feature.to_vec())?);
        let next = b.rnn(&mut tape, x, hv)?;
        Ok(HiddenState {
            vector: tape.value(next).data().to_vec(),
            week: h.week + 1,
        })
    }

    /// Advances the state by one observed frame (recurrent or static).
    pub fn step(&self, h: &HiddenState<T>, frame: &ObservationFrame) -> Result<HiddenState<T>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let hv = self.state_var(&mut tape, h)?;
        let y = self.frame_var(&mut tape, frame)?;
        let next = b.step(self, &mut tape, hv, y)?;
        Ok(HiddenState {
            vector: tape.value(next).data().to_vec(),
            week: h.week + 1,
        })
    }

    /// One-step observation prediction `ŷ` for the week `h` is positioned at.
    pub fn decode_obs(&self, h: &HiddenState<T>) -> Result<ObservationFrame> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let hv = self.state_var(&mut tape, h)?;
        let y = b.decode_obs(self, &mut tape, hv)?;
        let d = &self.dims;
        ObservationFrame::new(d.channels, d.height, d.width, h.week, to_open_unit(tape.value(y).data()))
    }

    /// Fire risk map for week `h.week + T`.
    pub fn decode_fire(&self, h: &HiddenState<T>) -> Result<FireMap> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let hv = self.state_var(&mut tape, h)?;
        let f = b.decode_fire(self, &mut tape, hv)?;
        Ok(self.fire_map(tape.value(f).data(), h.week))
    }

    fn fire_map(&self, data: &[T], state_week: i64) -> FireMap {
        let d = &self.dims;
        FireMap::predicted(d.height, d.width, state_week + d.horizon as i64, to_open_unit(data))
    }

    /// Runs the recursive update over `frames` from `h0` on a single tape.
    pub fn forward_trajectory(&self, frames: &[ObservationFrame], h0: &HiddenState<T>) -> Result<ForwardOutput<T>> {
        if frames.is_empty() {
            return Err(Error::Domain("forward_trajectory needs at least one frame".into()));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let mut h = self.state_var(&mut tape, h0)?;
        let mut week = h0.week;
        let d = &self.dims;
        let with_obs = self.variant.has(Network::Decoder1);
        let mut out = ForwardOutput {
            states: Vec::with_capacity(frames.len()),
            obs_predictions: with_obs.then(Vec::new),
            fire_predictions: Vec::with_capacity(frames.len()),
        };
        for frame in frames {
            let y = self.frame_var(&mut tape, frame)?;
            h = b.step(self, &mut tape, h, y)?;
            week += 1;
            out.states.push(HiddenState {
                vector: tape.value(h).data().to_vec(),
                week,
            });
            if let Some(obs) = out.obs_predictions.as_mut() {
                let yhat = b.decode_obs(self, &mut tape, h)?;
                obs.push(ObservationFrame::new(
                    d.channels,
                    d.height,
                    d.width,
                    week,
                    to_open_unit(tape.value(yhat).data()),
                )?);
            }
            let f = b.decode_fire(self, &mut tape, h)?;
            out.fire_predictions.push(self.fire_map(tape.value(f).data(), week));
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }
}

/// Sigmoid outputs as f32 pinned strictly inside (0,1).
fn to_open_unit<T: Scalar>(data: &[T]) -> Vec<f32> {
    let lo = BCE_CLAMP as f32;
    data.iter().map(|v| v.to_f32_lossy().clamp(lo, 1.0 - lo)).collect()
}

#[derive(Clone, Copy, Debug)]
struct ConvStack {
    fc_w: Var,
    fc_b: Var,
    conv1_w: Var,
    conv1_b: Var,
    conv2_w: Var,
    conv2_b: Var,
}

/// Parameters of one model bound to a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    encoder: ConvStack,
    rnn: Option<GruVars>,
    dec1: Option<ConvStack>,
    dec2: ConvStack,
}

impl Bound {
    fn from_vars<T: Scalar>(model: &Model<T>, vars: Vec<Var>) -> Result<Self> {
        let find = |name: &str| -> Result<Var> {
            model
                .params
                .index_of(name)
                .map(|i| vars[i])
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
        };
        let stack = |prefix: &str| -> Result<ConvStack> {
            Ok(ConvStack {
                fc_w: find(&format!("{prefix}.fc.w"))?,
                fc_b: find(&format!("{prefix}.fc.b"))?,
                conv1_w: find(&format!("{prefix}.conv1.w"))?,
                conv1_b: find(&format!("{prefix}.conv1.b"))?,
                conv2_w: find(&format!("{prefix}.conv2.w"))?,
                conv2_b: find(&format!("{prefix}.conv2.b"))?,
            })
        };
        let encoder = stack("enc")?;
        let rnn = if model.variant.has(Network::Rnn) {
            Some(GruVars {
                w_z: find("rnn.w_z")?,
                u_z: find("rnn.u_z")?,
                b_z: find("rnn.b_z")?,
                w_r: find("rnn.w_r")?,
                u_r: find("rnn.u_r")?,
                b_r: find("rnn.b_r")?,
                w_h: find("rnn.w_h")?,
                u_h: find("rnn.u_h")?,
                b_h: find("rnn.b_h")?,
            })
        } else {
            None
        };
        let dec1 = if model.variant.has(Network::Decoder1) {
            Some(stack("dec1")?)
        } else {
            None
        };
        let dec2 = stack("dec2")?;
        Ok(Self {
            vars,
            encoder,
            rnn,
            dec1,
            dec2,
        })
    }

    /// Tape variables of the parameters, in [`ParamSet`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `y[C,H,W]` → feature `[1,E]`.
    pub fn encode<T: Scalar>(&self, model: &Model<T>, tape: &mut Tape<T>, y: Var) -> Result<Var> {
        let d = &model.dims;
        let e = &self.encoder;
        let g1 = Conv2dGeometry::same(2, (KERNEL, KERNEL), (d.height, d.width));
        let x = tape.conv2d(y, e.conv1_w, g1)?;
        let x = tape.add_channel_bias(x, e.conv1_b)?;
        let x = tape.tanh(x);
        let g2 = Conv2dGeometry::same(2, (KERNEL, KERNEL), d.half());
        let x = tape.conv2d(x, e.conv2_w, g2)?;
        let x = tape.add_channel_bias(x, e.conv2_b)?;
        let x = tape.tanh(x);
        let x = tape.reshape(x, &[1, d.coarse_len()])?;
        let x = tape.linear(x, e.fc_w, e.fc_b)?;
        Ok(tape.tanh(x))
    }

    pub fn rnn<T: Scalar>(&self, tape: &mut Tape<T>, feature: Var, h: Var) -> Result<Var> {
        let p = self.rnn.as_ref().ok_or(Error::UnsupportedVariant {
            op: "rnn_step",
            variant: "static_generative".into(),
        })?;
        gru_cell(tape, feature, h, p)
    }

    /// `h_{k+1}` from `h_k[1,S]` and frame `y_k`.
    pub fn step<T: Scalar>(&self, model: &Model<T>, tape: &mut Tape<T>, h: Var, y: Var) -> Result<Var> {
        let feature = self.encode(model, tape, y)?;
        match self.rnn {
            Some(_) => self.rnn(tape, feature, h),
            None => Ok(feature),
        }
    }

    fn decode<T: Scalar>(model: &Model<T>, s: &ConvStack, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let d = &model.dims;
        let (qh, qw) = d.quarter();
        let (hh, hw) = d.half();
        let x = tape.linear(h, s.fc_w, s.fc_b)?;
        let x = tape.tanh(x);
        let x = tape.reshape(x, &[d.conv2, qh, qw])?;
        let x = tape.upsample2x(x, hh, hw)?;
        let x = tape.conv2d(x, s.conv1_w, Conv2dGeometry::symmetric(1, KERNEL / 2))?;
        let x = tape.add_channel_bias(x, s.conv1_b)?;
        let x = tape.tanh(x);
        let x = tape.upsample2x(x, d.height, d.width)?;
        let x = tape.conv2d(x, s.conv2_w, Conv2dGeometry::symmetric(1, KERNEL / 2))?;
        let x = tape.add_channel_bias(x, s.conv2_b)?;
        Ok(tape.sigmoid(x))
    }

    /// `ŷ[C,H,W]` from a state.
    pub fn decode_obs<T: Scalar>(&self, model: &Model<T>, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let s = self.dec1.as_ref().ok_or_else(|| Error::UnsupportedVariant {
            op: "decode_obs",
            variant: model.variant.to_string(),
        })?;
        Self::decode(model, s, tape, h)
    }

    /// `f̂[H,W]` from a state.
    pub fn decode_fire<T: Scalar>(&self, model: &Model<T>, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let x = Self::decode(model, &self.dec2, tape, h)?;
        tape.reshape(x, &[model.dims.height, model.dims.width])
    }
}
