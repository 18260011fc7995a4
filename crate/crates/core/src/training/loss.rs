//! Windowed training objectives and their gradients.
//!
//! For each window the state starts at zero and is unrolled over the `K`
//! inputs. The state after input `j` predicts the next observation (system
//! loss) and the fire map `T` weeks after it (prediction loss). Each loss is
//! the per-frame pixel-mean cross-entropy summed over frames and divided by
//! `L·K`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Bound, Model, Network, ParamGroup};
use crate::numerics::{Tape, Tensor, Var};
use crate::replay::{Minibatch, Window};
use crate::scalar::Scalar;

/// Which objective a pass differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Observation loss; gradients reach the system parameters only.
    Sys,
    /// Fire loss with the system parameters frozen.
    Pred,
    /// The training pass: both losses in one sweep. When an observation
    /// decoder exists the fire decoder reads a detached state, so each group
    /// only sees its own loss. Otherwise the fire loss trains everything.
    Joint,
}

/// Loss values and per-parameter gradients in parameter-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients<T> {
    pub l_sys: Option<T>,
    pub l_pred: Option<T>,
    pub grads: Vec<Vec<T>>,
}

/// Builds the loss graph of one window on `tape` and returns the summed
/// (unscaled) system and prediction terms that `objective` asks for.
pub fn window_objective<T: Scalar>(
    model: &Model<T>,
    bound: &Bound,
    tape: &mut Tape<T>,
    window: &Window,
    objective: Objective,
) -> Result<(Option<Var>, Option<Var>)> {
    let has_obs = model.variant.has(Network::Decoder1);
    let want_sys = has_obs && objective != Objective::Pred;
    let want_pred = objective != Objective::Sys;
    let detach_fire = objective == Objective::Joint && has_obs;

    let width = model.state_width();
    let mut h = tape.constant(Tensor::zeros(vec![1, width]));
    let mut sys: Option<Var> = None;
    let mut pred: Option<Var> = None;
    let accumulate = |tape: &mut Tape<T>, acc: Option<Var>, term: Var| -> Result<Var> {
        match acc {
            Some(a) => tape.add(a, term),
            None => Ok(term),
        }
    };
    for (j, y) in window.inputs().enumerate() {
        let yv = model.frame_var(tape, y)?;
        h = bound.step(model, tape, h, yv)?;
        if want_sys {
            let yhat = bound.decode_obs(model, tape, h)?;
            let target = to_scalars::<T>(&window.obs_target(j).data);
            let term = tape.bce(yhat, &target)?;
            sys = Some(accumulate(tape, sys, term)?);
        }
        if want_pred {
            let hp = if detach_fire { tape.detach(h) } else { h };
            let fhat = bound.decode_fire(model, tape, hp)?;
            let target = to_scalars::<T>(&window.fire_target(j).data);
            let term = tape.bce(fhat, &target)?;
            pred = Some(accumulate(tape, pred, term)?);
        }
    }
    Ok((sys, pred))
}

fn to_scalars<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::widen_f32(x)).collect()
}

struct WindowResult<T> {
    l_sys: Option<T>,
    l_pred: Option<T>,
    grads: Vec<Option<Vec<T>>>,
}

fn window_pass<T: Scalar>(model: &Model<T>, window: &Window, scale: T, objective: Objective) -> Result<WindowResult<T>> {
    let mut tape = Tape::new();
    let bound = match objective {
        Objective::Joint => model.bind(&mut tape, true)?,
        Objective::Sys => model.bind_where(&mut tape, |p| p.network.group() == ParamGroup::Sys)?,
        Objective::Pred => model.bind_where(&mut tape, |p| p.network.group() == ParamGroup::Pred)?,
    };
    let (sys, pred) = window_objective(model, &bound, &mut tape, window, objective)?;
    let total = match (sys, pred) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(Error::UnsupportedVariant {
                op: "loss_sys",
                variant: model.variant.to_string(),
            })
        }
    };
    let total = tape.scale(total, scale);
    let mut g = tape.backward(total)?;
    let value = |v: Option<Var>| v.map(|v| tape.value(v).item() * scale);
    Ok(WindowResult {
        l_sys: value(sys),
        l_pred: value(pred),
        grads: bound.vars().iter().map(|&v| g.take(v)).collect(),
    })
}

/// Evaluates `objective` on every window of `batch` in parallel and reduces
/// the results in window order, so the outcome is independent of scheduling.
pub fn batch_gradients<T: Scalar>(model: &Model<T>, batch: &Minibatch, objective: Objective) -> Result<BatchGradients<T>> {
    if objective == Objective::Sys && !model.variant.has(Network::Decoder1) {
        return Err(Error::UnsupportedVariant {
            op: "loss_sys",
            variant: model.variant.to_string(),
        });
    }
    let l = batch.windows.len();
    let k = batch.windows.first().map(|w| w.k).unwrap_or(0);
    if l == 0 || k == 0 {
        return Err(Error::Domain("minibatch must hold at least one non-empty window".into()));
    }
    let scale = T::one() / T::from_f64_lossy((l * k) as f64);
    let results: Vec<WindowResult<T>> = batch
        .windows
        .par_iter()
        .map(|w| window_pass(model, w, scale, objective))
        .collect::<Result<_>>()?;

    let mut grads: Vec<Vec<T>> = model.params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
    let mut l_sys: Option<T> = None;
    let mut l_pred: Option<T> = None;
    for r in results {
        if let Some(v) = r.l_sys {
            l_sys = Some(l_sys.unwrap_or_else(T::zero) + v);
        }
        if let Some(v) = r.l_pred {
            l_pred = Some(l_pred.unwrap_or_else(T::zero) + v);
        }
        for (acc, g) in grads.iter_mut().zip(r.grads) {
            if let Some(g) = g {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(BatchGradients { l_sys, l_pred, grads })
}

/// Observation loss `l_sys` and its gradient (system parameters only).
pub fn loss_sys<T: Scalar>(model: &Model<T>, batch: &Minibatch) -> Result<(T, Vec<Vec<T>>)> {
    let r = batch_gradients(model, batch, Objective::Sys)?;
    Ok((r.l_sys.unwrap_or_else(T::zero), r.grads))
}

/// Fire loss `l_pred` and its gradient with the system parameters frozen.
pub fn loss_pred<T: Scalar>(model: &Model<T>, batch: &Minibatch) -> Result<(T, Vec<Vec<T>>)> {
    let r = batch_gradients(model, batch, Objective::Pred)?;
    Ok((r.l_pred.unwrap_or_else(T::zero), r.grads))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::frames::{FireMap, ObservationFrame};
    use crate::model::{Dims, Variant};
    use crate::numerics::{analytic_gradient, max_relative_error, numeric_gradient_5pt, Adam};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dims {
        Dims {
            channels: 2,
            height: 4,
            width: 4,
            state: 3,
            feature: 3,
            horizon: 1,
            conv1: 2,
            conv2: 2,
        }
    }

    fn window(d: &Dims, k: usize, seed: u64, binary: bool) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..k + d.horizon + 1)
            .map(|w| {
                let obs = (0..d.frame_len())
                    .map(|_| if binary { f32::from(rng.random_bool(0.5)) } else { rng.random() })
                    .collect();
                let fire = (0..d.height * d.width).map(|_| f32::from(rng.random_bool(0.3))).collect();
                (
                    Arc::new(ObservationFrame::new(d.channels, d.height, d.width, w as i64, obs).unwrap()),
                    Arc::new(FireMap::ground_truth(d.height, d.width, w as i64, fire).unwrap()),
                )
            })
            .collect();
        Window {
            frames,
            k,
            t: d.horizon,
        }
    }

    fn flat_loss<'a, T: Scalar>(
        model: &'a Model<T>,
        w: &Window,
        objective: Objective,
    ) -> impl Fn(&mut Tape<T>, Var) -> Result<Var> + 'a {
        let w = w.clone();
        move |tape, flat| {
            let bound = model.bind_flat(tape, flat)?;
            let (sys, pred) = window_objective(model, &bound, tape, &w, objective)?;
            Ok(match objective {
                Objective::Sys => sys.unwrap(),
                _ => pred.unwrap(),
            })
        }
    }

    fn composed_check(objective: Objective) {
        let d = toy();
        let m64 = Model::<f64>::init(Variant::DynamicAutoenc, d, 3).unwrap();
        let m32: Model<f32> = m64.cast();
        let w = window(&d, 2, 5, false);
        let theta = Tensor::new(vec![m64.param_count()], m64.params.flatten()).unwrap();

        let f64_loss = flat_loss(&m64, &w, objective);
        let analytic = analytic_gradient(&f64_loss, &theta).unwrap();
        let numeric = numeric_gradient_5pt(&f64_loss, &theta, 1e-3).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "{objective:?} f64 relative error {err}");

        let theta32: Tensor<f32> = theta.cast();
        let analytic32 = analytic_gradient(&flat_loss(&m32, &w, objective), &theta32).unwrap();
        let analytic32: Vec<f64> = analytic32.iter().map(|&v| v.into()).collect();
        let err = max_relative_error(&analytic32, &numeric);
        assert!(err < 1e-3, "{objective:?} f32 relative error {err}");
    }

    #[test]
    fn system_loss_gradient_matches_finite_differences() {
        composed_check(Objective::Sys);
    }

    #[test]
    fn prediction_loss_gradient_matches_finite_differences() {
        composed_check(Objective::Pred);
    }

    fn batch(d: &Dims, l: usize, k: usize, seed: u64) -> Minibatch {
        Minibatch {
            windows: (0..l).map(|i| window(d, k, seed + i as u64, false)).collect(),
        }
    }

    #[test]
    fn each_loss_only_reaches_its_own_group() {
        let d = toy();
        let m = Model::<f64>::init(Variant::DynamicAutoenc, d, 1).unwrap();
        let b = batch(&d, 3, 2, 0);
        let (_, g_pred) = loss_pred(&m, &b).unwrap();
        let (_, g_sys) = loss_sys(&m, &b).unwrap();
        for (p, (gp, gs)) in m.params.iter().zip(g_pred.iter().zip(&g_sys)) {
            match p.network.group() {
                ParamGroup::Sys => assert!(gp.iter().all(|&v| v == 0.0), "{}", p.name),
                ParamGroup::Pred => assert!(gs.iter().all(|&v| v == 0.0), "{}", p.name),
            }
        }
    }

    #[test]
    fn joint_pass_equals_the_two_separate_losses() {
        let d = toy();
        let m = Model::<f64>::init(Variant::DynamicAutoenc, d, 2).unwrap();
        let b = batch(&d, 2, 3, 7);
        let joint = batch_gradients(&m, &b, Objective::Joint).unwrap();
        let (l_sys, g_sys) = loss_sys(&m, &b).unwrap();
        let (l_pred, g_pred) = loss_pred(&m, &b).unwrap();
        assert_eq!(joint.l_sys, Some(l_sys));
        assert_eq!(joint.l_pred, Some(l_pred));
        for (i, p) in m.params.iter().enumerate() {
            let expected = match p.network.group() {
                ParamGroup::Sys => &g_sys[i],
                ParamGroup::Pred => &g_pred[i],
            };
            assert_eq!(&joint.grads[i], expected, "{}", p.name);
        }
    }

    #[test]
    fn losses_are_means_over_windows_and_frames() {
        let d = toy();
        let m = Model::<f64>::init(Variant::GruBaseline, d, 2).unwrap();
        let w = window(&d, 3, 1, false);
        let one = Minibatch { windows: vec![w.clone()] };
        let four = Minibatch { windows: vec![w; 4] };
        let (a, _) = loss_pred(&m, &one).unwrap();
        let (b, _) = loss_pred(&m, &four).unwrap();
        assert!((a - b).abs() < 1e-12);
        // a single-frame window scores exactly one prediction
        let short = Minibatch {
            windows: vec![window(&d, 1, 1, false)],
        };
        let (l, _) = loss_pred(&m, &short).unwrap();
        let w = &short.windows[0];
        let h = m.step(&m.zero_state(0), &w.frames[0].0).unwrap();
        let f = m.decode_fire(&h).unwrap();
        let target: Vec<f64> = w.fire_target(0).data.iter().map(|&v| v.into()).collect();
        let pred: Vec<f64> = f.data.iter().map(|&v| v.into()).collect();
        assert!((l - crate::numerics::bce_value(&pred, &target)).abs() < 1e-6);
    }

    #[test]
    fn static_variant_has_no_system_loss() {
        let d = toy();
        let m = Model::<f32>::init(Variant::StaticGenerative, d, 0).unwrap();
        let err = loss_sys(&m, &batch(&d, 1, 2, 0)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVariant { op: "loss_sys", .. }));
    }

    #[test]
    fn untrained_loss_on_random_binary_frames_is_near_chance() {
        let d = Dims::default();
        let m = Model::<f32>::init(Variant::DynamicAutoenc, d, 0).unwrap();
        let b = Minibatch {
            windows: (0..2).map(|i| window(&d, 3, i, true)).collect(),
        };
        let (l, _) = loss_sys(&m, &b).unwrap();
        assert!((l - std::f32::consts::LN_2).abs() < 0.2, "{l}");
    }

    fn fit(model: &mut Model<f64>, b: &Minibatch, objective: Objective, iterations: usize, lr: f64) -> f64 {
        let group = match objective {
            Objective::Sys => ParamGroup::Sys,
            _ => ParamGroup::Pred,
        };
        let idx = model.params.group_indices(group);
        let sizes: Vec<usize> = idx.iter().map(|&i| model.params.entries()[i].tensor.len()).collect();
        let mut adam = Adam::new(&sizes);
        let mut last = f64::NAN;
        for _ in 0..iterations {
            let r = batch_gradients(model, b, objective).unwrap();
            last = match objective {
                Objective::Sys => r.l_sys.unwrap(),
                _ => r.l_pred.unwrap(),
            };
            let grads: Vec<&[f64]> = idx.iter().map(|&i| r.grads[i].as_slice()).collect();
            let entries = model.params.entries_mut();
            let mut params: Vec<(&str, &mut Tensor<f64>)> = entries
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| idx.contains(i))
                .map(|(_, p)| (p.name.as_str(), &mut p.tensor))
                .collect();
            adam.step(&mut params, &grads, lr).unwrap();
        }
        last
    }

    #[test]
    fn constant_stream_is_learned_to_low_loss() {
        let d = Dims {
            channels: 1,
            ..toy()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern: Vec<f32> = (0..d.frame_len()).map(|_| f32::from(rng.random_bool(0.5))).collect();
        let frames = (0..4)
            .map(|w| {
                (
                    Arc::new(ObservationFrame::new(1, d.height, d.width, w, pattern.clone()).unwrap()),
                    Arc::new(FireMap::ground_truth(d.height, d.width, w, vec![0.0; 16]).unwrap()),
                )
            })
            .collect();
        let b = Minibatch {
            windows: vec![Window { frames, k: 2, t: 1 }],
        };
        let mut m = Model::<f64>::init(Variant::DynamicAutoenc, d, 4).unwrap();
        let l = fit(&mut m, &b, Objective::Sys, 2000, 1e-2);
        assert!(l < 0.05, "{l}");
    }

    #[test]
    fn empty_fire_targets_are_fitted_by_the_fire_decoder_alone() {
        let d = toy();
        let mut w = window(&d, 2, 9, false);
        for (_, f) in &mut w.frames {
            *f = Arc::new(FireMap::ground_truth(d.height, d.width, f.week, vec![0.0; 16]).unwrap());
        }
        let b = Minibatch { windows: vec![w] };
        let mut m = Model::<f64>::init(Variant::DynamicAutoenc, d, 4).unwrap();
        let before = m.params.clone();
        let l = fit(&mut m, &b, Objective::Pred, 300, 5e-2);
        assert!(l < 0.1, "{l}");
        for (p, q) in m.params.iter().zip(before.iter()) {
            if p.network.group() == ParamGroup::Sys {
                assert_eq!(p, q);
            }
        }
    }
}
