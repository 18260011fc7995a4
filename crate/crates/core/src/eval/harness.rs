//! Rolling the model over the validation stream and scoring its fire maps.

use crate::error::{Error, Result};
use crate::frames::{FireMap, HiddenState, LabelledSequence};
use crate::model::Model;
use crate::scalar::Scalar;

use super::metrics::{auroc, mean_bce};

/// Per-model scores over one validation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Row label; the variant name unless set otherwise.
    pub name: String,
    /// Frames with a scored prediction.
    pub frames: usize,
    /// Sum over frames of the per-frame pixel-mean cross-entropy.
    pub total_bce: f64,
    pub mean_pixel_bce: f64,
    /// `None` when the targets hold a single class.
    pub auroc: Option<f64>,
    pub positive_rate: f64,
    /// Identifies the validation stream for cross-model comparison.
    pub stream_id: String,
}

/// Scores fire predictions against aligned targets.
pub fn score_predictions(name: &str, preds: &[FireMap], targets: &[&FireMap], stream_id: &str) -> Result<EvalReport> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Config(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, t) in preds.iter().zip(targets) {
        if p.week != t.week || p.data.len() != t.data.len() {
            return Err(Error::Config(format!(
                "prediction for week {} does not line up with target week {}",
                p.week, t.week
            )));
        }
        total += mean_bce(&p.data, &t.data);
        scores.extend(p.data.iter().map(|&v| v as f64));
        labels.extend(t.data.iter().map(|&v| v >= 0.5));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let auroc = match auroc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        name: name.to_string(),
        frames: preds.len(),
        total_bce: total,
        mean_pixel_bce: total / preds.len() as f64,
        auroc,
        positive_rate: positives as f64 / labels.len() as f64,
        stream_id: stream_id.to_string(),
    })
}

fn check_stream<T: Scalar>(model: &Model<T>, stream: &LabelledSequence, h0: &HiddenState<T>) -> Result<usize> {
    let t = model.dims.horizon;
    if stream.len() < t + 1 {
        return Err(Error::Config(format!(
            "validation stream has {} frames; at least T + 1 = {} are needed",
            stream.len(),
            t + 1
        )));
    }
    let d = &model.dims;
    if stream.frames[0].dims() != (d.channels, d.height, d.width) {
        return Err(Error::Config(format!(
            "stream frames are {:?} but the model expects {:?}",
            stream.frames[0].dims(),
            (d.channels, d.height, d.width)
        )));
    }
    if h0.week != stream.frames[0].week {
        return Err(Error::Config(format!(
            "initial state is positioned at week {} but the stream starts at week {}",
            h0.week, stream.frames[0].week
        )));
    }
    Ok(stream.len() - t)
}

/// Fire predictions made while stepping through the stream one frame at a time.
pub fn stream_predictions<T: Scalar>(model: &Model<T>, stream: &LabelledSequence, h0: &HiddenState<T>) -> Result<Vec<FireMap>> {
    let scored = check_stream(model, stream, h0)?;
    let mut h = h0.clone();
    let mut preds = Vec::with_capacity(scored);
    for k in 0..scored {
        preds.push(model.decode_fire(&h)?);
        if k + 1 < scored {
            h = model.step(&h, &stream.frames[k])?;
        }
    }
    Ok(preds)
}

/// The same predictions from a single unrolled pass.
pub fn unrolled_predictions<T: Scalar>(model: &Model<T>, stream: &LabelledSequence, h0: &HiddenState<T>) -> Result<Vec<FireMap>> {
    let scored = check_stream(model, stream, h0)?;
    let mut preds = vec![model.decode_fire(h0)?];
    if scored > 1 {
        let frames: Vec<_> = stream.frames[..scored - 1].iter().map(|f| (**f).clone()).collect();
        preds.extend(model.forward_trajectory(&frames, h0)?.fire_predictions);
    }
    Ok(preds)
}

fn targets(stream: &LabelledSequence, t: usize, n: usize) -> Vec<&FireMap> {
    stream.fires[t..t + n].iter().map(|f| f.as_ref()).collect()
}

/// Scores `Decoder₂(h_k)` against `f_{k+T}` for every `k` with a target in
/// the stream, advancing the state online from `h0`.
pub fn evaluate_stream<T: Scalar>(model: &Model<T>, stream: &LabelledSequence, h0: &HiddenState<T>, stream_id: &str) -> Result<EvalReport> {
    let preds = stream_predictions(model, stream, h0)?;
    let tg = targets(stream, model.dims.horizon, preds.len());
    score_predictions(model.variant.as_str(), &preds, &tg, stream_id)
}

/// [`evaluate_stream`] computed from one unrolled pass.
pub fn evaluate_unrolled<T: Scalar>(model: &Model<T>, stream: &LabelledSequence, h0: &HiddenState<T>, stream_id: &str) -> Result<EvalReport> {
    let preds = unrolled_predictions(model, stream, h0)?;
    let tg = targets(stream, model.dims.horizon, preds.len());
    score_predictions(model.variant.as_str(), &preds, &tg, stream_id)
}

/// State after consuming all of `history` from zero; positioned at the week
/// that follows it.
pub fn carried_state<T: Scalar>(model: &Model<T>, history: &LabelledSequence) -> Result<HiddenState<T>> {
    let start = history.first_week().unwrap_or(0);
    let mut h = model.zero_state(start);
    for f in &history.frames {
        h = model.step(&h, f)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::frames::ObservationFrame;
    use crate::model::{Dims, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims {
            channels: 2,
            height: 8,
            width: 8,
            state: 6,
            feature: 6,
            horizon: 3,
            conv1: 2,
            conv2: 3,
        }
    }

    fn stream(d: &Dims, n: usize, first_week: i64, seed: u64) -> LabelledSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = d.height * d.width;
        let (frames, fires) = (0..n)
            .map(|i| {
                let w = first_week + i as i64;
                let obs = (0..d.frame_len()).map(|_| rng.random()).collect();
                let fire = (0..cells).map(|_| f32::from(rng.random_bool(0.2))).collect();
                (
                    ObservationFrame::new(d.channels, d.height, d.width, w, obs).unwrap(),
                    FireMap::ground_truth(d.height, d.width, w, fire).unwrap(),
                )
            })
            .unzip();
        LabelledSequence::new(frames, fires).unwrap()
    }

    #[test]
    fn online_and_unrolled_scores_agree_for_every_variant() {
        let d = dims();
        let s = stream(&d, 12, 5, 1);
        for variant in Variant::ALL {
            let m = Model::<f32>::init(variant, d, 7).unwrap();
            let h0 = m.zero_state(5);
            let a = evaluate_stream(&m, &s, &h0, "s").unwrap();
            let b = evaluate_unrolled(&m, &s, &h0, "s").unwrap();
            assert_eq!(a.frames, 9);
            assert!((a.total_bce - b.total_bce).abs() < 1e-6, "{variant}");
            assert!((a.auroc.unwrap() - b.auroc.unwrap()).abs() < 1e-6, "{variant}");
        }
    }

    #[test]
    fn each_prediction_targets_the_map_t_weeks_after_its_state() {
        let d = dims();
        let s = stream(&d, 10, 0, 2);
        let m = Model::<f32>::init(Variant::DynamicAutoenc, d, 1).unwrap();
        let preds = stream_predictions(&m, &s, &m.zero_state(0)).unwrap();
        let weeks: Vec<i64> = preds.iter().map(|p| p.week).collect();
        assert_eq!(weeks, (3..10).collect::<Vec<_>>());
    }

    #[test]
    fn repeated_evaluation_gives_identical_reports() {
        let d = dims();
        let s = stream(&d, 10, 0, 3);
        let m = Model::<f32>::init(Variant::GruBaseline, d, 1).unwrap();
        let h0 = m.zero_state(0);
        assert_eq!(
            evaluate_stream(&m, &s, &h0, "s").unwrap(),
            evaluate_stream(&m, &s, &h0, "s").unwrap()
        );
    }

    #[test]
    fn constant_half_scores_ln2_per_pixel() {
        let d = dims();
        let s = stream(&d, 6, 0, 4);
        let preds: Vec<FireMap> = (0..6)
            .map(|w| FireMap::predicted(d.height, d.width, w, vec![0.5; 64]))
            .collect();
        let targets: Vec<&FireMap> = s.fires.iter().map(Arc::as_ref).collect();
        let r = score_predictions("half", &preds, &targets, "s").unwrap();
        assert!((r.mean_pixel_bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.total_bce - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.auroc, Some(0.5));
    }

    #[test]
    fn all_negative_targets_leave_auroc_undefined() {
        let preds = [FireMap::predicted(1, 2, 0, vec![0.1, 0.2])];
        let t = FireMap::ground_truth(1, 2, 0, vec![0.0, 0.0]).unwrap();
        let r = score_predictions("x", &preds, &[&t], "s").unwrap();
        assert_eq!(r.auroc, None);
        assert_eq!(r.positive_rate, 0.0);
    }

    #[test]
    fn misaligned_weeks_are_rejected() {
        let preds = [FireMap::predicted(1, 2, 1, vec![0.1, 0.2])];
        let t = FireMap::ground_truth(1, 2, 0, vec![0.0, 1.0]).unwrap();
        assert!(score_predictions("x", &preds, &[&t], "s").is_err());
    }

    #[test]
    fn carried_state_continues_into_the_next_split() {
        let d = dims();
        let whole = stream(&d, 14, 0, 5);
        let split = |a: usize, b: usize| {
            LabelledSequence::new(
                whole.frames[a..b].iter().map(|f| (**f).clone()).collect(),
                whole.fires[a..b].iter().map(|f| (**f).clone()).collect(),
            )
            .unwrap()
        };
        let (train, val) = (split(0, 8), split(8, 14));
        let m = Model::<f64>::init(Variant::DynamicAutoenc, d, 2).unwrap();
        let h = carried_state(&m, &train).unwrap();
        assert_eq!(h.week, 8);
        let warm = stream_predictions(&m, &val, &h).unwrap();
        let full = stream_predictions(&m, &whole, &m.zero_state(0)).unwrap();
        for (a, b) in warm.iter().zip(&full[8..]) {
            assert_eq!(a.week, b.week);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(matches!(stream_predictions(&m, &val, &m.zero_state(0)), Err(Error::Config(_))));
    }

    #[test]
    fn streams_shorter_than_the_horizon_are_rejected() {
        let d = dims();
        let m = Model::<f32>::init(Variant::DynamicAutoenc, d, 0).unwrap();
        assert!(matches!(
            stream_predictions(&m, &stream(&d, 3, 0, 0), &m.zero_state(0)),
            Err(Error::Config(_))
        ));
    }
}
