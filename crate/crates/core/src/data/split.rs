use super::stack::GridStack;
use crate::error::{Error, Result};

/// Number of leading frames assigned to training.
pub fn train_len(frames: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    // The small slack absorbs representation error such as 0.7 * 100 = 69.999…
    let n = (ratio * frames as f64 + 1e-9).floor() as usize;
    if n == 0 || n >= frames {
        return Err(Error::Config(format!(
            "ratio {ratio} over {frames} frames leaves an empty split ({n} / {})",
            frames.saturating_sub(n)
        )));
    }
    Ok(n)
}

/// First `floor(ratio·frames)` weeks for training, the rest for validation.
pub fn temporal_split(stack: &GridStack, ratio: f64) -> Result<(GridStack, GridStack)> {
    let n = train_len(stack.frame_count(), ratio)?;
    Ok((stack.slice(0, n)?, stack.slice(n, stack.frame_count())?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::stack::tests::header;

    #[test]
    fn small_counts() {
        assert_eq!(train_len(100, 0.7).unwrap(), 70);
        assert_eq!(train_len(10, 0.7).unwrap(), 7);
        assert!(train_len(1, 0.7).is_err());
        assert!(train_len(10, 1.0).is_err());
        assert!(train_len(10, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn halves_are_contiguous_and_cover_the_stack(frames in 2usize..300, ratio in 0.01f64..0.99) {
            let stack = GridStack::new(header(frames, 1, 1, 2), (0..frames * 2).map(|v| v as f32).collect()).unwrap();
            match temporal_split(&stack, ratio) {
                Ok((train, val)) => {
                    prop_assert_eq!(train.frame_count(), (ratio * frames as f64 + 1e-9).floor() as usize);
                    prop_assert_eq!(train.frame_count() + val.frame_count(), frames);
                    let last = train.header.first_week + train.frame_count() as i64 - 1;
                    prop_assert_eq!(last + 1, val.header.first_week);
                    let joined: Vec<f32> = train.data().iter().chain(val.data()).copied().collect();
                    prop_assert_eq!(joined.as_slice(), stack.data());
                }
                Err(e) => prop_assert!(matches!(e, Error::Config(_))),
            }
        }
    }
}
