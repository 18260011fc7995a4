use crate::error::Result;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Largest per-coordinate relative error between the tape gradient of a
/// scalar function and its central finite difference with step `h`.
///
/// The relative error of a coordinate is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = analytic_gradient(&f, x)?;
    let numeric = numeric_gradient(&f, x, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn analytic_gradient<T, F>(f: &F, x: &Tensor<T>) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let mut grads = tape.backward(out)?;
    Ok(grads.take(xv).unwrap_or_else(|| vec![T::zero(); x.len()]))
}

fn probe_loss<T, F>(f: &F, x: &Tensor<T>, i: usize, delta: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut probe = x.clone();
    probe.data_mut()[i] += delta;
    let mut tape = Tape::new();
    let xv = tape.constant(probe);
    let out = f(&mut tape, xv)?;
    Ok(tape.value(out).item())
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` per coordinate.
pub fn numeric_gradient<T, F>(f: &F, x: &Tensor<T>, h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let two = T::one() + T::one();
    (0..x.len())
        .map(|i| Ok((probe_loss(f, x, i, h)? - probe_loss(f, x, i, -h)?) / (two * h)))
        .collect()
}

/// Five-point stencil with `O(h^4)` truncation error. Deep compositions
/// have coordinates with tiny gradients where a central difference cannot
/// pick a step that is both small enough and above rounding noise.
pub fn numeric_gradient_5pt<T, F>(f: &F, x: &Tensor<T>, h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let c = |v: f64| T::from_f64_lossy(v);
    (0..x.len())
        .map(|i| {
            let near = probe_loss(f, x, i, h)? - probe_loss(f, x, i, -h)?;
            let far = probe_loss(f, x, i, c(2.0) * h)? - probe_loss(f, x, i, c(-2.0) * h)?;
            Ok((c(8.0) * near - far) / (c(12.0) * h))
        })
        .collect()
}

pub fn max_relative_error<T: Scalar>(a: &[T], b: &[T]) -> T {
    let floor = T::from_f64_lossy(1e-8);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(T::zero(), T::max)
}
