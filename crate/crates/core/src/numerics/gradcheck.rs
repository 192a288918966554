//! Central finite-difference verification of analytic gradients.

use std::marker::PhantomData;

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// A scalar function of a flat point with an analytic gradient.
pub trait Objective<T> {
    fn value(&mut self, x: &[T]) -> Result<T>;
    fn gradient(&mut self, x: &[T]) -> Result<Vec<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the analytic gradient against central differences with step `h`.
///
/// The error of a coordinate is `|a − n| / max(1, |a|, |n|)`; the report carries the worst one.
pub fn gradcheck<T: Scalar, O: Objective<T>>(f: &mut O, point: &[T], h: T) -> Result<GradcheckReport> {
    let analytic = f.gradient(point)?;
    if analytic.len() != point.len() {
        return Err(Error::shape("gradcheck", &[point.len()], &[analytic.len()]));
    }
    let mut x = point.to_vec();
    let two_h = h + h;
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: point.len(),
    };
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f.value(&x)?;
        x[i] = orig - h;
        let down = f.value(&x)?;
        x[i] = orig;
        let numeric = ((up - down) / two_h).as_f64();
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error || !err.is_finite() {
            report = GradcheckReport {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: a,
                numeric,
                coordinates: point.len(),
            };
        }
    }
    Ok(report)
}

/// Adapts a tape-building closure `f(tape, x) -> scalar var` to [`Objective`].
pub struct TapeFn<F, T> {
    shape: Vec<usize>,
    build: F,
    _scalar: PhantomData<T>,
}

impl<F, T> TapeFn<F, T> {
    pub fn new(shape: &[usize], build: F) -> Self {
        Self {
            shape: shape.to_vec(),
            build,
            _scalar: PhantomData,
        }
    }
}

impl<T, F> TapeFn<F, T>
where
    T: Scalar,
    F: FnMut(&mut Tape<'_, T>, Var) -> Result<Var>,
{
    fn run(&mut self, x: &[T], with_grad: bool) -> Result<(T, Option<Vec<T>>)> {
        let mut tape = Tape::new();
        let input = tape.input(Tensor::new(self.shape.clone(), x.to_vec())?);
        let out = (self.build)(&mut tape, input)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(Error::Contract(format!(
                "gradcheck needs a scalar-valued function, got shape {:?}",
                value.shape()
            )));
        }
        let v = value.item();
        if !with_grad {
            return Ok((v, None));
        }
        let grads = tape.backward(out)?;
        let g = grads
            .wrt(input)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); x.len()]);
        Ok((v, Some(g)))
    }
}

impl<T, F> Objective<T> for TapeFn<F, T>
where
    T: Scalar,
    F: FnMut(&mut Tape<'_, T>, Var) -> Result<Var>,
{
    fn value(&mut self, x: &[T]) -> Result<T> {
        Ok(self.run(x, false)?.0)
    }

    fn gradient(&mut self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.run(x, true)?.1.expect("requested gradient"))
    }
}

/// Gradient check of a tape closure at `point` with the default step.
pub fn gradcheck_fn<T, F>(shape: &[usize], point: &[T], build: F) -> Result<GradcheckReport>
where
    T: Scalar,
    F: FnMut(&mut Tape<'_, T>, Var) -> Result<Var>,
{
    gradcheck(&mut TapeFn::new(shape, build), point, T::lit(DEFAULT_STEP))
}
