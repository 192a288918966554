use super::MatchingModel;
use crate::error::{Error, Result};
use crate::numerics::{Objective, Scalar, Tape, Var};

/// Scalar function of a model's flattened parameters, for gradient checking.
///
/// `build` records a computation on a tape bound to the model and returns a
/// single-element node. Frozen parameters contribute zero analytic gradient.
pub struct ParamObjective<T, F> {
    model: MatchingModel<T>,
    build: F,
}

impl<T, F> ParamObjective<T, F>
where
    T: Scalar,
    F: for<'p> FnMut(&'p MatchingModel<T>, &mut Tape<'p, T>) -> Result<Var>,
{
    pub fn new(model: MatchingModel<T>, build: F) -> Self {
        Self { model, build }
    }

    pub fn point(&self) -> Vec<T> {
        self.model.params.flatten()
    }

    fn run(&mut self, x: &[T], with_grad: bool) -> Result<(T, Option<Vec<T>>)> {
        self.model.params.assign_flat(x)?;
        let model = &self.model;
        let mut tape = Tape::with_params(&model.params);
        let out = (self.build)(model, &mut tape)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::Contract(format!(
                "objective must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        let value = v.item();
        if !with_grad {
            return Ok((value, None));
        }
        let grads = tape.backward(out)?;
        let flat = model
            .params
            .iter()
            .flat_map(|(id, p)| match grads.param(id) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.tensor.numel()],
            })
            .collect();
        Ok((value, Some(flat)))
    }
}

impl<T, F> Objective<T> for ParamObjective<T, F>
where
    T: Scalar,
    F: for<'p> FnMut(&'p MatchingModel<T>, &mut Tape<'p, T>) -> Result<Var>,
{
    fn value(&mut self, x: &[T]) -> Result<T> {
        Ok(self.run(x, false)?.0)
    }

    fn gradient(&mut self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.run(x, true)?.1.expect("requested gradient"))
    }
}
