use serde::{Deserialize, Serialize};

use super::{Dataset, TaskData, TaskInstance};
use crate::array::Array64;
use crate::diff::{self, DiffFunction, Real, Tape, Var};
use crate::error::{Error, Result};

/// Which side of the task's split a loss refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// `ℓ_t^split(φ)` as a differentiable function of `φ`.
pub struct TaskLoss<'a> {
    pub task: &'a TaskInstance,
    pub split: Split,
}

impl<'a> TaskLoss<'a> {
    pub fn new(task: &'a TaskInstance, split: Split) -> Self {
        Self { task, split }
    }
}

fn pick<'a>(split: Split, train: &'a Dataset, val: &'a Dataset) -> &'a Dataset {
    match split {
        Split::Train => train,
        Split::Val => val,
    }
}

/// Records the task loss at the parameter node `phi`.
pub(crate) fn build_loss<T: Real>(task: &TaskInstance, split: Split, tape: &mut Tape<T>, phi: Var) -> Var {
    match &task.data {
        TaskData::Regression { model, train, val } => {
            let set = pick(split, train, val);
            let x = tape.constant(set.inputs.shape(), set.inputs.data());
            let out = model.forward(tape, phi, x);
            let out = tape.reshape(out, &[set.labels.len()]);
            let y = tape.constant(set.labels.shape(), set.labels.data());
            let r = tape.sub(out, y);
            let sq = tape.dot(r, r);
            tape.scale(sq, 1.0 / set.labels.len() as f64)
        }
        TaskData::Classification { model, train, val } => {
            let set = pick(split, train, val);
            let x = tape.constant(set.inputs.shape(), set.inputs.data());
            let logits = model.forward(tape, phi, x);
            let labels: Vec<usize> = set.labels.data().iter().map(|&y| y as usize).collect();
            tape.softmax_xent(logits, &labels)
        }
        TaskData::Quadratic { a, c_trn, c_val } => {
            let c = match split {
                Split::Train => c_trn,
                Split::Val => c_val,
            };
            let c = tape.constant(c.shape(), c.data());
            let a = tape.constant(a.shape(), a.data());
            let r = tape.sub(phi, c);
            tape.quad_form(r, a)
        }
    }
}

impl DiffFunction for TaskLoss<'_> {
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![self.task.param_dim()]]
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var {
        build_loss(self.task, self.split, tape, inputs[0])
    }
}

fn check_phi(task: &TaskInstance, phi: &Array64) -> Result<()> {
    if phi.shape() != [task.param_dim()] {
        return Err(Error::shape("task parameters", &[task.param_dim()], phi.shape()));
    }
    Ok(())
}

pub fn loss_value(task: &TaskInstance, split: Split, phi: &Array64) -> Result<f64> {
    check_phi(task, phi)?;
    diff::evaluate(&TaskLoss::new(task, split), &[phi])
}

pub fn loss_grad(task: &TaskInstance, split: Split, phi: &Array64) -> Result<Array64> {
    check_phi(task, phi)?;
    diff::value_and_grad(&TaskLoss::new(task, split), phi).map(|(_, g)| g)
}

pub fn loss_hvp(task: &TaskInstance, split: Split, phi: &Array64, v: &Array64) -> Result<Array64> {
    check_phi(task, phi)?;
    diff::hessian_vector_product(&TaskLoss::new(task, split), phi, v)
}

/// Evaluation metric of `φ` on the validation split: MSE for regression,
/// accuracy for classification, the loss itself for quadratics.
pub fn metric(task: &TaskInstance, phi: &Array64) -> Result<f64> {
    check_phi(task, phi)?;
    match &task.data {
        TaskData::Classification { model, val, .. } => {
            let logits = model.predict(phi, &val.inputs)?;
            let c = logits.cols();
            let correct = val
                .labels
                .data()
                .iter()
                .enumerate()
                .filter(|&(i, &y)| {
                    let row = &logits.data()[i * c..(i + 1) * c];
                    let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    best == y as usize
                })
                .count();
            Ok(correct as f64 / val.labels.len() as f64)
        }
        _ => loss_value(task, Split::Val, phi),
    }
}

impl TaskInstance {
    /// Closed-form `(value, gradient)` of a quadratic task.
    pub fn quadratic_closed_form(&self, split: Split, phi: &Array64) -> Result<(f64, Array64)> {
        let TaskData::Quadratic { a, c_trn, c_val } = &self.data else {
            return Err(Error::InvalidArgument("closed forms exist only for quadratic tasks".into()));
        };
        check_phi(self, phi)?;
        let c = if split == Split::Train { c_trn } else { c_val };
        let r = phi.axpy(-1.0, c);
        let g = a.matvec(&r)?;
        Ok((0.5 * r.dot(&g), g))
    }

    /// Closed-form Hessian-vector product `A v` of a quadratic task.
    pub fn quadratic_hvp(&self, v: &Array64) -> Result<Array64> {
        let TaskData::Quadratic { a, .. } = &self.data else {
            return Err(Error::InvalidArgument("closed forms exist only for quadratic tasks".into()));
        };
        a.matvec(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{sample_task, Mlp, TaskFamily};

    fn v(xs: &[f64]) -> Array64 {
        Array64::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_examples() {
        let z = Array64::zeros(&[2]);
        let t = TaskInstance::quadratic(0, Array64::identity(2), z.clone(), z.clone()).unwrap();
        assert_eq!(loss_value(&t, Split::Train, &v(&[1.0, 0.0])).unwrap(), 0.5);
        assert_eq!(loss_grad(&t, Split::Train, &v(&[1.0, 0.0])).unwrap().data(), &[1.0, 0.0]);

        let a = Array64::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let t = TaskInstance::quadratic(0, a, z.clone(), z).unwrap();
        let phi = v(&[1.0, 1.0]);
        assert_eq!(loss_value(&t, Split::Val, &phi).unwrap(), 2.5);
        assert_eq!(loss_grad(&t, Split::Val, &phi).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(loss_hvp(&t, Split::Val, &phi, &v(&[1.0, 0.0])).unwrap().data(), &[2.0, 0.0]);
        let (val, g) = t.quadratic_closed_form(Split::Val, &phi).unwrap();
        assert_eq!((val, g.data().to_vec()), (2.5, vec![2.0, 3.0]));
    }

    #[test]
    fn perfect_predictor_has_zero_mse() {
        // A single linear unit y = 2x + 1 fits labels produced by itself.
        let model = Mlp::new(1, vec![], 1);
        let phi = v(&[2.0, 1.0]);
        let mut t = TaskInstance::sinusoid(0, model.clone(), 1.0, 0.0, &[0.5, -1.0], &[2.0]).unwrap();
        if let TaskData::Regression { train, .. } = &mut t.data {
            train.labels = v(&[2.0, -1.0]);
        }
        assert_eq!(loss_value(&t, Split::Train, &phi).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let fam = TaskFamily::gaussian_classification();
        let t = sample_task(&fam, 0, 0).unwrap();
        let phi = Array64::zeros(&[t.param_dim()]);
        let l = loss_value(&t, Split::Train, &phi).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn accuracy_is_a_fraction() {
        let fam = TaskFamily::gaussian_classification();
        let t = sample_task(&fam, 1, 0).unwrap();
        let m = metric(&t, &Array64::zeros(&[t.param_dim()])).unwrap();
        assert!((0.0..=1.0).contains(&m));
    }
}
