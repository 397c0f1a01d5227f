//! Differentiation substrate: a reverse-mode tape over dense float64 arrays,
//! forward-over-reverse Hessian-vector products, and a central-difference
//! oracle.

mod real;
mod tape;

pub use real::{Dual, Real};
pub use tape::{Gradients, Tape, Unary, Var};

pub(crate) use real::sigmoid_f64;

use crate::array::Array64;
use crate::error::{Error, Result};

/// A scalar-valued function of one or more named array inputs whose
/// computation is recorded on a [`Tape`].
///
/// `build` must be deterministic and must not depend on the element type
/// beyond the arithmetic it performs.
pub trait DiffFunction {
    /// Declared shapes of the inputs, in order.
    fn input_shapes(&self) -> Vec<Vec<usize>>;

    /// Records the computation and returns the scalar output node.
    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var;
}

fn check_inputs<F: DiffFunction>(f: &F, xs: &[&Array64]) -> Result<Vec<Vec<usize>>> {
    let shapes = f.input_shapes();
    if shapes.len() != xs.len() {
        return Err(Error::InvalidArgument(format!(
            "function takes {} inputs, got {}",
            shapes.len(),
            xs.len()
        )));
    }
    for (s, x) in shapes.iter().zip(xs) {
        if s.as_slice() != x.shape() {
            return Err(Error::shape("differentiable input", s, x.shape()));
        }
    }
    Ok(shapes)
}

fn non_finite(op: &str) -> Error {
    Error::NonFinite { op: op.to_string() }
}

/// Evaluates `f` without recording gradients.
pub fn evaluate<F: DiffFunction>(f: &F, xs: &[&Array64]) -> Result<f64> {
    let shapes = check_inputs(f, xs)?;
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(xs)
        .map(|(s, x)| tape.input(s, x.data().to_vec()))
        .collect();
    let out = f.build(&mut tape, &vars);
    if let Some(op) = tape.non_finite_op() {
        return Err(non_finite(op));
    }
    Ok(tape.value(out)[0])
}

/// Value and gradient with respect to every input.
pub fn value_and_grad_multi<F: DiffFunction>(f: &F, xs: &[&Array64]) -> Result<(f64, Vec<Array64>)> {
    let shapes = check_inputs(f, xs)?;
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(xs)
        .map(|(s, x)| tape.input(s, x.data().to_vec()))
        .collect();
    let out = f.build(&mut tape, &vars);
    if let Some(op) = tape.non_finite_op() {
        return Err(non_finite(op));
    }
    let value = tape.value(out)[0];
    let g = tape.backward(out, 1.0);
    if let Some(op) = g.non_finite_op() {
        return Err(non_finite(op));
    }
    let grads = shapes
        .iter()
        .zip(&vars)
        .map(|(s, &v)| Array64::checked(s.clone(), g.wrt(v, s.iter().product()), "backward"))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Value and gradient of a single-input function.
pub fn value_and_grad<F: DiffFunction>(f: &F, x: &Array64) -> Result<(f64, Array64)> {
    let (v, mut g) = value_and_grad_multi(f, &[x])?;
    Ok((v, g.remove(0)))
}

/// Output of a joint gradient / Hessian-vector evaluation.
#[derive(Clone, Debug)]
pub struct SecondOrder {
    pub value: f64,
    /// `∇ₓᵢ f` for each input.
    pub grads: Vec<Array64>,
    /// Directional derivative of each `∇ₓᵢ f` along the joint tangent, i.e.
    /// the rows of the full Hessian applied to the stacked tangent vector.
    pub hvps: Vec<Array64>,
}

/// Forward-over-reverse: seeds every input `xᵢ` with tangent `vᵢ`, records
/// the function over dual numbers and runs one reverse sweep. The tangent
/// parts of the resulting adjoints are `∇²f · v`.
pub fn second_order<F: DiffFunction>(f: &F, xs: &[&Array64], vs: &[&Array64]) -> Result<SecondOrder> {
    let shapes = check_inputs(f, xs)?;
    if vs.len() != xs.len() {
        return Err(Error::InvalidArgument("one tangent per input is required".into()));
    }
    for (x, v) in xs.iter().zip(vs) {
        if x.shape() != v.shape() {
            return Err(Error::shape("tangent", x.shape(), v.shape()));
        }
    }
    let mut tape = Tape::<Dual>::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(xs.iter().zip(vs))
        .map(|(s, (x, v))| {
            let vals = x.data().iter().zip(v.data()).map(|(&a, &b)| Dual::new(a, b)).collect();
            tape.input(s, vals)
        })
        .collect();
    let out = f.build(&mut tape, &vars);
    if let Some(op) = tape.non_finite_op() {
        return Err(non_finite(op));
    }
    let value = tape.value(out)[0].re;
    let g = tape.backward(out, Dual::new(1.0, 0.0));
    if let Some(op) = g.non_finite_op() {
        return Err(non_finite(op));
    }
    let mut grads = Vec::with_capacity(vars.len());
    let mut hvps = Vec::with_capacity(vars.len());
    for (s, &v) in shapes.iter().zip(&vars) {
        let n = s.iter().product();
        let dual = g.wrt(v, n);
        grads.push(Array64::checked(s.clone(), dual.iter().map(|d| d.re).collect(), "backward")?);
        hvps.push(Array64::checked(s.clone(), dual.iter().map(|d| d.eps).collect(), "backward")?);
    }
    Ok(SecondOrder { value, grads, hvps })
}

/// `∇²f(x) · v` for a single-input function, exact up to rounding.
pub fn hessian_vector_product<F: DiffFunction>(f: &F, x: &Array64, v: &Array64) -> Result<Array64> {
    if x.shape() != v.shape() {
        return Err(Error::shape("hessian_vector_product", x.shape(), v.shape()));
    }
    let mut out = second_order(f, &[x], &[v])?;
    Ok(out.hvps.remove(0))
}

/// Central-difference gradient: entry `i` is
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Array64) -> Result<f64>,
    x: &Array64,
    step: f64,
) -> Result<Array64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = x.data().to_vec();
    let mut out = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = f(&Array64::from_parts(x.shape().to_vec(), probe.clone()))?;
        probe[i] = orig - step;
        let fm = f(&Array64::from_parts(x.shape().to_vec(), probe.clone()))?;
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * step));
    }
    Array64::checked(x.shape().to_vec(), out, "finite_difference_grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    struct HalfSq(usize);
    impl DiffFunction for HalfSq {
        fn input_shapes(&self) -> Vec<Vec<usize>> {
            vec![vec![self.0]]
        }
        fn build<T: Real>(&self, t: &mut Tape<T>, x: &[Var]) -> Var {
            let d = t.dot(x[0], x[0]);
            t.scale(d, 0.5)
        }
    }

    struct SumAll(usize);
    impl DiffFunction for SumAll {
        fn input_shapes(&self) -> Vec<Vec<usize>> {
            vec![vec![self.0]]
        }
        fn build<T: Real>(&self, t: &mut Tape<T>, x: &[Var]) -> Var {
            t.sum(x[0])
        }
    }

    fn v(xs: &[f64]) -> Array64 {
        Array64::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn half_squared_norm() {
        let (val, g) = value_and_grad(&HalfSq(2), &v(&[3.0, 4.0])).unwrap();
        assert_eq!(val, 12.5);
        assert_eq!(g.data(), &[3.0, 4.0]);
        let h = hessian_vector_product(&HalfSq(2), &v(&[-1.0, 7.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(h.data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_sum() {
        let (val, g) = value_and_grad(&SumAll(3), &v(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(val, 3.0);
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(matches!(
            value_and_grad(&HalfSq(2), &v(&[1.0, 2.0, 3.0])),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(hessian_vector_product(&HalfSq(2), &v(&[1.0, 2.0]), &v(&[1.0])).is_err());
    }

    #[test]
    fn finite_difference_basics() {
        let g = finite_difference_grad(|x| Ok(0.5 * x.dot(x)), &v(&[2.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-9);
        let g = finite_difference_grad(|x| Ok(x.data()[0].exp()), &v(&[0.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
        assert!(finite_difference_grad(|_| Ok(0.0), &v(&[0.0]), 0.0).is_err());
    }
}
