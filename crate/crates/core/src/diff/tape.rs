//! Reverse-mode differentiation record over dense arrays.
//!
//! Every backward rule is written in terms of the generic element type, so
//! a reverse sweep over [`Dual`](super::Dual) values propagates tangents
//! through the accumulation itself (forward-over-reverse).

use super::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Element-wise nonlinearities with native derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Softplus,
    Elu,
    Sigmoid,
    Tanh,
    Exp,
    Square,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Softplus => "softplus",
            Unary::Elu => "elu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Square => "square",
        }
    }

    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Softplus => x.softplus(),
            Unary::Elu => x.elu(),
            Unary::Sigmoid => x.sigmoid(),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    #[inline]
    fn prime<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Softplus => x.sigmoid(),
            Unary::Elu => x.elu_prime(),
            Unary::Sigmoid => y * (T::cst(1.0) - y),
            Unary::Tanh => T::cst(1.0) - y * y,
            Unary::Exp => y,
            Unary::Square => x.scale(2.0),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Unary(usize, Unary),
    Sum(usize),
    Dot(usize, usize),
    Slice(usize, usize),
    Reshape(usize),
    SoftmaxXent(usize, Vec<usize>),
    QuadForm(usize, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op,
    needs_grad: bool,
}

/// A single-use differentiation record. Each evaluation owns its tape.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<&'static str>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(64),
            first_non_finite: None,
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, name: &'static str) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some(name);
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::Dot(a, b) | Op::QuadForm(a, b) => self.nodes[*a].needs_grad || self.nodes[*b].needs_grad,
            Op::Scale(a, _)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Slice(a, _)
            | Op::Reshape(a)
            | Op::SoftmaxXent(a, _) => self.nodes[*a].needs_grad,
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn input(&mut self, shape: &[usize], value: Vec<T>) -> Var {
        let v = self.push(shape.to_vec(), value, Op::Leaf, "input");
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// A constant (no gradient is accumulated into it).
    pub fn constant(&mut self, shape: &[usize], value: &[f64]) -> Var {
        let vals = value.iter().map(|&x| T::cst(x)).collect();
        self.push(shape.to_vec(), vals, Op::Leaf, "constant")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Name of the first operation that produced a non-finite value, if any.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        self.first_non_finite
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "tape op `{op}` requires equal shapes"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(self.nodes[a.0].shape.clone(), v, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push(self.nodes[a.0].shape.clone(), v, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(self.nodes[a.0].shape.clone(), v, Op::Mul(a.0, b.0), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| x.scale(c)).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Scale(a.0, c), "scale")
    }

    /// `a[i, j] + b[j]` for a matrix `a` and a vector `b`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.dims2(a);
        assert_eq!(self.len(b), m, "add_row: bias length must equal column count");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                v.push(av[i * m + j] + bv[j]);
            }
        }
        self.push(vec![n, m], v, Op::AddRow(a.0, b.0), "add_row")
    }

    fn dims2(&self, a: Var) -> (usize, usize) {
        let s = &self.nodes[a.0].shape;
        match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => panic!("expected a vector or matrix, got shape {s:?}"),
        }
    }

    /// Matrix product. A 1-D left operand is treated as a row vector and the
    /// result is 1-D in that case.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims2(a);
        let (k2, m) = match self.nodes[b.0].shape.as_slice() {
            [r, c] => (*r, *c),
            s => panic!("matmul: right operand must be 2-D, got {s:?}"),
        };
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * m..(p + 1) * m];
                for j in 0..m {
                    row[j] += aip * brow[j];
                }
            }
        }
        let shape = if self.nodes[a.0].shape.len() == 1 {
            vec![m]
        } else {
            vec![n, m]
        };
        self.push(shape, out, Op::MatMul(a.0, b.0), "matmul")
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| f.apply(x)).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Unary(a.0, f), f.name())
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(vec![1], vec![s], Op::Sum(a.0), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.len(a) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len(a), self.len(b), "dot: lengths differ");
        let s = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        self.push(vec![1], vec![s], Op::Dot(a.0, b.0), "dot")
    }

    /// Contiguous sub-range `[start, start + prod(shape))` of `a`, reshaped.
    pub fn slice(&mut self, a: Var, start: usize, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        let v = self.nodes[a.0].value[start..start + n].to_vec();
        self.push(shape.to_vec(), v, Op::Slice(a.0, start), "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.len(a), "reshape: size mismatch");
        let v = self.nodes[a.0].value.clone();
        self.push(shape.to_vec(), v, Op::Reshape(a.0), "reshape")
    }

    /// Mean softmax cross-entropy of row-wise `logits` against class labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, c) = self.dims2(logits);
        assert_eq!(labels.len(), n, "softmax_xent: one label per row");
        let lv = &self.nodes[logits.0].value;
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            total += log_sum_exp(row) - row[y];
        }
        let loss = total.scale(1.0 / n as f64);
        self.push(vec![1], vec![loss], Op::SoftmaxXent(logits.0, labels.to_vec()), "softmax_xent")
    }

    /// `½ zᵀ P z` for a vector `z` and a square matrix `P`.
    pub fn quad_form(&mut self, z: Var, p: Var) -> Var {
        let d = self.len(z);
        assert_eq!(self.nodes[p.0].shape, vec![d, d], "quad_form: P must be d×d");
        let zv = &self.nodes[z.0].value;
        let pv = &self.nodes[p.0].value;
        let mut s = T::zero();
        for i in 0..d {
            let mut row = T::zero();
            for j in 0..d {
                row += pv[i * d + j] * zv[j];
            }
            s += zv[i] * row;
        }
        self.push(vec![1], vec![s.scale(0.5)], Op::QuadForm(z.0, p.0), "quad_form")
    }

    /// Reverse accumulation from a scalar `output`, seeded with `seed`.
    pub fn backward(&self, output: Var, seed: T) -> Gradients<T> {
        assert_eq!(self.len(output), 1, "backward requires a scalar output");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![seed]);
        let mut non_finite = None;
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if non_finite.is_none() && g.iter().any(|v| !v.is_finite()) {
                non_finite = Some(op_name(&node.op));
            }
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, non_finite }
    }

    fn accumulate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_with(*a, grads, |ga| add_into(ga, g));
                self.acc_with(*b, grads, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc_with(*a, grads, |ga| add_into(ga, g));
                self.acc_with(*b, grads, |gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                self.acc_with(*a, grads, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc_with(*b, grads, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc_with(*a, grads, |ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y.scale(*c);
                    }
                });
            }
            Op::AddRow(a, b) => {
                let m = self.nodes[*b].value.len();
                self.acc_with(*a, grads, |ga| add_into(ga, g));
                self.acc_with(*b, grads, |gb| {
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % m] += y;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(Var(*a));
                let m = self.nodes[*b].shape[1];
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                // dA = G Bᵀ
                self.acc_with(*a, grads, |ga| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            let mut s = T::zero();
                            for j in 0..m {
                                s += grow[j] * brow[j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ G
                self.acc_with(*b, grads, |gb| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            let dst = &mut gb[p * m..(p + 1) * m];
                            for j in 0..m {
                                dst[j] += aip * grow[j];
                            }
                        }
                    }
                });
            }
            Op::Unary(a, f) => {
                let xv = &self.nodes[*a].value;
                let yv = &node.value;
                self.acc_with(*a, grads, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * f.prime(xv[i], yv[i]);
                    }
                });
            }
            Op::Sum(a) => {
                self.acc_with(*a, grads, |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::Dot(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                self.acc_with(*a, grads, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[0] * bv[i];
                    }
                });
                self.acc_with(*b, grads, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[0] * av[i];
                    }
                });
            }
            Op::Slice(a, start) => {
                self.acc_with(*a, grads, |ga| add_into(&mut ga[*start..*start + g.len()], g));
            }
            Op::Reshape(a) => {
                self.acc_with(*a, grads, |ga| add_into(ga, g));
            }
            Op::SoftmaxXent(a, labels) => {
                let (n, c) = self.dims2(Var(*a));
                let lv = &self.nodes[*a].value;
                let coef = g[0].scale(1.0 / n as f64);
                self.acc_with(*a, grads, |ga| {
                    for (i, &y) in labels.iter().enumerate() {
                        let row = &lv[i * c..(i + 1) * c];
                        let lse = log_sum_exp(row);
                        for j in 0..c {
                            let mut p = (row[j] - lse).exp();
                            if j == y {
                                p -= T::cst(1.0);
                            }
                            ga[i * c + j] += coef * p;
                        }
                    }
                });
            }
            Op::QuadForm(z, p) => {
                let d = self.nodes[*z].value.len();
                let zv = &self.nodes[*z].value;
                let pv = &self.nodes[*p].value;
                let half = g[0].scale(0.5);
                self.acc_with(*z, grads, |gz| {
                    for i in 0..d {
                        let mut s = T::zero();
                        for j in 0..d {
                            s += (pv[i * d + j] + pv[j * d + i]) * zv[j];
                        }
                        gz[i] += half * s;
                    }
                });
                self.acc_with(*p, grads, |gp| {
                    for i in 0..d {
                        let hz = half * zv[i];
                        for j in 0..d {
                            gp[i * d + j] += hz * zv[j];
                        }
                    }
                });
            }
        }
    }

    fn acc_with(&self, target: usize, grads: &mut [Option<Vec<T>>], f: impl FnOnce(&mut [T])) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let n = self.nodes[target].value.len();
        let slot = grads[target].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddRow(..) => "add_row",
        Op::MatMul(..) => "matmul",
        Op::Unary(_, f) => f.name(),
        Op::Sum(..) => "sum",
        Op::Dot(..) => "dot",
        Op::Slice(..) => "slice",
        Op::Reshape(..) => "reshape",
        Op::SoftmaxXent(..) => "softmax_xent",
        Op::QuadForm(..) => "quad_form",
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::cst(m);
    let s = row.iter().fold(T::zero(), |acc, &x| acc + (x - shift).exp());
    shift + s.ln()
}

fn zip<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    non_finite: Option<&'static str>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros if `v` does not influence the output.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<T> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![T::zero(); len])
    }

    pub fn non_finite_op(&self) -> Option<&'static str> {
        self.non_finite
    }
}
