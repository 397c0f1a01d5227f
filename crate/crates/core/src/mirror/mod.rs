//! The learnable conjugate `h*(z; θ_h)` of the distance-generating function.
//!
//! The network is
//!
//! ```text
//! a₀ = z,   aᵢ = σ(Wᵢᵀ aᵢ₋₁ + Mᵢᵀ z + bᵢ),   h*(z) = a_I + ½ zᵀ P z
//! ```
//!
//! with `Wᵢ = W·sigmoid(W̌ᵢ)` element-wise in `(0, W)`, `Mᵢ = M·tanh(M̌ᵢ)` in
//! `(−M, M)`, and a convex, non-decreasing, smooth activation `σ`. Under
//! these constraints `h*` is convex in `z` with a gradient-Lipschitz
//! constant that depends only on the spec (see [`lipschitz_bounds`]). Its
//! gradient `∇₁h*` is the inverse mirror map taking dual iterates back to
//! primal parameters.

mod bounds;
mod convexity;

pub use bounds::{lipschitz_bounds, LipschitzBounds};
pub use convexity::{check_convexity, check_convexity_with, ConvexityReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array64;
use crate::diff::{self, DiffFunction, Real, SecondOrder, Tape, Unary, Var};
use crate::error::{Error, Result};

/// Activation of the conjugate network. Both choices are convex,
/// non-decreasing, Lipschitz-continuous and Lipschitz-smooth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapActivation {
    Softplus,
    Elu,
}

impl MapActivation {
    pub(crate) fn unary(self) -> Unary {
        match self {
            MapActivation::Softplus => Unary::Softplus,
            MapActivation::Elu => Unary::Elu,
        }
    }

    /// `(L_σ, G_σ)`: Lipschitz constants of σ and of σ'.
    pub fn lipschitz_constants(self) -> (f64, f64) {
        match self {
            MapActivation::Softplus => (1.0, 0.25),
            MapActivation::Elu => (1.0, 1.0),
        }
    }
}

fn default_bound() -> f64 {
    1.0
}

fn default_quadratic_bound() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

fn default_activation() -> MapActivation {
    MapActivation::Softplus
}

/// Architecture and weight bounds of `h*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorMapSpec {
    pub input_dim: usize,
    pub num_layers: usize,
    /// Widths of layers `1..I-1`; layer `I` is scalar.
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: MapActivation,
    #[serde(default = "default_bound")]
    pub weight_bound: f64,
    #[serde(default = "default_bound")]
    pub skip_bound: f64,
    #[serde(default = "default_true")]
    pub include_quadratic: bool,
    #[serde(default = "default_quadratic_bound")]
    pub quadratic_bound: f64,
    #[serde(default)]
    pub enforce_psd_quadratic: bool,
}

impl MirrorMapSpec {
    /// Network of `num_layers` layers on `input_dim` inputs with default
    /// bounds and the quadratic term enabled.
    pub fn new(input_dim: usize, num_layers: usize, hidden_widths: Vec<usize>) -> Self {
        Self {
            input_dim,
            num_layers,
            hidden_widths,
            activation: MapActivation::Softplus,
            weight_bound: 1.0,
            skip_bound: 1.0,
            include_quadratic: true,
            quadratic_bound: 2.0,
            enforce_psd_quadratic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.num_layers == 0 && !self.include_quadratic {
            return bad("a map with zero layers needs the quadratic term".into());
        }
        if self.hidden_widths.len() != self.num_layers.saturating_sub(1) {
            return bad(format!(
                "{} layers need {} hidden widths, got {}",
                self.num_layers,
                self.num_layers.saturating_sub(1),
                self.hidden_widths.len()
            ));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        for (name, v) in [
            ("weight_bound", self.weight_bound),
            ("skip_bound", self.skip_bound),
            ("quadratic_bound", self.quadratic_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|i| {
                let fan_in = if i == 0 { self.input_dim } else { self.hidden_widths[i - 1] };
                let fan_out = if i + 1 == self.num_layers { 1 } else { self.hidden_widths[i] };
                (fan_in, fan_out)
            })
            .collect()
    }

    /// Length of the flattened `θ_h`.
    pub fn param_count(&self) -> usize {
        let d = self.input_dim;
        let net: usize = self
            .layer_dims()
            .iter()
            .map(|&(fin, fout)| fin * fout + d * fout + fout)
            .sum();
        net + if self.include_quadratic { d * d } else { 0 }
    }
}

/// Unconstrained parameters `θ_h = {W̌ᵢ, M̌ᵢ, bᵢ, P̌}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorMapParams {
    pub raw_w: Vec<Array64>,
    pub raw_m: Vec<Array64>,
    pub bias: Vec<Array64>,
    pub raw_p: Option<Array64>,
}

impl MirrorMapParams {
    pub fn validate(&self, spec: &MirrorMapSpec) -> Result<()> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let d = spec.input_dim;
        if self.raw_w.len() != dims.len() || self.raw_m.len() != dims.len() || self.bias.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "mirror map params have {} layers, spec has {}",
                self.raw_w.len(),
                dims.len()
            )));
        }
        for (i, &(fin, fout)) in dims.iter().enumerate() {
            check_shape(&self.raw_w[i], &[fin, fout], "raw_w")?;
            check_shape(&self.raw_m[i], &[d, fout], "raw_m")?;
            check_shape(&self.bias[i], &[fout], "bias")?;
        }
        match (&self.raw_p, spec.include_quadratic) {
            (Some(p), true) => check_shape(p, &[d, d], "raw_p"),
            (None, false) => Ok(()),
            _ => Err(Error::InvalidArgument("quadratic term presence disagrees with spec".into())),
        }
    }

    /// Flattens in layer order (`W̌ᵢ, M̌ᵢ, bᵢ` row-major), then `P̌`.
    pub fn to_flat(&self) -> Array64 {
        let mut out = Vec::new();
        for i in 0..self.raw_w.len() {
            out.extend_from_slice(self.raw_w[i].data());
            out.extend_from_slice(self.raw_m[i].data());
            out.extend_from_slice(self.bias[i].data());
        }
        if let Some(p) = &self.raw_p {
            out.extend_from_slice(p.data());
        }
        let n = out.len();
        Array64::from_parts(vec![n], out)
    }

    pub fn from_flat(spec: &MirrorMapSpec, flat: &[f64]) -> Result<Self> {
        spec.validate()?;
        if flat.len() != spec.param_count() {
            return Err(Error::shape("flat mirror map params", &[spec.param_count()], &[flat.len()]));
        }
        let d = spec.input_dim;
        let mut off = 0;
        let mut take = |shape: Vec<usize>| -> Result<Array64> {
            let n: usize = shape.iter().product();
            let a = Array64::new(shape, flat[off..off + n].to_vec());
            off += n;
            a
        };
        let (mut raw_w, mut raw_m, mut bias) = (Vec::new(), Vec::new(), Vec::new());
        for (fin, fout) in spec.layer_dims() {
            raw_w.push(take(vec![fin, fout])?);
            raw_m.push(take(vec![d, fout])?);
            bias.push(take(vec![fout])?);
        }
        let raw_p = if spec.include_quadratic { Some(take(vec![d, d])?) } else { None };
        Ok(Self { raw_w, raw_m, bias, raw_p })
    }
}

fn check_shape(a: &Array64, shape: &[usize], what: &str) -> Result<()> {
    if a.shape() != shape {
        return Err(Error::shape(what, shape, a.shape()));
    }
    Ok(())
}

/// Draws `W̌, M̌ ~ U(−0.5, 0.5)`, zero biases, and `P̌` so that the effective
/// quadratic term starts at (approximately) the identity.
pub fn init_params(spec: &MirrorMapSpec, rng_seed: u64) -> Result<MirrorMapParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = spec.input_dim;
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.5..0.5)).collect() };
    let (mut raw_w, mut raw_m, mut bias) = (Vec::new(), Vec::new(), Vec::new());
    for (fin, fout) in spec.layer_dims() {
        raw_w.push(Array64::from_parts(vec![fin, fout], uniform(fin * fout)));
        raw_m.push(Array64::from_parts(vec![d, fout], uniform(d * fout)));
        bias.push(Array64::zeros(&[fout]));
    }
    let raw_p = spec.include_quadratic.then(|| {
        let qb = spec.quadratic_bound;
        let diag = exact_raw((1.0 / qb).min(0.999) * qb, qb);
        let mut p = Array64::zeros(&[d, d]).into_data();
        for i in 0..d {
            p[i * d + i] = diag;
        }
        Array64::from_parts(vec![d, d], p)
    });
    Ok(MirrorMapParams { raw_w, raw_m, bias, raw_p })
}

/// A raw value `r` with `bound·tanh(r) == target`, bit-exact when some
/// float near `atanh(target/bound)` achieves it.
fn exact_raw(target: f64, bound: f64) -> f64 {
    if target == 0.0 {
        return 0.0;
    }
    let r0 = (target / bound).atanh();
    let bits = r0.to_bits() as i64;
    for k in 0..=256i64 {
        for cand in [bits + k, bits - k] {
            let r = f64::from_bits(cand as u64);
            if bound * r.tanh() == target {
                return r;
            }
        }
    }
    r0
}

/// The constrained weights actually used by the network.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveWeights {
    pub activation: MapActivation,
    pub w: Vec<Array64>,
    pub m: Vec<Array64>,
    pub b: Vec<Array64>,
    /// Effective quadratic matrix `P` (already `S·Sᵀ` in PSD mode).
    pub p: Option<Array64>,
}

pub fn effective_weights(params: &MirrorMapParams, spec: &MirrorMapSpec) -> Result<EffectiveWeights> {
    params.validate(spec)?;
    let map = |a: &Array64, f: &dyn Fn(f64) -> f64| {
        Array64::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
    };
    let wb = spec.weight_bound;
    let mb = spec.skip_bound;
    let w = params.raw_w.iter().map(|a| map(a, &|x| wb * diff::sigmoid_f64(x))).collect();
    let m = params.raw_m.iter().map(|a| map(a, &|x| mb * x.tanh())).collect();
    let p = effective_p(params, spec)?;
    Ok(EffectiveWeights {
        activation: spec.activation,
        w,
        m,
        b: params.bias.clone(),
        p,
    })
}

/// Effective `P` of the quadratic term, if present.
pub fn effective_p(params: &MirrorMapParams, spec: &MirrorMapSpec) -> Result<Option<Array64>> {
    let Some(raw) = &params.raw_p else { return Ok(None) };
    let d = spec.input_dim;
    let qb = spec.quadratic_bound;
    let s = Array64::from_parts(vec![d, d], raw.data().iter().map(|&x| qb * x.tanh()).collect());
    if !spec.enforce_psd_quadratic {
        return Ok(Some(s));
    }
    let sm = s.as_dmatrix();
    Ok(Some(Array64::from_dmatrix(&(&sm * sm.transpose()))))
}

/// Records the network given tape nodes for its effective weights.
fn build_network<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    activation: Unary,
    layers: &[(Var, Var, Var)],
    quad: Option<QuadTerm>,
) -> Var {
    let mut a = z;
    let mut out = None;
    for &(w, m, b) in layers {
        let from_prev = tape.matmul(a, w);
        let skip = tape.matmul(z, m);
        let pre = tape.add(from_prev, skip);
        let pre = tape.add(pre, b);
        a = tape.unary(pre, activation);
        out = Some(a);
    }
    let q = quad.map(|q| match q {
        QuadTerm::General(p) => tape.quad_form(z, p),
        QuadTerm::Factor(s) => {
            let y = tape.matmul(z, s);
            let sq = tape.dot(y, y);
            tape.scale(sq, 0.5)
        }
    });
    match (out, q) {
        (Some(a), Some(q)) => tape.add(a, q),
        (Some(a), None) => a,
        (None, Some(q)) => q,
        (None, None) => unreachable!("validated spec has a network or a quadratic term"),
    }
}

#[derive(Clone, Copy)]
enum QuadTerm {
    General(Var),
    Factor(Var),
}

/// Records `h*(z; θ)` where `theta` is the flat raw parameter node.
pub(crate) fn build_conjugate<T: Real>(spec: &MirrorMapSpec, tape: &mut Tape<T>, z: Var, theta: Var) -> Var {
    let d = spec.input_dim;
    let mut off = 0;
    let mut layers = Vec::with_capacity(spec.num_layers);
    for (fin, fout) in spec.layer_dims() {
        let rw = tape.slice(theta, off, &[fin, fout]);
        off += fin * fout;
        let rm = tape.slice(theta, off, &[d, fout]);
        off += d * fout;
        let b = tape.slice(theta, off, &[fout]);
        off += fout;
        let w = tape.sigmoid(rw);
        let w = tape.scale(w, spec.weight_bound);
        let m = tape.tanh(rm);
        let m = tape.scale(m, spec.skip_bound);
        layers.push((w, m, b));
    }
    let quad = spec.include_quadratic.then(|| {
        let rp = tape.slice(theta, off, &[d, d]);
        let p = tape.tanh(rp);
        let p = tape.scale(p, spec.quadratic_bound);
        if spec.enforce_psd_quadratic {
            QuadTerm::Factor(p)
        } else {
            QuadTerm::General(p)
        }
    });
    build_network(tape, z, spec.activation.unary(), &layers, quad)
}

/// `h*(z; θ_h)` as a function of both `z` and the flat `θ_h`.
pub struct Conjugate<'a> {
    pub spec: &'a MirrorMapSpec,
}

impl DiffFunction for Conjugate<'_> {
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![self.spec.input_dim], vec![self.spec.param_count()]]
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var {
        build_conjugate(self.spec, tape, inputs[0], inputs[1])
    }
}

/// `h*(·; θ_h)` with `θ_h` held fixed.
pub struct ConjugateAt<'a> {
    pub spec: &'a MirrorMapSpec,
    pub theta: &'a [f64],
}

impl DiffFunction for ConjugateAt<'_> {
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![self.spec.input_dim]]
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var {
        let theta = tape.constant(&[self.theta.len()], self.theta);
        build_conjugate(self.spec, tape, inputs[0], theta)
    }
}

impl DiffFunction for EffectiveWeights {
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        let d = match (&self.p, self.m.first()) {
            (Some(p), _) => p.rows(),
            (None, Some(m)) => m.rows(),
            (None, None) => 0,
        };
        vec![vec![d]]
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var {
        let layers: Vec<_> = (0..self.w.len())
            .map(|i| {
                let w = tape.constant(self.w[i].shape(), self.w[i].data());
                let m = tape.constant(self.m[i].shape(), self.m[i].data());
                let b = tape.constant(self.b[i].shape(), self.b[i].data());
                (w, m, b)
            })
            .collect();
        let quad = self
            .p
            .as_ref()
            .map(|p| QuadTerm::General(tape.constant(p.shape(), p.data())));
        build_network(tape, inputs[0], self.activation.unary(), &layers, quad)
    }
}

fn check_z(z: &Array64, spec: &MirrorMapSpec) -> Result<()> {
    if z.shape() != [spec.input_dim] {
        return Err(Error::shape("mirror map input", &[spec.input_dim], z.shape()));
    }
    Ok(())
}

/// `h*(z; θ_h)`.
pub fn conjugate_value(z: &Array64, params: &MirrorMapParams, spec: &MirrorMapSpec) -> Result<f64> {
    check_z(z, spec)?;
    params.validate(spec)?;
    let flat = params.to_flat();
    diff::evaluate(&ConjugateAt { spec, theta: flat.data() }, &[z])
}

/// The inverse mirror map `φ = ∇₁h*(z; θ_h)`.
pub fn inverse_map(z: &Array64, params: &MirrorMapParams, spec: &MirrorMapSpec) -> Result<Array64> {
    check_z(z, spec)?;
    params.validate(spec)?;
    let flat = params.to_flat();
    inverse_map_flat(z, flat.data(), spec)
}

/// [`inverse_map`] with `θ_h` already flattened (no validation).
pub(crate) fn inverse_map_flat(z: &Array64, theta: &[f64], spec: &MirrorMapSpec) -> Result<Array64> {
    diff::value_and_grad(&ConjugateAt { spec, theta }, z).map(|(_, g)| g)
}

/// `∇₁²h*(z; θ_h) · v`.
pub fn inverse_map_hvp(
    z: &Array64,
    params: &MirrorMapParams,
    spec: &MirrorMapSpec,
    v: &Array64,
) -> Result<Array64> {
    check_z(z, spec)?;
    check_z(v, spec)?;
    params.validate(spec)?;
    let flat = params.to_flat();
    inverse_map_hvp_flat(z, flat.data(), spec, v)
}

pub(crate) fn inverse_map_hvp_flat(z: &Array64, theta: &[f64], spec: &MirrorMapSpec, v: &Array64) -> Result<Array64> {
    diff::hessian_vector_product(&ConjugateAt { spec, theta }, z, v)
}

/// Joint second-order quantities of `h*` at `(z, θ_h)` along a tangent `u`
/// in `z`: the returned `hvps` are `[∇₁²h*·u, ∇₂∇₁h*·u]`.
pub(crate) fn conjugate_second_order(z: &Array64, theta: &Array64, spec: &MirrorMapSpec, u: &Array64) -> Result<SecondOrder> {
    let zero = Array64::zeros(theta.shape());
    diff::second_order(&Conjugate { spec }, &[z, theta], &[u, &zero])
}

/// `h* = ½‖z‖²`: mirror descent with this map is plain gradient descent.
pub fn identity_map(d: usize) -> Result<(MirrorMapSpec, MirrorMapParams)> {
    if d == 0 {
        return Err(Error::InvalidSpec("dimension must be positive".into()));
    }
    let spec = MirrorMapSpec {
        input_dim: d,
        num_layers: 0,
        hidden_widths: vec![],
        activation: MapActivation::Softplus,
        weight_bound: 1.0,
        skip_bound: 1.0,
        include_quadratic: true,
        quadratic_bound: 2.0,
        enforce_psd_quadratic: false,
    };
    let params = init_params(&spec, 0)?;
    Ok((spec, params))
}

/// `h* = ½ zᵀPz` for a symmetric positive-definite `P`: mirror descent with
/// this map is preconditioned gradient descent with preconditioner `P`.
pub fn quadratic_map(p: &Array64) -> Result<(MirrorMapSpec, MirrorMapParams)> {
    let max_abs = p.data().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    quadratic_map_bounded(p, (2.0 * max_abs).max(1.0))
}

/// [`quadratic_map`] with an explicit `quadratic_bound`; every entry of `P`
/// must lie strictly inside `(−bound, bound)`.
pub fn quadratic_map_bounded(p: &Array64, bound: f64) -> Result<(MirrorMapSpec, MirrorMapParams)> {
    if p.shape().len() != 2 || p.rows() != p.cols() {
        return Err(Error::InvalidArgument(format!("P must be square, got shape {:?}", p.shape())));
    }
    let d = p.rows();
    let scale = p.data().iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    if !p.is_symmetric(1e-12 * scale) {
        return Err(Error::InvalidArgument("P must be symmetric".into()));
    }
    if p.as_dmatrix().cholesky().is_none() {
        return Err(Error::Singular("P must be positive definite".into()));
    }
    if let Some(bad) = p.data().iter().find(|v| v.abs() >= bound) {
        return Err(Error::InvalidArgument(format!(
            "P entry {bad} is not representable with quadratic_bound {bound}"
        )));
    }
    let spec = MirrorMapSpec {
        input_dim: d,
        num_layers: 0,
        hidden_widths: vec![],
        activation: MapActivation::Softplus,
        weight_bound: 1.0,
        skip_bound: 1.0,
        include_quadratic: true,
        quadratic_bound: bound,
        enforce_psd_quadratic: false,
    };
    let raw = p.data().iter().map(|&x| exact_raw(x, bound)).collect();
    let params = MirrorMapParams {
        raw_w: vec![],
        raw_m: vec![],
        bias: vec![],
        raw_p: Some(Array64::from_parts(vec![d, d], raw)),
    };
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Array64 {
        Array64::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn pure_quadratic_value_and_gradient() {
        let (spec, params) = identity_map(2).unwrap();
        assert!((conjugate_value(&v(&[3.0, 4.0]), &params, &spec).unwrap() - 12.5).abs() < 1e-14);
        let z = v(&[0.3, -1.7]);
        assert!(inverse_map(&z, &params, &spec).unwrap().max_abs_diff(&z) < 1e-15);
        let hv = inverse_map_hvp(&z, &params, &spec, &v(&[1.0, 2.0])).unwrap();
        assert!(hv.max_abs_diff(&v(&[1.0, 2.0])) < 1e-15);
    }

    #[test]
    fn diagonal_quadratic_map() {
        let p = Array64::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let (spec, params) = quadratic_map(&p).unwrap();
        let phi = inverse_map(&v(&[1.0, 1.0]), &params, &spec).unwrap();
        assert!(phi.max_abs_diff(&v(&[2.0, 3.0])) < 1e-15);
        let half = Array64::from_rows(&[vec![0.5, 0.0, 0.0], vec![0.0, 0.5, 0.0], vec![0.0, 0.0, 0.5]]).unwrap();
        let (spec, params) = quadratic_map(&half).unwrap();
        let z = v(&[1.0, -2.0, 4.0]);
        assert!(inverse_map(&z, &params, &spec).unwrap().max_abs_diff(&v(&[0.5, -1.0, 2.0])) < 1e-15);
    }

    #[test]
    fn single_softplus_layer_at_origin_is_ln2() {
        let mut spec = MirrorMapSpec::new(2, 1, vec![]);
        spec.include_quadratic = false;
        // W·sigmoid(0) + M·tanh(r) = 1 per entry with W = 1, M = 1.
        let r = 0.5f64.atanh();
        let params = MirrorMapParams {
            raw_w: vec![Array64::zeros(&[2, 1])],
            raw_m: vec![Array64::from_parts(vec![2, 1], vec![r, r])],
            bias: vec![Array64::zeros(&[1])],
            raw_p: None,
        };
        let eff = effective_weights(&params, &spec).unwrap();
        for i in 0..2 {
            assert!((eff.w[0].data()[i] + eff.m[0].data()[i] - 1.0).abs() < 1e-15);
        }
        let h = conjugate_value(&v(&[0.0, 0.0]), &params, &spec).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_near_identity() {
        let spec = MirrorMapSpec::new(3, 0, vec![]);
        let a = init_params(&spec, 11).unwrap();
        let z = v(&[0.2, -0.4, 1.5]);
        assert!(inverse_map(&z, &a, &spec).unwrap().max_abs_diff(&z) < 1e-14);

        let spec = MirrorMapSpec::new(3, 2, vec![4]);
        assert_eq!(init_params(&spec, 5).unwrap(), init_params(&spec, 5).unwrap());
        assert_ne!(init_params(&spec, 5).unwrap(), init_params(&spec, 6).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut spec = MirrorMapSpec::new(2, 0, vec![]);
        spec.include_quadratic = false;
        assert!(spec.validate().is_err());
        assert!(MirrorMapSpec::new(2, 2, vec![]).validate().is_err());
        assert!(MirrorMapSpec::new(0, 1, vec![]).validate().is_err());
        let mut spec = MirrorMapSpec::new(2, 1, vec![]);
        spec.weight_bound = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn flat_round_trip() {
        let spec = MirrorMapSpec::new(3, 2, vec![4]);
        let p = init_params(&spec, 3).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), spec.param_count());
        assert_eq!(MirrorMapParams::from_flat(&spec, flat.data()).unwrap(), p);
        assert!(MirrorMapParams::from_flat(&spec, &flat.data()[1..]).is_err());
    }

    #[test]
    fn quadratic_map_rejects_bad_inputs() {
        let nonsym = Array64::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(quadratic_map(&nonsym).is_err());
        let indefinite = Array64::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(quadratic_map(&indefinite), Err(Error::Singular(_))));
        let big = Array64::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(quadratic_map_bounded(&big, 2.0).is_err());
    }

    #[test]
    fn psd_mode_hessian_is_s_st() {
        let mut spec = MirrorMapSpec::new(2, 0, vec![]);
        spec.enforce_psd_quadratic = true;
        let params = MirrorMapParams {
            raw_w: vec![],
            raw_m: vec![],
            bias: vec![],
            raw_p: Some(Array64::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap()),
        };
        let p = effective_p(&params, &spec).unwrap().unwrap();
        let z = v(&[0.7, -0.1]);
        let u = v(&[1.0, 2.0]);
        let hv = inverse_map_hvp(&z, &params, &spec, &u).unwrap();
        let sym = p.axpy(1.0, &p.transpose()).scaled(0.5);
        assert!(hv.max_abs_diff(&sym.matvec(&u).unwrap()) < 1e-14);
    }
}
