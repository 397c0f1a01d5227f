use serde::{Deserialize, Serialize};

use super::MirrorMapSpec;

/// Spec-only Lipschitz constants of `h*` in the ℓ₂ norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    /// Lipschitz constant of the network part.
    pub l_h: f64,
    /// Lipschitz constant of `∇₁h*` (network plus quadratic term).
    pub g_h: f64,
}

/// Induction over layers. With `n` the fan-in of a layer, every unit's
/// pre-activation has a gradient bounded by
///
/// ```text
/// cᵢ = W·n·Lᵢ₋₁ + M·√d        (c₁ = (W + M)·√d)
/// ```
///
/// so `Lᵢ = L_σ·cᵢ` and `Gᵢ = L_σ·W·n·Gᵢ₋₁ + G_σ·cᵢ²`. For scalar inputs
/// and unit widths this is the familiar `L₁ = L_σ(W+M)`, `G₁ = G_σ(W+M)²`
/// recursion. The quadratic term adds `quadratic_bound·d` (its Frobenius
/// bound), or `(quadratic_bound·d)²` in PSD mode.
pub fn lipschitz_bounds(spec: &MirrorMapSpec) -> LipschitzBounds {
    let (ls, gs) = spec.activation.lipschitz_constants();
    let w = spec.weight_bound;
    let m = spec.skip_bound;
    let sqrt_d = (spec.input_dim as f64).sqrt();
    let mut l = 0.0;
    let mut g = 0.0;
    for (i, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
        if i == 0 {
            let c = (w + m) * sqrt_d;
            l = ls * c;
            g = gs * c * c;
        } else {
            let n = fan_in as f64;
            let c = w * n * l + m * sqrt_d;
            g = ls * w * n * g + gs * c * c;
            l = ls * c;
        }
    }
    if spec.include_quadratic {
        let frob = spec.quadratic_bound * spec.input_dim as f64;
        g += if spec.enforce_psd_quadratic { frob * frob } else { frob };
    }
    LipschitzBounds { l_h: l, g_h: g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::MapActivation;

    fn scalar_spec(layers: usize, quad: bool) -> MirrorMapSpec {
        let mut s = MirrorMapSpec::new(1, layers, vec![1; layers.saturating_sub(1)]);
        s.include_quadratic = quad;
        s
    }

    #[test]
    fn base_case_and_one_step() {
        let b = lipschitz_bounds(&scalar_spec(1, false));
        assert_eq!((b.l_h, b.g_h), (2.0, 1.0));
        let b = lipschitz_bounds(&scalar_spec(2, false));
        assert_eq!((b.l_h, b.g_h), (3.0, 3.25));
    }

    #[test]
    fn elu_and_quadratic_contributions() {
        let mut s = scalar_spec(1, true);
        s.activation = MapActivation::Elu;
        let b = lipschitz_bounds(&s);
        assert_eq!((b.l_h, b.g_h), (2.0, 4.0 + 2.0));
        let mut s = MirrorMapSpec::new(3, 0, vec![]);
        s.enforce_psd_quadratic = true;
        assert_eq!(lipschitz_bounds(&s).g_h, 36.0);
        assert_eq!(lipschitz_bounds(&s).l_h, 0.0);
    }
}
