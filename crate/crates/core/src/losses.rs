//! Pairwise training objectives on descriptor distance.
//!
//! All three losses depend on the descriptors only through `d = ‖a − b‖₂`,
//! so `grad_j = −grad_i` and both are `L'(d) · (a − b) / d`. At `d = 0` the
//! direction is undefined and the gradient is taken to be zero.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_i: Vec<f64>,
    pub grad_j: Vec<f64>,
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Builds the loss output from the value and `dL/dd`.
fn through_distance(a: &[f64], b: &[f64], d: f64, value: f64, d_value_d_dist: f64) -> LossOutput {
    let grad_i: Vec<f64> = if d > 0.0 {
        let s = d_value_d_dist / d;
        a.iter().zip(b).map(|(x, y)| s * (x - y)).collect()
    } else {
        vec![0.0; a.len()]
    };
    let grad_j = grad_i.iter().map(|g| -g).collect();
    LossOutput {
        value,
        grad_i,
        grad_j,
    }
}

/// Squared error between the descriptor distance and `1 − ψ`.
pub fn mse_loss(a: &[f64], b: &[f64], psi: f64) -> LossOutput {
    let d = euclidean_distance(a, b);
    let r = d - (1.0 - psi);
    through_distance(a, b, d, r * r, 2.0 * r)
}

/// `ψ·d² + (1 − ψ)·max(0, m − d)²`, shared by the binary and graded
/// contrastive losses.
fn weighted_contrastive(a: &[f64], b: &[f64], psi: f64, margin: f64) -> LossOutput {
    let d = euclidean_distance(a, b);
    let hinge = (margin - d).max(0.0);
    let value = psi * d * d + (1.0 - psi) * hinge * hinge;
    let slope = 2.0 * psi * d - 2.0 * (1.0 - psi) * hinge;
    through_distance(a, b, d, value, slope)
}

/// Binary contrastive loss; `label` is 1 for a positive pair.
pub fn contrastive_loss(a: &[f64], b: &[f64], label: u8, margin: f64) -> LossOutput {
    debug_assert!(label <= 1);
    weighted_contrastive(a, b, f64::from(label), margin)
}

/// Graded contrastive loss: attraction weighted by ψ, margin repulsion
/// weighted by `1 − ψ`.
pub fn gcl_loss(a: &[f64], b: &[f64], psi: f64, margin: f64) -> LossOutput {
    weighted_contrastive(a, b, psi, margin)
}

/// 1 if `psi > threshold`, else 0.
pub fn binarize_psi(psi: f64, threshold: f64) -> u8 {
    u8::from(psi > threshold)
}

fn default_margin() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    0.5
}

/// Training objective together with its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "lowercase",
    deny_unknown_fields,
    from = "LossKindRepr"
)]
pub enum LossKind {
    Mse,
    #[serde(rename = "cl")]
    Contrastive {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Gcl {
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

// Unit variants of internally tagged enums accept stray fields, so parsing
// goes through a mirror whose `mse` variant is an empty struct.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LossKindRepr {
    Mse {},
    #[serde(rename = "cl")]
    Contrastive {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Gcl {
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

impl From<LossKindRepr> for LossKind {
    fn from(r: LossKindRepr) -> Self {
        match r {
            LossKindRepr::Mse {} => LossKind::Mse,
            LossKindRepr::Contrastive { margin, threshold } => {
                LossKind::Contrastive { margin, threshold }
            }
            LossKindRepr::Gcl { margin } => LossKind::Gcl { margin },
        }
    }
}

impl LossKind {
    pub fn contrastive() -> Self {
        LossKind::Contrastive {
            margin: default_margin(),
            threshold: default_threshold(),
        }
    }

    pub fn gcl() -> Self {
        LossKind::Gcl {
            margin: default_margin(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Contrastive { .. } => "cl",
            LossKind::Gcl { .. } => "gcl",
        }
    }

    pub fn evaluate(&self, a: &[f64], b: &[f64], psi: f64) -> LossOutput {
        match *self {
            LossKind::Mse => mse_loss(a, b, psi),
            LossKind::Contrastive { margin, threshold } => {
                contrastive_loss(a, b, binarize_psi(psi, threshold), margin)
            }
            LossKind::Gcl { margin } => gcl_loss(a, b, psi, margin),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// Two points on the unit circle at distance `d`.
    fn at_distance(d: f64) -> ([f64; 2], [f64; 2]) {
        let half = (d / 2.0).asin();
        ([half.cos(), half.sin()], [half.cos(), -half.sin()])
    }

    #[test]
    fn distance_cases() {
        assert_eq!(euclidean_distance(&[0.6, 0.8], &[0.6, 0.8]), 0.0);
        assert!((euclidean_distance(&[0.6, 0.8], &[-0.6, -0.8]) - 2.0).abs() < 1e-15);
        assert!((euclidean_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.41421356).abs() < 1e-8);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 0.0], &[1.0, 0.0], 1.0).value, 0.0);
        let (a, b) = at_distance(1.0);
        assert!(mse_loss(&a, &b, 0.0).value < 1e-24);
        let v = mse_loss(&[1.0, 0.0], &[0.0, 1.0], 0.5).value;
        assert!((v - (SQRT2 - 0.5).powi(2)).abs() < 1e-14);
        assert!((v - 0.83579).abs() < 1e-5);
    }

    #[test]
    fn contrastive_cases() {
        assert_eq!(
            contrastive_loss(&[1.0, 0.0], &[1.0, 0.0], 1, 1.0).value,
            0.0
        );
        let (a, b) = at_distance(1.2);
        assert_eq!(contrastive_loss(&a, &b, 0, 1.0).value, 0.0);
        let (a, b) = at_distance(0.5);
        assert!((contrastive_loss(&a, &b, 0, 1.0).value - 0.25).abs() < 1e-14);
    }

    #[test]
    fn gcl_cases() {
        let (a, b) = at_distance(0.7);
        assert!((gcl_loss(&a, &b, 1.0, 1.0).value - 0.49).abs() < 1e-14);
        assert!((gcl_loss(&a, &b, 0.0, 1.0).value - 0.09).abs() < 1e-14);
        let (a, b) = at_distance(0.5);
        assert!((gcl_loss(&a, &b, 0.5, 1.0).value - 0.25).abs() < 1e-14);
    }

    #[test]
    fn binarization() {
        assert_eq!(binarize_psi(0.9, 0.5), 1);
        assert_eq!(binarize_psi(0.0, 0.3), 0);
        assert_eq!(binarize_psi(0.5, 0.5), 0);
    }

    #[test]
    fn zero_distance_has_zero_gradient() {
        for kind in [LossKind::Mse, LossKind::contrastive(), LossKind::gcl()] {
            let out = kind.evaluate(&[0.6, 0.8], &[0.6, 0.8], 0.3);
            assert!(out.grad_i.iter().chain(&out.grad_j).all(|&g| g == 0.0));
        }
    }

    #[test]
    fn mse_zero_set_on_grid() {
        for di in 0..=20 {
            let d = di as f64 * 0.1;
            let (a, b) = at_distance(d);
            let d = euclidean_distance(&a, &b);
            for pi in 0..=10 {
                let psi = pi as f64 * 0.1;
                let v = mse_loss(&a, &b, psi).value;
                let on_target = (d - (1.0 - psi)).abs() < 1e-9;
                assert_eq!(v < 1e-16, on_target, "d={d} psi={psi} v={v}");
            }
        }
    }

    #[test]
    fn loss_kind_serde() {
        let k: LossKind = serde_json::from_str(r#"{"kind":"cl"}"#).unwrap();
        assert_eq!(k, LossKind::contrastive());
        let k: LossKind = serde_json::from_str(r#"{"kind":"gcl","margin":0.8}"#).unwrap();
        assert_eq!(k, LossKind::Gcl { margin: 0.8 });
        assert!(serde_json::from_str::<LossKind>(r#"{"kind":"mse","margin":1}"#).is_err());
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    proptest! {
        #[test]
        fn gradients_are_antisymmetric_and_match_finite_differences(
            a in prop::collection::vec(-1.0..1.0f64, 6),
            b in prop::collection::vec(-1.0..1.0f64, 6),
            psi in 0.0..=1.0f64,
            which in 0usize..3,
        ) {
            let (a, b) = (unit(a), unit(b));
            let kind = [LossKind::Mse, LossKind::contrastive(), LossKind::gcl()][which];
            let d = euclidean_distance(&a, &b);
            // skip the kinks of the hinge and the distance
            prop_assume!(d > 0.1 && (d - 1.0).abs() > 1e-2);
            let out = kind.evaluate(&a, &b, psi);
            prop_assert!(out.value >= 0.0);
            for (gi, gj) in out.grad_i.iter().zip(&out.grad_j) {
                prop_assert_eq!(*gi, -*gj);
            }
            let h = 1e-5;
            for k in 0..a.len() {
                let mut ap = a.clone();
                ap[k] += h;
                let mut am = a.clone();
                am[k] -= h;
                let fd = (kind.evaluate(&ap, &b, psi).value - kind.evaluate(&am, &b, psi).value) / (2.0 * h);
                let an = out.grad_i[k];
                let scale = fd.abs().max(an.abs()).max(1e-2);
                prop_assert!((fd - an).abs() / scale < 1e-6, "k={} fd={} an={}", k, fd, an);
            }
            if kind == LossKind::Mse {
                // moving a away from b along (a - b) changes the value with sign(d - (1 - psi))
                let r = d - (1.0 - psi);
                let slope: f64 = out.grad_i.iter().zip(a.iter().zip(&b)).map(|(g, (x, y))| g * (x - y) / d).sum();
                prop_assert!(slope * r >= 0.0);
            }
        }
    }
}
