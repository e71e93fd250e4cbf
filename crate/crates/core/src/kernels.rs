//! Kernel functions tagged by the invariance class they belong to.
//!
//! Class 1 kernels depend only on `‖x − y‖` and class 2 kernels only on
//! `⟨x, y⟩`, so both give identical values on templates protected with a
//! common orthogonal key.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{dot, squared_distance};

/// Distance under which the wave kernel returns its limit value 1.
pub const WAVE_SINGULARITY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite kernel input")]
    NonFiniteInput,
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
}

/// Kernel kind and parameters.
///
/// JSON form is `{"kind": "...", "params": {...}}`; e.g.
/// `{"kind":"rbf","params":{"gamma":0.5}}` or `{"kind":"linear"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−γ‖x−y‖²)`
    Rbf { gamma: f64 },
    /// `⟨x, y⟩`
    Linear,
    /// `(1 + ⟨x, y⟩)^degree`
    Polynomial { degree: u32 },
    /// `1 − ‖x−y‖² / (‖x−y‖² + c)`
    RationalQuadratic { c: f64 },
    /// `(θ/‖x−y‖)·sin(‖x−y‖/θ)`, equal to 1 at `x = y`
    Wave { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelClass {
    Class1Isotropic,
    Class2InnerProduct,
    Other,
}

impl KernelSpec {
    pub fn class(&self) -> KernelClass {
        kernel_class(self)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(KernelError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            KernelSpec::Rbf { gamma } => positive("gamma", gamma),
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree } if degree == 0 => {
                Err(KernelError::InvalidParameter("degree must be at least 1".into()))
            }
            KernelSpec::Polynomial { .. } => Ok(()),
            KernelSpec::RationalQuadratic { c } => positive("c", c),
            KernelSpec::Wave { theta } => positive("theta", theta),
        }
    }

    /// Evaluates without dimension or finiteness checks.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => (-gamma * squared_distance(x, y)).exp(),
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree } => (1.0 + dot(x, y)).powi(degree as i32),
            KernelSpec::RationalQuadratic { c } => {
                let d2 = squared_distance(x, y);
                1.0 - d2 / (d2 + c)
            }
            KernelSpec::Wave { theta } => {
                let r = squared_distance(x, y).sqrt();
                if r < WAVE_SINGULARITY {
                    1.0
                } else {
                    theta / r * (r / theta).sin()
                }
            }
        }
    }
}

pub fn kernel_class(spec: &KernelSpec) -> KernelClass {
    match spec {
        KernelSpec::Rbf { .. } | KernelSpec::RationalQuadratic { .. } | KernelSpec::Wave { .. } => {
            KernelClass::Class1Isotropic
        }
        KernelSpec::Linear | KernelSpec::Polynomial { .. } => KernelClass::Class2InnerProduct,
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch { left: x.len(), right: y.len() });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(KernelError::NonFiniteInput);
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Dense symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.entries[a * self.n..(a + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Kernel matrix over `xs`. The upper triangle is computed row-parallel and
/// mirrored, so the result is bitwise independent of the thread count.
pub fn gram<V: AsRef<[f64]> + Sync>(spec: &KernelSpec, xs: &[V]) -> Result<GramMatrix, KernelError> {
    let n = xs.len();
    if let Some(first) = xs.first() {
        let d = first.as_ref().len();
        for x in xs {
            let x = x.as_ref();
            if x.len() != d {
                return Err(KernelError::DimensionMismatch { left: d, right: x.len() });
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(KernelError::NonFiniteInput);
            }
        }
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| (a..n).map(|b| spec.eval_unchecked(xs[a].as_ref(), xs[b].as_ref())).collect())
        .collect();
    let mut entries = vec![0.0; n * n];
    for (a, row) in upper.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let b = a + offset;
            entries[a * n + b] = v;
            entries[b * n + a] = v;
        }
    }
    Ok(GramMatrix { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let rbf = KernelSpec::Rbf { gamma: 0.5 };
        assert_eq!(eval_kernel(&rbf, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = eval_kernel(&rbf, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 0.367_879_441_171_442_33).abs() < 1e-15);
        assert_eq!(eval_kernel(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = KernelSpec::Polynomial { degree: 2 };
        assert_eq!(eval_kernel(&poly, &[1.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);
        // ‖x−y‖² = 4, c = 4 → 1 − 4/8
        let rq = KernelSpec::RationalQuadratic { c: 4.0 };
        assert_eq!(eval_kernel(&rq, &[0.0, 0.0], &[2.0, 0.0]).unwrap(), 0.5);
        // r = π/2, θ = 1 → sin(π/2)/(π/2)
        let wave = KernelSpec::Wave { theta: 1.0 };
        let v = eval_kernel(&wave, &[0.0], &[std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((v - 2.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn classes() {
        assert_eq!(kernel_class(&KernelSpec::Rbf { gamma: 1.0 }), KernelClass::Class1Isotropic);
        assert_eq!(kernel_class(&KernelSpec::Wave { theta: 1.0 }), KernelClass::Class1Isotropic);
        assert_eq!(kernel_class(&KernelSpec::RationalQuadratic { c: 1.0 }), KernelClass::Class1Isotropic);
        assert_eq!(kernel_class(&KernelSpec::Linear), KernelClass::Class2InnerProduct);
        assert_eq!(kernel_class(&KernelSpec::Polynomial { degree: 3 }), KernelClass::Class2InnerProduct);
    }

    #[test]
    fn errors() {
        assert_eq!(
            eval_kernel(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).unwrap_err(),
            KernelError::DimensionMismatch { left: 1, right: 2 }
        );
        assert_eq!(eval_kernel(&KernelSpec::Linear, &[f64::NAN], &[1.0]).unwrap_err(), KernelError::NonFiniteInput);
        assert!(KernelSpec::Rbf { gamma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0 }.validate().is_err());
        assert!(KernelSpec::Wave { theta: f64::INFINITY }.validate().is_err());
    }

    #[test]
    fn wave_is_continuous_at_zero() {
        let wave = KernelSpec::Wave { theta: 0.7 };
        let x = [0.2, -0.4, 1.0];
        let u = [1.0 / 3f64.sqrt(); 3];
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + 1e-5 * b).collect();
        assert!((eval_kernel(&wave, &x, &y).unwrap() - 1.0).abs() <= 1e-6);
        assert_eq!(eval_kernel(&wave, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn gram_shapes() {
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(gram(&KernelSpec::Linear, &empty).unwrap().n(), 0);
        let g = gram(&KernelSpec::Rbf { gamma: 3.0 }, &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(g.entries(), &[1.0]);
        assert!(gram(&KernelSpec::Linear, &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn gram_matches_dot_products() {
        let xs = vec![vec![0.5, -1.0, 2.0], vec![3.0, 0.25, -0.5], vec![-2.0, 1.5, 1.0]];
        let g = gram(&KernelSpec::Linear, &xs).unwrap();
        let expected = [
            [5.25, 0.25, -0.5],
            [0.25, 9.3125, -6.125],
            [-0.5, -6.125, 7.25],
        ];
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(g.get(a, b), expected[a][b]);
            }
        }
        assert_eq!(g.row(1), &expected[1]);
    }

    #[test]
    fn json_shape() {
        let rbf = KernelSpec::Rbf { gamma: 2.5 };
        let text = serde_json::to_string(&rbf).unwrap();
        assert_eq!(text, r#"{"kind":"rbf","params":{"gamma":2.5}}"#);
        assert_eq!(serde_json::to_string(&KernelSpec::Linear).unwrap(), r#"{"kind":"linear"}"#);
        let parsed: KernelSpec = serde_json::from_str(r#"{"kind":"linear"}"#).unwrap();
        assert_eq!(parsed, KernelSpec::Linear);
        let parsed: KernelSpec =
            serde_json::from_str(r#"{"kind":"rational_quadratic","params":{"c":1.5}}"#).unwrap();
        assert_eq!(parsed, KernelSpec::RationalQuadratic { c: 1.5 });
    }
}
