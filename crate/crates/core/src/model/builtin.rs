//! Builtin model zoo.
//!
//! - `UNCONTROLLED_GAUSSIAN`: pure Brownian motion with quadratic terminal
//!   cost; closed-form laws make it the main Monte Carlo oracle.
//! - `MEANFIELD_OU`: mean-reverting interaction toward the population mean
//!   plus an additive control, quadratic costs (linear-quadratic shape).
//! - `BANG_BANG_DET`: noiseless integrator `dx = u dt`; the optimal control
//!   is bang-bang and the value function is computable by hand.
//! - `SGN_COUNTEREXAMPLE`: the drift `-sgn(x)` with `sgn(0) = -1`, which has
//!   no solution from `x = 0`; kept for the chattering demonstration.
//! - `LINEAR_CONTRACTION`: `dx = -x dt + dW`; the coupled difference process
//!   is deterministic, which pins the stability check's middle quantity.
//!
//! All zoo members are one-dimensional with `U = [-1, 1]` and horizon 1;
//! degenerate `sigma = 0` members are allowed as deterministic oracles but
//! fail the ellipticity hypothesis by design.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::linalg::scaled_identity;
use crate::model::{DeclaredConstants, ModelSpec};

/// Sign convention with `sgn(0) = -1`.
pub fn sgn_neg_at_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn unit_box() -> BoundingBox {
    BoundingBox::new(vec![-1.0], vec![1.0]).expect("static box")
}

fn quadratic_terminal() -> Arc<crate::model::TerminalCostFn> {
    Arc::new(|x: &[f64], _mu| x.iter().map(|v| v * v).sum())
}

fn zero_running() -> Arc<crate::model::RunningCostFn> {
    Arc::new(|_t, _x, _mu, _u| 0.0)
}

fn uncontrolled_gaussian() -> ModelSpec {
    ModelSpec::new(
        "UNCONTROLLED_GAUSSIAN",
        1,
        1,
        unit_box(),
        1.0,
        Arc::new(|_t, _x, _mu, _u| vec![0.0]),
        Arc::new(|_t, _x, _mu| scaled_identity(1, 1.0)),
        zero_running(),
        quadratic_terminal(),
    )
    .expect("static model")
    .with_sigma_state_time_only(true)
    .with_constants(DeclaredConstants {
        k1: Some(0.0),
        k2: Some(1.0),
        lambda: Some(1.0),
        b_sup: Some(0.0),
        sigma_sup: Some(1.0),
        ..DeclaredConstants::default()
    })
}

fn meanfield_ou() -> ModelSpec {
    ModelSpec::new(
        "MEANFIELD_OU",
        1,
        1,
        unit_box(),
        1.0,
        Arc::new(|_t, x: &[f64], mu: &crate::measures::EmpiricalMeasure, u: &[f64]| {
            vec![(mu.mean()[0] - x[0]) + u[0]]
        }),
        Arc::new(|_t, _x, _mu| scaled_identity(1, 0.5)),
        Arc::new(|_t, _x, _mu, u: &[f64]| u.iter().map(|v| v * v).sum()),
        quadratic_terminal(),
    )
    .expect("static model")
    .with_sigma_state_time_only(true)
    .with_constants(DeclaredConstants {
        k1: Some(1.0),
        k2: Some(1.5),
        lambda: Some(4.0),
        sigma_sup: Some(0.5),
        ..DeclaredConstants::default()
    })
}

fn bang_bang_det() -> ModelSpec {
    ModelSpec::new(
        "BANG_BANG_DET",
        1,
        1,
        unit_box(),
        1.0,
        Arc::new(|_t, _x, _mu, u: &[f64]| vec![u[0]]),
        Arc::new(|_t, _x, _mu| vec![0.0]),
        zero_running(),
        quadratic_terminal(),
    )
    .expect("static model")
    .with_sigma_state_time_only(true)
    .with_constants(DeclaredConstants {
        k1: Some(0.0),
        k2: Some(1.0),
        b_sup: Some(1.0),
        sigma_sup: Some(0.0),
        ..DeclaredConstants::default()
    })
}

fn sgn_counterexample() -> ModelSpec {
    ModelSpec::new(
        "SGN_COUNTEREXAMPLE",
        1,
        1,
        unit_box(),
        1.0,
        Arc::new(|_t, x: &[f64], _mu, _u| vec![-sgn_neg_at_zero(x[0])]),
        Arc::new(|_t, _x, _mu| vec![0.0]),
        zero_running(),
        quadratic_terminal(),
    )
    .expect("static model")
    .with_sigma_state_time_only(true)
    .with_constants(DeclaredConstants {
        k2: Some(1.0),
        b_sup: Some(1.0),
        sigma_sup: Some(0.0),
        ..DeclaredConstants::default()
    })
}

fn linear_contraction() -> ModelSpec {
    ModelSpec::new(
        "LINEAR_CONTRACTION",
        1,
        1,
        unit_box(),
        1.0,
        Arc::new(|_t, x: &[f64], _mu, _u| vec![-x[0]]),
        Arc::new(|_t, _x, _mu| scaled_identity(1, 1.0)),
        zero_running(),
        quadratic_terminal(),
    )
    .expect("static model")
    .with_sigma_state_time_only(true)
    .with_constants(DeclaredConstants {
        k1: Some(1.0),
        k2: Some(1.0),
        lambda: Some(1.0),
        sigma_sup: Some(1.0),
        ..DeclaredConstants::default()
    })
}

/// The full catalog, in stable order.
pub fn builtin_models() -> Vec<ModelSpec> {
    vec![
        uncontrolled_gaussian(),
        meanfield_ou(),
        bang_bang_det(),
        sgn_counterexample(),
        linear_contraction(),
    ]
}

/// Look up a builtin model by its exact name.
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    builtin_models()
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown builtin model '{name}'; available: {}",
                builtin_models()
                    .iter()
                    .map(|m| m.name().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{ControlMeasure, EmpiricalMeasure};

    #[test]
    fn catalog_has_at_least_four_models() {
        let names: Vec<String> = builtin_models()
            .iter()
            .map(|m| m.name().to_string())
            .collect();
        assert!(names.len() >= 4, "catalog: {names:?}");
        assert!(names.iter().any(|n| n == "SGN_COUNTEREXAMPLE"));
    }

    #[test]
    fn sgn_drift_convention() {
        let m = builtin_model("SGN_COUNTEREXAMPLE").unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let alpha = ControlMeasure::dirac(&[0.0], m.control_box()).unwrap();
        // sgn(-0.5) = -1, so b = +1.
        let b = m.eval_drift_relaxed(0.0, &[-0.5], &mu, &alpha).unwrap();
        assert_eq!(b, vec![1.0]);
        // sgn(0) = -1, so b = +1 there too.
        let b0 = m.eval_drift_relaxed(0.0, &[0.0], &mu, &alpha).unwrap();
        assert_eq!(b0, vec![1.0]);
        let b_pos = m.eval_drift_relaxed(0.0, &[0.5], &mu, &alpha).unwrap();
        assert_eq!(b_pos, vec![-1.0]);
    }

    #[test]
    fn meanfield_ou_diffusion_is_half_identity_everywhere() {
        let m = builtin_model("MEANFIELD_OU").unwrap();
        let mu = EmpiricalMeasure::uniform(&[vec![-3.0], vec![10.0]]).unwrap();
        let s = m.eval_diffusion(0.77, &[123.0], &mu).unwrap();
        assert_eq!(s, vec![0.5]);
    }

    #[test]
    fn declared_ellipticity_holds_for_nondegenerate_members() {
        use crate::geometry::BoundingBox;
        use crate::model::{check_ellipticity, SamplerConfig};
        let sampler = SamplerConfig::new(BoundingBox::centered(1, 2.0), 4).unwrap();
        for m in builtin_models() {
            let rep = check_ellipticity(&m, &sampler, 16, 11).unwrap();
            match m.name() {
                "BANG_BANG_DET" | "SGN_COUNTEREXAMPLE" => assert!(rep.violated, "{}", m.name()),
                _ => {
                    assert!(!rep.violated, "{}", m.name());
                    let declared = m.constants().lambda.unwrap();
                    assert!(
                        rep.empirical_estimate <= declared + 1e-9,
                        "{}: {} > {}",
                        m.name(),
                        rep.empirical_estimate,
                        declared
                    );
                }
            }
        }
    }

    #[test]
    fn unknown_model_name_is_a_config_error() {
        assert!(builtin_model("NOPE").is_err());
    }
}
