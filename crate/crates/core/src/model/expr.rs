//! Declarative JSON models with a small polynomial expression grammar.
//!
//! Coefficients are written as expressions in `t`, the state coordinates
//! `x0, x1, ...`, the mean-field coordinates `m0, m1, ...` (the barycenter of
//! the state law), and the control coordinates `u0, u1, ...`, combined with
//! `+ - *`, unary minus, parentheses, and integer powers `^`. The diffusion
//! may not reference `u` (the diffusion is control-free), the terminal cost
//! may not reference `t` or `u`. Aliases `x`, `m`, `u` stand for `x0`, `m0`,
//! `u0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::measures::EmpiricalMeasure;
use crate::model::{DeclaredConstants, ModelSpec};

#[derive(Debug, Clone)]
enum Expr {
    Const(f64),
    T,
    X(usize),
    M(usize),
    U(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    fn eval(&self, t: f64, x: &[f64], m: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::T => t,
            Expr::X(i) => x[*i],
            Expr::M(i) => m[*i],
            Expr::U(i) => u[*i],
            Expr::Add(a, b) => a.eval(t, x, m, u) + b.eval(t, x, m, u),
            Expr::Sub(a, b) => a.eval(t, x, m, u) - b.eval(t, x, m, u),
            Expr::Mul(a, b) => a.eval(t, x, m, u) * b.eval(t, x, m, u),
            Expr::Neg(a) => -a.eval(t, x, m, u),
            Expr::Pow(a, k) => a.eval(t, x, m, u).powi(*k as i32),
        }
    }

    fn uses_m(&self) -> bool {
        match self {
            Expr::M(_) => true,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.uses_m() || b.uses_m(),
            Expr::Neg(a) => a.uses_m(),
            Expr::Pow(a, _) => a.uses_m(),
            _ => false,
        }
    }
}

/// Which variables a coefficient slot admits.
#[derive(Clone, Copy)]
struct VarPolicy {
    slot: &'static str,
    allow_t: bool,
    allow_u: bool,
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim_state: usize,
    dim_control: usize,
    policy: VarPolicy,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim_state: usize, dim_control: usize, policy: VarPolicy) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            dim_state,
            dim_control,
            policy,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Expression(format!(
            "{} at byte {} in `{}` ({} slot)",
            msg.into(),
            self.pos,
            self.src,
            self.policy.slot
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Expr> {
        let e = self.expr()?;
        if self.peek().is_some() {
            return Err(self.err("trailing input"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected a nonnegative integer exponent"));
            }
            let k: u32 = self.src[start..self.pos]
                .parse()
                .map_err(|_| self.err("exponent out of range"))?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected closing parenthesis"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.err("expected a number, variable, or parenthesis")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == b'+' || n == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let lit = &self.src[start..self.pos];
        lit.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.err(format!("invalid number literal `{lit}`")))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let (head, index) = split_ident(name);
        match head {
            "t" if index.is_none() => {
                if !self.policy.allow_t {
                    return Err(self.err(format!("`t` is not allowed in the {} slot", self.policy.slot)));
                }
                Ok(Expr::T)
            }
            "x" => {
                let i = index.unwrap_or(0);
                if i >= self.dim_state {
                    return Err(self.err(format!("x{i} exceeds state dimension {}", self.dim_state)));
                }
                Ok(Expr::X(i))
            }
            "m" => {
                let i = index.unwrap_or(0);
                if i >= self.dim_state {
                    return Err(self.err(format!("m{i} exceeds state dimension {}", self.dim_state)));
                }
                Ok(Expr::M(i))
            }
            "u" => {
                if !self.policy.allow_u {
                    return Err(self.err(format!("`u` is not allowed in the {} slot", self.policy.slot)));
                }
                let i = index.unwrap_or(0);
                if i >= self.dim_control {
                    return Err(self.err(format!(
                        "u{i} exceeds control dimension {}",
                        self.dim_control
                    )));
                }
                Ok(Expr::U(i))
            }
            _ => Err(self.err(format!("unknown identifier `{name}`"))),
        }
    }
}

fn split_ident(name: &str) -> (&str, Option<usize>) {
    let head_len = name.chars().take_while(|c| c.is_ascii_alphabetic()).count();
    let (head, digits) = name.split_at(head_len);
    if digits.is_empty() {
        (head, None)
    } else {
        (head, digits.parse().ok())
    }
}

/// A model described declaratively in JSON. Coefficient slots hold expression
/// strings; `drift` has one entry per state coordinate and `diffusion` is a
/// `d x d` matrix of entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonModel {
    pub name: String,
    pub dim_state: usize,
    pub dim_control: usize,
    pub control_box: BoundingBox,
    pub horizon: f64,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub running_cost: String,
    pub terminal_cost: String,
    #[serde(default)]
    pub constants: DeclaredConstants,
}

impl JsonModel {
    pub fn from_json(text: &str) -> Result<JsonModel> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))
    }

    /// Parses and compiles every expression into a [`ModelSpec`]. The
    /// `sigma(t, x)`-only flag is inferred from whether any diffusion entry
    /// references the mean field.
    pub fn compile(&self) -> Result<ModelSpec> {
        let d = self.dim_state;
        let k = self.dim_control;
        if self.drift.len() != d {
            return Err(Error::LengthMismatch {
                what: "drift expressions",
                expected: d,
                got: self.drift.len(),
            });
        }
        if self.diffusion.len() != d || self.diffusion.iter().any(|row| row.len() != d) {
            return Err(Error::Config(format!(
                "diffusion must be a {d} x {d} expression matrix"
            )));
        }

        let drift_policy = VarPolicy {
            slot: "drift",
            allow_t: true,
            allow_u: true,
        };
        let sigma_policy = VarPolicy {
            slot: "diffusion",
            allow_t: true,
            allow_u: false,
        };
        let f_policy = VarPolicy {
            slot: "running_cost",
            allow_t: true,
            allow_u: true,
        };
        let g_policy = VarPolicy {
            slot: "terminal_cost",
            allow_t: false,
            allow_u: false,
        };

        let drift_exprs: Vec<Expr> = self
            .drift
            .iter()
            .map(|s| Parser::new(s, d, k, drift_policy).parse())
            .collect::<Result<_>>()?;
        let sigma_exprs: Vec<Expr> = self
            .diffusion
            .iter()
            .flatten()
            .map(|s| Parser::new(s, d, k, sigma_policy).parse())
            .collect::<Result<_>>()?;
        let f_expr = Parser::new(&self.running_cost, d, k, f_policy).parse()?;
        let g_expr = Parser::new(&self.terminal_cost, d, k, g_policy).parse()?;

        let sigma_state_time_only = !sigma_exprs.iter().any(Expr::uses_m);

        let drift_exprs = Arc::new(drift_exprs);
        let sigma_exprs = Arc::new(sigma_exprs);
        let f_expr = Arc::new(f_expr);
        let g_expr = Arc::new(g_expr);

        let de = Arc::clone(&drift_exprs);
        let drift = move |t: f64, x: &[f64], mu: &EmpiricalMeasure, u: &[f64]| -> Vec<f64> {
            let m = mu.mean();
            de.iter().map(|e| e.eval(t, x, m, u)).collect()
        };
        let se = Arc::clone(&sigma_exprs);
        let diffusion = move |t: f64, x: &[f64], mu: &EmpiricalMeasure| -> Vec<f64> {
            let m = mu.mean();
            se.iter().map(|e| e.eval(t, x, m, &[])).collect()
        };
        let fe = Arc::clone(&f_expr);
        let running = move |t: f64, x: &[f64], mu: &EmpiricalMeasure, u: &[f64]| -> f64 {
            fe.eval(t, x, mu.mean(), u)
        };
        let ge = Arc::clone(&g_expr);
        let terminal = move |x: &[f64], mu: &EmpiricalMeasure| -> f64 {
            ge.eval(0.0, x, mu.mean(), &[])
        };

        Ok(ModelSpec::new(
            self.name.clone(),
            d,
            k,
            self.control_box.clone(),
            self.horizon,
            Arc::new(drift),
            Arc::new(diffusion),
            Arc::new(running),
            Arc::new(terminal),
        )?
        .with_sigma_state_time_only(sigma_state_time_only)
        .with_constants(self.constants.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ControlMeasure;

    fn ou_json() -> &'static str {
        r#"{
            "name": "JSON_OU",
            "dim_state": 1,
            "dim_control": 1,
            "control_box": {"lo": [-1.0], "hi": [1.0]},
            "horizon": 1.0,
            "drift": ["(m0 - x0) + u0"],
            "diffusion": [["0.5"]],
            "running_cost": "u0^2",
            "terminal_cost": "x0^2",
            "constants": {"k1": 1.0, "k2": 1.5}
        }"#
    }

    #[test]
    fn compiled_model_matches_builtin_ou() {
        let model = JsonModel::from_json(ou_json()).unwrap().compile().unwrap();
        let builtin = crate::model::builtin_model("MEANFIELD_OU").unwrap();
        let mu = EmpiricalMeasure::uniform(&[vec![1.0], vec![3.0]]).unwrap();
        let alpha = ControlMeasure::dirac(&[0.5], model.control_box()).unwrap();
        for (t, x) in [(0.0, 0.3), (0.9, -2.0)] {
            let a = model.eval_drift_relaxed(t, &[x], &mu, &alpha).unwrap();
            let b = builtin.eval_drift_relaxed(t, &[x], &mu, &alpha).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-15);
        }
        assert!(model.sigma_state_time_only());
        assert_eq!(model.constants().k1, Some(1.0));
    }

    #[test]
    fn precedence_and_powers() {
        let policy = VarPolicy {
            slot: "drift",
            allow_t: true,
            allow_u: true,
        };
        let e = Parser::new("1 - 2 - 3", 1, 1, policy).parse().unwrap();
        assert_eq!(e.eval(0.0, &[0.0], &[0.0], &[0.0]), -4.0);
        let e = Parser::new("2 * x0 ^ 3", 1, 1, policy).parse().unwrap();
        assert_eq!(e.eval(0.0, &[2.0], &[0.0], &[0.0]), 16.0);
        let e = Parser::new("-x0^2", 1, 1, policy).parse().unwrap();
        assert_eq!(e.eval(0.0, &[3.0], &[0.0], &[0.0]), -9.0);
        let e = Parser::new("(t + 1) * (u - m)", 1, 1, policy).parse().unwrap();
        assert_eq!(e.eval(1.0, &[0.0], &[2.0], &[5.0]), 6.0);
        let e = Parser::new("1.5e2 - 1e-1", 1, 1, policy).parse().unwrap();
        assert!((e.eval(0.0, &[0.0], &[0.0], &[0.0]) - 149.9).abs() < 1e-12);
    }

    #[test]
    fn slot_restrictions_are_enforced() {
        let mut bad = JsonModel::from_json(ou_json()).unwrap();
        bad.terminal_cost = "u0^2".into();
        assert!(bad.compile().is_err());
        let mut bad_t = JsonModel::from_json(ou_json()).unwrap();
        bad_t.terminal_cost = "t * x0".into();
        assert!(bad_t.compile().is_err());
        let mut bad_sigma = JsonModel::from_json(ou_json()).unwrap();
        bad_sigma.diffusion = vec![vec!["u0".into()]];
        assert!(bad_sigma.compile().is_err());
    }

    #[test]
    fn out_of_range_coordinates_and_unknown_identifiers() {
        let mut bad = JsonModel::from_json(ou_json()).unwrap();
        bad.drift = vec!["x3".into()];
        assert!(bad.compile().is_err());
        let mut bad2 = JsonModel::from_json(ou_json()).unwrap();
        bad2.drift = vec!["sin(x0)".into()];
        assert!(bad2.compile().is_err());
    }

    #[test]
    fn unknown_json_keys_are_rejected() {
        let with_typo = ou_json().replace("\"constants\"", "\"constnats\"");
        assert!(JsonModel::from_json(&with_typo).is_err());
    }

    #[test]
    fn mu_dependent_sigma_is_detected() {
        let mut m = JsonModel::from_json(ou_json()).unwrap();
        m.diffusion = vec![vec!["0.5 + m0".into()]];
        let compiled = m.compile().unwrap();
        assert!(!compiled.sigma_state_time_only());
    }
}
