//! Analytic data given as expressions in the coordinates.
//!
//! Variables: `x1..xn`, plus `x`, `y` (and `t` when `n = 3`, `z` otherwise),
//! `rho` (Heisenberg gauge, `n = 3` only) and the constants `pi`, `e`.
//! Functions: `sin cos tan exp ln sqrt abs tanh sinh cosh atan`.
//! Integer literals are read as floats, so `1/2` is `0.5`.

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes,
    EvalexprError, Function, HashMapContext, Node, Value,
};

use crate::domain::heisenberg_gauge;
use crate::{Error, Result};

/// A compiled expression for points of `R^n`.
pub struct Expression {
    source: String,
    tree: Node<DefaultNumericTypes>,
    n: usize,
}

impl std::fmt::Debug for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Expression").field("source", &self.source).field("n", &self.n).finish()
    }
}

fn float_literals(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev_ident = i > 0 && (chars[i - 1].is_alphanumeric() || chars[i - 1] == '_' || chars[i - 1] == '.');
        if c.is_ascii_digit() && !prev_ident {
            let start = i;
            let digits = |i: &mut usize| {
                while *i < chars.len() && chars[*i].is_ascii_digit() {
                    *i += 1;
                }
            };
            digits(&mut i);
            let mut is_float = false;
            if chars.get(i) == Some(&'.') {
                is_float = true;
                i += 1;
                digits(&mut i);
            }
            if matches!(chars.get(i), Some('e') | Some('E')) {
                let mut j = i + 1;
                if matches!(chars.get(j), Some('+') | Some('-')) {
                    j += 1;
                }
                if chars.get(j).is_some_and(|c| c.is_ascii_digit()) {
                    is_float = true;
                    i = j;
                    digits(&mut i);
                }
            }
            out.extend(&chars[start..i]);
            if !is_float {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn unary(name: &'static str, f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| {
        let v = arg.as_number().map_err(|_| EvalexprError::CustomMessage(format!("{name} expects one number")))?;
        Ok(Value::Float(f(v)))
    })
}

fn variables(n: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let alias: &[&str] = if n == 3 { &["x", "y", "t"] } else { &["x", "y", "z"] };
    names.extend(alias.iter().take(n).map(|s| s.to_string()));
    if n == 3 {
        names.push("rho".into());
    }
    names
}

impl Expression {
    pub fn parse(source: &str, n: usize) -> Result<Self> {
        let err = |message: String| Error::Expression { expr: source.to_string(), message };
        if n == 0 {
            return Err(err("ambient dimension must be positive".into()));
        }
        let tree = build_operator_tree::<DefaultNumericTypes>(&float_literals(source)).map_err(|e| err(e.to_string()))?;
        let known = variables(n);
        for id in tree.iter_variable_identifiers() {
            if !known.iter().any(|k| k == id) && id != "pi" && id != "e" {
                return Err(err(format!("unknown variable `{id}` (known: {}, pi, e)", known.join(", "))));
            }
        }
        let expr = Expression { source: source.to_string(), tree, n };
        // Surface evaluation errors (unknown functions, type errors) at parse time.
        expr.eval(&vec![0.1; n])?;
        Ok(expr)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn context(&self) -> HashMapContext<DefaultNumericTypes> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let fns: [(&'static str, fn(f64) -> f64); 11] = [
            ("sin", f64::sin),
            ("cos", f64::cos),
            ("tan", f64::tan),
            ("exp", f64::exp),
            ("ln", f64::ln),
            ("sqrt", f64::sqrt),
            ("abs", f64::abs),
            ("tanh", f64::tanh),
            ("sinh", f64::sinh),
            ("cosh", f64::cosh),
            ("atan", f64::atan),
        ];
        for (name, f) in fns {
            ctx.set_function(name.into(), unary(name, f)).expect("function registration");
        }
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI)).expect("constant");
        ctx.set_value("e".into(), Value::Float(std::f64::consts::E)).expect("constant");
        ctx
    }

    fn eval_in(&self, ctx: &mut HashMapContext<DefaultNumericTypes>, x: &[f64]) -> Result<f64> {
        let names = variables(self.n);
        for (i, v) in x.iter().enumerate() {
            ctx.set_value(names[i].clone(), Value::Float(*v)).expect("variable");
            ctx.set_value(names[self.n + i].clone(), Value::Float(*v)).expect("variable");
        }
        if self.n == 3 {
            ctx.set_value("rho".into(), Value::Float(heisenberg_gauge(x))).expect("variable");
        }
        let v = self
            .tree
            .eval_number_with_context(ctx)
            .map_err(|e| Error::Expression { expr: self.source.clone(), message: e.to_string() })?;
        if !v.is_finite() {
            return Err(Error::Expression {
                expr: self.source.clone(),
                message: format!("non-finite value at {x:?}"),
            });
        }
        Ok(v)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::InvalidParameter(format!("point of dimension {} for an expression in R^{}", x.len(), self.n)));
        }
        let mut ctx = self.context();
        self.eval_in(&mut ctx, x)
    }

    /// Evaluates at every point, reusing one context.
    pub fn eval_many<'a>(&self, points: impl Iterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
        let mut ctx = self.context();
        points
            .map(|x| {
                if x.len() != self.n {
                    return Err(Error::InvalidParameter(format!("point of dimension {} for an expression in R^{}", x.len(), self.n)));
                }
                self.eval_in(&mut ctx, x)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_and_aliases() {
        let e = Expression::parse("-pi^2*cos(pi*x)", 1).unwrap();
        let v = e.eval(&[0.25]).unwrap();
        let pi = std::f64::consts::PI;
        assert!((v + pi * pi * (pi * 0.25).cos()).abs() < 1e-14);
        let e = Expression::parse("x1*y + t - 1/2", 3).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0, 1.0]).unwrap(), 6.5);
        let e = Expression::parse("rho^4", 3).unwrap();
        assert!((e.eval(&[1.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn literals_become_floats() {
        assert_eq!(float_literals("1/2 + x1*3 + 2.5e3 + 1e-2"), "1.0/2.0 + x1*3.0 + 2.5e3 + 1e-2");
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(matches!(Expression::parse("q + 1", 2), Err(Error::Expression { .. })));
        assert!(matches!(Expression::parse("foo(x)", 2), Err(Error::Expression { .. })));
        assert!(matches!(Expression::parse("rho", 2), Err(Error::Expression { .. })));
        assert!(matches!(Expression::parse("(", 2), Err(Error::Expression { .. })));
    }
}
