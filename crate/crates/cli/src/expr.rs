//! Closed-form fields `f(x, y, t)` given as strings in the config file.

use std::sync::Arc;

use evalexpr::error::EvalexprResultValue;
use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node, Value,
};

type V = Value<DefaultNumericTypes>;

/// Evaluation context with the coordinates, `pi`, and a fixed set of functions.
struct Point {
    x: V,
    y: V,
    t: V,
    pi: V,
}

impl Point {
    fn new(x: f64, y: f64, t: f64) -> Self {
        Self {
            x: V::from_float(x),
            y: V::from_float(y),
            t: V::from_float(t),
            pi: V::from_float(std::f64::consts::PI),
        }
    }
}

type Scalar = fn(f64) -> f64;

const FUNCTIONS: [(&str, Scalar); 9] = [
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("exp", f64::exp),
    ("tan", f64::tan),
    ("sinh", f64::sinh),
    ("cosh", f64::cosh),
    ("tanh", f64::tanh),
    ("sqrt", f64::sqrt),
    ("abs", f64::abs),
];

impl Context for Point {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&V> {
        match identifier {
            "x" => Some(&self.x),
            "y" => Some(&self.y),
            "t" => Some(&self.t),
            "pi" => Some(&self.pi),
            _ => None,
        }
    }

    fn call_function(
        &self,
        identifier: &str,
        argument: &V,
    ) -> EvalexprResultValue<DefaultNumericTypes> {
        let f = FUNCTIONS
            .iter()
            .find(|(name, _)| *name == identifier)
            .ok_or_else(|| EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))?
            .1;
        Ok(V::from_float(f(argument.as_number()?)))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(
        &mut self,
        _disabled: bool,
    ) -> EvalexprResult<(), DefaultNumericTypes> {
        Err(EvalexprError::ContextNotMutable)
    }
}

/// A compiled expression in the variables `x`, `y`, `t`.
#[derive(Clone)]
pub struct Expr {
    source: String,
    tree: Arc<Node<DefaultNumericTypes>>,
}

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Expr").field(&self.source).finish()
    }
}

impl Expr {
    /// Parses `source` and checks that it evaluates to a number at a sample point.
    pub fn parse(source: &str) -> Result<Self, String> {
        let tree = build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| format!("cannot parse '{source}': {e}"))?;
        let expr = Self {
            source: source.to_string(),
            tree: Arc::new(tree),
        };
        expr.try_eval(0.25, 0.5, 0.125)
            .map_err(|e| format!("cannot evaluate '{source}': {e}"))?;
        Ok(expr)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn try_eval(&self, x: f64, y: f64, t: f64) -> EvalexprResult<f64, DefaultNumericTypes> {
        self.tree.eval_number_with_context(&Point::new(x, y, t))
    }

    /// Value at `(x, y, t)`; evaluation errors surface as NaN, which the
    /// solver rejects as non-finite input.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.try_eval(x, y, t).unwrap_or(f64::NAN)
    }

    pub fn space_field(&self) -> dinsys_core::problems::SpaceField {
        let e = self.clone();
        Arc::new(move |x, y| e.eval(x, y, 0.0))
    }

    pub fn space_time_field(&self) -> dinsys_core::problems::SpaceTimeField {
        let e = self.clone();
        Arc::new(move |x, y, t| e.eval(x, y, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_registered_functions_and_pi() {
        let e = Expr::parse("sin(pi * x) * exp(-t) + cos(0.0 * y)").unwrap();
        let v = e.eval(0.5, 3.0, 1.0);
        assert!((v - ((-1.0f64).exp() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn integer_literals_become_numbers() {
        assert_eq!(Expr::parse("2").unwrap().eval(0.0, 0.0, 0.0), 2.0);
    }

    #[test]
    fn integer_division_truncates() {
        assert_eq!(Expr::parse("1 / 2").unwrap().eval(0.0, 0.0, 0.0), 0.0);
        assert_eq!(Expr::parse("1.0 / 2").unwrap().eval(0.0, 0.0, 0.0), 0.5);
        assert_eq!(Expr::parse("x / 2").unwrap().eval(1.0, 0.0, 0.0), 0.5);
    }

    #[test]
    fn rejects_unknown_identifiers() {
        assert!(Expr::parse("z + 1").is_err());
        assert!(Expr::parse("erf(x)").is_err());
        assert!(Expr::parse("sin(").is_err());
    }
}
