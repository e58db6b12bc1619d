use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use meval::{ContextProvider, Expr, FuncEvalError};
use serde::{Deserialize, Serialize};

use super::space::{Point, Space};
use crate::error::{Error, Result};

/// Step of the central-difference Jacobian used when no analytic one exists.
pub const FD_STEP: f64 = 1e-6;

/// Golden-mean rotation number of the irrational torus flow.
pub fn golden_rotation() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// A C¹ vector field in coordinates. Jacobians are row-major `n × n`.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        central_difference_jacobian(self, x, out);
    }

    fn has_analytic_jacobian(&self) -> bool {
        false
    }
}

pub fn central_difference_jacobian<F: VectorField + ?Sized>(field: &F, x: &[f64], out: &mut [f64]) {
    let n = field.dim();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        xp[j] = x[j] + FD_STEP;
        field.eval(&xp, &mut fp);
        xp[j] = x[j] - FD_STEP;
        field.eval(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            out[i * n + j] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
}

/// `X = (1, -sin 2πy)` on the 2-torus: one attracting (y = 0) and one
/// repelling (y = 1/2) periodic orbit.
#[derive(Debug, Clone, Copy)]
pub struct TorusMorseSmale;

impl VectorField for TorusMorseSmale {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = -(2.0 * PI * x[1]).sin();
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = -2.0 * PI * (2.0 * PI * x[1]).cos();
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
}

/// Linear flow `X = (1, α)` on the 2-torus with irrational slope.
#[derive(Debug, Clone, Copy)]
pub struct TorusIrrational {
    pub alpha: f64,
}

impl VectorField for TorusIrrational {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = self.alpha;
    }
    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
}

/// `X = (1, -tanh y)` on the plane. `sinh y(t) = sinh y₀ · e^{-t}`.
#[derive(Debug, Clone, Copy)]
pub struct PlaneShear;

impl VectorField for PlaneShear {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = -x[1].tanh();
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let c = x[1].cosh();
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = -1.0 / (c * c);
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy)]
struct ExprContext<'a> {
    names: &'a [String],
    values: &'a [f64],
}

fn unary(args: &[f64], f: fn(f64) -> f64) -> std::result::Result<f64, FuncEvalError> {
    match args.len() {
        1 => Ok(f(args[0])),
        0 => Err(FuncEvalError::TooFewArguments),
        _ => Err(FuncEvalError::TooManyArguments),
    }
}

fn binary(args: &[f64], f: fn(f64, f64) -> f64) -> std::result::Result<f64, FuncEvalError> {
    match args.len() {
        2 => Ok(f(args[0], args[1])),
        n => Err(FuncEvalError::NumberArgs(n)),
    }
}

impl ContextProvider for ExprContext<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Some(self.values[i]);
        }
        match name {
            "pi" => Some(PI),
            "e" => Some(std::f64::consts::E),
            _ => None,
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> std::result::Result<f64, FuncEvalError> {
        match name {
            "sqrt" => unary(args, f64::sqrt),
            "exp" => unary(args, f64::exp),
            "ln" => unary(args, f64::ln),
            "abs" => unary(args, f64::abs),
            "sin" => unary(args, f64::sin),
            "cos" => unary(args, f64::cos),
            "tan" => unary(args, f64::tan),
            "asin" => unary(args, f64::asin),
            "acos" => unary(args, f64::acos),
            "atan" => unary(args, f64::atan),
            "sinh" => unary(args, f64::sinh),
            "cosh" => unary(args, f64::cosh),
            "tanh" => unary(args, f64::tanh),
            "asinh" => unary(args, f64::asinh),
            "acosh" => unary(args, f64::acosh),
            "atanh" => unary(args, f64::atanh),
            "floor" => unary(args, f64::floor),
            "ceil" => unary(args, f64::ceil),
            "signum" => unary(args, f64::signum),
            "atan2" => binary(args, f64::atan2),
            "min" => binary(args, f64::min),
            "max" => binary(args, f64::max),
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

/// Field given by one arithmetic expression per component.
#[derive(Debug, Clone)]
pub struct ExpressionField {
    variables: Vec<String>,
    components: Vec<Expr>,
}

impl ExpressionField {
    pub fn new(variables: Vec<String>, components: &[String]) -> Result<Self> {
        if variables.len() != components.len() {
            return Err(Error::Dimension {
                expected: variables.len(),
                got: components.len(),
            });
        }
        let components = components
            .iter()
            .map(|s| {
                s.parse::<Expr>()
                    .map_err(|e| Error::Expression(format!("`{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let field = ExpressionField {
            variables,
            components,
        };
        // Evaluate once so unknown names surface at construction time.
        let probe = vec![0.1; field.variables.len()];
        let ctx = ExprContext {
            names: &field.variables,
            values: &probe,
        };
        for expr in &field.components {
            expr.eval_with_context(ctx)
                .map_err(|e| Error::Expression(e.to_string()))?;
        }
        Ok(field)
    }
}

impl VectorField for ExpressionField {
    fn dim(&self) -> usize {
        self.variables.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let ctx = ExprContext {
            names: &self.variables,
            values: x,
        };
        for (o, expr) in out.iter_mut().zip(&self.components) {
            *o = expr.eval_with_context(ctx).unwrap_or(f64::NAN);
        }
    }
}

/// Axis-aligned sample box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        SampleBox { lo, hi }
    }

    /// Tensor grid with `per_axis` points per axis (endpoints included).
    pub fn grid(&self, per_axis: usize) -> Vec<Point> {
        let n = self.lo.len();
        let per_axis = per_axis.max(1);
        let total = per_axis.pow(n as u32);
        let coord = |i: usize, k: usize| {
            if per_axis == 1 {
                0.5 * (self.lo[i] + self.hi[i])
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (per_axis - 1) as f64
            }
        };
        (0..total)
            .map(|mut code| {
                Point::from_iterator(
                    n,
                    (0..n).map(|i| {
                        let k = code % per_axis;
                        code /= per_axis;
                        coord(i, k)
                    }),
                )
            })
            .collect()
    }
}

/// On-disk description of an expression field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    #[serde(default)]
    pub name: Option<String>,
    /// `"euclidean"` or `"torus"`.
    pub space: String,
    pub dim: usize,
    pub components: Vec<String>,
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    #[serde(default)]
    pub domain: Option<Vec<SampleBox>>,
}

fn default_variables(n: usize) -> Vec<String> {
    const SHORT: [&str; 4] = ["x", "y", "z", "w"];
    if n <= SHORT.len() {
        SHORT[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("x{i}")).collect()
    }
}

/// Names accepted by [`VectorFieldSpec::builtin`].
pub const BUILTIN_FLOWS: [&str; 3] = ["torus-ms", "torus-irr", "plane-shear"];

const MARGIN_GRID: usize = 41;

/// A named vector field on a space, with its sampled nonsingularity margin.
#[derive(Clone)]
pub struct VectorFieldSpec {
    pub name: String,
    pub space: Space,
    field: Arc<dyn VectorField>,
    pub domain: Vec<SampleBox>,
    pub nonsingular_margin: f64,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("name", &self.name)
            .field("space", &self.space)
            .field("nonsingular_margin", &self.nonsingular_margin)
            .finish()
    }
}

impl VectorFieldSpec {
    /// Wraps a field; rejects it if `|X|` vanishes on the sample domain.
    pub fn new(
        name: impl Into<String>,
        space: Space,
        field: Arc<dyn VectorField>,
        domain: Vec<SampleBox>,
    ) -> Result<Self> {
        let name = name.into();
        if field.dim() != space.dim() {
            return Err(Error::Dimension {
                expected: space.dim(),
                got: field.dim(),
            });
        }
        if domain.is_empty() {
            return Err(Error::EmptySample(format!("field `{name}` declares no sample domain")));
        }
        for b in &domain {
            if b.lo.len() != space.dim() || b.hi.len() != space.dim() {
                return Err(Error::Dimension {
                    expected: space.dim(),
                    got: b.lo.len().min(b.hi.len()),
                });
            }
        }
        let mut spec = VectorFieldSpec {
            name,
            space,
            field,
            domain,
            nonsingular_margin: 0.0,
        };
        let grid_per_axis = if space.dim() <= 2 { MARGIN_GRID } else { 9 };
        let margin = spec
            .domain
            .iter()
            .flat_map(|b| b.grid(grid_per_axis))
            .map(|x| spec.eval(&x).norm())
            .fold(f64::INFINITY, f64::min);
        if !(margin > 1e-12) {
            return Err(Error::RestPoint {
                name: spec.name.clone(),
                margin,
            });
        }
        spec.nonsingular_margin = margin;
        Ok(spec)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let unit_square = vec![SampleBox::new(vec![0.0, 0.0], vec![1.0, 1.0])];
        match name {
            "torus-ms" => Self::new(
                name,
                Space::FlatTorus { dim: 2 },
                Arc::new(TorusMorseSmale),
                unit_square,
            ),
            "torus-irr" => Self::new(
                name,
                Space::FlatTorus { dim: 2 },
                Arc::new(TorusIrrational {
                    alpha: golden_rotation(),
                }),
                unit_square,
            ),
            "plane-shear" => Self::new(
                name,
                Space::Euclidean { dim: 2 },
                Arc::new(PlaneShear),
                vec![
                    SampleBox::new(vec![0.0, -3.0], vec![1.0, 3.0]),
                    SampleBox::new(vec![0.0, -20.0], vec![1.0, 20.0]),
                ],
            ),
            other => Err(Error::config(
                "flow",
                format!("unknown flow `{other}` (known: {})", BUILTIN_FLOWS.join(", ")),
            )),
        }
    }

    pub fn from_def(def: &FieldDef) -> Result<Self> {
        let space = match def.space.as_str() {
            "euclidean" => Space::Euclidean { dim: def.dim },
            "torus" | "flat-torus" => Space::FlatTorus { dim: def.dim },
            other => {
                return Err(Error::config(
                    "field.space",
                    format!("expected `euclidean` or `torus`, got `{other}`"),
                ))
            }
        };
        if def.components.len() != def.dim {
            return Err(Error::config(
                "field.components",
                format!("{} components for dimension {}", def.components.len(), def.dim),
            ));
        }
        let variables = def.variables.clone().unwrap_or_else(|| default_variables(def.dim));
        let field = ExpressionField::new(variables, &def.components)?;
        let domain = def.domain.clone().unwrap_or_else(|| {
            let (lo, hi) = if space.is_torus() { (0.0, 1.0) } else { (-1.0, 1.0) };
            vec![SampleBox::new(vec![lo; def.dim], vec![hi; def.dim])]
        });
        Self::new(
            def.name.clone().unwrap_or_else(|| "inline".to_string()),
            space,
            Arc::new(field),
            domain,
        )
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }

    pub fn eval(&self, x: &Point) -> Point {
        let mut out = Point::zeros(self.dim());
        self.field.eval(x.as_slice(), out.as_mut_slice());
        out
    }

    pub fn jacobian(&self, x: &Point) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.field.jacobian(x.as_slice(), &mut buf);
        nalgebra::DMatrix::from_row_slice(n, n, &buf)
    }
}
