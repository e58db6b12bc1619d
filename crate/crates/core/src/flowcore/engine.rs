use nalgebra::DMatrix;

use super::field::VectorFieldSpec;
use super::space::{Point, Space};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 1000.0;

/// Fixed-step RK4 integrator of `ẋ = X(x)` jointly with the variational
/// equation `Ẏ = DX(x) Y`, with cubic Hermite dense output between nodes.
///
/// On a torus the integration runs in lifted coordinates; public results are
/// canonicalized unless a `*_lifted` entry point is used.
#[derive(Clone, Debug)]
pub struct FlowEngine {
    field: VectorFieldSpec,
    step: f64,
    horizon: f64,
}

struct Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    jac: Vec<f64>,
}

impl Workspace {
    fn new(len: usize, n: usize) -> Self {
        Workspace {
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            tmp: vec![0.0; len],
            jac: vec![0.0; n * n],
        }
    }
}

impl FlowEngine {
    pub fn new(field: VectorFieldSpec) -> Self {
        FlowEngine {
            field,
            step: DEFAULT_STEP,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("integration step {step}")));
        }
        self.step = step;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Ok(Self::new(VectorFieldSpec::builtin(name)?))
    }

    pub fn field(&self) -> &VectorFieldSpec {
        &self.field
    }

    pub fn space(&self) -> Space {
        self.field.space
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn vector_field(&self, x: &Point) -> Point {
        self.field.eval(x)
    }

    /// `Φ(t, x)`.
    pub fn flow_map(&self, t: f64, x: &Point) -> Result<Point> {
        let mut y = self.flow_map_lifted(t, x)?;
        self.space().canonicalize_in_place(&mut y);
        Ok(y)
    }

    /// `Φ(t, x)` without wrapping the result back to the fundamental domain.
    pub fn flow_map_lifted(&self, t: f64, x: &Point) -> Result<Point> {
        self.space().check_dim(x)?;
        let state = self.integrate(t, x.as_slice(), false)?;
        Ok(Point::from_vec(state))
    }

    /// `(Φ(t, x), ∂Φ(t, x)/∂x)` with the matrix from the variational equation.
    pub fn flow_with_jacobian(&self, t: f64, x: &Point) -> Result<(Point, DMatrix<f64>)> {
        let (mut y, jac) = self.flow_with_jacobian_lifted(t, x)?;
        self.space().canonicalize_in_place(&mut y);
        Ok((y, jac))
    }

    pub fn flow_with_jacobian_lifted(&self, t: f64, x: &Point) -> Result<(Point, DMatrix<f64>)> {
        self.space().check_dim(x)?;
        let n = self.dim();
        let state = self.integrate(t, x.as_slice(), true)?;
        let y = Point::from_column_slice(&state[..n]);
        let jac = DMatrix::from_row_slice(n, n, &state[n..]);
        Ok((y, jac))
    }

    fn rhs(&self, y: &[f64], out: &mut [f64], jac: &mut [f64], with_jac: bool) {
        let n = self.dim();
        let f = self.field.field();
        f.eval(&y[..n], &mut out[..n]);
        if with_jac {
            f.jacobian(&y[..n], jac);
            let big_y = &y[n..];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += jac[i * n + l] * big_y[l * n + j];
                    }
                    out[n + i * n + j] = acc;
                }
            }
        }
    }

    fn rk4_step(&self, y: &mut [f64], h: f64, ws: &mut Workspace, with_jac: bool) {
        let len = y.len();
        let Workspace { k, tmp, jac } = ws;
        let [k1, k2, k3, k4] = k;
        self.rhs(y, k1, jac, with_jac);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        self.rhs(tmp, k2, jac, with_jac);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        self.rhs(tmp, k3, jac, with_jac);
        for i in 0..len {
            tmp[i] = y[i] + h * k3[i];
        }
        self.rhs(tmp, k4, jac, with_jac);
        for i in 0..len {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    fn integrate(&self, t: f64, x: &[f64], with_jac: bool) -> Result<Vec<f64>> {
        if !t.is_finite() || t.abs() > self.horizon {
            return Err(Error::HorizonExceeded {
                t,
                horizon: self.horizon,
            });
        }
        let n = self.dim();
        let len = if with_jac { n + n * n } else { n };
        let mut y = vec![0.0; len];
        y[..n].copy_from_slice(x);
        if with_jac {
            for i in 0..n {
                y[n + i * n + i] = 1.0;
            }
        }
        if t == 0.0 {
            return Ok(y);
        }

        let h = self.step * t.signum();
        let full_steps = (t.abs() / self.step).floor() as usize;
        let remainder = t.abs() - full_steps as f64 * self.step;
        let mut ws = Workspace::new(len, n);
        for i in 0..full_steps {
            self.rk4_step(&mut y, h, &mut ws, with_jac);
            if i % 256 == 255 && !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    t: (i + 1) as f64 * h,
                });
            }
        }
        if remainder > 0.0 {
            // Cubic Hermite interpolation inside the next RK4 step.
            let theta = remainder / self.step;
            let mut f0 = vec![0.0; len];
            self.rhs(&y, &mut f0, &mut ws.jac, with_jac);
            let mut y1 = y.clone();
            self.rk4_step(&mut y1, h, &mut ws, with_jac);
            let mut f1 = vec![0.0; len];
            self.rhs(&y1, &mut f1, &mut ws.jac, with_jac);
            let t2 = theta * theta;
            let t3 = t2 * theta;
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + theta;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            for i in 0..len {
                y[i] = h00 * y[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::field::golden_rotation;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_time_is_identity() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let x = dvector![0.3, -1.7];
        let (y, j) = e.flow_with_jacobian(0.0, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(j, DMatrix::identity(2, 2));
    }

    #[test]
    fn irrational_torus_unit_time() {
        let e = FlowEngine::builtin("torus-irr").unwrap();
        let y = e.flow_map(1.0, &dvector![0.0, 0.0]).unwrap();
        let alpha = golden_rotation();
        let s = e.space();
        assert!(s.distance(&y, &dvector![0.0, alpha]) < 1e-12);
    }

    #[test]
    fn irrational_torus_jacobian_is_identity() {
        let e = FlowEngine::builtin("torus-irr").unwrap();
        let (_, j) = e.flow_with_jacobian(1.0, &dvector![0.4, 0.9]).unwrap();
        assert!((j - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn plane_shear_closed_form() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        for y0 in [-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let y = e.flow_map(1.0, &dvector![0.0, y0]).unwrap();
            let exact = (y0.sinh() * (-1.0f64).exp()).asinh();
            assert!((y[0] - 1.0).abs() < 1e-12);
            assert!((y[1] - exact).abs() < 1e-10, "{y0}: {} vs {exact}", y[1]);
        }
    }

    #[test]
    fn plane_shear_linearization_on_invariant_line() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let (y, j) = e.flow_with_jacobian(1.0, &dvector![0.0, 0.0]).unwrap();
        assert!((y - dvector![1.0, 0.0]).norm() < 1e-14);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, (-1.0f64).exp()]);
        assert!((j - expected).norm() < 1e-12);
    }

    #[test]
    fn fractional_times_use_dense_output() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let y0 = 0.8f64;
        let t = 0.123_456_7;
        let y = e.flow_map(t, &dvector![0.0, y0]).unwrap();
        let exact = (y0.sinh() * (-t).exp()).asinh();
        assert!((y[1] - exact).abs() < 1e-11);
    }

    #[test]
    fn horizon_is_enforced() {
        let e = FlowEngine::builtin("plane-shear")
            .unwrap()
            .with_horizon(5.0)
            .unwrap();
        assert!(matches!(
            e.flow_map(5.5, &dvector![0.0, 0.0]),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn group_property_on_builtins() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["torus-ms", "torus-irr", "plane-shear"] {
            let e = FlowEngine::builtin(name).unwrap();
            let s = e.space();
            for _ in 0..10 {
                let x = dvector![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let t = rng.gen_range(-2.0..2.0);
                let u = rng.gen_range(-2.0..2.0);
                let a = e.flow_map(u, &e.flow_map(t, &x).unwrap()).unwrap();
                let b = e.flow_map(t + u, &x).unwrap();
                assert!(s.distance(&a, &b) <= 1e-8, "{name}: {}", s.distance(&a, &b));
            }
        }
    }
}
