use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;
pub type Tangent = DVector<f64>;

/// State space of a flow.
///
/// Flat tori have unit period on every axis; coordinates are kept in `[0, 1)`
/// and `exp`/`log` are coordinate shifts, so charts are isometric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Space {
    Euclidean { dim: usize },
    FlatTorus { dim: usize },
}

/// Wraps a coordinate difference into `(-1/2, 1/2]`.
#[inline]
fn wrap(d: f64) -> f64 {
    d - (d - 0.5).ceil()
}

impl Space {
    pub fn dim(&self) -> usize {
        match *self {
            Space::Euclidean { dim } | Space::FlatTorus { dim } => dim,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Space::FlatTorus { .. })
    }

    /// Radius below which `log` is defined: half the period on a torus.
    pub fn injectivity_radius(&self) -> f64 {
        match self {
            Space::Euclidean { .. } => f64::INFINITY,
            Space::FlatTorus { .. } => 0.5,
        }
    }

    pub fn check_dim(&self, x: &Point) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn canonicalize_in_place(&self, x: &mut Point) {
        if self.is_torus() {
            for c in x.iter_mut() {
                let mut r = *c - c.floor();
                if r >= 1.0 {
                    r = 0.0;
                }
                *c = r;
            }
        }
    }

    pub fn canonical(&self, x: &Point) -> Point {
        let mut y = x.clone();
        self.canonicalize_in_place(&mut y);
        y
    }

    /// Shortest displacement from `x` to `y`, without the radius check.
    pub fn displacement(&self, x: &Point, y: &Point) -> Tangent {
        let mut v = y - x;
        if self.is_torus() {
            v.iter_mut().for_each(|c| *c = wrap(*c));
        }
        v
    }

    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        self.displacement(x, y).norm()
    }

    /// Inverse exponential map at `x`.
    pub fn log(&self, x: &Point, y: &Point) -> Result<Tangent> {
        let v = self.displacement(x, y);
        let dist = v.norm();
        let radius = self.injectivity_radius();
        if dist >= radius {
            return Err(Error::InjectivityRadius { dist, radius });
        }
        Ok(v)
    }

    pub fn exp(&self, x: &Point, v: &Tangent) -> Point {
        let mut y = x + v;
        self.canonicalize_in_place(&mut y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    /// Minimum over the 3^n neighbouring lattice translates.
    fn brute_force_torus_distance(x: &Point, y: &Point) -> f64 {
        let n = x.len();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut sq = 0.0;
            for i in 0..n {
                let shift = (c % 3) as f64 - 1.0;
                c /= 3;
                let d = y[i] + shift - x[i];
                sq += d * d;
            }
            best = best.min(sq.sqrt());
        }
        best
    }

    #[test]
    fn euclidean_log_is_difference() {
        let s = Space::Euclidean { dim: 2 };
        let v = s.log(&dvector![1.0, 2.0], &dvector![1.5, 2.0]).unwrap();
        assert_eq!(v, dvector![0.5, 0.0]);
    }

    #[test]
    fn torus_log_wraps_across_the_seam() {
        let s = Space::FlatTorus { dim: 2 };
        let x = dvector![0.95, 0.0];
        let y = dvector![0.05, 0.0];
        let v = s.log(&x, &y).unwrap();
        let oracle = brute_force_torus_distance(&x, &y);
        assert!((v[0] - 0.10).abs() < 1e-12);
        assert!(v[1].abs() < 1e-15);
        assert!((v.norm() - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_of_same_point_is_zero() {
        for s in [Space::Euclidean { dim: 3 }, Space::FlatTorus { dim: 3 }] {
            let x = dvector![0.2, 0.7, 0.1];
            assert_eq!(s.log(&x, &x).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn log_rejects_points_beyond_injectivity_radius() {
        let s = Space::FlatTorus { dim: 2 };
        let err = s.log(&dvector![0.0, 0.0], &dvector![0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::InjectivityRadius { .. }));
    }

    #[test]
    fn canonical_coordinates_lie_in_unit_interval() {
        let s = Space::FlatTorus { dim: 2 };
        let x = s.canonical(&dvector![-1e-18, 3.25]);
        assert!(x.iter().all(|c| (0.0..1.0).contains(c)));
        assert!((x[1] - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn torus_distance_matches_lattice_minimum(
            a in prop::collection::vec(0.0f64..1.0, 3),
            b in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let s = Space::FlatTorus { dim: 3 };
            let x = DVector::from_vec(a);
            let y = DVector::from_vec(b);
            prop_assert!((s.distance(&x, &y) - brute_force_torus_distance(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn torus_distance_is_a_metric(
            a in prop::collection::vec(0.0f64..1.0, 2),
            b in prop::collection::vec(0.0f64..1.0, 2),
            c in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let s = Space::FlatTorus { dim: 2 };
            let (x, y, z) = (DVector::from_vec(a), DVector::from_vec(b), DVector::from_vec(c));
            prop_assert!((s.distance(&x, &y) - s.distance(&y, &x)).abs() < 1e-15);
            prop_assert!(s.distance(&x, &z) <= s.distance(&x, &y) + s.distance(&y, &z) + 1e-12);
        }

        #[test]
        fn exp_inverts_log(
            a in prop::collection::vec(0.0f64..1.0, 2),
            b in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let s = Space::FlatTorus { dim: 2 };
            let (x, y) = (DVector::from_vec(a), DVector::from_vec(b));
            if let Ok(v) = s.log(&x, &y) {
                let back = s.exp(&x, &v);
                prop_assert!(s.distance(&back, &y) < 1e-12);
            }
        }
    }
}
