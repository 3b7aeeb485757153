//! Kinematic unicycle `(p_x, p_y, ψ, v)` driven by `(a, ω)`, integrated with
//! classical RK4.

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat, Vector};

pub const NX: usize = 4;
pub const NU: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState {
    pub px: f64,
    pub py: f64,
    pub psi: f64,
    pub v: f64,
}

impl UnicycleState {
    pub fn to_vector(self) -> Vector {
        Vector::from_vec(vec![self.px, self.py, self.psi, self.v])
    }

    pub fn from_vector(x: &Vector) -> Self {
        UnicycleState {
            px: x[0],
            py: x[1],
            psi: x[2],
            v: x[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleInput {
    pub a: f64,
    pub omega: f64,
}

impl UnicycleInput {
    pub fn to_vector(self) -> Vector {
        Vector::from_vec(vec![self.a, self.omega])
    }
}

fn rhs(x: &Vector, u: &Vector) -> Vector {
    let (psi, v) = (x[2], x[3]);
    Vector::from_vec(vec![v * psi.cos(), v * psi.sin(), u[1], u[0]])
}

fn rhs_x(x: &Vector) -> Mat {
    let (psi, v) = (x[2], x[3]);
    let mut j = Mat::zeros(NX, NX);
    j[(0, 2)] = -v * psi.sin();
    j[(0, 3)] = psi.cos();
    j[(1, 2)] = v * psi.cos();
    j[(1, 3)] = psi.sin();
    j
}

fn rhs_u() -> Mat {
    let mut j = Mat::zeros(NX, NU);
    j[(2, 1)] = 1.0;
    j[(3, 0)] = 1.0;
    j
}

/// One RK4 step of length `dt`.
pub fn unicycle_step(x: &Vector, u: &Vector, dt: f64) -> Vector {
    let k1 = rhs(x, u);
    let k2 = rhs(&(x + &k1 * (0.5 * dt)), u);
    let k3 = rhs(&(x + &k2 * (0.5 * dt)), u);
    let k4 = rhs(&(x + &k3 * dt), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// `(∂x⁺/∂x, ∂x⁺/∂u)` of [`unicycle_step`], by differentiating each stage.
pub fn unicycle_jacobians(x: &Vector, u: &Vector, dt: f64) -> (Mat, Mat) {
    let id = Mat::identity(NX, NX);
    let fu = rhs_u();
    let k1 = rhs(x, u);
    let x2 = x + &k1 * (0.5 * dt);
    let k2 = rhs(&x2, u);
    let x3 = x + &k2 * (0.5 * dt);
    let k3 = rhs(&x3, u);
    let x4 = x + &k3 * dt;

    let a1 = rhs_x(x);
    let b1 = fu.clone();
    let a2 = rhs_x(&x2) * (&id + &a1 * (0.5 * dt));
    let b2 = rhs_x(&x2) * &b1 * (0.5 * dt) + &fu;
    let a3 = rhs_x(&x3) * (&id + &a2 * (0.5 * dt));
    let b3 = rhs_x(&x3) * &b2 * (0.5 * dt) + &fu;
    let a4 = rhs_x(&x4) * (&id + &a3 * dt);
    let b4 = rhs_x(&x4) * &b3 * dt + &fu;

    let a = id + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    let b = (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (dt / 6.0);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{self, random_vec};

    #[test]
    fn rest_is_an_equilibrium() {
        let x = Vector::from_vec(vec![1.0, -2.0, 0.3, 0.0]);
        assert_eq!(unicycle_step(&x, &Vector::zeros(2), 0.1), x);
    }

    #[test]
    fn straight_motion() {
        let x = Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let next = unicycle_step(&x, &Vector::zeros(2), 0.1);
        assert!((next[0] - 0.1).abs() < 1e-15);
        assert_eq!((next[1], next[2], next[3]), (0.0, 0.0, 1.0));
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = random::rng(3);
        let h = 1e-6;
        for _ in 0..20 {
            let x = random_vec(&mut rng, NX);
            let u = random_vec(&mut rng, NU);
            let (a, b) = unicycle_jacobians(&x, &u, 0.2);
            for j in 0..NX {
                let mut e = Vector::zeros(NX);
                e[j] = h;
                let col = (unicycle_step(&(&x + &e), &u, 0.2) - unicycle_step(&(&x - &e), &u, 0.2)) / (2.0 * h);
                assert!((col - a.column(j)).amax() <= 1e-6);
            }
            for j in 0..NU {
                let mut e = Vector::zeros(NU);
                e[j] = h;
                let col = (unicycle_step(&x, &(&u + &e), 0.2) - unicycle_step(&x, &(&u - &e), 0.2)) / (2.0 * h);
                assert!((col - b.column(j)).amax() <= 1e-6);
            }
        }
    }

    #[test]
    fn local_error_is_fifth_order() {
        // smooth constant input; reference from 64 substeps
        let x = Vector::from_vec(vec![0.0, 0.0, 0.2, 2.0]);
        let u = Vector::from_vec(vec![0.5, 0.8]);
        let exact = |dt: f64| {
            let mut y = x.clone();
            for _ in 0..64 {
                y = unicycle_step(&y, &u, dt / 64.0);
            }
            y
        };
        let err = |dt: f64| (unicycle_step(&x, &u, dt) - exact(dt)).norm();
        let order = (err(0.4) / err(0.2)).log2();
        assert!(order >= 4.5, "measured order {order}");
    }
}
