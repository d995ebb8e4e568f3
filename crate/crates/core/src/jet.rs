//! Second-order forward-mode jets: a value with its first and second time
//! derivatives, propagated through arithmetic by the chain rule.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    /// Applies `f` given `f(v)`, `f'(v)` and `f''(v)`.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        Self {
            v: f0,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }

    /// Drops the value, keeping derivatives: the jet of the time derivative.
    /// The second derivative of the result is unknown and set to zero.
    pub fn shift(self) -> Self {
        Self::new(self.d1, self.d2, 0.0)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn asin(self) -> Self {
        let w = 1.0 - self.v * self.v;
        let f1 = 1.0 / w.sqrt();
        self.chain(self.v.asin(), f1, self.v * f1 / w)
    }

    pub fn atan(self) -> Self {
        let w = 1.0 + self.v * self.v;
        self.chain(self.v.atan(), 1.0 / w, -2.0 * self.v / (w * w))
    }

    /// Two-argument arctangent with `self` as the ordinate.
    pub fn atan2(self, x: Jet) -> Self {
        let y = self;
        let r2 = x * x + y * y;
        // d/dt atan2(y, x) = (x y' - y x') / (x^2 + y^2)
        let rate = (x * y.shift() - y * x.shift()) / r2;
        Self::new(y.v.atan2(x.v), rate.v, rate.d1)
    }

    pub fn hypot(self, other: Jet) -> Self {
        (self * self + other * other).sqrt()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.v * k, self.d1 * k, self.d2 * k)
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Self::constant(v)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::new(-self.v, -self.d1, -self.d2)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, k: f64) -> Jet {
        Jet::new(self.v + k, self.d1, self.d2)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, k: f64) -> Jet {
        Jet::new(self.v - k, self.d1, self.d2)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, k: f64) -> Jet {
        self.scale(k)
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j.scale(self)
    }
}

/// A 3-vector of jets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JetVec3(pub [Jet; 3]);

impl JetVec3 {
    /// Builds the jet of a vector signal from its value and two derivatives.
    pub fn from_derivs(v: &Vec3, d1: &Vec3, d2: &Vec3) -> Self {
        Self([0, 1, 2].map(|i| Jet::new(v[i], d1[i], d2[i])))
    }

    pub fn value(&self) -> Vec3 {
        Vec3::new(self.0[0].v, self.0[1].v, self.0[2].v)
    }

    pub fn d1(&self) -> Vec3 {
        Vec3::new(self.0[0].d1, self.0[1].d1, self.0[2].d1)
    }

    pub fn x(&self) -> Jet {
        self.0[0]
    }
    pub fn y(&self) -> Jet {
        self.0[1]
    }
    pub fn z(&self) -> Jet {
        self.0[2]
    }
}

/// Quaternion `(w, x, y, z)` with jet coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetQuat {
    pub w: Jet,
    pub x: Jet,
    pub y: Jet,
    pub z: Jet,
}

impl JetQuat {
    /// Rotation by `angle` about the unit axis index (0 = x, 1 = y, 2 = z).
    pub fn axis_angle(axis: usize, angle: Jet) -> Self {
        let half = angle.scale(0.5);
        let (c, s) = (half.cos(), half.sin());
        let zero = Jet::constant(0.0);
        let mut v = [zero; 3];
        v[axis] = s;
        Self {
            w: c,
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    pub fn mul(&self, o: &JetQuat) -> JetQuat {
        JetQuat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn conjugate(&self) -> JetQuat {
        JetQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn shift(&self) -> JetQuat {
        JetQuat {
            w: self.w.shift(),
            x: self.x.shift(),
            y: self.y.shift(),
            z: self.z.shift(),
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.w.v, self.x.v, self.y.v, self.z.v]
    }

    pub fn rates(&self) -> [f64; 4] {
        [self.w.d1, self.x.d1, self.y.d1, self.z.d1]
    }

    /// Body angular rate `2 vec(conj(q) * dq/dt)` as a jet. Only the value
    /// and first derivative of the result are meaningful.
    pub fn body_rate(&self) -> JetVec3 {
        let p = self.conjugate().mul(&self.shift());
        JetVec3([p.x.scale(2.0), p.y.scale(2.0), p.z.scale(2.0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Value, first and second derivative at `t` by central differences.
    fn fd(f: impl Fn(f64) -> f64, t: f64) -> (f64, f64, f64) {
        let h = 1e-4;
        let (a, b, c) = (f(t - h), f(t), f(t + h));
        (b, (c - a) / (2.0 * h), (c - 2.0 * b + a) / (h * h))
    }

    fn check(jet: Jet, f: impl Fn(f64) -> f64, t: f64) {
        let (v, d1, d2) = fd(f, t);
        assert!((jet.v - v).abs() < 1e-12, "value {} vs {}", jet.v, v);
        assert!((jet.d1 - d1).abs() < 1e-6, "d1 {} vs {}", jet.d1, d1);
        assert!((jet.d2 - d2).abs() < 1e-4, "d2 {} vs {}", jet.d2, d2);
    }

    // Test signal g(t) = 0.3 + 0.4 sin(1.3 t) + 0.1 t^2 and its jet.
    fn g(t: f64) -> f64 {
        0.3 + 0.4 * (1.3 * t).sin() + 0.1 * t * t
    }
    fn g_jet(t: f64) -> Jet {
        Jet::new(
            g(t),
            0.52 * (1.3 * t).cos() + 0.2 * t,
            -0.676 * (1.3 * t).sin() + 0.2,
        )
    }

    #[test]
    fn elementary_functions_match_finite_differences() {
        let t = 0.7;
        let j = g_jet(t);
        check(j.sin(), |t| g(t).sin(), t);
        check(j.cos(), |t| g(t).cos(), t);
        check(j.sqrt(), |t| g(t).sqrt(), t);
        check(j.recip(), |t| 1.0 / g(t), t);
        check(j.asin(), |t| g(t).asin(), t);
        check(j.atan(), |t| g(t).atan(), t);
        check(j * j * j, |t| g(t).powi(3), t);
        check(j / (j + 2.0), |t| g(t) / (g(t) + 2.0), t);
        let x = Jet::new((0.5f64).cos(), -(0.5f64).sin(), -(0.5f64).cos());
        check(j.atan2(x), |s| g(s).atan2((0.5 + s - t).cos()), t);
    }

    #[test]
    fn body_rate_of_pure_yaw_spin() {
        // q(t) = yaw(2t): body rate (0, 0, 2), constant.
        let q = JetQuat::axis_angle(2, Jet::new(0.4, 2.0, 0.0));
        let w = q.body_rate();
        assert!((w.value() - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-14);
        assert!(w.d1().norm() < 1e-14);
    }
}
