//! Small vector helpers shared across modules.

use std::f64::consts::PI;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
pub fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn norm2(a: Vec2) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// cos/sin with exact values at multiples of pi/2, so grid rotations stay integral.
#[inline]
pub fn cos_sin(theta: f64) -> (f64, f64) {
    let snap = |x: f64| {
        if x.abs() < 1e-12 {
            0.0
        } else if (x.abs() - 1.0).abs() < 1e-12 {
            x.signum()
        } else {
            x
        }
    };
    (snap(theta.cos()), snap(theta.sin()))
}

/// Expresses a world-frame vector in the body frame of `heading`.
#[inline]
pub fn to_body(v: Vec2, heading: f64) -> Vec2 {
    let (c, s) = cos_sin(heading);
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Expresses a body-frame vector in the world frame.
#[inline]
pub fn to_world(v: Vec2, heading: f64) -> Vec2 {
    let (c, s) = cos_sin(heading);
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Logistic sigmoid, kept strictly inside (0, 1).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(1e-12, 1.0 - 1e-12)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_rotations_are_exact() {
        assert_eq!(to_body([1.0, 0.0], PI / 2.0), [0.0, -1.0]);
        assert_eq!(to_world([1.0, 0.0], PI), [-1.0, 0.0]);
    }
}
