use std::f64::consts::PI;

use super::SimError;
use crate::grid::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, kept in (-pi, pi].
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub v: f64,
    pub theta_dot: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Exact arc integration of the unicycle model over `dt`.
pub fn dubins_step(s: RobotState, u: ControlInput, dt: f64) -> Result<RobotState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::NonPositiveDt(dt));
    }
    if u.theta_dot.abs() < 1e-9 {
        return Ok(RobotState {
            x: s.x + u.v * dt * s.theta.cos(),
            y: s.y + u.v * dt * s.theta.sin(),
            theta: s.theta,
        });
    }
    let r = u.v / u.theta_dot;
    let th1 = s.theta + u.theta_dot * dt;
    Ok(RobotState {
        x: s.x + r * (th1.sin() - s.theta.sin()),
        y: s.y - r * (th1.cos() - s.theta.cos()),
        theta: wrap_angle(th1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn euler(s: RobotState, u: ControlInput, dt: f64, n: usize) -> RobotState {
        let h = dt / n as f64;
        let (mut x, mut y, mut th) = (s.x, s.y, s.theta);
        for _ in 0..n {
            x += u.v * h * th.cos();
            y += u.v * h * th.sin();
            th += u.theta_dot * h;
        }
        RobotState::new(x, y, th)
    }

    #[test]
    fn straight_line() {
        let s = dubins_step(
            RobotState::default(),
            ControlInput {
                v: 0.5,
                theta_dot: 0.0,
            },
            0.1,
        )
        .unwrap();
        assert!((s.x - 0.05).abs() < 1e-15 && s.y == 0.0 && s.theta == 0.0);
    }

    #[test]
    fn quarter_arc() {
        let s = dubins_step(
            RobotState::default(),
            ControlInput {
                v: 0.5,
                theta_dot: PI / 2.0,
            },
            1.0,
        )
        .unwrap();
        // r = 0.5 / (pi/2) = 1/pi
        assert!((s.x - std::f64::consts::FRAC_1_PI).abs() < 1e-12);
        assert!((s.y - std::f64::consts::FRAC_1_PI).abs() < 1e-12);
        assert!((s.theta - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_is_fixed_point() {
        let s0 = RobotState::new(1.5, -2.0, 2.9);
        assert_eq!(dubins_step(s0, ControlInput::default(), 0.1).unwrap(), s0);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let e = dubins_step(RobotState::default(), ControlInput::default(), 0.0);
        assert_eq!(e, Err(SimError::NonPositiveDt(0.0)));
        assert!(dubins_step(RobotState::default(), ControlInput::default(), f64::NAN).is_err());
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_fine_euler(
            x in -10.0f64..10.0, y in -10.0f64..10.0, th in -PI..PI,
            v in 0.0f64..1.0, w in -2.0f64..2.0,
        ) {
            let s = RobotState::new(x, y, th);
            let u = ControlInput { v, theta_dot: w };
            let a = dubins_step(s, u, 0.1).unwrap();
            let b = euler(s, u, 0.1, 1000);
            prop_assert!((a.x - b.x).abs() < 1e-4 && (a.y - b.y).abs() < 1e-4);
            prop_assert!(wrap_angle(a.theta - b.theta).abs() < 1e-9);
            prop_assert!(a.theta > -PI && a.theta <= PI);
        }
    }
}
