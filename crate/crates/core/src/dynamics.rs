//! Vehicle state and the stochastic kinematic bicycle model.
//!
//! The state of one vehicle is `[x, y, vx, vy, h]`: world position (m),
//! velocity components (m/s) and heading (rad, normalized to `[-pi, pi)`).
//! Actions are throttle (longitudinal acceleration, m/s^2) and front-wheel
//! steering angle (rad). One step advances position with the current speed,
//! rotates the heading by the slip-angle law, integrates throttle into a
//! signed scalar speed, and re-decomposes velocity along the new heading.
//! Optional zero-mean Gaussian noise on each state element models transition
//! uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Number of elements in a vehicle state vector.
pub const STATE_DIM: usize = 5;
/// Number of action dimensions (throttle, steer).
pub const ACTION_DIM: usize = 2;

/// Kinematic state of one vehicle: position, velocity, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Heading (rad), normalized to `[-pi, pi)`.
    pub h: f64,
}

/// Throttle + steering command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    /// Longitudinal acceleration command (m/s^2).
    pub throttle: f64,
    /// Front-wheel steering angle command (rad).
    pub steer: f64,
}

/// Fixed parameters of the bicycle model and action space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Time step (s).
    pub dt: f64,
    /// Vehicle length (m); the heading-rate law uses the half length.
    pub length: f64,
    /// Cap on the signed scalar speed magnitude (m/s).
    pub v_max: f64,
    /// Throttle bounds (lb, ub) in m/s^2.
    pub throttle_bounds: (f64, f64),
    /// Steering bounds (lb, ub) in rad.
    pub steer_bounds: (f64, f64),
    /// Collision footprint: length x width (m).
    pub footprint: (f64, f64),
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            dt: 0.1,
            length: 5.0,
            v_max: 10.0,
            throttle_bounds: (-5.0, 5.0),
            steer_bounds: (-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4),
            footprint: (5.0, 2.0),
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dynamics.dt must be > 0"));
        }
        if !(self.length > 0.0) {
            return Err(Error::config("dynamics.length must be > 0"));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::config("dynamics.v_max must be > 0"));
        }
        if self.throttle_bounds.0 >= self.throttle_bounds.1 {
            return Err(Error::config("dynamics.throttle_bounds: lb must be < ub"));
        }
        if self.steer_bounds.0 >= self.steer_bounds.1 {
            return Err(Error::config("dynamics.steer_bounds: lb must be < ub"));
        }
        if self.footprint.0 <= 0.0 || self.footprint.1 <= 0.0 {
            return Err(Error::config("dynamics.footprint must be positive"));
        }
        Ok(())
    }

    /// Clip an action into the configured bounds.
    pub fn clamp_action(&self, a: ActionCommand) -> ActionCommand {
        ActionCommand {
            throttle: a.throttle.clamp(self.throttle_bounds.0, self.throttle_bounds.1),
            steer: a.steer.clamp(self.steer_bounds.0, self.steer_bounds.1),
        }
    }

    pub fn contains_action(&self, a: ActionCommand) -> bool {
        a.throttle >= self.throttle_bounds.0
            && a.throttle <= self.throttle_bounds.1
            && a.steer >= self.steer_bounds.0
            && a.steer <= self.steer_bounds.1
    }

    /// Per-dimension half widths of the action box, used to normalize
    /// action differences into comparable units.
    pub fn action_half_widths(&self) -> [f64; ACTION_DIM] {
        [
            0.5 * (self.throttle_bounds.1 - self.throttle_bounds.0),
            0.5 * (self.steer_bounds.1 - self.steer_bounds.0),
        ]
    }
}

/// Diagonal transition-noise variances, one per state element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovariance {
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub sigma_vx2: f64,
    pub sigma_vy2: f64,
    pub sigma_h2: f64,
}

impl NoiseCovariance {
    pub fn zero() -> Self {
        NoiseCovariance {
            sigma_x2: 0.0,
            sigma_y2: 0.0,
            sigma_vx2: 0.0,
            sigma_vy2: 0.0,
            sigma_h2: 0.0,
        }
    }

    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        NoiseCovariance {
            sigma_x2: v[0],
            sigma_y2: v[1],
            sigma_vx2: v[2],
            sigma_vy2: v[3],
            sigma_h2: v[4],
        }
    }

    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [self.sigma_x2, self.sigma_y2, self.sigma_vx2, self.sigma_vy2, self.sigma_h2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("noise covariance: variances must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Bearing and distance from a vehicle to its reference parking spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceFeatures {
    /// World-frame bearing from the vehicle position to the spot center,
    /// in `[-pi, pi)`; zero when the distance is zero.
    pub theta: f64,
    /// Euclidean distance to the spot center (m).
    pub l: f64,
}

/// Wrap an angle to `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let wrapped = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi for inputs just below -pi due to
    // rounding; fold that single case back.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

impl VehicleState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64, h: f64) -> Self {
        VehicleState { x, y, vx, vy, h: normalize_angle(h) }
    }

    /// A vehicle at rest at `(x, y)` facing `h`.
    pub fn at_rest(x: f64, y: f64, h: f64) -> Self {
        Self::new(x, y, 0.0, 0.0, h)
    }

    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        VehicleState { x: v[0], y: v[1], vx: v[2], vy: v[3], h: v[4] }
    }

    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.vx, self.vy, self.h]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Signed scalar speed: the velocity projected onto the heading axis.
    ///
    /// The step equations keep `(vx, vy)` collinear with the heading, so the
    /// projection recovers the signed speed exactly; negative values mean
    /// the vehicle is reversing.
    pub fn signed_speed(&self) -> f64 {
        self.vx * self.h.cos() + self.vy * self.h.sin()
    }

    /// Unsigned speed magnitude.
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

impl ActionCommand {
    pub fn new(throttle: f64, steer: f64) -> Self {
        ActionCommand { throttle, steer }
    }

    pub fn zero() -> Self {
        ActionCommand { throttle: 0.0, steer: 0.0 }
    }

    pub fn as_array(&self) -> [f64; ACTION_DIM] {
        [self.throttle, self.steer]
    }

    pub fn from_array(v: [f64; ACTION_DIM]) -> Self {
        ActionCommand { throttle: v[0], steer: v[1] }
    }
}

/// Slip angle at the mass center for a front-wheel steering angle:
/// `beta = arctan(tan(steer) / 2)`.
pub fn slip_angle(steer: f64) -> Result<f64> {
    if !(steer.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::usage(format!(
            "slip_angle: |steer| must be < pi/2, got {steer}"
        )));
    }
    Ok((0.5 * steer.tan()).atan())
}

/// Derivative of [`slip_angle`] with respect to the steering command.
fn slip_angle_derivative(steer: f64) -> f64 {
    let t = steer.tan();
    let sec2 = 1.0 + t * t;
    0.5 * sec2 / (1.0 + 0.25 * t * t)
}

/// One deterministic step of the kinematic bicycle model.
///
/// Position advances with the current signed speed along `h + beta`; the
/// heading turns by `v * sin(beta) / (L/2) * dt`; throttle integrates into
/// the signed speed (clamped to `±v_max`), which is then decomposed along
/// the new heading.
pub fn step_deterministic(s: VehicleState, a: ActionCommand, p: &DynamicsParams) -> VehicleState {
    let v = s.signed_speed();
    let beta = (0.5 * a.steer.tan()).atan();
    let x = s.x + v * (s.h + beta).cos() * p.dt;
    let y = s.y + v * (s.h + beta).sin() * p.dt;
    let h = normalize_angle(s.h + v * beta.sin() / (p.length / 2.0) * p.dt);
    let v_next = (v + a.throttle * p.dt).clamp(-p.v_max, p.v_max);
    VehicleState {
        x,
        y,
        vx: v_next * h.cos(),
        vy: v_next * h.sin(),
        h,
    }
}

/// Partial derivatives of [`step_deterministic`]'s output with respect to
/// the action, as a 5x2 matrix in state-element-major order
/// (`jac[element][action_dim]`).
///
/// The heading normalization is a piecewise shift, so it differentiates to
/// the identity almost everywhere; the speed clamp contributes zero
/// derivative outside `(-v_max, v_max)`.
pub fn step_action_jacobian(
    s: VehicleState,
    a: ActionCommand,
    p: &DynamicsParams,
) -> [[f64; ACTION_DIM]; STATE_DIM] {
    let v = s.signed_speed();
    let beta = (0.5 * a.steer.tan()).atan();
    let dbeta = slip_angle_derivative(a.steer);
    let half_len = p.length / 2.0;

    let dh_dsteer = v * beta.cos() * dbeta / half_len * p.dt;
    let v_next_raw = v + a.throttle * p.dt;
    let clamped = v_next_raw <= -p.v_max || v_next_raw >= p.v_max;
    let v_next = v_next_raw.clamp(-p.v_max, p.v_max);
    let dv_dthrottle = if clamped { 0.0 } else { p.dt };

    let h_next = normalize_angle(s.h + v * beta.sin() / half_len * p.dt);
    let (sin_hb, cos_hb) = (s.h + beta).sin_cos();
    let (sin_hn, cos_hn) = h_next.sin_cos();

    [
        [0.0, -v * sin_hb * p.dt * dbeta],
        [0.0, v * cos_hb * p.dt * dbeta],
        [dv_dthrottle * cos_hn, -v_next * sin_hn * dh_dsteer],
        [dv_dthrottle * sin_hn, v_next * cos_hn * dh_dsteer],
        [0.0, dh_dsteer],
    ]
}

/// [`step_deterministic`] plus independent zero-mean Gaussian noise on each
/// state element with the given variances. Deterministic given the RNG.
pub fn step_stochastic(
    s: VehicleState,
    a: ActionCommand,
    p: &DynamicsParams,
    noise: &NoiseCovariance,
    rng: &mut Rng,
) -> VehicleState {
    let base = step_deterministic(s, a, p);
    let mut out = base.as_array();
    for (value, var) in out.iter_mut().zip(noise.as_array()) {
        if var > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            *value += var.sqrt() * z;
        }
    }
    let mut next = VehicleState::from_array(out);
    next.h = normalize_angle(next.h);
    next
}

/// Time-reverse a state: position unchanged, velocity negated, heading
/// mirrored (`h -> pi - h`, normalized).
pub fn reverse_state(s: VehicleState) -> VehicleState {
    VehicleState {
        x: s.x,
        y: s.y,
        vx: -s.vx,
        vy: -s.vy,
        h: normalize_angle(std::f64::consts::PI - s.h),
    }
}

/// Bearing and distance from a vehicle to a target position.
pub fn guidance(s: &VehicleState, target_xy: (f64, f64)) -> GuidanceFeatures {
    let dx = target_xy.0 - s.x;
    let dy = target_xy.1 - s.y;
    let l = dx.hypot(dy);
    let theta = if l == 0.0 { 0.0 } else { normalize_angle(dy.atan2(dx)) };
    GuidanceFeatures { theta, l }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    const ATAN_HALF: f64 = 0.463_647_609_000_806_1; // arctan(1/2)

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn slip_angle_examples() {
        assert_eq!(slip_angle(0.0).unwrap(), 0.0);
        assert_close(slip_angle(FRAC_PI_4).unwrap(), ATAN_HALF, 1e-12);
        assert_close(slip_angle(FRAC_PI_4).unwrap(), 0.5_f64.atan(), 1e-15);
        assert_close(slip_angle(-FRAC_PI_4).unwrap(), -ATAN_HALF, 1e-12);
    }

    #[test]
    fn slip_angle_domain_error() {
        assert!(slip_angle(FRAC_PI_2).is_err());
        assert!(slip_angle(-FRAC_PI_2).is_err());
        assert!(slip_angle(2.0).is_err());
    }

    #[test]
    fn slip_angle_odd_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let steer = -1.5 + 3.0 * i as f64 / 99.0;
            let b = slip_angle(steer).unwrap();
            assert_close(b, -slip_angle(-steer).unwrap(), 1e-15);
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn step_coast_straight_line() {
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let next = step_deterministic(s, ActionCommand::zero(), &p);
        assert_eq!(next.as_array(), [0.1, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn step_throttle_hand_evaluated() {
        // Position uses the current speed (1.0), throttle integrates to 1.1.
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let next = step_deterministic(s, ActionCommand::new(1.0, 0.0), &p);
        assert_close(next.x, 0.1, 1e-15);
        assert_close(next.y, 0.0, 1e-15);
        assert_close(next.vx, 1.1, 1e-12);
        assert_close(next.vy, 0.0, 1e-15);
        assert_close(next.h, 0.0, 1e-15);
    }

    #[test]
    fn step_steer_hand_evaluated() {
        // beta = arctan(0.5), position moves along h + beta, heading rate
        // v*sin(beta)/(L/2); speed magnitude preserved at zero throttle.
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let next = step_deterministic(s, ActionCommand::new(0.0, FRAC_PI_4), &p);
        assert_close(next.x, ATAN_HALF.cos() * 0.1, 1e-12);
        assert_close(next.x, 0.0894, 5e-5);
        assert_close(next.y, ATAN_HALF.sin() * 0.1, 1e-12);
        assert_close(next.y, 0.0447, 5e-5);
        assert_close(next.h, ATAN_HALF.sin() / 2.5 * 0.1, 1e-12);
        assert_close(next.h, 0.01789, 5e-6);
        assert_close(next.speed(), 1.0, 1e-12);
    }

    #[test]
    fn step_speed_clamped_at_v_max() {
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.0, 0.0, 9.99, 0.0, 0.0);
        let next = step_deterministic(s, ActionCommand::new(5.0, 0.0), &p);
        assert_close(next.vx, p.v_max, 1e-12);
    }

    #[test]
    fn stochastic_zero_covariance_matches_deterministic() {
        let p = DynamicsParams::default();
        let s = VehicleState::new(1.0, -2.0, 0.5, 0.1, 0.3);
        let a = ActionCommand::new(0.7, 0.1);
        let mut rng = rng_from_seed(3);
        let noisy = step_stochastic(s, a, &p, &NoiseCovariance::zero(), &mut rng);
        let det = step_deterministic(s, a, &p);
        assert_eq!(noisy.as_array(), det.as_array());
    }

    #[test]
    fn stochastic_seeded_determinism() {
        let p = DynamicsParams::default();
        let s = VehicleState::new(1.0, -2.0, 0.5, 0.1, 0.3);
        let a = ActionCommand::new(0.7, 0.1);
        let noise = NoiseCovariance::from_array([0.01, 0.01, 0.004, 0.004, 0.001]);
        let one = step_stochastic(s, a, &p, &noise, &mut rng_from_seed(42));
        let two = step_stochastic(s, a, &p, &noise, &mut rng_from_seed(42));
        assert_eq!(one.as_array(), two.as_array());
    }

    #[test]
    fn stochastic_monte_carlo_moments() {
        // Law-of-large-numbers oracle: mean within 3*sigma/sqrt(n) of the
        // deterministic step, variance within 10% of the configured value.
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let a = ActionCommand::zero();
        let noise = NoiseCovariance::from_array([0.01, 0.0, 0.0, 0.0, 0.0]);
        let det = step_deterministic(s, a, &p);
        let n = 100_000;
        let mut rng = rng_from_seed(7);
        let xs: Vec<f64> =
            (0..n).map(|_| step_stochastic(s, a, &p, &noise, &mut rng).x).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert_close(mean, det.x, 3.0 * 0.1 / (n as f64).sqrt());
        assert!((var - 0.01).abs() / 0.01 < 0.10, "variance {var}");
    }

    #[test]
    fn reverse_state_table_row() {
        // Input is a recorded next state; expected output negates velocity
        // and wraps pi - (-1.08) = 4.2216 to -2.0616.
        let s = VehicleState::new(3.96, -19.46, -0.86, 1.59, -1.08);
        let r = reverse_state(s);
        assert_eq!(r.x, 3.96);
        assert_eq!(r.y, -19.46);
        assert_close(r.vx, 0.86, 1e-15);
        assert_close(r.vy, -1.59, 1e-15);
        assert_close(r.h, PI + 1.08 - 2.0 * PI, 1e-12);
        assert_close(r.h, -2.0616, 1e-4);
    }

    #[test]
    fn reverse_state_fixed_point() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0, FRAC_PI_2);
        let r = reverse_state(s);
        assert_eq!(r.x, 0.0);
        assert_eq!(r.y, 0.0);
        assert_eq!(r.vx, 0.0);
        assert_eq!(r.vy, 0.0);
        assert_close(r.h, FRAC_PI_2, 1e-15);
    }

    #[test]
    fn guidance_examples() {
        // 3-4-5 triangle forces l = 5; bearing = atan2(-4, -3).
        let s = VehicleState::at_rest(3.0, 4.0, 0.0);
        let g = guidance(&s, (0.0, 0.0));
        assert_close(g.l, 5.0, 1e-12);
        assert_close(g.theta, (-4.0_f64).atan2(-3.0), 1e-15);
        assert_close(g.theta, -2.2143, 5e-5);

        let at_target = guidance(&VehicleState::at_rest(1.0, 2.0, 0.5), (1.0, 2.0));
        assert_eq!(at_target.l, 0.0);
        assert_eq!(at_target.theta, 0.0);

        let ahead = guidance(&VehicleState::at_rest(1.0, 2.0, 0.5), (4.0, 2.0));
        assert_eq!(ahead.theta, 0.0);
        assert_close(ahead.l, 3.0, 1e-12);
    }

    #[test]
    fn normalize_angle_range() {
        for i in -1000..1000 {
            let a = i as f64 * 0.1;
            let n = normalize_angle(a);
            assert!((-PI..PI).contains(&n), "{a} -> {n}");
            // Same angle modulo 2*pi.
            assert_close((a - n).rem_euclid(2.0 * PI).min(2.0 * PI - (a - n).rem_euclid(2.0 * PI)), 0.0, 1e-9);
        }
        assert_eq!(normalize_angle(PI), -PI);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = DynamicsParams::default();
        let s = VehicleState::new(0.4, -1.2, 1.8 * 0.93_f64.cos(), 1.8 * 0.93_f64.sin(), 0.93);
        let a = ActionCommand::new(1.3, 0.21);
        let jac = step_action_jacobian(s, a, &p);
        let h = 1e-6;
        for dim in 0..ACTION_DIM {
            let mut lo = a.as_array();
            let mut hi = a.as_array();
            lo[dim] -= h;
            hi[dim] += h;
            let f_lo = step_deterministic(s, ActionCommand::from_array(lo), &p).as_array();
            let f_hi = step_deterministic(s, ActionCommand::from_array(hi), &p).as_array();
            for e in 0..STATE_DIM {
                let fd = (f_hi[e] - f_lo[e]) / (2.0 * h);
                assert_close(jac[e][dim], fd, 1e-6);
            }
        }
    }
}
