//! Point-mass descent trajectory with quadratic drag, integrated with
//! classical fixed-step RK4.
//!
//! The vehicle starts at `initial_altitude` with a downward flight-path
//! angle, falls through an exponential atmosphere carrying a sinusoidal
//! density perturbation, and deploys a drag device at `deploy_altitude`.
//! Altitude crossings (deployment, reference altitude, ground) are located
//! inside the step with cubic Hermite interpolation, so the only
//! step-size dependence left is the integrator error itself.

use serde::{Deserialize, Serialize};

/// Number of uncertain inputs consumed by [`simulate`].
pub const INPUT_DIM: usize = 5;

/// Physical constants of the benchmark trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub gravity: f64,
    pub initial_altitude: f64,
    pub scale_height: f64,
    /// Reference area over mass before deployment, m^2/kg.
    pub area_to_mass: f64,
    pub deploy_altitude: f64,
    /// Multiplier applied to `area_to_mass` after deployment.
    pub deploy_area_ratio: f64,
    /// Relative amplitude of the density perturbation.
    pub wave_amplitude: f64,
    pub wave_length: f64,
    /// Altitude at which the descent speed is reported.
    pub reference_altitude: f64,
    /// Integration is abandoned past this simulated time.
    pub max_time: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            initial_altitude: 300.0,
            scale_height: 400.0,
            area_to_mass: 0.007,
            deploy_altitude: 150.0,
            deploy_area_ratio: 4.0,
            wave_amplitude: 0.8,
            wave_length: 200.0,
            reference_altitude: 100.0,
            max_time: 200.0,
        }
    }
}

/// Atmosphere used by a model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Atmosphere {
    /// Exponential profile with the density perturbation.
    Full,
    /// Density held at its sea-level value.
    ConstantDensity,
}

/// Uncertain inputs of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryInput {
    pub speed: f64,
    /// Flight-path angle below the horizon, degrees.
    pub path_angle_deg: f64,
    pub drag_coefficient: f64,
    pub surface_density: f64,
    /// Phase of the density perturbation, radians.
    pub wave_phase: f64,
}

impl TrajectoryInput {
    pub fn from_slice(z: &[f64]) -> Self {
        Self {
            speed: z[0],
            path_angle_deg: z[1],
            drag_coefficient: z[2],
            surface_density: z[3],
            wave_phase: z[4],
        }
    }
}

/// Quantities recorded along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome {
    pub time_of_flight: f64,
    pub landing_range: f64,
    pub speed_at_reference: f64,
    pub steps: usize,
}

impl TrajectoryOutcome {
    fn failed(steps: usize) -> Self {
        Self {
            time_of_flight: f64::NAN,
            landing_range: f64::NAN,
            speed_at_reference: f64::NAN,
            steps,
        }
    }
}

// state = [x, h, u, w]
type State = [f64; 4];

struct Dynamics<'a> {
    params: &'a TrajectoryParams,
    input: &'a TrajectoryInput,
    atmosphere: Atmosphere,
    area_to_mass: f64,
}

impl Dynamics<'_> {
    #[inline]
    fn density(&self, h: f64) -> f64 {
        match self.atmosphere {
            Atmosphere::ConstantDensity => self.input.surface_density,
            Atmosphere::Full => {
                let p = self.params;
                let wave = 1.0
                    + p.wave_amplitude
                        * (std::f64::consts::TAU * h / p.wave_length + self.input.wave_phase).sin();
                self.input.surface_density * (-h / p.scale_height).exp() * wave
            }
        }
    }

    #[inline]
    fn rate(&self, s: &State) -> State {
        let speed = (s[2] * s[2] + s[3] * s[3]).sqrt();
        let k = 0.5 * self.density(s[1]) * self.input.drag_coefficient * self.area_to_mass * speed;
        [s[2], s[3], -k * s[2], -self.params.gravity - k * s[3]]
    }

    #[inline]
    fn rk4_step(&self, s: &State, dt: f64) -> State {
        let k1 = self.rate(s);
        let k2 = self.rate(&axpy(s, 0.5 * dt, &k1));
        let k3 = self.rate(&axpy(s, 0.5 * dt, &k2));
        let k4 = self.rate(&axpy(s, dt, &k3));
        let mut out = *s;
        for i in 0..4 {
            out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

#[inline]
fn axpy(s: &State, a: f64, d: &State) -> State {
    [s[0] + a * d[0], s[1] + a * d[1], s[2] + a * d[2], s[3] + a * d[3]]
}

/// Cubic Hermite interpolant on one step, `theta` in [0, 1].
#[inline]
fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, dt: f64, theta: f64) -> f64 {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + theta) * dt * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * dt * d1
}

/// Fraction of the step at which the interpolated altitude reaches `level`.
fn crossing(s0: &State, r0: &State, s1: &State, r1: &State, dt: f64, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut theta = (s0[1] - level) / (s0[1] - s1[1]);
    for _ in 0..60 {
        let h = hermite(s0[1], r0[1], s1[1], r1[1], dt, theta) - level;
        if h > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let dh = {
            let t = theta;
            (6.0 * t * t - 6.0 * t) * s0[1]
                + (3.0 * t * t - 4.0 * t + 1.0) * dt * r0[1]
                + (-6.0 * t * t + 6.0 * t) * s1[1]
                + (3.0 * t * t - 2.0 * t) * dt * r1[1]
        };
        let newton = theta - h / dh;
        let next = if dh < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - theta).abs() < 1e-15 {
            return next;
        }
        theta = next;
    }
    theta
}

fn interpolate(s0: &State, r0: &State, s1: &State, r1: &State, dt: f64, theta: f64) -> State {
    std::array::from_fn(|i| hermite(s0[i], r0[i], s1[i], r1[i], dt, theta))
}

/// Integrates one trajectory with step `dt` until ground impact.
///
/// The deployment event is located inside the step by cubic Hermite
/// interpolation; the step is then redone up to the event so the drag
/// switch happens at the right altitude. Returns NaN outcomes when the
/// integration diverges or exceeds `max_time`.
pub fn simulate(
    params: &TrajectoryParams,
    input: &TrajectoryInput,
    atmosphere: Atmosphere,
    dt: f64,
) -> TrajectoryOutcome {
    let gamma = input.path_angle_deg.to_radians();
    let mut state: State = [
        0.0,
        params.initial_altitude,
        input.speed * gamma.cos(),
        -input.speed * gamma.sin(),
    ];
    let mut dynamics = Dynamics {
        params,
        input,
        atmosphere,
        area_to_mass: params.area_to_mass,
    };
    let mut deployed = state[1] <= params.deploy_altitude;
    if deployed {
        dynamics.area_to_mass = params.area_to_mass * params.deploy_area_ratio;
    }
    let mut speed_at_reference = f64::NAN;
    let mut t = 0.0;
    let max_steps = (params.max_time / dt).ceil() as usize + 1;

    for step in 1..=max_steps {
        let rate = dynamics.rate(&state);
        let mut next = dynamics.rk4_step(&state, dt);
        if !next.iter().all(|v| v.is_finite()) {
            return TrajectoryOutcome::failed(step);
        }
        let mut h = dt;
        let mut deploy_now = false;
        if !deployed && next[1] <= params.deploy_altitude {
            deploy_now = true;
            let next_rate = dynamics.rate(&next);
            let theta = crossing(&state, &rate, &next, &next_rate, dt, params.deploy_altitude);
            h = theta * dt;
            next = dynamics.rk4_step(&state, h);
        }
        let next_rate = dynamics.rate(&next);
        if speed_at_reference.is_nan() && next[1] <= params.reference_altitude {
            let theta = crossing(&state, &rate, &next, &next_rate, h, params.reference_altitude);
            let at = interpolate(&state, &rate, &next, &next_rate, h, theta);
            speed_at_reference = at[2].hypot(at[3]);
        }
        if next[1] <= 0.0 {
            let theta = crossing(&state, &rate, &next, &next_rate, h, 0.0);
            let at = interpolate(&state, &rate, &next, &next_rate, h, theta);
            return TrajectoryOutcome {
                time_of_flight: t + theta * h,
                landing_range: at[0],
                speed_at_reference,
                steps: step,
            };
        }
        state = next;
        t += h;
        if t > params.max_time {
            break;
        }
        if deploy_now {
            deployed = true;
            dynamics.area_to_mass = params.area_to_mass * params.deploy_area_ratio;
        }
    }
    TrajectoryOutcome::failed(max_steps)
}
