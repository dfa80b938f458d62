// SPDX-License-Identifier: Apache-2.0

//! Time-domain simulation of feedforward plus PID control on the perturbed
//! plant, with a continuous or a sampled-data controller.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, Matrix3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::eigenvalues;
use crate::expm::expm;
use crate::lmi::PidGains;
use crate::model::{feedforward, scurve_matrices, ModelError, ReferenceSample, SCurveSpec, SecondOrderPlant};

/// Positions beyond this (m) are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidConfig(&'static str),
    /// RK4 is unstable for the fastest closed-loop mode at this step.
    StepSizeViolation {
        dt: f64,
        max_stable_dt: f64,
    },
    Diverged {
        time: f64,
    },
    EmptySeries,
    Model(ModelError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(why) => write!(f, "invalid simulation config: {why}"),
            Self::StepSizeViolation { dt, max_stable_dt } => write!(
                f,
                "integration step {dt:e} s exceeds the RK4 stability limit {max_stable_dt:e} s of the closed loop"
            ),
            Self::Diverged { time } => write!(f, "simulation diverged at t = {time} s"),
            Self::EmptySeries => write!(f, "series is empty"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// PID evaluated on the exact state at every RK4 stage.
    Continuous,
    /// PID evaluated at `sample_hz`, held in between; Tustin integral and
    /// Tustin-discretized derivative filter.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    pub true_dm: f64,
    pub true_dd: f64,
    /// Uniform force noise amplitude, redrawn each controller tick. 0 disables.
    pub force_noise_amp: f64,
    pub seed: u64,
    pub controller_mode: ControllerMode,
    pub sample_hz: f64,
    pub deriv_filter_pole: f64,
    /// Feedforward ablation switch.
    pub feedforward: bool,
    pub initial_integrator: f64,
    /// Record every n-th integration step (the final step is always kept).
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 3.0,
            dt: 1e-5,
            true_dm: 0.0,
            true_dd: 0.0,
            force_noise_amp: 0.0,
            seed: 0,
            controller_mode: ControllerMode::Continuous,
            sample_hz: 2500.0,
            deriv_filter_pole: 100.0,
            feedforward: true,
            initial_integrator: 0.0,
            record_stride: 1,
        }
    }
}

impl SimConfig {
    /// Integration steps per controller tick.
    pub fn steps_per_tick(&self) -> Result<usize, SimError> {
        let ratio = 1.0 / (self.sample_hz * self.dt);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * ratio {
            return Err(SimError::InvalidConfig("1/(sample_hz·dt) must be a whole number of steps"));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite = [
            self.duration,
            self.dt,
            self.true_dm,
            self.true_dd,
            self.force_noise_amp,
            self.sample_hz,
            self.deriv_filter_pole,
            self.initial_integrator,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig("all numeric fields must be finite"));
        }
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive"));
        }
        if self.duration < self.dt {
            return Err(SimError::InvalidConfig("duration must be at least dt"));
        }
        if 1.0 + self.true_dm <= 0.0 {
            return Err(SimError::InvalidConfig("1 + true_dm must be positive"));
        }
        if self.force_noise_amp < 0.0 {
            return Err(SimError::InvalidConfig("force_noise_amp must be nonnegative"));
        }
        if !(self.sample_hz > 0.0) || !(self.deriv_filter_pole > 0.0) {
            return Err(SimError::InvalidConfig("sample_hz and deriv_filter_pole must be positive"));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidConfig("record_stride must be positive"));
        }
        if self.controller_mode == ControllerMode::Sampled && self.dt > 1.0 / (10.0 * self.sample_hz) {
            return Err(SimError::InvalidConfig("sampled mode needs dt ≤ 1/(10·sample_hz)"));
        }
        self.steps_per_tick()?;
        Ok(())
    }
}

/// Simulation samples, one entry per recorded step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub e: Vec<f64>,
    pub edot: Vec<f64>,
    pub u_ff: Vec<f64>,
    pub u_fb: Vec<f64>,
    /// Exact in continuous mode; backward difference of the held command
    /// over one controller period in sampled mode.
    pub udot_fb: Vec<f64>,
    pub w: Vec<f64>,
    /// Spacing of recorded samples.
    pub sample_dt: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_abs_error(&self) -> f64 {
        self.e.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Largest `|e|` over samples with `t ≥ from`.
    pub fn max_abs_error_after(&self, from: f64) -> f64 {
        self.t.iter().zip(&self.e).filter(|(t, _)| **t >= from).fold(0.0f64, |a, (_, e)| a.max(e.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsSummary {
    pub rms_e: f64,
    pub rms_edot: f64,
    /// Lumped input units per second.
    pub rms_udotfb: f64,
}

/// `sqrt(mean(x²))`.
pub fn rms(series: &[f64]) -> Result<f64, SimError> {
    if series.is_empty() {
        return Err(SimError::EmptySeries);
    }
    let ss: f64 = series.iter().map(|v| v * v).sum();
    Ok((ss / series.len() as f64).sqrt())
}

/// `p·s/(s + p)` discretized by the bilinear transform at step `h`, zero
/// initial state.
pub fn filtered_derivative(series: &[f64], pole: f64, h: f64) -> Vec<f64> {
    let a = (2.0 - pole * h) / (2.0 + pole * h);
    let b = 2.0 * pole / (2.0 + pole * h);
    let mut out = Vec::with_capacity(series.len());
    let mut prev_x = series.first().copied().unwrap_or(0.0);
    let mut state = 0.0;
    for &x in series {
        state = a * state + b * (x - prev_x);
        prev_x = x;
        out.push(state);
    }
    out
}

/// RMS of `e` and of the filtered derivatives of `e` and `u_fb`.
pub fn summarize(trace: &Trace, filter_pole: f64) -> Result<RmsSummary, SimError> {
    let h = trace.sample_dt;
    Ok(RmsSummary {
        rms_e: rms(&trace.e)?,
        rms_edot: rms(&filtered_derivative(&trace.e, filter_pole, h))?,
        rms_udotfb: rms(&filtered_derivative(&trace.u_fb, filter_pole, h))?,
    })
}

/// RK4 amplification factor `1 + z + z²/2 + z³/6 + z⁴/24`.
fn rk4_gain(re: f64, im: f64) -> f64 {
    // Horner in complex arithmetic.
    let coeffs = [1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0, 1.0];
    let (mut pr, mut pi) = (0.0, 0.0);
    for c in coeffs {
        let nr = pr * re - pi * im + c;
        let ni = pr * im + pi * re;
        pr = nr;
        pi = ni;
    }
    (pr * pr + pi * pi).sqrt()
}

/// Largest step, by halving from `dt`, for which every eigenvalue of `a`
/// lies in the RK4 stability region.
fn rk4_stable_step(a: &DMatrix<f64>, dt: f64) -> Result<f64, SimError> {
    let eig = eigenvalues(a).map_err(|_| SimError::InvalidConfig("closed-loop eigenvalues failed"))?;
    let ok = |h: f64| eig.iter().all(|z| rk4_gain(z.re * h, z.im * h) <= 1.0 + 1e-12);
    let mut h = dt;
    while !ok(h) {
        h *= 0.5;
        if h < f64::MIN_POSITIVE {
            break;
        }
    }
    Ok(h)
}

struct RefStepper {
    phi_half: Matrix3<f64>,
    rho: Vector3<f64>,
    spec: SCurveSpec,
}

impl RefStepper {
    fn new(spec: &SCurveSpec, dt: f64) -> Result<Self, SimError> {
        let (az, _) = scurve_matrices(spec);
        let phi_half = expm(&(az * (0.5 * dt))).ok_or(ModelError::NonFinite("transition matrix"))?;
        Ok(Self { phi_half, rho: Vector3::from(spec.rho0), spec: *spec })
    }

    /// Samples at `t`, `t + dt/2`, `t + dt`, then advances to `t + dt`.
    fn step(&mut self) -> [ReferenceSample; 3] {
        let now = ReferenceSample::from_state(&self.spec, &self.rho);
        let half = self.phi_half * self.rho;
        let next = self.phi_half * half;
        self.rho = next;
        [now, ReferenceSample::from_state(&self.spec, &half), ReferenceSample::from_state(&self.spec, &next)]
    }

    fn current(&self) -> ReferenceSample {
        ReferenceSample::from_state(&self.spec, &self.rho)
    }
}

struct Loop {
    mass: f64,
    damping: f64,
    nominal: SecondOrderPlant,
    pid: PidGains,
    feedforward: bool,
}

impl Loop {
    fn u_ff(&self, r: &ReferenceSample) -> f64 {
        if self.feedforward {
            feedforward(&self.nominal, r.rd, r.rdd)
        } else {
            0.0
        }
    }

    fn accel(&self, yd: f64, u: f64) -> f64 {
        (u - self.damping * yd) / self.mass
    }

    /// `[y', y'', ie']` with the PID acting on the exact error.
    fn continuous_rhs(&self, s: &Vector3<f64>, r: &ReferenceSample, w: f64) -> Vector3<f64> {
        let (e, ed) = (r.r - s[0], r.rd - s[1]);
        let u_fb = self.pid.kp * e + self.pid.ki * s[2] + self.pid.kd * ed;
        Vector3::new(s[1], self.accel(s[1], self.u_ff(r) + u_fb + w), e)
    }

    /// `[y', y'', 0]` with a held feedback command.
    fn held_rhs(&self, s: &Vector3<f64>, r: &ReferenceSample, u_fb: f64, w: f64) -> Vector3<f64> {
        Vector3::new(s[1], self.accel(s[1], self.u_ff(r) + u_fb + w), 0.0)
    }
}

fn rk4(f: impl Fn(&Vector3<f64>, usize) -> Vector3<f64>, s: &Vector3<f64>, h: f64) -> Vector3<f64> {
    let k1 = f(s, 0);
    let k2 = f(&(s + k1 * (0.5 * h)), 1);
    let k3 = f(&(s + k2 * (0.5 * h)), 1);
    let k4 = f(&(s + k3 * h), 2);
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Tustin PID with the filtered differentiator.
struct DigitalPid {
    gains: PidGains,
    ts: f64,
    a: f64,
    b: f64,
    integral: f64,
    deriv: f64,
    prev_e: Option<f64>,
}

impl DigitalPid {
    fn new(gains: PidGains, ts: f64, pole: f64, integral: f64) -> Self {
        Self {
            gains,
            ts,
            a: (2.0 - pole * ts) / (2.0 + pole * ts),
            b: 2.0 * pole / (2.0 + pole * ts),
            integral,
            deriv: 0.0,
            prev_e: None,
        }
    }

    fn update(&mut self, e: f64) -> f64 {
        let prev = self.prev_e.unwrap_or(e);
        self.integral += 0.5 * self.ts * (e + prev);
        self.deriv = self.a * self.deriv + self.b * (e - prev);
        self.prev_e = Some(e);
        self.gains.kp * e + self.gains.ki * self.integral + self.gains.kd * self.deriv
    }
}

/// Runs the loop from rest at `y = ẏ = 0`.
pub fn simulate(
    nominal: &SecondOrderPlant,
    cfg: &SimConfig,
    spec: &SCurveSpec,
    pid: PidGains,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    spec.validate()?;
    let truth = nominal.perturbed(cfg.true_dm, cfg.true_dd)?;
    let lp =
        Loop { mass: truth.mass(), damping: truth.damping(), nominal: *nominal, pid, feedforward: cfg.feedforward };

    let (m, d) = (lp.mass, lp.damping);
    let dynamics = match cfg.controller_mode {
        ControllerMode::Continuous => {
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -pid.kp / m, -(pid.kd + d) / m, pid.ki / m, -1.0, 0.0, 0.0])
        }
        ControllerMode::Sampled => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -d / m]),
    };
    let max_stable_dt = rk4_stable_step(&dynamics, cfg.dt)?;
    if max_stable_dt < cfg.dt {
        return Err(SimError::StepSizeViolation { dt: cfg.dt, max_stable_dt });
    }

    let steps = (cfg.duration / cfg.dt).round() as usize;
    let per_tick = cfg.steps_per_tick()?;
    let ts = per_tick as f64 * cfg.dt;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |amp: f64| if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };

    let mut reference = RefStepper::new(spec, cfg.dt)?;
    let mut state = Vector3::new(0.0, 0.0, cfg.initial_integrator);
    let mut digital = DigitalPid::new(pid, ts, cfg.deriv_filter_pole, cfg.initial_integrator);
    let mut held = 0.0;
    let mut prev_held = 0.0;
    let mut w = 0.0;

    let capacity = steps / cfg.record_stride + 2;
    let mut tr = Trace { sample_dt: cfg.dt * cfg.record_stride as f64, ..Trace::default() };
    for v in [
        &mut tr.t,
        &mut tr.r,
        &mut tr.y,
        &mut tr.e,
        &mut tr.edot,
        &mut tr.u_ff,
        &mut tr.u_fb,
        &mut tr.udot_fb,
        &mut tr.w,
    ] {
        v.reserve(capacity);
    }

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let r = reference.current();
        if k % per_tick == 0 {
            w = draw(cfg.force_noise_amp);
            if cfg.controller_mode == ControllerMode::Sampled {
                prev_held = held;
                held = digital.update(r.r - state[0]);
                if k == 0 {
                    prev_held = held;
                }
            }
        }
        let (e, ed) = (r.r - state[0], r.rd - state[1]);
        let u_ff = lp.u_ff(&r);
        let (u_fb, udot_fb) = match cfg.controller_mode {
            ControllerMode::Continuous => {
                let u_fb = pid.kp * e + pid.ki * state[2] + pid.kd * ed;
                let ydd = lp.accel(state[1], u_ff + u_fb + w);
                (u_fb, pid.kp * ed + pid.ki * e + pid.kd * (r.rdd - ydd))
            }
            ControllerMode::Sampled => (held, (held - prev_held) / ts),
        };
        if k % cfg.record_stride == 0 || k == steps {
            tr.t.push(t);
            tr.r.push(r.r);
            tr.y.push(state[0]);
            tr.e.push(e);
            tr.edot.push(ed);
            tr.u_ff.push(u_ff);
            tr.u_fb.push(u_fb);
            tr.udot_fb.push(udot_fb);
            tr.w.push(w);
        }
        if k == steps {
            break;
        }

        let refs = reference.step();
        state = match cfg.controller_mode {
            ControllerMode::Continuous => rk4(|s, i| lp.continuous_rhs(s, &refs[i], w), &state, cfg.dt),
            ControllerMode::Sampled => rk4(|s, i| lp.held_rhs(s, &refs[i], held, w), &state, cfg.dt),
        };
        if state.iter().any(|v| !v.is_finite()) || state[0].abs() > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { time: t + cfg.dt });
        }
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn published_pid() -> PidGains {
        PidGains { kp: 47.71, ki: 1664.71, kd: 0.50 }
    }

    fn short(mode: ControllerMode) -> SimConfig {
        SimConfig { duration: 0.5, controller_mode: mode, ..SimConfig::default() }
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&[2.5; 7]).unwrap(), 2.5);
        assert!((rms(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        let n = 1000;
        let sine: Vec<f64> = (0..n).map(|k| 3.0 * (2.0 * PI * 5.0 * k as f64 / n as f64).sin()).collect();
        assert!((rms(&sine).unwrap() - 3.0 / 2f64.sqrt()).abs() < 1e-6);
        assert_eq!(rms(&[]), Err(SimError::EmptySeries));
    }

    #[test]
    fn rest_stays_at_rest() {
        let spec = SCurveSpec::new([-125.0, -75.0, -15.0], [0.0; 3], 0.0).unwrap();
        for mode in [ControllerMode::Continuous, ControllerMode::Sampled] {
            let tr = simulate(&SecondOrderPlant::maglev_x_axis(), &short(mode), &spec, published_pid()).unwrap();
            assert!(tr.y.iter().chain(&tr.u_fb).chain(&tr.u_ff).all(|v| *v == 0.0));
            let s = summarize(&tr, 100.0).unwrap();
            assert_eq!((s.rms_e, s.rms_edot, s.rms_udotfb), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn error_is_reference_minus_output() {
        let cfg = SimConfig { true_dm: 0.3, true_dd: -0.3, force_noise_amp: 0.05, ..short(ControllerMode::Sampled) };
        let tr =
            simulate(&SecondOrderPlant::maglev_x_axis(), &cfg, &SCurveSpec::maglev_default(), published_pid()).unwrap();
        for i in 0..tr.len() {
            assert_eq!(tr.e[i], tr.r[i] - tr.y[i]);
        }
    }

    #[test]
    fn continuous_pid_identity() {
        let cfg = SimConfig { true_dm: 0.3, true_dd: 0.3, ..short(ControllerMode::Continuous) };
        let pid = published_pid();
        let tr = simulate(&SecondOrderPlant::maglev_x_axis(), &cfg, &SCurveSpec::maglev_default(), pid).unwrap();
        // Trapezoid integral of e reproduces the integrator to O(dt²).
        let mut ie = 0.0;
        for i in 0..tr.len() {
            if i > 0 {
                ie += 0.5 * cfg.dt * (tr.e[i] + tr.e[i - 1]);
            }
            let expect = pid.kp * tr.e[i] + pid.ki * ie + pid.kd * tr.edot[i];
            assert!((tr.u_fb[i] - expect).abs() <= 1e-9 * (1.0 + tr.u_fb[i].abs()) + 1e-12, "{i}");
        }
    }

    #[test]
    fn determinism() {
        let cfg = SimConfig { force_noise_amp: 0.05, seed: 11, ..short(ControllerMode::Sampled) };
        let run = || simulate(&SecondOrderPlant::maglev_x_axis(), &cfg, &SCurveSpec::maglev_default(), published_pid());
        assert_eq!(run().unwrap(), run().unwrap());
    }

    #[test]
    fn config_validation() {
        let p = SecondOrderPlant::maglev_x_axis();
        let s = SCurveSpec::maglev_default();
        let bad = [
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { duration: 1e-6, ..SimConfig::default() },
            SimConfig { dt: 1e-4, controller_mode: ControllerMode::Sampled, ..SimConfig::default() },
            SimConfig { dt: 3e-5, ..SimConfig::default() },
            SimConfig { true_dm: -1.0, ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(simulate(&p, &cfg, &s, published_pid()), Err(SimError::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn stiff_gain_is_a_step_size_violation() {
        let pid = PidGains { kp: 1.0, ki: 0.0, kd: 1e3 };
        let r = simulate(
            &SecondOrderPlant::maglev_x_axis(),
            &short(ControllerMode::Continuous),
            &SCurveSpec::maglev_default(),
            pid,
        );
        assert!(matches!(r, Err(SimError::StepSizeViolation { .. })), "{r:?}");
    }

    #[test]
    fn unstable_sampled_loop_diverges() {
        // A sign-flipped derivative gain destabilizes the loop.
        let pid = PidGains { kp: 47.71, ki: 1664.71, kd: -0.5 };
        let cfg = SimConfig { duration: 3.0, ..short(ControllerMode::Sampled) };
        let r = simulate(&SecondOrderPlant::maglev_x_axis(), &cfg, &SCurveSpec::maglev_default(), pid);
        assert!(matches!(r, Err(SimError::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn filtered_derivative_of_ramp() {
        let h = 1e-4;
        let ramp: Vec<f64> = (0..100_000).map(|k| 2.0 * k as f64 * h).collect();
        let d = filtered_derivative(&ramp, 100.0, h);
        assert!((d.last().unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(filtered_derivative(&[], 100.0, h), vec![]);
    }

    #[test]
    fn rk4_region_edge() {
        assert!(rk4_gain(-2.7, 0.0) < 1.0);
        assert!(rk4_gain(-2.8, 0.0) > 1.0);
        assert!(rk4_gain(0.0, 2.8) < 1.0);
    }
}
