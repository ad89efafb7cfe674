//! Deterministic integration and disease-outcome classification.
//!
//! The integrator is the Dormand-Prince 5(4) embedded pair with the usual
//! PI-free step controller. The exact flow keeps the state in the closed
//! positive orthant; any component pushed below zero by a step is clamped
//! after the step is accepted.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Rates, StateVec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-8,
            max_step: 5.0,
        }
    }
}

/// Accepted steps of one integration. `times` is strictly increasing and
/// `states[0]` is the initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub params: ModelParams,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn last(&self) -> StateVec {
        *self.states.last().expect("trajectory is never empty")
    }

    /// Linear interpolation between stored steps; clamps outside the span.
    pub fn state_at(&self, t: f64) -> StateVec {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let a = self.states[i - 1].to_vector();
        let b = self.states[i].to_vector();
        StateVec::from_vector(&(a + (b - a) * w))
    }

    /// Resamples the trajectory on an equally spaced grid.
    pub fn resample(&self, dt: f64) -> Vec<(f64, StateVec)> {
        let n = (self.t_end() / dt).round() as usize;
        (0..=n)
            .map(|i| {
                let t = (i as f64 * dt).min(self.t_end());
                (t, self.state_at(t))
            })
            .collect()
    }
}

// Dormand-Prince coefficients.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn rhs(y: &Vector4<f64>, params: &ModelParams) -> Vector4<f64> {
    Rates::compute(&StateVec::from_vector(y), params).drift(params)
}

fn combo(y: &Vector4<f64>, h: f64, coeffs: &[f64], k: &[Vector4<f64>]) -> Vector4<f64> {
    let mut acc = *y;
    for (a, ki) in coeffs.iter().zip(k) {
        if *a != 0.0 {
            acc += ki * (h * a);
        }
    }
    acc
}

/// Integrates the deterministic model from `init` over `[0, t_end]`.
pub fn integrate(
    init: StateVec,
    params: &ModelParams,
    t_end: f64,
    control: StepControl,
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
    }
    if !(control.rel_tol > 0.0 && control.abs_tol > 0.0 && control.max_step > 0.0) {
        return Err(Error::Domain("step control values must be positive".into()));
    }
    init.validate()?;
    params.validate()?;

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![init],
        params: *params,
    };
    let mut t = 0.0;
    let mut y = init.to_vector();
    let mut k1 = rhs(&y, params);

    let scale = |y0: &Vector4<f64>, y1: &Vector4<f64>, i: usize| {
        control.abs_tol + control.rel_tol * y0[i].abs().max(y1[i].abs())
    };

    // initial step from the local derivative scale
    let mut h = {
        let (mut d0, mut d1) = (0.0f64, 0.0f64);
        for i in 0..4 {
            let sc = scale(&y, &y, i);
            d0 += (y[i] / sc).powi(2);
            d1 += (k1[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / 4.0).sqrt(), (d1 / 4.0).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(control.max_step).min(t_end)
    };

    let h_min = |t: f64| 1e-12 * t.abs().max(1.0);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::IntegrationFailure {
                t,
                h,
                partial: Box::new(traj),
            });
        }
        h = h.min(t_end - t).min(control.max_step);
        let mut k = [Vector4::zeros(); 7];
        k[0] = k1;
        k[1] = rhs(&combo(&y, h, &A2, &k), params);
        k[2] = rhs(&combo(&y, h, &A3, &k), params);
        k[3] = rhs(&combo(&y, h, &A4, &k), params);
        k[4] = rhs(&combo(&y, h, &A5, &k), params);
        k[5] = rhs(&combo(&y, h, &A6, &k), params);
        let y_new = combo(&y, h, &B5, &k);
        k[6] = rhs(&y_new, params);

        let mut err = 0.0;
        for i in 0..4 {
            let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
            err += (e / scale(&y, &y_new, i)).powi(2);
        }
        let err = (err / 4.0).sqrt();

        if err <= 1.0 && y_new.iter().all(|v| v.is_finite()) {
            t = if t_end - (t + h) < h_min(t_end) { t_end } else { t + h };
            let clamped = y_new.map(|v| v.max(0.0));
            k1 = if clamped == y_new { k[6] } else { rhs(&clamped, params) };
            y = clamped;
            traj.times.push(t);
            traj.states.push(StateVec::from_vector(&y));
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= factor;
            if h < h_min(t) {
                return Err(Error::IntegrationFailure {
                    t,
                    h,
                    partial: Box::new(traj),
                });
            }
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Clearance,
    #[serde(rename = "LTBI")]
    Ltbi,
    ActiveDisease,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutcomeLabel {
    pub label: Outcome,
    pub terminal_state: StateVec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeThresholds {
    pub clearance_eps: f64,
    pub active_floor: f64,
    pub settle_window: f64,
}

impl Default for OutcomeThresholds {
    fn default() -> Self {
        Self {
            clearance_eps: 1e-2,
            active_floor: 1e6,
            settle_window: 100.0,
        }
    }
}

/// Labels the end of a trajectory as clearance, latent infection or active
/// disease by looking at the last `settle_window` days.
pub fn classify_outcome(traj: &Trajectory, th: OutcomeThresholds) -> Result<OutcomeLabel> {
    let span = traj.t_end() - traj.times[0];
    if span < th.settle_window {
        return Err(Error::Domain(format!(
            "trajectory spans {span} days, shorter than the {} day window",
            th.settle_window
        )));
    }
    let start = traj.t_end() - th.settle_window;
    let first = traj.times.partition_point(|&t| t < start);
    let window = &traj.states[first..];

    let max_b = window.iter().map(|s| s.bacteria).fold(f64::MIN, f64::max);
    let min_b = window.iter().map(|s| s.bacteria).fold(f64::MAX, f64::min);
    let max_mi = window.iter().map(|s| s.infected).fold(f64::MIN, f64::max);

    let label = if max_b.max(max_mi) < th.clearance_eps {
        Outcome::Clearance
    } else if min_b > th.active_floor {
        Outcome::ActiveDisease
    } else {
        let mean_b = window.iter().map(|s| s.bacteria).sum::<f64>() / window.len() as f64;
        let settled = mean_b > 0.0 && (max_b - min_b) / mean_b < 1e-3;
        if settled && min_b > th.clearance_eps && max_b < th.active_floor {
            Outcome::Ltbi
        } else {
            Outcome::Undetermined
        }
    };
    Ok(OutcomeLabel {
        label,
        terminal_state: traj.last(),
    })
}
