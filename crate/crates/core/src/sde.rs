//! Euler-Maruyama simulation of the Ito models with demographic noise and
//! with demographic plus environmental (mean-reverting parameter) noise.
//!
//! Noise streams: each path owns two ChaCha8 streams derived from the run
//! seed, stream `2 * path` for the eleven demographic channels and stream
//! `2 * path + 1` for the four parameter channels. Every step consumes
//! eleven normals from the first and, in the environmental model, four from
//! the second, so a demographic run and an environmental run with frozen
//! parameters see identical demographic noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamName, Rates, StateVec, N_EVENTS};

/// Lower bound of a parameter process, relative to its target mean.
pub const PARAM_FLOOR: f64 = 1e-12;

/// Parameters driven by mean-reverting processes, in channel order.
pub const ENV_TARGETS: [ParamName; 4] = [ParamName::Delta, ParamName::B, ParamName::Gamma, ParamName::Eta];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvChannel {
    /// Return rate to the target mean (1/day).
    pub alpha: f64,
    /// Volatility (1/sqrt(day)).
    pub sigma: f64,
    /// Target mean.
    pub c_s: f64,
    /// Initial value.
    pub c_0: f64,
}

impl EnvChannel {
    pub fn asymptotic_variance(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        if self.alpha > 0.5 * s2 {
            self.c_s * self.c_s * s2 / (2.0 * self.alpha - s2)
        } else {
            f64::INFINITY
        }
    }
}

/// Mean-reverting processes `dC = alpha (C_s - C) dt + sigma C dW` for
/// delta, b, gamma and eta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvProcessParams {
    pub delta: EnvChannel,
    pub b: EnvChannel,
    pub gamma: EnvChannel,
    pub eta: EnvChannel,
}

impl EnvProcessParams {
    /// Same return rate and volatility on every channel, with targets and
    /// initial values taken from `params`.
    pub fn uniform(params: &ModelParams, alpha: f64, sigma: f64) -> Self {
        let ch = |v: f64| EnvChannel {
            alpha,
            sigma,
            c_s: v,
            c_0: v,
        };
        Self {
            delta: ch(params.delta),
            b: ch(params.b),
            gamma: ch(params.gamma),
            eta: ch(params.eta),
        }
    }

    pub fn channels(&self) -> [EnvChannel; 4] {
        [self.delta, self.b, self.gamma, self.eta]
    }

    pub fn initial_values(&self) -> [f64; 4] {
        self.channels().map(|c| c.c_0)
    }

    /// All rates, volatilities and levels positive (a volatility of zero is
    /// allowed). With `finite_variance`, also `alpha > sigma^2 / 2`.
    pub fn validate(&self, finite_variance: bool) -> Result<()> {
        for (name, ch) in ENV_TARGETS.iter().zip(self.channels()) {
            let bad = |reason: &'static str, value: f64| Error::InvalidParameter {
                name: name.as_str(),
                value,
                reason,
            };
            if !(ch.alpha > 0.0 && ch.alpha.is_finite()) {
                return Err(bad("return rate must be positive", ch.alpha));
            }
            if !(ch.sigma >= 0.0 && ch.sigma.is_finite()) {
                return Err(bad("volatility must be nonnegative", ch.sigma));
            }
            if !(ch.c_s > 0.0 && ch.c_s.is_finite()) {
                return Err(bad("target mean must be positive", ch.c_s));
            }
            if !(ch.c_0 > 0.0 && ch.c_0.is_finite()) {
                return Err(bad("initial value must be positive", ch.c_0));
            }
            if finite_variance && ch.alpha <= 0.5 * ch.sigma * ch.sigma {
                return Err(bad("return rate must exceed sigma^2/2", ch.alpha));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuMoments {
    pub mean: f64,
    /// `f64::INFINITY` when `alpha <= sigma^2 / 2`.
    pub variance: f64,
}

/// Long-run mean and variance of each parameter process.
pub fn ou_asymptotic_moments(env: &EnvProcessParams) -> [OuMoments; 4] {
    env.channels().map(|c| OuMoments {
        mean: c.c_s,
        variance: c.asymptotic_variance(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    Demographic,
    Environmental,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded samples.
    pub record_stride: usize,
    pub seed: u64,
    pub model: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvProcessParams>,
}

impl SimConfig {
    pub fn demographic(dt: f64, t_end: f64, record_stride: usize, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            record_stride,
            seed,
            model: NoiseModel::Demographic,
            env: None,
        }
    }

    pub fn environmental(dt: f64, t_end: f64, record_stride: usize, seed: u64, env: EnvProcessParams) -> Self {
        Self {
            model: NoiseModel::Environmental,
            env: Some(env),
            ..Self::demographic(dt, t_end, record_stride, seed)
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Step indices at which samples are recorded.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut v: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *v.last().unwrap() != n {
            v.push(n);
        }
        v
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record_steps().into_iter().map(|k| k as f64 * self.dt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("t_end = {} must be at least dt", self.t_end)));
        }
        if self.record_stride == 0 {
            return Err(Error::Domain("record_stride must be at least 1".into()));
        }
        match (self.model, &self.env) {
            (NoiseModel::Environmental, None) => {
                Err(Error::Domain("environmental model needs env process parameters".into()))
            }
            (NoiseModel::Environmental, Some(env)) => env.validate(false),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    /// (delta, b, gamma, eta) at each recorded time, environmental model only.
    pub env_values: Option<Vec<[f64; 4]>>,
    /// First time with M_i = B = 0.
    pub absorbed_at: Option<f64>,
    /// First time with B = 0.
    pub b_zero_at: Option<f64>,
    /// Time of a non-finite step; the path stops there.
    pub failed_at: Option<f64>,
}

/// One Euler-Maruyama step of the demographic model, clamped at zero.
pub fn em_step_demographic(
    state: &StateVec,
    params: &ModelParams,
    dt: f64,
    noise: &[f64; N_EVENTS],
) -> Result<StateVec> {
    let rates = Rates::compute(state, params);
    let drift = rates.drift(params);
    let xi = nalgebra::SVector::<f64, N_EVENTS>::from_column_slice(noise);
    let next = state.to_vector() + drift * dt + rates.diffusion(params) * xi * dt.sqrt();
    let next = StateVec::from_vector(&next);
    if !next.is_finite() {
        return Err(Error::StepOverflow { t: f64::NAN });
    }
    Ok(next.clamped())
}

fn with_live(base: &ModelParams, live: &[f64; 4]) -> ModelParams {
    let mut p = *base;
    for (name, v) in ENV_TARGETS.iter().zip(live) {
        p.set(*name, *v);
    }
    p
}

/// One step of the model with environmental noise. Channels 0..11 drive the
/// cell state, 11..15 the parameter processes. The cell step uses the
/// parameter values from before the step.
pub fn em_step_environmental(
    state: &StateVec,
    live: &[f64; 4],
    base: &ModelParams,
    env: &EnvProcessParams,
    dt: f64,
    noise: &[f64; 15],
) -> Result<(StateVec, [f64; 4])> {
    let demo: &[f64; N_EVENTS] = noise[..N_EVENTS].try_into().expect("eleven channels");
    let next = em_step_demographic(state, &with_live(base, live), dt, demo)?;
    let env_noise: &[f64; 4] = noise[N_EVENTS..].try_into().expect("four channels");
    Ok((next, em_step_parameters(live, env, dt, env_noise)?))
}

/// One Euler-Maruyama step of the four parameter processes, floored at
/// `PARAM_FLOOR * C_s`.
pub fn em_step_parameters(live: &[f64; 4], env: &EnvProcessParams, dt: f64, noise: &[f64; 4]) -> Result<[f64; 4]> {
    let sq = dt.sqrt();
    let mut out = [0.0; 4];
    for (k, ch) in env.channels().iter().enumerate() {
        let c = live[k];
        let v = c + ch.alpha * (ch.c_s - c) * dt + ch.sigma * c * sq * noise[k];
        if !v.is_finite() {
            return Err(Error::StepOverflow { t: f64::NAN });
        }
        out[k] = v.max(PARAM_FLOOR * ch.c_s);
    }
    Ok(out)
}

/// The parameter processes alone, on the grid of an environmental run with
/// the same `dt`, `t_end`, `record_stride`, seed and path index. The values
/// equal the `env_values` of [`simulate_path`] for that run.
pub fn simulate_parameters(
    env: &EnvProcessParams,
    config: &SimConfig,
    path_index: u64,
) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    config.validate()?;
    env.validate(false)?;
    let n = config.n_steps();
    let mut noise = PathNoise::new(config.seed, path_index);
    let mut live = env.initial_values();
    let mut times = vec![0.0];
    let mut values = vec![live];
    for k in 1..=n {
        live = em_step_parameters(&live, env, config.dt, &noise.environmental())?;
        if k % config.record_stride == 0 || k == n {
            times.push(k as f64 * config.dt);
            values.push(live);
        }
    }
    Ok((times, values))
}

/// The two noise streams of one path.
pub struct PathNoise {
    demographic: ChaCha8Rng,
    environmental: ChaCha8Rng,
}

impl PathNoise {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut demographic = ChaCha8Rng::seed_from_u64(seed);
        demographic.set_stream(2 * path_index);
        let mut environmental = ChaCha8Rng::seed_from_u64(seed);
        environmental.set_stream(2 * path_index + 1);
        Self {
            demographic,
            environmental,
        }
    }

    pub fn demographic(&mut self) -> [f64; N_EVENTS] {
        std::array::from_fn(|_| StandardNormal.sample(&mut self.demographic))
    }

    pub fn full(&mut self) -> [f64; 15] {
        let demo = self.demographic();
        let mut out = [0.0; 15];
        out[..N_EVENTS].copy_from_slice(&demo);
        out[N_EVENTS..].copy_from_slice(&self.environmental());
        out
    }

    pub fn environmental(&mut self) -> [f64; 4] {
        std::array::from_fn(|_| StandardNormal.sample(&mut self.environmental))
    }
}

/// Simulates one path on the fixed grid `k * dt`, recording every
/// `record_stride`-th state and the final one.
pub fn simulate_path(init: StateVec, params: &ModelParams, config: &SimConfig, path_index: u64) -> Result<PathResult> {
    config.validate()?;
    init.validate()?;
    params.validate()?;
    let env = match config.model {
        NoiseModel::Environmental => config.env,
        NoiseModel::Demographic => None,
    };
    let n = config.n_steps();
    let stride = config.record_stride;
    let capacity = n / stride + 2;
    let mut noise = PathNoise::new(config.seed, path_index);

    let mut result = PathResult {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        env_values: env.map(|_| Vec::with_capacity(capacity)),
        absorbed_at: None,
        b_zero_at: None,
        failed_at: None,
    };
    let mut x = init;
    let mut live = env.map(|e| e.initial_values()).unwrap_or([0.0; 4]);
    let note = |r: &mut PathResult, x: &StateVec, t: f64| {
        if r.b_zero_at.is_none() && x.bacteria == 0.0 {
            r.b_zero_at = Some(t);
        }
        if r.absorbed_at.is_none() && x.bacteria == 0.0 && x.infected == 0.0 {
            r.absorbed_at = Some(t);
        }
    };
    note(&mut result, &x, 0.0);
    result.times.push(0.0);
    result.states.push(x);
    if let Some(v) = result.env_values.as_mut() {
        v.push(live);
    }

    for k in 1..=n {
        let t = k as f64 * config.dt;
        let step = match &env {
            None => em_step_demographic(&x, params, config.dt, &noise.demographic()),
            Some(e) => em_step_environmental(&x, &live, params, e, config.dt, &noise.full()).map(|(s, l)| {
                live = l;
                s
            }),
        };
        match step {
            Ok(s) => x = s,
            Err(_) => {
                result.failed_at = Some(t);
                return Ok(result);
            }
        }
        note(&mut result, &x, t);
        if k % stride == 0 || k == n {
            result.times.push(t);
            result.states.push(x);
            if let Some(v) = result.env_values.as_mut() {
                v.push(live);
            }
        }
    }
    Ok(result)
}

/// Fixed-step explicit Euler solution of the deterministic model, the
/// zero-noise limit of [`em_step_demographic`].
pub fn euler_path(init: StateVec, params: &ModelParams, dt: f64, n_steps: usize) -> Vec<StateVec> {
    let zero = [0.0; N_EVENTS];
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut x = init;
    out.push(x);
    for _ in 0..n_steps {
        x = em_step_demographic(&x, params, dt, &zero).unwrap_or(x);
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{covariance_matrix, drift};

    fn interior() -> StateVec {
        StateVec::new(4e5, 30.0, 700.0, 300.0)
    }

    #[test]
    fn zero_noise_is_euler() {
        let p = ModelParams::default().with_delta(0.27);
        let s = interior();
        let next = em_step_demographic(&s, &p, 0.01, &[0.0; 11]).unwrap();
        let f = drift(&s, &p).unwrap();
        let expected = s.to_vector() + f * 0.01;
        assert_eq!(next.to_vector(), expected);
    }

    #[test]
    fn trivial_state_keeps_infection_at_zero() {
        let p = ModelParams::default();
        let mut noise = PathNoise::new(7, 0);
        let s = StateVec::new(5e5, 0.0, 0.0, 20.0);
        for _ in 0..100 {
            let n = em_step_demographic(&s, &p, 0.01, &noise.demographic()).unwrap();
            assert_eq!((n.infected, n.bacteria), (0.0, 0.0));
        }
    }

    #[test]
    fn single_step_moments() {
        let p = ModelParams::default().with_delta(0.27);
        let s = interior();
        let dt = 0.01;
        let n = 1_000_000usize;
        let mut noise = PathNoise::new(11, 3);
        let mut sum = nalgebra::Vector4::zeros();
        let mut outer = nalgebra::Matrix4::zeros();
        let x0 = s.to_vector();
        for _ in 0..n {
            // no clamping can occur this far from the boundary
            let d = em_step_demographic(&s, &p, dt, &noise.demographic()).unwrap().to_vector() - x0;
            sum += d;
            outer += d * d.transpose();
        }
        let mean = sum / n as f64;
        let cov = outer / n as f64 - mean * mean.transpose();
        let f = drift(&s, &p).unwrap() * dt;
        let sigma = covariance_matrix(&s, &p).unwrap() * dt;
        for i in 0..4 {
            let se = (sigma[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - f[i]).abs() <= 4.0 * se, "mean {i}: {} vs {}", mean[i], f[i]);
            for j in 0..4 {
                // standard error of a sample covariance of Gaussians
                let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((cov[(i, j)] - sigma[(i, j)]).abs() <= 4.0 * se + 1e-12,
                    "cov ({i},{j}): {} vs {}", cov[(i, j)], sigma[(i, j)]);
            }
        }
    }

    #[test]
    fn deterministic_parameter_relaxation() {
        let p = ModelParams::default();
        let mut env = EnvProcessParams::uniform(&p, 0.5, 0.0);
        env.delta.c_0 = 0.3;
        env.delta.c_s = 0.2;
        let dt = 0.001;
        let mut live = env.initial_values();
        let s = StateVec::new(5e5, 0.0, 0.0, 20.0);
        let mut noise = [0.0; 15];
        noise[11] = 5.0; // ignored with sigma = 0
        for _ in 0..2000 {
            live = em_step_environmental(&s, &live, &p, &env, dt, &noise).unwrap().1;
        }
        let exact = 0.2 + 0.1 * (-0.5f64 * 2.0).exp();
        assert!((live[0] - exact).abs() < 1e-4, "{} vs {exact}", live[0]);
        assert_eq!(live[1], p.b);
    }

    #[test]
    fn frozen_environment_matches_demographic() {
        let p = ModelParams::reference().with_delta(0.27);
        let init = StateVec::new(4.99e5, 4.0, 4.0, 75.0);
        let demo = SimConfig::demographic(0.01, 20.0, 10, 42);
        let env = SimConfig::environmental(0.01, 20.0, 10, 42, EnvProcessParams::uniform(&p, 0.5, 0.0));
        let a = simulate_path(init, &p, &demo, 5).unwrap();
        let b = simulate_path(init, &p, &env, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.times, b.times);
    }

    #[test]
    fn environmental_step_uses_pre_step_parameters() {
        let p = ModelParams::default();
        let env = EnvProcessParams::uniform(&p, 0.5, 0.3);
        let live = [0.25, 0.2, 1.0, 2e-8];
        let mut noise = [0.3; 15];
        noise[12] = -1.0;
        let (s, _) = em_step_environmental(&interior(), &live, &p, &env, 0.01, &noise).unwrap();
        let demo: [f64; 11] = noise[..11].try_into().unwrap();
        let direct = em_step_demographic(&interior(), &with_live(&p, &live), 0.01, &demo).unwrap();
        assert_eq!(s, direct);
    }

    #[test]
    fn parameter_floor() {
        let p = ModelParams::default();
        let env = EnvProcessParams::uniform(&p, 0.5, 10.0);
        let mut noise = [0.0; 15];
        noise[11..].copy_from_slice(&[-100.0; 4]);
        let (_, live) = em_step_environmental(&interior(), &env.initial_values(), &p, &env, 0.01, &noise).unwrap();
        for (v, ch) in live.iter().zip(env.channels()) {
            assert_eq!(*v, PARAM_FLOOR * ch.c_s);
        }
    }

    #[test]
    fn asymptotic_moments() {
        let p = ModelParams::default();
        let mut env = EnvProcessParams::uniform(&p, 0.5, 0.5);
        env.b.c_s = 0.11;
        let m = ou_asymptotic_moments(&env);
        assert!((m[1].variance - 0.11f64.powi(2) / 3.0).abs() < 1e-15);
        assert_eq!(m[1].mean, 0.11);
        env.b.sigma = 1.0;
        assert!(ou_asymptotic_moments(&env)[1].variance.is_infinite());
        env.b.sigma = 0.0;
        assert_eq!(ou_asymptotic_moments(&env)[1].variance, 0.0);
        assert!(env.validate(true).is_ok());
        env.b.sigma = 1.0;
        assert!(env.validate(true).is_err());
        assert!(env.validate(false).is_ok());
    }

    #[test]
    fn path_determinism_and_recording() {
        let p = ModelParams::reference().with_delta(0.2);
        let init = StateVec::new(4.99e5, 1.0, 10.0, 1000.0);
        let cfg = SimConfig::demographic(0.01, 5.05, 100, 9);
        let a = simulate_path(init, &p, &cfg, 3).unwrap();
        let b = simulate_path(init, &p, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(init, &p, &cfg, 4).unwrap();
        assert_ne!(a.states, c.states);
        assert_eq!(a.times.len(), 7);
        assert!((a.times[6] - 5.05).abs() < 1e-12);
        assert_eq!(a.states[0], init);
    }

    #[test]
    fn absorption_is_permanent() {
        let p = ModelParams::reference().with_delta(0.2);
        let cfg = SimConfig::demographic(0.01, 50.0, 1, 1);
        let absorbed = StateVec::new(4.99e5, 0.0, 0.0, 300.0);
        let r = simulate_path(absorbed, &p, &cfg, 3).unwrap();
        assert_eq!((r.absorbed_at, r.b_zero_at), (Some(0.0), Some(0.0)));
        assert!(r.states.iter().all(|s| s.infected == 0.0 && s.bacteria == 0.0));
        assert!(r.states.last().unwrap().uninfected != absorbed.uninfected);

        let init = StateVec::new(4.99e5, 0.5, 0.5, 5000.0);
        for path in 0..20 {
            let r = simulate_path(init, &p, &cfg, path).unwrap();
            if let Some(t) = r.absorbed_at {
                assert!(r.b_zero_at.unwrap() <= t);
                for (s, &tt) in r.states.iter().zip(&r.times) {
                    if tt >= t {
                        assert_eq!((s.infected, s.bacteria), (0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_only_run_matches_full_run() {
        let p = ModelParams::reference().with_delta(0.2);
        let env = EnvProcessParams::uniform(&p, 0.5, 0.5);
        let cfg = SimConfig::environmental(0.01, 20.0, 10, 9, env);
        let full = simulate_path(interior(), &p, &cfg, 4).unwrap();
        let (times, values) = simulate_parameters(&env, &cfg, 4).unwrap();
        assert_eq!(times, full.times);
        assert_eq!(Some(values), full.env_values);
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::demographic(0.01, 1.0, 1, 0);
        assert!(c.validate().is_ok());
        c.record_stride = 0;
        assert!(c.validate().is_err());
        c = SimConfig::demographic(0.01, 0.001, 1, 0);
        assert!(c.validate().is_err());
        c = SimConfig::demographic(0.01, 1.0, 1, 0);
        c.model = NoiseModel::Environmental;
        assert!(c.validate().is_err());
    }

    #[test]
    fn overflow_is_flagged() {
        let p = ModelParams::default().with_delta(0.3);
        let init = StateVec::new(1e300, 1e300, 1e300, 1e300);
        let cfg = SimConfig::demographic(1.0, 10.0, 1, 0);
        let r = simulate_path(init, &p, &cfg, 0).unwrap();
        assert!(r.failed_at.is_some());
    }
}
