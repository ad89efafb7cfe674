//! Model state, parameters and the reaction-event description of the
//! four-compartment Mtb/host system.
//!
//! The state is (M_u, M_i, B, T): uninfected macrophages, chronically
//! infected macrophages, extracellular bacteria and CD4+ T cells, all in
//! cells (or bacteria) per ml. The deterministic right-hand side, the eleven
//! demographic events, the covariance of one Euler increment and its
//! rectangular 4x11 factor are all derived from one [`Rates`] evaluation so
//! every consumer sees the same numbers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of demographic events.
pub const N_EVENTS: usize = 11;

pub type DiffusionFactor = SMatrix<f64, 4, N_EVENTS>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    /// M_u
    pub uninfected: f64,
    /// M_i
    pub infected: f64,
    /// B
    pub bacteria: f64,
    /// T
    pub t_cells: f64,
}

impl StateVec {
    pub const ZERO: StateVec = StateVec::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(uninfected: f64, infected: f64, bacteria: f64, t_cells: f64) -> Self {
        Self {
            uninfected,
            infected,
            bacteria,
            t_cells,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.uninfected, self.infected, self.bacteria, self.t_cells]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Componentwise `max(0, x)`.
    pub fn clamped(self) -> Self {
        Self::from_array(self.to_array().map(|x| x.max(0.0)))
    }

    /// Finite and nonnegative in every component.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Domain(format!("non-finite state {self:?}")));
        }
        if self.to_array().iter().any(|&x| x < 0.0) {
            return Err(Error::Domain(format!("negative state {self:?}")));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-finite state {self:?}")))
        }
    }
}

/// The eighteen rate constants of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Recruitment of M_u (1/ml/day).
    pub s_m: f64,
    /// Recruitment of T (1/ml/day).
    pub s_t: f64,
    /// Death rate of M_u (1/day).
    pub mu_m: f64,
    /// Loss rate of M_i (1/day).
    pub b: f64,
    /// Death rate of T (1/day).
    pub mu_t: f64,
    /// Infection rate by B.
    pub beta: f64,
    /// Bacterial killing rate by M_u.
    pub eta: f64,
    /// Maximum cell-mediated killing rate of M_i (1/day).
    pub gamma: f64,
    /// Bacterial proliferation rate (1/day).
    pub delta: f64,
    /// T expansion induced by M_i (1/day).
    pub c_m: f64,
    /// T expansion induced by B (1/day).
    pub c_b: f64,
    /// Saturation of the M_i-induced expansion.
    pub e_m: f64,
    /// Saturation of the B-induced expansion.
    pub e_b: f64,
    /// Half-saturation T/M_i ratio for lysis.
    pub c: f64,
    /// Carrying capacity of B (1/ml).
    pub k: f64,
    /// Bacteria released per M_i lost to death or bursting.
    pub n1: f64,
    /// Bacteria released per M_i killed by T cells.
    pub n2: f64,
    /// Bacteria engulfed per newly infected macrophage.
    pub n3: f64,
}

impl Default for ModelParams {
    /// Baseline literature values.
    fn default() -> Self {
        Self {
            s_m: 5000.0,
            s_t: 6.6,
            mu_m: 0.01,
            b: 0.11,
            mu_t: 0.33,
            beta: 2e-7,
            eta: 1.25e-8,
            gamma: 1.5,
            delta: 5e-4,
            c_m: 1e-3,
            c_b: 5e-3,
            e_m: 1e-4,
            e_b: 1e-4,
            c: 3.0,
            k: 1e8,
            n1: 50.0,
            n2: 20.0,
            n3: 25.0,
        }
    }
}

impl ModelParams {
    /// Macrophage killing rate used by the presets and reference values
    /// (see README).
    pub const REFERENCE_ETA: f64 = 1.25e-9;

    /// Baseline values with `eta = REFERENCE_ETA`. All presets start from
    /// this set.
    pub fn reference() -> Self {
        Self {
            eta: Self::REFERENCE_ETA,
            ..Self::default()
        }
    }

    pub fn with(mut self, name: ParamName, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn with_delta(self, delta: f64) -> Self {
        self.with(ParamName::Delta, delta)
    }

    pub fn get(&self, name: ParamName) -> f64 {
        use ParamName::*;
        match name {
            SM => self.s_m,
            ST => self.s_t,
            MuM => self.mu_m,
            B => self.b,
            MuT => self.mu_t,
            Beta => self.beta,
            Eta => self.eta,
            Gamma => self.gamma,
            Delta => self.delta,
            CM => self.c_m,
            CB => self.c_b,
            EM => self.e_m,
            EB => self.e_b,
            C => self.c,
            K => self.k,
            N1 => self.n1,
            N2 => self.n2,
            N3 => self.n3,
        }
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        use ParamName::*;
        let slot = match name {
            SM => &mut self.s_m,
            ST => &mut self.s_t,
            MuM => &mut self.mu_m,
            B => &mut self.b,
            MuT => &mut self.mu_t,
            Beta => &mut self.beta,
            Eta => &mut self.eta,
            Gamma => &mut self.gamma,
            Delta => &mut self.delta,
            CM => &mut self.c_m,
            CB => &mut self.c_b,
            EM => &mut self.e_m,
            EB => &mut self.e_b,
            C => &mut self.c,
            K => &mut self.k,
            N1 => &mut self.n1,
            N2 => &mut self.n2,
            N3 => &mut self.n3,
        };
        *slot = value;
    }

    /// Every field finite and strictly positive, and `K >= 1`.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    /// As [`validate`](Self::validate) but admits `delta = 0`, the left end
    /// of proliferation-rate scans.
    pub fn validate_allow_zero_delta(&self) -> Result<()> {
        self.validate_inner(true)
    }

    fn validate_inner(&self, zero_delta: bool) -> Result<()> {
        for name in ParamName::ALL {
            let value = self.get(name);
            if zero_delta && name == ParamName::Delta && value == 0.0 {
                continue;
            }
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    value,
                    reason: "must be finite",
                });
            }
            if value <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    value,
                    reason: "must be positive",
                });
            }
        }
        if self.k < 1.0 {
            return Err(Error::InvalidParameter {
                name: "K",
                value: self.k,
                reason: "carrying capacity must be at least 1",
            });
        }
        Ok(())
    }

    /// Uninfected macrophage level without infection, `s_M / mu_M`.
    pub fn macrophage_capacity(&self) -> f64 {
        self.s_m / self.mu_m
    }
}

/// Symbolic names of the eighteen parameters, as used in configuration files
/// and scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum ParamName {
    SM,
    ST,
    MuM,
    B,
    MuT,
    Beta,
    Eta,
    Gamma,
    Delta,
    CM,
    CB,
    EM,
    EB,
    C,
    K,
    N1,
    N2,
    N3,
}

impl ParamName {
    pub const ALL: [ParamName; 18] = [
        ParamName::SM,
        ParamName::ST,
        ParamName::MuM,
        ParamName::B,
        ParamName::MuT,
        ParamName::Beta,
        ParamName::Eta,
        ParamName::Gamma,
        ParamName::Delta,
        ParamName::CM,
        ParamName::CB,
        ParamName::EM,
        ParamName::EB,
        ParamName::C,
        ParamName::K,
        ParamName::N1,
        ParamName::N2,
        ParamName::N3,
    ];

    pub fn as_str(self) -> &'static str {
        use ParamName::*;
        match self {
            SM => "s_M",
            ST => "s_T",
            MuM => "mu_M",
            B => "b",
            MuT => "mu_T",
            Beta => "beta",
            Eta => "eta",
            Gamma => "gamma",
            Delta => "delta",
            CM => "c_M",
            CB => "c_B",
            EM => "e_M",
            EB => "e_B",
            C => "c",
            K => "K",
            N1 => "N1",
            N2 => "N2",
            N3 => "N3",
        }
    }

    /// Admissible scan range for the therapy-targeted parameters.
    pub fn scan_bounds(self) -> Option<(f64, f64)> {
        match self {
            ParamName::Delta => Some((0.0, 0.35)),
            ParamName::B => Some((0.05, 0.5)),
            ParamName::Gamma => Some((0.1, 2.0)),
            ParamName::Eta => Some((1.25e-9, 1.25e-7)),
            _ => None,
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown parameter `{s}`")))
    }
}

impl TryFrom<String> for ParamName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ParamName> for &'static str {
    fn from(p: ParamName) -> Self {
        p.as_str()
    }
}

/// Which rate formula drives an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateKind {
    MacrophageRecruitment,
    MacrophageDeath,
    Infection,
    InfectedLoss,
    CytotoxicKilling,
    Proliferation,
    Phagocytosis,
    TCellRecruitment,
    TCellActivationByInfected,
    TCellActivationByBacteria,
    TCellDeath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    /// 1-based event number.
    pub index: usize,
    pub delta_state: [f64; 4],
    pub rate: RateKind,
}

/// The eleven demographic events with their state changes. N1 and N2 come
/// from the parameters, so the table is built per parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTable {
    pub events: [Event; N_EVENTS],
}

impl EventTable {
    pub fn new(params: &ModelParams) -> Self {
        use RateKind::*;
        let rows: [([f64; 4], RateKind); N_EVENTS] = [
            ([1.0, 0.0, 0.0, 0.0], MacrophageRecruitment),
            ([-1.0, 0.0, 0.0, 0.0], MacrophageDeath),
            ([-1.0, 1.0, 0.0, 0.0], Infection),
            ([0.0, -1.0, params.n1, 0.0], InfectedLoss),
            ([0.0, -1.0, params.n2, 0.0], CytotoxicKilling),
            ([0.0, 0.0, 1.0, 0.0], Proliferation),
            ([0.0, 0.0, -1.0, 0.0], Phagocytosis),
            ([0.0, 0.0, 0.0, 1.0], TCellRecruitment),
            ([0.0, 0.0, 0.0, 1.0], TCellActivationByInfected),
            ([0.0, 0.0, 0.0, 1.0], TCellActivationByBacteria),
            ([0.0, 0.0, 0.0, -1.0], TCellDeath),
        ];
        let events = std::array::from_fn(|k| Event {
            index: k + 1,
            delta_state: rows[k].0,
            rate: rows[k].1,
        });
        Self { events }
    }
}

/// Cell-mediated killing flux `gamma*M_i*T/(T + c*M_i)`.
///
/// This is the ratio form `gamma*M_i*(T/M_i)/(T/M_i + c)` with the removable
/// singularity at `M_i = 0` filled in; it is 0 whenever `T + c*M_i = 0`.
pub fn saturating_kill_rate(state: &StateVec, params: &ModelParams) -> f64 {
    let denom = state.t_cells + params.c * state.infected;
    if denom == 0.0 {
        0.0
    } else {
        params.gamma * state.infected * state.t_cells / denom
    }
}

/// The eleven event intensities. `proliferation_raw` is the signed logistic
/// term; the nonnegative rate vector clamps it at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub p: [f64; N_EVENTS],
    pub proliferation_raw: f64,
}

impl Rates {
    pub fn compute(state: &StateVec, params: &ModelParams) -> Self {
        let StateVec {
            uninfected: mu,
            infected: mi,
            bacteria: bac,
            t_cells: tc,
        } = *state;
        let logistic = params.delta * bac * (1.0 - bac / params.k);
        let p = [
            params.s_m,
            params.mu_m * mu,
            params.beta * mu * bac,
            params.b * mi,
            saturating_kill_rate(state, params),
            logistic.max(0.0),
            mu * bac * (params.eta + params.n3 * params.beta),
            params.s_t,
            params.c_m * mi * tc / (params.e_m * tc + 1.0),
            params.c_b * bac * tc / (params.e_b * tc + 1.0),
            params.mu_t * tc,
        ];
        Self {
            p,
            proliferation_raw: logistic,
        }
    }

    /// Deterministic right-hand side, grouped term by term as in the ODE.
    /// Uses the unclamped logistic term.
    pub fn drift(&self, params: &ModelParams) -> Vector4<f64> {
        let p = &self.p;
        Vector4::new(
            p[0] - p[1] - p[2],
            p[2] - p[3] - p[4],
            self.proliferation_raw + params.n1 * p[3] + params.n2 * p[4] - p[6],
            p[7] + p[8] + p[9] - p[10],
        )
    }

    /// The 4x11 matrix with `B B^T = Sigma`.
    pub fn diffusion(&self, params: &ModelParams) -> DiffusionFactor {
        let s = self.p.map(f64::sqrt);
        let mut m = DiffusionFactor::zeros();
        m[(0, 0)] = s[0];
        m[(0, 1)] = -s[1];
        m[(0, 2)] = -s[2];
        m[(1, 2)] = s[2];
        m[(1, 3)] = -s[3];
        m[(1, 4)] = -s[4];
        m[(2, 3)] = params.n1 * s[3];
        m[(2, 4)] = params.n2 * s[4];
        m[(2, 5)] = s[5];
        m[(2, 6)] = -s[6];
        m[(3, 7)] = s[7];
        m[(3, 8)] = s[8];
        m[(3, 9)] = s[9];
        m[(3, 10)] = -s[10];
        m
    }
}

/// Right-hand side of the deterministic model.
pub fn drift(state: &StateVec, params: &ModelParams) -> Result<Vector4<f64>> {
    state.check_finite()?;
    Ok(Rates::compute(state, params).drift(params))
}

/// Event intensities p1..p11, all nonnegative.
pub fn event_rates(state: &StateVec, params: &ModelParams) -> Result<[f64; N_EVENTS]> {
    state.check_finite()?;
    Ok(Rates::compute(state, params).p)
}

pub fn diffusion_matrix(state: &StateVec, params: &ModelParams) -> Result<DiffusionFactor> {
    state.check_finite()?;
    Ok(Rates::compute(state, params).diffusion(params))
}

/// Infinitesimal covariance of the demographic noise, entry by entry.
pub fn covariance_matrix(state: &StateVec, params: &ModelParams) -> Result<Matrix4<f64>> {
    state.check_finite()?;
    let p = Rates::compute(state, params).p;
    let (n1, n2) = (params.n1, params.n2);
    let s11 = p[0] + p[1] + p[2];
    let s12 = -p[2];
    let s22 = p[2] + p[3] + p[4];
    let s23 = -n1 * p[3] - n2 * p[4];
    let s33 = n1 * n1 * p[3] + n2 * n2 * p[4] + p[5] + p[6];
    let s44 = p[7] + p[8] + p[9] + p[10];
    #[rustfmt::skip]
    let sigma = Matrix4::new(
        s11, s12, 0.0, 0.0,
        s12, s22, s23, 0.0,
        0.0, s23, s33, 0.0,
        0.0, 0.0, 0.0, s44,
    );
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn kill_rate_examples() {
        let p = ModelParams::default();
        assert_eq!(saturating_kill_rate(&StateVec::new(1.0, 0.0, 0.0, 20.0), &p), 0.0);
        assert_eq!(saturating_kill_rate(&StateVec::ZERO, &p), 0.0);
        let s = StateVec::new(0.0, 4.0, 0.0, 75.0);
        let rewritten = 1.5 * 4.0 * 75.0 / (75.0 + 12.0);
        let ratio = 75.0 / 4.0;
        let original = 1.5 * 4.0 * ratio / (ratio + 3.0);
        assert!(rel(saturating_kill_rate(&s, &p), rewritten) < 1e-15);
        assert!(rel(saturating_kill_rate(&s, &p), original) < 1e-12);
        assert!((rewritten - 5.1724).abs() < 1e-4);
    }

    #[test]
    fn drift_vanishes_at_trivial_state() {
        let d = drift(&StateVec::new(5e5, 0.0, 0.0, 20.0), &ModelParams::default()).unwrap();
        assert!(d.iter().all(|&x| x.abs() < 1e-9), "{d}");
    }

    #[test]
    fn drift_bacteria_component_by_hand() {
        let p = ModelParams::default().with_delta(0.2);
        let d = drift(&StateVec::new(5e5, 0.0, 10.0, 20.0), &p).unwrap();
        let expected = 0.2 * 10.0 * (1.0 - 1e-7) - 5e5 * 10.0 * (1.25e-8 + 25.0 * 2e-7);
        assert!(rel(d[2], expected) < 1e-12);
        assert!((d[2] + 23.06).abs() < 0.01);
    }

    #[test]
    fn drift_rejects_non_finite() {
        let s = StateVec::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(drift(&s, &ModelParams::default()), Err(Error::Domain(_))));
        assert!(event_rates(&s, &ModelParams::default()).is_err());
    }

    #[test]
    fn rates_at_trivial_state() {
        let r = event_rates(&StateVec::new(5e5, 0.0, 0.0, 20.0), &ModelParams::default()).unwrap();
        let mut expected = [0.0; N_EVENTS];
        expected[0] = 5000.0;
        expected[1] = 5000.0;
        expected[7] = 6.6;
        expected[10] = 6.6;
        for k in 0..N_EVENTS {
            assert!((r[k] - expected[k]).abs() < 1e-9, "p{} = {}", k + 1, r[k]);
        }
    }

    #[test]
    fn rates_at_origin_and_overcrowded() {
        let p = ModelParams::default();
        let r = event_rates(&StateVec::ZERO, &p).unwrap();
        for (k, &v) in r.iter().enumerate() {
            match k {
                0 => assert_eq!(v, p.s_m),
                7 => assert_eq!(v, p.s_t),
                _ => assert_eq!(v, 0.0),
            }
        }
        let crowded = StateVec::new(1e5, 10.0, 2.0 * p.k, 100.0);
        let r = Rates::compute(&crowded, &p);
        assert_eq!(r.p[5], 0.0);
        assert!(r.proliferation_raw < 0.0);
        // drift keeps the signed logistic term
        let d = r.drift(&p);
        let expected = r.proliferation_raw + p.n1 * r.p[3] + p.n2 * r.p[4] - r.p[6];
        assert_eq!(d[2], expected);
    }

    #[test]
    fn event_table_rows() {
        let p = ModelParams::default().with(ParamName::N1, 10.0);
        let t = EventTable::new(&p);
        assert_eq!(t.events.len(), 11);
        assert_eq!(t.events[3].delta_state, [0.0, -1.0, 10.0, 0.0]);
        assert_eq!(t.events[4].delta_state, [0.0, -1.0, 20.0, 0.0]);
        assert_eq!(t.events[10].index, 11);
        assert_eq!(t.events[4].rate, RateKind::CytotoxicKilling);
    }

    #[test]
    fn diffusion_at_trivial_state() {
        let p = ModelParams::default();
        let s = StateVec::new(5e5, 0.0, 0.0, 20.0);
        let m = diffusion_matrix(&s, &p).unwrap();
        let bbt = m * m.transpose();
        assert!(rel(bbt[(0, 0)], 10000.0) < 1e-12);
        assert!(rel(bbt[(3, 3)], 13.2) < 1e-12);
        let sigma = covariance_matrix(&s, &p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) != (0, 0) && (i, j) != (3, 3) {
                    assert_eq!(bbt[(i, j)], 0.0);
                    assert_eq!(sigma[(i, j)], 0.0);
                }
            }
        }
        assert!(rel(sigma[(0, 0)], 10000.0) < 1e-12);
    }

    #[test]
    fn diffusion_with_only_sources() {
        let p = ModelParams::default();
        let m = diffusion_matrix(&StateVec::ZERO, &p).unwrap();
        let nonzero: Vec<f64> = m.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero, vec![p.s_m.sqrt(), p.s_t.sqrt()]);
    }

    #[test]
    fn covariance_is_symmetric() {
        let p = ModelParams::default().with_delta(0.27);
        let s = StateVec::new(4e5, 30.0, 700.0, 300.0);
        let sigma = covariance_matrix(&s, &p).unwrap();
        assert_eq!(sigma[(0, 1)], sigma[(1, 0)]);
        assert_eq!(sigma[(1, 2)], sigma[(2, 1)]);
        assert_eq!(sigma, sigma.transpose());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = ModelParams::default().with_delta(-1.0);
        match bad.validate() {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "delta"),
            other => panic!("{other:?}"),
        }
        assert!(ModelParams::default().with(ParamName::K, 0.5).validate().is_err());
        assert!(ModelParams::default().with(ParamName::Gamma, f64::NAN).validate().is_err());
    }

    #[test]
    fn param_names_round_trip() {
        for p in ParamName::ALL {
            assert_eq!(p.as_str().parse::<ParamName>().unwrap(), p);
        }
        assert!("zeta".parse::<ParamName>().is_err());
        let reference = ModelParams::reference();
        assert_eq!(reference.eta, 1.25e-9);
        assert_eq!(reference.with(ParamName::Eta, 1.25e-8), ModelParams::default());
    }
}
