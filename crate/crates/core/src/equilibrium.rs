//! Equilibria, Jacobians and the spectrum of the trivial state.
//!
//! Infected equilibria are found by reducing the four steady-state equations
//! to a scalar residual in B: for fixed B the uninfected macrophages, the
//! infected macrophages and the T cells follow in closed form (the last one
//! as the unique positive root of a cubic), and what is left of the M_i
//! balance is a function of B alone. Its zeros are bracketed on a grid that
//! is logarithmic in B away from the carrying capacity and logarithmic in
//! K - B close to it, since the high-load branch sits within a relative
//! distance of about 1e-3 of K.

use nalgebra::{Complex, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{saturating_kill_rate, ModelParams, ParamName, StateVec};
use crate::roots::{cubic_real_roots, golden_min, refine_bracket};

pub type C64 = Complex<f64>;

/// Real parts within this distance of zero are reported as marginal.
pub const MARGINAL_TOL: f64 = 1e-7;

/// Equilibria whose relative drift residual exceeds this are rejected.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
    Marginal,
}

impl Stability {
    pub fn from_eigenvalues(eigs: &[C64]) -> Self {
        let max = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let min = eigs.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if max.abs() <= MARGINAL_TOL {
            Stability::Marginal
        } else if max < 0.0 {
            Stability::Stable
        } else if min > 0.0 {
            Stability::Unstable
        } else {
            Stability::Saddle
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Saddle => "saddle",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchTag {
    Trivial,
    LowInfected,
    MidInfected,
    HighInfected,
}

impl BranchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchTag::Trivial => "trivial",
            BranchTag::LowInfected => "low",
            BranchTag::MidInfected => "mid",
            BranchTag::HighInfected => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumRecord {
    pub state: StateVec,
    /// Sorted by decreasing real part.
    pub eigenvalues: [C64; 4],
    pub stability: Stability,
    pub branch_tag: BranchTag,
}

impl EquilibriumRecord {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues[0].re
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharCoeffs {
    pub c1: f64,
    pub c2: f64,
}

/// Analytic Jacobian of the drift.
///
/// The killing flux is differentiated in the form gamma*M_i*T/(T + c*M_i).
/// At M_i = 0 its M_i-derivative is gamma (the limit along T > 0); the same
/// value is used at the origin of the (M_i, T) plane, where the flux is not
/// differentiable.
pub fn jacobian(state: &StateVec, params: &ModelParams) -> Result<Matrix4<f64>> {
    if !state.is_finite() {
        return Err(Error::Domain(format!("non-finite state {state:?}")));
    }
    let p = params;
    let StateVec {
        uninfected: mu,
        infected: mi,
        bacteria: bac,
        t_cells: tc,
    } = *state;
    let (k_mi, k_t) = if mi == 0.0 {
        (p.gamma, 0.0)
    } else {
        let d = tc + p.c * mi;
        (p.gamma * tc * tc / (d * d), p.gamma * p.c * mi * mi / (d * d))
    };
    let phago = p.eta + p.n3 * p.beta;
    let sat_m = p.e_m * tc + 1.0;
    let sat_b = p.e_b * tc + 1.0;

    #[rustfmt::skip]
    let j = Matrix4::new(
        -p.mu_m - p.beta * bac, 0.0, -p.beta * mu, 0.0,
        p.beta * bac, -p.b - k_mi, p.beta * mu, -k_t,
        -bac * phago, p.n1 * p.b + p.n2 * k_mi,
            p.delta * (1.0 - 2.0 * bac / p.k) - mu * phago, p.n2 * k_t,
        0.0, p.c_m * tc / sat_m, p.c_b * tc / sat_b,
            p.c_m * mi / (sat_m * sat_m) + p.c_b * bac / (sat_b * sat_b) - p.mu_t,
    );
    Ok(j)
}

/// Eigenvalues of `m`, sorted by decreasing real part (ties by imaginary part).
pub fn eigenvalues(m: &Matrix4<f64>) -> [C64; 4] {
    let v = m.complex_eigenvalues();
    let mut out = [v[0], v[1], v[2], v[3]];
    sort_spectrum(&mut out);
    out
}

fn sort_spectrum(eigs: &mut [C64; 4]) {
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Largest relative residual of the four drift components, each measured
/// against the sum of the magnitudes of its own terms.
pub fn relative_drift_residual(state: &StateVec, params: &ModelParams) -> f64 {
    let p = params;
    let StateVec {
        uninfected: mu,
        infected: mi,
        bacteria: bac,
        t_cells: tc,
    } = *state;
    let kill = saturating_kill_rate(state, p);
    let infection = p.beta * mu * bac;
    let logistic = p.delta * bac * (1.0 - bac / p.k);
    let phago = mu * bac * (p.eta + p.n3 * p.beta);
    let act_m = p.c_m * mi * tc / (p.e_m * tc + 1.0);
    let act_b = p.c_b * bac * tc / (p.e_b * tc + 1.0);
    let rows = [
        [p.s_m, -p.mu_m * mu, -infection, 0.0],
        [infection, -p.b * mi, -kill, 0.0],
        [logistic, p.n1 * p.b * mi, p.n2 * kill, -phago],
        [p.s_t, act_m, act_b, -p.mu_t * tc],
    ];
    rows.iter()
        .map(|r| {
            let scale: f64 = r.iter().map(|x| x.abs()).sum();
            if scale == 0.0 {
                0.0
            } else {
                r.iter().sum::<f64>().abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// c1 and c2 of the quadratic factor of the characteristic polynomial at
/// the trivial equilibrium.
pub fn char_coeffs(params: &ModelParams) -> CharCoeffs {
    let p = params;
    let m0 = p.macrophage_capacity();
    CharCoeffs {
        c1: (p.b + p.gamma) + m0 * (p.n3 * p.beta + p.eta) - p.delta,
        c2: (delta_threshold(p) - p.delta) * (p.b + p.gamma),
    }
}

/// Proliferation rate at which the trivial equilibrium exchanges stability.
pub fn delta_threshold(params: &ModelParams) -> f64 {
    let p = params;
    let m0 = p.macrophage_capacity();
    let bg = p.b + p.gamma;
    p.eta * m0 - (p.n2 - p.n3) * p.gamma / bg * p.beta * m0 - (p.n1 - p.n3) * p.b / bg * p.beta * m0
}

/// Roots of `x^2 + c1 x + c2`, larger real part first.
fn quadratic_pair(c: CharCoeffs) -> (C64, C64) {
    let disc = c.c1 * c.c1 - 4.0 * c.c2;
    if disc < 0.0 {
        let re = -0.5 * c.c1;
        let im = 0.5 * (-disc).sqrt();
        return (C64::new(re, im), C64::new(re, -im));
    }
    let sign = if c.c1 >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (c.c1 + sign * disc.sqrt());
    if q == 0.0 {
        return (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    }
    let (r1, r2) = (q, c.c2 / q);
    let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
    (C64::new(hi, 0.0), C64::new(lo, 0.0))
}

/// The four eigenvalues at the trivial equilibrium, `[lambda1, lambda2,
/// -mu_T, -mu_M]`, with lambda1 the root of larger real part.
pub fn eigen_closed_form(params: &ModelParams) -> [C64; 4] {
    let (l1, l2) = quadratic_pair(char_coeffs(params));
    [l1, l2, C64::new(-params.mu_t, 0.0), C64::new(-params.mu_m, 0.0)]
}

/// Dominant eigenvalue at the trivial equilibrium (real part).
pub fn lambda1(params: &ModelParams) -> f64 {
    eigen_closed_form(params)[0].re
}

/// Linearisations of lambda1 about the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lambda1Variant {
    /// `(b + gamma) * c1(delta) / c1(delta0) * (delta - delta0)`.
    ScaledLinear,
    /// `-c2(delta) / c1(delta)`, the first-order term of the exact root.
    FirstOrder,
}

pub fn lambda1_approx(params: &ModelParams, delta: f64, variant: Lambda1Variant) -> Result<f64> {
    let d0 = delta_threshold(params);
    let at = char_coeffs(&params.with_delta(delta));
    if at.c1 == 0.0 {
        return Err(Error::Singularity("c1 vanishes at the requested delta"));
    }
    match variant {
        Lambda1Variant::ScaledLinear => {
            let c1_0 = char_coeffs(&params.with_delta(d0)).c1;
            if c1_0 == 0.0 {
                return Err(Error::Singularity("c1 vanishes at the threshold"));
            }
            Ok((params.b + params.gamma) * at.c1 / c1_0 * (delta - d0))
        }
        Lambda1Variant::FirstOrder => {
            if delta == d0 {
                return Ok(0.0);
            }
            Ok(-at.c2 / at.c1)
        }
    }
}

/// Exact lambda1 on a (b, gamma) grid; rows follow `b_grid`.
pub fn lambda1_contour(base: &ModelParams, b_grid: &[f64], gamma_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    for (name, grid) in [(ParamName::B, b_grid), (ParamName::Gamma, gamma_grid)] {
        let (lo, hi) = name.scan_bounds().expect("scan parameter");
        if let Some(&v) = grid.iter().find(|&&v| !(v >= lo && v <= hi)) {
            return Err(Error::InvalidParameter {
                name: name.as_str(),
                value: v,
                reason: "outside the scan range",
            });
        }
    }
    Ok(b_grid
        .iter()
        .map(|&b| {
            gamma_grid
                .iter()
                .map(|&g| lambda1(&base.with(ParamName::B, b).with(ParamName::Gamma, g)))
                .collect()
        })
        .collect())
}

pub fn trivial_state(params: &ModelParams) -> StateVec {
    StateVec::new(params.s_m / params.mu_m, 0.0, 0.0, params.s_t / params.mu_t)
}

pub fn trivial_equilibrium(params: &ModelParams) -> EquilibriumRecord {
    let eigenvalues = {
        let mut e = eigen_closed_form(params);
        sort_spectrum(&mut e);
        e
    };
    EquilibriumRecord {
        state: trivial_state(params),
        eigenvalues,
        stability: Stability::from_eigenvalues(&eigenvalues),
        branch_tag: BranchTag::Trivial,
    }
}

/// The steady state compatible with a given bacterial load, and the
/// residual of the infected-macrophage balance there. `None` when the load
/// implies a nonpositive M_i.
fn reduce(bac: f64, p: &ModelParams) -> Option<(f64, StateVec)> {
    let mu = p.s_m / (p.mu_m + p.beta * bac);
    let mi = bac * (p.delta * bac / p.k - p.delta - mu * ((p.n2 - p.n3) * p.beta - p.eta))
        / (p.b * (p.n1 - p.n2));
    if !(mi > 0.0 && mi.is_finite()) {
        return None;
    }
    // T-cell balance times (e_M T + 1)(e_B T + 1)
    let a3 = -p.e_b * p.e_m * p.mu_t;
    let a2 = (p.c_m * mi + p.e_m * p.s_t - p.mu_t) * p.e_b + p.e_m * (p.c_b * bac - p.mu_t);
    let a1 = p.c_b * bac + p.c_m * mi + (p.e_b + p.e_m) * p.s_t - p.mu_t;
    let a0 = p.s_t;
    let tc = cubic_real_roots(a3, a2, a1, a0)
        .into_iter()
        .filter(|&t| t > 0.0)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))?;
    let state = StateVec::new(mu, mi, bac, tc);
    let infection = p.beta * mu * bac;
    let h = (infection - p.b * mi - saturating_kill_rate(&state, p)) / infection;
    Some((h, state))
}

/// Bacterial-load grid used by the equilibrium scan.
pub fn load_grid(b_min: f64, b_max: f64, points: usize, k: f64) -> Vec<f64> {
    let log_span = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
            .collect()
    };
    let half = 0.5 * k;
    if b_max <= half || points < 4 {
        let mut g = log_span(b_min, b_max, points);
        g[0] = b_min;
        *g.last_mut().unwrap() = b_max;
        return g;
    }
    let n_low = points / 2;
    let mut grid = log_span(b_min, half, n_low);
    let gap_min = (k - b_max).max(1e-13 * k);
    let near = log_span(half, gap_min, points - n_low + 1);
    grid.extend(near.into_iter().skip(1).map(|g| k - g));
    grid.dedup_by(|a, b| *a <= *b);
    grid[0] = b_min;
    grid
}

/// Infected equilibria with `B` in `b_range`, ascending in `B`.
pub fn infected_equilibria(
    params: &ModelParams,
    b_range: (f64, f64),
    grid_points: usize,
) -> Result<Vec<EquilibriumRecord>> {
    params.validate_allow_zero_delta()?;
    let (b_min, b_max) = b_range;
    if !(b_min > 0.0 && b_min < b_max && b_max <= params.k) {
        return Err(Error::Domain(format!(
            "bacterial range [{b_min}, {b_max}] must satisfy 0 < B_min < B_max <= K"
        )));
    }
    if grid_points < 100 {
        return Err(Error::Domain(format!("grid_points = {grid_points}, need at least 100")));
    }
    if params.n1 == params.n2 {
        return Err(Error::Singularity("N1 = N2 leaves M_i undetermined"));
    }

    let grid = load_grid(b_min, b_max, grid_points, params.k);
    let h: Vec<Option<f64>> = grid.iter().map(|&b| reduce(b, params).map(|r| r.0)).collect();
    let f = |b: f64| reduce(b, params).map(|r| r.0);

    let mut roots = Vec::new();
    for i in 1..grid.len() {
        if let (Some(h0), Some(h1)) = (h[i - 1], h[i]) {
            if h0 == 0.0 {
                roots.push(grid[i - 1]);
            } else if h1 != 0.0 && h0.signum() != h1.signum() {
                roots.extend(refine_bracket(f, grid[i - 1], grid[i], 1e-15));
            }
        }
        // a pair of roots hiding between three same-signed samples
        if i + 1 < grid.len() {
            if let (Some(a), Some(m), Some(c)) = (h[i - 1], h[i], h[i + 1]) {
                let same = a.signum() == m.signum() && m.signum() == c.signum();
                if same && m != 0.0 && m.abs() < a.abs() && m.abs() <= c.abs() {
                    let s = m.signum();
                    let (xm, fm) = golden_min(
                        |b| f(b).map_or(f64::INFINITY, |v| s * v),
                        grid[i - 1],
                        grid[i + 1],
                        100,
                    );
                    if fm < 0.0 {
                        roots.extend(refine_bracket(f, grid[i - 1], xm, 1e-15));
                        roots.extend(refine_bracket(f, xm, grid[i + 1], 1e-15));
                    }
                }
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());

    let mut out = Vec::with_capacity(roots.len());
    for b in roots {
        let Some((_, state)) = reduce(b, params) else { continue };
        let res = relative_drift_residual(&state, params);
        if !(res <= RESIDUAL_TOL) {
            return Err(Error::Consistency(format!(
                "equilibrium at B = {b} has relative drift residual {res:e}"
            )));
        }
        let eigenvalues = eigenvalues(&jacobian(&state, params)?);
        out.push(EquilibriumRecord {
            state,
            eigenvalues,
            stability: Stability::from_eigenvalues(&eigenvalues),
            branch_tag: BranchTag::MidInfected,
        });
    }
    tag_branches(&mut out, params.k);
    Ok(out)
}

/// Default bacterial range for scans: `[1e-6, K]`.
pub fn default_load_range(params: &ModelParams) -> (f64, f64) {
    (1e-6, params.k)
}

pub const DEFAULT_GRID_POINTS: usize = 3000;

/// Trivial plus infected equilibria with the default scan settings.
pub fn all_equilibria(params: &ModelParams) -> Result<Vec<EquilibriumRecord>> {
    let mut v = vec![trivial_equilibrium(params)];
    v.extend(infected_equilibria(params, default_load_range(params), DEFAULT_GRID_POINTS)?);
    Ok(v)
}

/// High: B >= K/100. Among the rest (ascending in B) everything up to the
/// largest stable equilibrium is Low and the remainder Mid; with no stable
/// one, loads below 1e3 count as Low.
fn tag_branches(eqs: &mut [EquilibriumRecord], k: f64) {
    let high = |e: &EquilibriumRecord| e.state.bacteria >= k / 100.0;
    let last_stable = eqs
        .iter()
        .filter(|e| !high(e) && e.stability == Stability::Stable)
        .map(|e| e.state.bacteria)
        .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.max(b))));
    for e in eqs.iter_mut() {
        e.branch_tag = if high(e) {
            BranchTag::HighInfected
        } else {
            let low = match last_stable {
                Some(s) => e.state.bacteria <= s,
                None => e.state.bacteria < 1e3,
            };
            if low {
                BranchTag::LowInfected
            } else {
                BranchTag::MidInfected
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    /// Central differences plus a per-entry bound on their round-off error.
    fn numeric_jacobian(s: &StateVec, p: &ModelParams) -> (Matrix4<f64>, Matrix4<f64>) {
        let x = s.to_vector();
        let mut j = Matrix4::zeros();
        let mut noise = Matrix4::zeros();
        for c in 0..4 {
            let h = 1e-6 * (1.0 + x[c].abs());
            let mut up = x;
            let mut dn = x;
            up[c] += h;
            dn[c] -= h;
            let fu = crate::model::drift(&StateVec::from_vector(&up), p).unwrap();
            let fd = crate::model::drift(&StateVec::from_vector(&dn), p).unwrap();
            j.set_column(c, &((fu - fd) / (2.0 * h)));
            for (r, m) in row_magnitudes(&StateVec::from_vector(&up), p).iter().enumerate() {
                noise[(r, c)] = 1e-15 * m / h;
            }
        }
        (j, noise)
    }

    fn row_magnitudes(s: &StateVec, p: &ModelParams) -> [f64; 4] {
        let r = crate::model::Rates::compute(s, p);
        let q = r.p;
        [
            q[0] + q[1] + q[2],
            q[2] + q[3] + q[4],
            r.proliferation_raw.abs() + p.n1 * q[3] + p.n2 * q[4] + q[6],
            q[7] + q[8] + q[9] + q[10],
        ]
    }

    #[test]
    fn trivial_values() {
        let p = ModelParams::default();
        let t = trivial_equilibrium(&p);
        assert_eq!(t.state.uninfected, 5e5);
        assert!(rel(t.state.t_cells, 20.0) < 1e-15);
        assert_eq!((t.state.infected, t.state.bacteria), (0.0, 0.0));
        let mut ones = p;
        ones.s_m = 1.0;
        ones.mu_m = 1.0;
        ones.s_t = 1.0;
        ones.mu_t = 1.0;
        assert_eq!(trivial_state(&ones), StateVec::new(1.0, 0.0, 0.0, 1.0));
        let e = eigen_closed_form(&p.with_delta(0.2));
        assert!(e.iter().any(|z| (z.re + 0.33).abs() < 1e-15));
        assert!(e.iter().any(|z| (z.re + 0.01).abs() < 1e-15));
    }

    #[test]
    fn char_coeffs_by_hand() {
        let p = ModelParams::default().with_delta(0.2);
        let c = char_coeffs(&p);
        assert!((c.c1 - 3.91625).abs() < 1e-12);
        let d0 = delta_threshold(&p);
        assert!((d0 - 0.3013).abs() < 1e-4, "{d0}");
        assert!(rel(c.c2, 1.61 * (d0 - 0.2)) < 1e-12);
        assert_eq!(char_coeffs(&p.with_delta(d0)).c2, 0.0);
    }

    #[test]
    fn threshold_special_cases() {
        let mut p = ModelParams::default();
        p.n1 = 25.0;
        p.n2 = 25.0;
        assert!(rel(delta_threshold(&p), p.eta * p.macrophage_capacity()) < 1e-14);
        p.eta = 0.1 / p.macrophage_capacity();
        assert!(rel(delta_threshold(&p), 0.1) < 1e-14);

        let mut q = ModelParams::default();
        q.b = 1e-12;
        let m0 = q.macrophage_capacity();
        let limit = q.eta * m0 - (q.n2 - q.n3) * q.beta * m0;
        assert!((delta_threshold(&q) - limit).abs() < 1e-9);
    }

    #[test]
    fn closed_form_spectrum_at_delta_02() {
        let p = ModelParams::default().with_delta(0.2);
        let e = eigen_closed_form(&p);
        assert!((e[0].re + 0.0421).abs() < 1e-4, "{:?}", e[0]);
        assert!((e[1].re + 3.874).abs() < 1e-3, "{:?}", e[1]);
        let num = eigenvalues(&jacobian(&trivial_state(&p), &p).unwrap());
        let mut cf = e;
        sort_spectrum(&mut cf);
        for (a, b) in num.iter().zip(cf.iter()) {
            assert!((a - b).norm() <= 1e-9 * b.norm(), "{a} vs {b}");
        }
    }

    #[test]
    fn spectrum_signs_around_threshold() {
        let p = ModelParams::default();
        let d0 = delta_threshold(&p);
        assert_eq!(eigen_closed_form(&p.with_delta(d0))[0], C64::new(0.0, 0.0));
        let e = eigen_closed_form(&p.with_delta(0.34));
        assert!(e[0].re > 0.0 && e[1].re < 0.0);
        assert_eq!(trivial_equilibrium(&p.with_delta(0.34)).stability, Stability::Saddle);
        assert_eq!(trivial_equilibrium(&p.with_delta(0.2)).stability, Stability::Stable);
    }

    #[test]
    fn jacobian_special_entries() {
        let p = ModelParams::default().with_delta(0.2);
        let j = jacobian(&StateVec::new(4e5, 0.0, 0.0, 30.0), &p).unwrap();
        assert_eq!(j[(1, 1)], -(p.b + p.gamma));
        assert_eq!(j[(2, 1)], p.n1 * p.b + p.n2 * p.gamma);
        assert_eq!(j[(0, 2)], -p.beta * 4e5);
        assert!(jacobian(&StateVec::new(f64::INFINITY, 0.0, 0.0, 0.0), &p).is_err());
    }

    #[test]
    fn lambda1_variants() {
        let p = ModelParams::default();
        let d0 = delta_threshold(&p);
        let exact = lambda1(&p.with_delta(0.29));
        let first = lambda1_approx(&p, 0.29, Lambda1Variant::FirstOrder).unwrap();
        assert!(rel(first, exact) < 0.1, "{first} vs {exact}");
        // the scaled form lacks the 1/c1 factor of the true expansion
        let scaled = lambda1_approx(&p, 0.29, Lambda1Variant::ScaledLinear).unwrap();
        let c1 = |d: f64| char_coeffs(&p.with_delta(d)).c1;
        assert!(rel(scaled, 1.61 * c1(0.29) / c1(d0) * (0.29 - d0)) < 1e-12);
        for v in [Lambda1Variant::ScaledLinear, Lambda1Variant::FirstOrder] {
            assert_eq!(lambda1_approx(&p, d0, v).unwrap(), 0.0);
            for i in 0..=30 {
                let d = 0.2 + 0.005 * i as f64;
                let a = lambda1_approx(&p, d, v).unwrap();
                assert_eq!(a.signum() == 1.0 && a != 0.0, d > d0, "{v:?} at {d}");
            }
        }
        // c1 = 0 at this delta
        let c1_zero = char_coeffs(&p.with_delta(0.0)).c1;
        assert!(matches!(
            lambda1_approx(&p, c1_zero, Lambda1Variant::FirstOrder),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn contour_single_point_and_ranges() {
        let p = ModelParams::default().with_delta(0.25);
        let m = lambda1_contour(&p, &[0.2], &[1.0]).unwrap();
        let direct = lambda1(&p.with(ParamName::B, 0.2).with(ParamName::Gamma, 1.0));
        assert_eq!(m, vec![vec![direct]]);
        assert!(lambda1_contour(&p, &[0.01], &[1.0]).is_err());
    }

    #[test]
    fn reference_equilibria() {
        let p = ModelParams::reference();
        let ltbi = StateVec::new(499519.6475, 3.3532, 48.0814, 74.9548);
        let eqs = infected_equilibria(&p.with_delta(0.27), (1e-6, p.k), 3000).unwrap();
        let hit = eqs
            .iter()
            .find(|e| rel(e.state.bacteria, ltbi.bacteria) < 1e-3)
            .expect("LTBI equilibrium");
        assert_eq!(hit.stability, Stability::Stable);
        assert_eq!(hit.branch_tag, BranchTag::LowInfected);
        for (a, b) in hit.state.to_array().iter().zip(ltbi.to_array()) {
            assert!(rel(*a, b) < 1e-3, "{a} vs {b}");
        }

        let active = StateVec::new(249.9805, 3104.0391, 9.9957e7, 1.5145e10);
        let eqs = infected_equilibria(&p.with_delta(0.35), (1e-6, p.k), 3000).unwrap();
        let stable: Vec<_> = eqs.iter().filter(|e| e.stability == Stability::Stable).collect();
        assert_eq!(stable.len(), 1);
        assert_eq!(stable[0].branch_tag, BranchTag::HighInfected);
        for (a, b) in stable[0].state.to_array().iter().zip(active.to_array()) {
            assert!(rel(*a, b) < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn bistable_slice() {
        let p = ModelParams::reference().with_delta(0.2);
        let eqs = infected_equilibria(&p, (1e-6, p.k), 3000).unwrap();
        let stable: Vec<_> = eqs.iter().filter(|e| e.stability == Stability::Stable).collect();
        assert_eq!(stable.len(), 1);
        assert!(stable[0].state.bacteria > 1e7 && stable[0].state.bacteria < 1e8);
        assert!(eqs.iter().any(|e| e.stability != Stability::Stable));
    }

    #[test]
    fn rejects_bad_ranges() {
        let p = ModelParams::default();
        assert!(infected_equilibria(&p, (0.0, 1.0), 200).is_err());
        assert!(infected_equilibria(&p, (1.0, 2e8), 200).is_err());
        assert!(infected_equilibria(&p, (1.0, 10.0), 50).is_err());
    }

    #[test]
    fn grid_reaches_close_to_capacity() {
        let g = load_grid(1e-6, 1e8, 1000, 1e8);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g[0], 1e-6);
        assert!(1e8 - g[g.len() - 1] < 1e-4);
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        (0.001f64..0.35, 0.05f64..0.5, 0.1f64..2.0, 1.25e-9f64..1.25e-7).prop_map(|(d, b, g, e)| {
            ModelParams::default()
                .with_delta(d)
                .with(ParamName::B, b)
                .with(ParamName::Gamma, g)
                .with(ParamName::Eta, e)
        })
    }

    proptest! {
        #[test]
        fn c2_identity(p in arb_params()) {
            // determinant of the (M_i, B) block at the trivial state
            let j = jacobian(&trivial_state(&p), &p).unwrap();
            let det = j[(1, 1)] * j[(2, 2)] - j[(1, 2)] * j[(2, 1)];
            let c = char_coeffs(&p);
            prop_assert!((c.c2 - det).abs() <= 1e-12 * det.abs().max(c.c2.abs()).max(1e-300) + 1e-15);
            prop_assert!((c.c1 + j[(1, 1)] + j[(2, 2)]).abs() <= 1e-12 * c.c1.abs());
        }

        #[test]
        fn jacobian_matches_finite_differences(
            p in arb_params(),
            mu in 1e2f64..1e6, mi in 1e-1f64..1e4, bac in 1e-1f64..1e8, tc in 1e0f64..1e6,
        ) {
            let s = StateVec::new(mu, mi, bac, tc);
            let a = jacobian(&s, &p).unwrap();
            let (n, noise) = numeric_jacobian(&s, &p);
            let scale = a.abs().max();
            for i in 0..4 {
                for j in 0..4 {
                    let err = (a[(i, j)] - n[(i, j)]).abs();
                    prop_assert!(err <= 1e-4 * a[(i, j)].abs() + 1e-9 * scale + noise[(i, j)],
                        "entry ({}, {}): {} vs {}", i, j, a[(i, j)], n[(i, j)]);
                }
            }
        }

        #[test]
        fn lambda1_sign_matches_threshold(p in arb_params()) {
            let c = char_coeffs(&p);
            prop_assume!(c.c1 > 0.0);
            let l1 = lambda1(&p);
            let d = p.delta - delta_threshold(&p);
            prop_assert_eq!(l1 > 0.0, d > 0.0);
        }
    }
}
