//! One- and two-parameter scans for folds (LP) and the transcritical
//! branch point (BP) of the trivial equilibrium.
//!
//! Folds are located by bisecting on the number of infected equilibria, so
//! no test function has to be evaluated at the singular Jacobian. The
//! branch point is where lambda1 of the trivial state changes sign; the
//! scan grid gets two extra nodes hugging it so that the single equilibrium
//! created there never shares a cell with a fold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    default_load_range, delta_threshold, eigenvalues, infected_equilibria, jacobian, lambda1,
    trivial_equilibrium, trivial_state, EquilibriumRecord, Stability, DEFAULT_GRID_POINTS,
};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamName, StateVec};

/// Relative half-width of the cell reserved around a branch point.
const BP_GAP: f64 = 1e-6;

/// Relative precision of fold locations.
const FOLD_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct BranchDiagram {
    pub parameter: ParamName,
    pub base: ModelParams,
    /// Strictly increasing.
    pub values: Vec<f64>,
    /// Trivial equilibrium first, then infected ones ascending in B. Empty
    /// where the solver failed.
    pub equilibria: Vec<Vec<EquilibriumRecord>>,
    pub failures: Vec<(f64, String)>,
    /// Parameter values at which lambda1 of the trivial state vanishes.
    pub branch_points: Vec<f64>,
}

impl BranchDiagram {
    pub fn stable_count(&self, i: usize) -> usize {
        self.equilibria[i].iter().filter(|e| e.stability == Stability::Stable).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BifKind {
    #[serde(rename = "LP")]
    Fold,
    #[serde(rename = "BP")]
    BranchPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BifPoint {
    pub kind: BifKind,
    pub parameter_value: f64,
    /// Value of the second parameter for points on a two-parameter trace.
    pub second_value: Option<f64>,
    pub state: StateVec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionLabel {
    pub region: u8,
    pub bounds: (f64, f64),
    /// Set when fewer than three folds were found; regions are then the
    /// intervals between whatever folds exist.
    pub degenerate: bool,
}

fn equilibria_at(params: &ModelParams) -> Result<Vec<EquilibriumRecord>> {
    let mut v = vec![trivial_equilibrium(params)];
    v.extend(infected_equilibria(params, default_load_range(params), DEFAULT_GRID_POINTS)?);
    Ok(v)
}

fn infected_at(params: &ModelParams) -> Result<Vec<EquilibriumRecord>> {
    infected_equilibria(params, default_load_range(params), DEFAULT_GRID_POINTS)
}

/// Sign changes of lambda1 between consecutive values, refined by bisection.
fn branch_points_on(params: &ModelParams, name: ParamName, values: &[f64]) -> Vec<f64> {
    let l1 = |v: f64| lambda1(&params.with(name, v));
    let mut out = Vec::new();
    for w in values.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (l1(lo), l1(hi));
        if flo == 0.0 {
            out.push(lo);
            continue;
        }
        if flo.signum() == fhi.signum() || fhi == 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if l1(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out.dedup();
    out
}

/// Equilibria on a uniform grid of `grid_points` values of `name` over
/// `range`, with extra nodes next to each branch point.
pub fn branch_scan(
    params: &ModelParams,
    name: ParamName,
    range: (f64, f64),
    grid_points: usize,
) -> Result<BranchDiagram> {
    let (lo, hi) = range;
    if let Some((blo, bhi)) = name.scan_bounds() {
        if !(lo >= blo && hi <= bhi) {
            return Err(Error::Domain(format!(
                "{name} range [{lo}, {hi}] exceeds the scan bounds [{blo}, {bhi}]"
            )));
        }
    }
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty range [{lo}, {hi}]")));
    }
    if grid_points < 200 {
        return Err(Error::Domain(format!("grid_points = {grid_points}, need at least 200")));
    }
    let mut values: Vec<f64> = (0..grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64)
        .collect();
    let bps = branch_points_on(params, name, &values);
    for &bp in &bps {
        let gap = BP_GAP * bp.abs().max(f64::MIN_POSITIVE);
        values.extend([bp - gap, bp + gap].into_iter().filter(|v| *v > lo && *v < hi));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();

    let results: Vec<Result<Vec<EquilibriumRecord>>> = values
        .par_iter()
        .map(|&v| equilibria_at(&params.with(name, v)))
        .collect();
    let mut equilibria = Vec::with_capacity(values.len());
    let mut failures = Vec::new();
    for (v, r) in values.iter().zip(results) {
        match r {
            Ok(e) => equilibria.push(e),
            Err(e) => {
                failures.push((*v, e.to_string()));
                equilibria.push(Vec::new());
            }
        }
    }
    Ok(BranchDiagram {
        parameter: name,
        base: *params,
        values,
        equilibria,
        failures,
        branch_points: bps,
    })
}

/// Equilibria on the richer side of a bracketing cell; the fold state is
/// the midpoint of the two closest ones (in log B).
fn merging_state(eqs: &[EquilibriumRecord]) -> Option<StateVec> {
    let best = eqs
        .windows(2)
        .min_by(|a, b| {
            let da = (a[1].state.bacteria / a[0].state.bacteria).ln();
            let db = (b[1].state.bacteria / b[0].state.bacteria).ln();
            da.total_cmp(&db)
        })?;
    let (x, y) = (best[0].state.to_vector(), best[1].state.to_vector());
    Some(StateVec::from_vector(&((x + y) * 0.5)))
}

fn locate_folds(
    params: &ModelParams,
    name: ParamName,
    (mut lo, n_lo): (f64, usize),
    (mut hi, n_hi): (f64, usize),
    depth: usize,
    out: &mut Vec<BifPoint>,
) -> Result<()> {
    let count = |v: f64| infected_at(&params.with(name, v)).map(|e| e.len());
    let change = n_hi as i64 - n_lo as i64;
    if change == 0 {
        return Ok(());
    }
    if change.abs() > 2 && depth < 60 {
        let mid = 0.5 * (lo + hi);
        let n_mid = count(mid)?;
        locate_folds(params, name, (lo, n_lo), (mid, n_mid), depth + 1, out)?;
        return locate_folds(params, name, (mid, n_mid), (hi, n_hi), depth + 1, out);
    }
    if change.abs() != 2 {
        return Err(Error::GridTooCoarse { lo, hi, change });
    }
    while hi - lo > FOLD_TOL * lo.abs().max(hi.abs()) {
        let mid = 0.5 * (lo + hi);
        let n_mid = count(mid)?;
        if n_mid == n_lo {
            lo = mid;
        } else if n_mid == n_hi {
            hi = mid;
        } else {
            // a second structure change hides in this cell
            locate_folds(params, name, (lo, n_lo), (mid, n_mid), depth + 1, out)?;
            return locate_folds(params, name, (mid, n_mid), (hi, n_hi), depth + 1, out);
        }
    }
    let rich = if n_lo > n_hi { lo } else { hi };
    let eqs = infected_at(&params.with(name, rich))?;
    let state = merging_state(&eqs).ok_or_else(|| Error::Consistency("fold without a pair".into()))?;
    out.push(BifPoint {
        kind: BifKind::Fold,
        parameter_value: 0.5 * (lo + hi),
        second_value: None,
        state,
    });
    Ok(())
}

/// Saddle-node points of a diagram, ascending in the scanned parameter.
pub fn detect_folds(diagram: &BranchDiagram) -> Result<Vec<BifPoint>> {
    let name = diagram.parameter;
    let mut out = Vec::new();
    for i in 1..diagram.values.len() {
        let (a, b) = (&diagram.equilibria[i - 1], &diagram.equilibria[i]);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let (lo, hi) = (diagram.values[i - 1], diagram.values[i]);
        // the trivial record is always first
        let (n_lo, n_hi) = (a.len() - 1, b.len() - 1);
        if n_lo == n_hi {
            continue;
        }
        let spans_bp = diagram.branch_points.iter().any(|&bp| bp >= lo && bp <= hi);
        let change = n_hi as i64 - n_lo as i64;
        if spans_bp {
            if change.abs() == 1 {
                continue;
            }
            return Err(Error::GridTooCoarse { lo, hi, change });
        }
        locate_folds(&diagram.base, name, (lo, n_lo), (hi, n_hi), 0, &mut out)?;
    }
    out.sort_by(|x, y| x.parameter_value.total_cmp(&y.parameter_value));
    Ok(out)
}

/// Closed-form threshold, cross-checked by bisection on the sign of the
/// largest real part of the numerically computed trivial-state spectrum.
pub fn detect_branch_point(params: &ModelParams) -> Result<BifPoint> {
    let (point, _) = branch_point_with_check(params)?;
    Ok(point)
}

/// As [`detect_branch_point`], also returning the numerically bisected value.
pub fn branch_point_with_check(params: &ModelParams) -> Result<(BifPoint, f64)> {
    params.validate_allow_zero_delta()?;
    let d0 = delta_threshold(params);
    if !(d0 > 0.0) {
        return Err(Error::Domain(format!(
            "threshold {d0} is not positive; no branch point for delta > 0"
        )));
    }
    let growth = |d: f64| -> Result<f64> {
        let p = params.with_delta(d);
        Ok(eigenvalues(&jacobian(&trivial_state(&p), &p)?)[0].re)
    };
    let (mut lo, mut hi) = (0.5 * d0, 1.5 * d0);
    if !(growth(lo)? < 0.0 && growth(hi)? > 0.0) {
        return Err(Error::Consistency(format!(
            "trivial spectrum does not change sign across [{lo}, {hi}]"
        )));
    }
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if growth(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let numeric = 0.5 * (lo + hi);
    if (numeric - d0).abs() > 1e-6 * d0 {
        return Err(Error::Consistency(format!(
            "closed-form threshold {d0} disagrees with numeric {numeric}"
        )));
    }
    let point = BifPoint {
        kind: BifKind::BranchPoint,
        parameter_value: d0,
        second_value: None,
        state: trivial_state(params),
    };
    Ok((point, numeric))
}

/// Scan grid used for region classification and two-parameter traces.
pub const REGION_SCAN_POINTS: usize = 200;

/// Folds of a full proliferation-rate scan with the other parameters fixed.
pub fn delta_folds(params: &ModelParams) -> Result<Vec<BifPoint>> {
    let range = ParamName::Delta.scan_bounds().expect("delta bounds");
    let diagram = branch_scan(params, ParamName::Delta, range, REGION_SCAN_POINTS)?;
    detect_folds(&diagram)
}

/// Region containing `params.delta`: 1 below the lowest fold, 4 above the
/// third, counted upwards in between.
pub fn classify_region(params: &ModelParams) -> Result<RegionLabel> {
    let folds: Vec<f64> = delta_folds(params)?.iter().map(|f| f.parameter_value).collect();
    Ok(region_from_folds(params.delta, &folds))
}

pub fn region_from_folds(delta: f64, folds: &[f64]) -> RegionLabel {
    let mut edges = vec![0.0];
    edges.extend(folds.iter().copied().take(3));
    edges.push(f64::INFINITY);
    let idx = edges.windows(2).position(|w| delta < w[1]).unwrap_or(edges.len() - 2);
    RegionLabel {
        region: idx as u8 + 1,
        bounds: (edges[idx], edges[idx + 1]),
        degenerate: folds.len() < 3,
    }
}

#[derive(Clone, Debug, Default)]
pub struct BoundaryTrace {
    /// Each polyline is a list of (delta, second parameter) points.
    pub lp_curves: Vec<Vec<(f64, f64)>>,
    pub bp_curve: Vec<(f64, f64)>,
    /// Slice values whose scan failed, with the reason.
    pub failures: Vec<(f64, String)>,
    /// Folds per slice, ascending in delta.
    pub slice_folds: Vec<(f64, Vec<f64>)>,
}

/// Fold and branch-point curves in the (delta, `second`) plane from
/// `slices` equally spaced values of `second`.
pub fn boundary_trace_2d(
    params: &ModelParams,
    second: ParamName,
    range: (f64, f64),
    slices: usize,
) -> Result<BoundaryTrace> {
    if !matches!(second, ParamName::B | ParamName::Gamma | ParamName::Eta) {
        return Err(Error::Domain(format!("cannot trace against {second}")));
    }
    let (blo, bhi) = second.scan_bounds().expect("scan bounds");
    let (lo, hi) = range;
    if !(lo >= blo && hi <= bhi && lo <= hi) || slices == 0 {
        return Err(Error::Domain(format!(
            "{second} range [{lo}, {hi}] outside [{blo}, {bhi}] or no slices"
        )));
    }
    let values: Vec<f64> = (0..slices)
        .map(|i| if slices == 1 { lo } else { lo + (hi - lo) * i as f64 / (slices - 1) as f64 })
        .collect();
    let per_slice: Vec<(Result<Vec<BifPoint>>, Option<f64>)> = values
        .par_iter()
        .map(|&s| {
            let p = params.with(second, s);
            let bp = detect_branch_point(&p).ok().map(|b| b.parameter_value);
            (delta_folds(&p), bp)
        })
        .collect();

    let mut trace = BoundaryTrace::default();
    // open curves: (index into lp_curves, last delta)
    for (&s, (folds, bp)) in values.iter().zip(per_slice) {
        if let Some(d) = bp.filter(|d| *d <= 0.35) {
            trace.bp_curve.push((d, s));
        }
        let folds = match folds {
            Ok(f) => f,
            Err(e) => {
                trace.failures.push((s, e.to_string()));
                continue;
            }
        };
        let deltas: Vec<f64> = folds.iter().map(|f| f.parameter_value).collect();
        attach_points(&mut trace.lp_curves, &deltas, s);
        trace.slice_folds.push((s, deltas));
    }
    Ok(trace)
}

/// Nearest-neighbour continuation: each new point extends the curve whose
/// last delta is closest, unless another point of the same slice is closer.
fn attach_points(curves: &mut Vec<Vec<(f64, f64)>>, deltas: &[f64], s: f64) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in deltas.iter().enumerate() {
        for (j, c) in curves.iter().enumerate() {
            let last = c.last().expect("curves are never empty").0;
            pairs.push(((d - last).abs(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_point = vec![false; deltas.len()];
    let mut used_curve = vec![false; curves.len()];
    for (dist, i, j) in pairs {
        if used_point[i] || used_curve[j] || dist > 0.05 {
            continue;
        }
        curves[j].push((deltas[i], s));
        used_point[i] = true;
        used_curve[j] = true;
    }
    for (i, &d) in deltas.iter().enumerate() {
        if !used_point[i] {
            curves.push(vec![(d, s)]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_from_folds() {
        let folds = [0.001, 0.26, 0.29];
        assert_eq!(region_from_folds(0.0005, &folds).region, 1);
        assert_eq!(region_from_folds(0.2, &folds).region, 2);
        let r3 = region_from_folds(0.27, &folds);
        assert_eq!((r3.region, r3.bounds), (3, (0.26, 0.29)));
        let r4 = region_from_folds(0.35, &folds);
        assert_eq!(r4.region, 4);
        assert!(r4.bounds.1.is_infinite() && !r4.degenerate);
        let reduced = region_from_folds(0.3, &[0.1]);
        assert!(reduced.degenerate);
        assert_eq!(reduced.region, 2);
    }

    #[test]
    fn branch_point_collapses_with_equal_release() {
        let mut p = ModelParams::default();
        p.n1 = 25.0;
        p.n2 = 25.0;
        p.eta = 0.1 / p.macrophage_capacity();
        let bp = detect_branch_point(&p).unwrap();
        assert!((bp.parameter_value - 0.1).abs() < 1e-12);
        assert_eq!(bp.kind, BifKind::BranchPoint);
    }

    #[test]
    fn branch_point_agrees_with_numeric_bisection() {
        for p in [ModelParams::default(), ModelParams::reference()] {
            let (bp, numeric) = branch_point_with_check(&p).unwrap();
            assert!((bp.parameter_value - numeric).abs() <= 1e-8 * numeric);
            let below = trivial_equilibrium(&p.with_delta(0.99 * numeric));
            let above = trivial_equilibrium(&p.with_delta(1.01 * numeric));
            assert_eq!(below.stability, Stability::Stable);
            assert_eq!(above.stability, Stability::Saddle);
        }
    }

    #[test]
    fn attach_follows_nearest() {
        let mut curves = Vec::new();
        attach_points(&mut curves, &[0.1, 0.2], 1.0);
        attach_points(&mut curves, &[0.21, 0.11], 2.0);
        attach_points(&mut curves, &[0.5], 3.0);
        assert_eq!(curves.len(), 3);
        assert_eq!(curves[0], vec![(0.1, 1.0), (0.11, 2.0)]);
        assert_eq!(curves[1], vec![(0.2, 1.0), (0.21, 2.0)]);
    }

    #[test]
    fn scan_rejects_bad_ranges() {
        let p = ModelParams::default();
        assert!(branch_scan(&p, ParamName::Delta, (0.0, 0.5), 200).is_err());
        assert!(branch_scan(&p, ParamName::Delta, (0.1, 0.2), 10).is_err());
        assert!(boundary_trace_2d(&p, ParamName::C, (1.0, 2.0), 3).is_err());
    }

    #[test]
    fn monotone_diagram_has_no_folds() {
        // near zero proliferation only the trivial state exists
        let p = ModelParams::reference();
        let d = branch_scan(&p, ParamName::Delta, (0.0, 0.0004), 200).unwrap();
        assert!(d.failures.is_empty());
        assert!(detect_folds(&d).unwrap().is_empty());
        assert_eq!(d.stable_count(0), 1);
        assert_eq!(d.equilibria[0].len(), 1);
    }
}
