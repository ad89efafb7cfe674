//! Scalar root finding used by the equilibrium solver.

use std::f64::consts::PI;

/// Real roots of `a3 x^3 + a2 x^2 + a1 x + a0`, ascending.
///
/// Closed form (trigonometric for three real roots, Cardano otherwise),
/// followed by two Newton corrections per root to recover the digits lost
/// when the roots differ by many orders of magnitude.
pub fn cubic_real_roots(a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    if a3 == 0.0 {
        return quadratic_real_roots(a2, a1, a0);
    }
    let (a, b, c) = (a2 / a3, a1 / a3, a0 / a3);
    let shift = a / 3.0;
    // t^3 + p t + q with x = t - a/3
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let mut roots = if p == 0.0 && q == 0.0 {
        vec![-shift]
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v - shift]
    } else {
        // three real roots (p < 0 here)
        let r = (-p / 3.0).sqrt();
        let cos_arg = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0);
        let phi = cos_arg.acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi + 2.0 * PI * k as f64) / 3.0).cos() - shift)
            .collect()
    };

    let f = |x: f64| ((a3 * x + a2) * x + a1) * x + a0;
    let df = |x: f64| (3.0 * a3 * x + 2.0 * a2) * x + a1;
    for x in roots.iter_mut() {
        for _ in 0..2 {
            let d = df(*x);
            if d == 0.0 {
                break;
            }
            let next = *x - f(*x) / d;
            if next.is_finite() && f(next).abs() <= f(*x).abs() {
                *x = next;
            } else {
                break;
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    let mut r = vec![q / a, c / q];
    r.sort_by(f64::total_cmp);
    r
}

/// Refines a sign-changing bracket `[lo, hi]` of `f` with the Illinois
/// variant of regula falsi, falling back to bisection whenever the secant
/// point is not well inside the bracket. Stops when the bracket is narrower
/// than `rel_tol * |x|` or `f` hits zero exactly.
///
/// `f` may return `None` where it is undefined; such points are treated as
/// bisection failures and shrink the bracket towards the defined end.
pub fn refine_bracket<F>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Option<f64>
where
    F: FnMut(f64) -> Option<f64>,
{
    let mut flo = f(lo)?;
    let mut fhi = f(hi)?;
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let mut side = 0i8;
    for _ in 0..400 {
        let width = hi - lo;
        if width <= rel_tol * lo.abs().max(hi.abs()) || width <= f64::MIN_POSITIVE {
            break;
        }
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        let margin = 0.01 * width;
        if !(x > lo + margin && x < hi - margin) {
            x = 0.5 * (lo + hi);
        }
        let Some(fx) = f(x) else {
            // undefined interior point: fall back to plain bisection
            let mid = 0.5 * (lo + hi);
            match f(mid) {
                Some(fm) if fm.signum() == flo.signum() => {
                    lo = mid;
                    flo = fm;
                }
                Some(fm) => {
                    hi = mid;
                    fhi = fm;
                }
                None => return None,
            }
            continue;
        };
        if fx == 0.0 {
            return Some(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Some(if flo.abs() < fhi.abs() { lo } else { hi })
}

/// Golden-section search for the minimum of `f` on `[lo, hi]`.
pub fn golden_min<F>(mut f: F, mut lo: f64, mut hi: f64, iterations: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cubic_three_roots() {
        // (x-1)(x-2)(x-3)
        let r = cubic_real_roots(1.0, -6.0, 11.0, -6.0);
        assert_eq!(r.len(), 3);
        for (x, e) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_one_real_root() {
        // x^3 + x + 2 = (x+1)(x^2 - x + 2)
        let r = cubic_real_roots(1.0, 0.0, 1.0, 2.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn cubic_widely_separated_roots() {
        // -(x - 1.5e10)(x + 1e4)(x + 2e4) scaled like the T-cell cubic
        let (r1, r2, r3) = (1.5e10, -1e4, -2e4);
        let s = -3.3e-9;
        let a2 = -s * (r1 + r2 + r3);
        let a1 = s * (r1 * r2 + r1 * r3 + r2 * r3);
        let a0 = -s * r1 * r2 * r3;
        let r = cubic_real_roots(s, a2, a1, a0);
        let top = *r.last().unwrap();
        assert!((top - r1).abs() / r1 < 1e-13, "{r:?}");
    }

    #[test]
    fn cubic_degenerates_to_quadratic() {
        let r = cubic_real_roots(0.0, 1.0, -3.0, 2.0);
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bracket_refinement() {
        let root = refine_bracket(|x| Some(x * x - 2.0), 0.0, 2.0, 1e-15).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-14);
        assert!(refine_bracket(|x| Some(x * x + 1.0), -1.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn golden_section() {
        let (x, fx) = golden_min(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 80);
        assert!((x - 0.3).abs() < 1e-7 && (fx - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cubic_roots_satisfy_polynomial(r1 in -1e3f64..1e3, r2 in -1e3f64..1e3, r3 in -1e3f64..1e3, s in 0.1f64..10.0) {
            let a2 = -s * (r1 + r2 + r3);
            let a1 = s * (r1 * r2 + r1 * r3 + r2 * r3);
            let a0 = -s * r1 * r2 * r3;
            let roots = cubic_real_roots(s, a2, a1, a0);
            prop_assert!(!roots.is_empty());
            let scale = s * (1.0 + r1.abs()) * (1.0 + r2.abs()) * (1.0 + r3.abs());
            for x in roots {
                let v = ((s * x + a2) * x + a1) * x + a0;
                prop_assert!(v.abs() <= 1e-7 * scale, "residual {} at {}", v, x);
            }
        }
    }
}
