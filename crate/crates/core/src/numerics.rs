//! Derivative-free minimisers, finite-difference Hessians and the normal /
//! chi-square(1) quantile functions used by the likelihood code.

use crate::error::{Error, Result};

/// Outcome of a minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - sqrt(5)) / 2
const SCALAR_MAX_ITER: usize = 500;

fn eval_scalar<F: FnMut(f64) -> f64>(f: &mut F, x: f64) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation { at: vec![x], value: v })
    }
}

/// Bounded scalar minimisation by golden-section search with parabolic
/// interpolation (Brent). The endpoints are probed after the interior search
/// so minima sitting on a bound are returned exactly.
pub fn minimize_scalar<F>(mut objective: F, lower: f64, upper: f64, tol: f64) -> Result<OptimResult>
where
    F: FnMut(f64) -> f64,
{
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::domain(format!("invalid bracket [{lower}, {upper}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }

    let (mut a, mut b) = (lower, upper);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval_scalar(&mut objective, x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let sqrt_eps = f64::EPSILON.sqrt();

    while iterations < SCALAR_MAX_ITER {
        let mid = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval_scalar(&mut objective, u)?;

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    for edge in [lower, upper] {
        let f_edge = eval_scalar(&mut objective, edge)?;
        if f_edge <= fx {
            x = edge;
            fx = f_edge;
        }
    }

    Ok(OptimResult {
        argmin: vec![x],
        value: fx,
        iterations,
        converged,
    })
}

/// Nelder-Mead simplex minimisation.
///
/// Non-finite objective values are treated as `+inf`, which lets callers
/// reject infeasible points by returning `inf`. Converges when both the
/// simplex extent and the spread of function values fall below `tol`;
/// after convergence the simplex is rebuilt once around the best vertex and
/// the search resumed, which catches premature collapse.
pub fn minimize_multivariate<F>(
    mut objective: F,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if start.is_empty() {
        return Err(Error::domain("start point is empty"));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("start point {start:?} is not finite")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut f = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best = start.to_vec();
    let mut best_f = f(&best);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..2 {
        let (x, fx, iters, conv) = nelder_mead_run(&mut f, &best, tol, max_iter - iterations.min(max_iter));
        iterations += iters;
        let improved = best_f - fx;
        if fx <= best_f {
            best = x;
            best_f = fx;
        }
        converged = conv;
        if !conv || improved.abs() <= tol {
            break;
        }
    }

    Ok(OptimResult {
        argmin: best,
        value: best_f,
        iterations,
        converged,
    })
}

fn nelder_mead_run<F>(f: &mut F, start: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64, usize, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += if p[i].abs() > 1e-8 { 0.05 * p[i].abs() } else { 0.025 };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

    let mut iterations = 0;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let extent = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = values[1..]
            .iter()
            .map(|v| (v - values[0]).abs())
            .fold(0.0, f64::max);
        if extent <= tol && spread <= tol {
            return (simplex.swap_remove(0), values[0], iterations, true);
        }
        if iterations >= max_iter {
            return (simplex.swap_remove(0), values[0], iterations, false);
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(1.0);
        let f_reflected = f(&reflected);
        if f_reflected < values[0] {
            let expanded = along(2.0);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[n] = expanded;
                values[n] = f_expanded;
            } else {
                simplex[n] = reflected;
                values[n] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_reflected;
            continue;
        }
        let (contracted, f_contracted) = if f_reflected < values[n] {
            let c = along(0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = f(&c);
            (c, fc)
        };
        if f_contracted < values[n].min(f_reflected) {
            simplex[n] = contracted;
            values[n] = f_contracted;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            values[i] = f(&shrunk);
            simplex[i] = shrunk;
        }
    }
}

/// Finite-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-5)
}

/// Central-difference Hessian. Off-diagonal entries are averaged so the
/// result is exactly symmetric.
pub fn hessian_fd<F>(mut objective: F, point: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = point.len();
    let mut eval = |x: &[f64]| -> Result<f64> {
        let v = objective(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { at: x.to_vec(), value: v })
        }
    };
    let h: Vec<f64> = point.iter().map(|&x| fd_step(x)).collect();
    let f0 = eval(point)?;
    let mut hess = vec![vec![0.0; n]; n];
    let mut x = point.to_vec();

    for i in 0..n {
        x[i] = point[i] + h[i];
        let fp = eval(&x)?;
        x[i] = point[i] - h[i];
        let fm = eval(&x)?;
        x[i] = point[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                x[i] = point[i] + si * h[i];
                x[j] = point[j] + sj * h[j];
                let v = eval(&x);
                x[i] = point[i];
                x[j] = point[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let hij = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[i][j] = hij;
            hess[j][i] = hij;
        }
    }
    Ok(hess)
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting. `None` when the matrix is singular to working precision.
pub fn invert(matrix: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return None;
    }
    let scale = matrix
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for k in 0..n {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = a[row][col];
                if factor != 0.0 {
                    for k in 0..n {
                        a[row][k] -= factor * a[col][k];
                        inv[row][k] -= factor * inv[col][k];
                    }
                }
            }
        }
    }
    Some(inv)
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard-normal CDF: Acklam's rational approximation followed by
/// one Halley step against an `erfc`-based CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile probability {p} is outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    // Halley refinement
    let e = standard_normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Inverse CDF of the chi-square distribution with one degree of freedom.
pub fn chisq1_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile probability {p} is outside (0, 1)")));
    }
    let z = normal_quantile(0.5 * (1.0 + p))?;
    Ok(z * z)
}
