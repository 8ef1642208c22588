//! Independent oracles for the integration and acceptance suites. Nothing here
//! calls into the library's numeric routines.

#![allow(dead_code)]

use frechet_core::metric_space::MetricPoint;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Plain Cholesky–Banachiewicz on a row-major square matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Log-Cholesky distance written straight from its definition.
pub fn log_cholesky_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let la = cholesky(a).expect("spd");
    let lb = cholesky(b).expect("spd");
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..i {
            s += (la[i][j] - lb[i][j]).powi(2);
        }
        s += (la[i][i].ln() - lb[i][i].ln()).powi(2);
    }
    s.sqrt()
}

pub fn rows_of(p: &MetricPoint) -> Vec<Vec<f64>> {
    let m = p.as_spd().expect("spd point");
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn sphere_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    d.clamp(-1.0, 1.0).acos()
}

pub fn sphere_vec(p: &MetricPoint) -> [f64; 3] {
    let v = p.as_sphere().expect("sphere point");
    [v[0], v[1], v[2]]
}

/// Nelder–Mead simplex minimizer with restarts around the best vertex.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64) -> (Vec<f64>, f64) {
    let mut best = start.to_vec();
    let mut best_val = f(&best);
    let mut scale = step;
    for _ in 0..8 {
        let (x, v) = nelder_mead_once(f, &best, scale, tol, 20_000);
        let improved = best_val - v;
        best = x;
        best_val = v;
        if improved.abs() < tol {
            break;
        }
        scale *= 0.5;
    }
    (best, best_val)
}

fn nelder_mead_once(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() <= tol * 1e-3 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut b = 0;
    for i in 1..=n {
        if vals[i] < vals[b] {
            b = i;
        }
    }
    (simplex[b].clone(), vals[b])
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Random SPD matrix `A Aᵀ + 0.5 I` as row-major rows.
pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect();
    (0..d)
        .map(|i| {
            (0..d).map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }).collect()
        })
        .collect()
}

/// Uniform random point within angular radius `radius` of `center`.
pub fn random_cap_point<R: Rng>(center: [f64; 3], radius: f64, rng: &mut R) -> [f64; 3] {
    let (e1, e2) = orthonormal_pair(center);
    let ang: f64 = rng.random::<f64>() * radius;
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let t = [0, 1, 2].map(|i| phi.cos() * e1[i] + phi.sin() * e2[i]);
    [0, 1, 2].map(|i| ang.cos() * center[i] + ang.sin() * t[i])
}

pub fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

/// Two unit vectors orthogonal to `c` and to each other.
pub fn orthonormal_pair(c: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d: f64 = pick.iter().zip(&c).map(|(a, b)| a * b).sum();
    let mut e1 = [0, 1, 2].map(|i| pick[i] - d * c[i]);
    let n = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    e1 = e1.map(|x| x / n);
    let e2 = [c[1] * e1[2] - c[2] * e1[1], c[2] * e1[0] - c[0] * e1[2], c[0] * e1[1] - c[1] * e1[0]];
    (e1, e2)
}

/// Numeric minimizer of `Σ wᵢ d²(yᵢ, ·)` over 2×2 / 3×3 SPD matrices,
/// parameterized by the Cholesky factor (log of the diagonal).
pub fn spd_numeric_minimum(points: &[Vec<Vec<f64>>], weights: &[f64]) -> f64 {
    let d = points[0].len();
    let assemble = |x: &[f64]| -> Vec<Vec<f64>> {
        let mut l = vec![vec![0.0; d]; d];
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                l[i][j] = x[k];
                k += 1;
            }
        }
        for i in 0..d {
            l[i][i] = x[k + i].exp();
        }
        (0..d).map(|i| (0..d).map(|j| (0..d).map(|m| l[i][m] * l[j][m]).sum()).collect()).collect()
    };
    let obj = |x: &[f64]| -> f64 {
        let y = assemble(x);
        points.iter().zip(weights).map(|(p, w)| w * log_cholesky_distance(p, &y).powi(2)).sum()
    };
    // start from the identity
    let start = vec![0.0; d * (d + 1) / 2];
    nelder_mead(&obj, &start, 0.5, 1e-14).1
}

/// Numeric minimizer of `Σ wᵢ d²(yᵢ, ·)` on S² through a gnomonic chart
/// centered at `center`.
pub fn sphere_numeric_minimum(points: &[[f64; 3]], weights: &[f64], center: [f64; 3]) -> f64 {
    let (e1, e2) = orthonormal_pair(center);
    let obj = |x: &[f64]| -> f64 {
        let v = [0, 1, 2].map(|i| center[i] + x[0] * e1[i] + x[1] * e2[i]);
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let p = v.map(|a| a / n);
        points.iter().zip(weights).map(|(y, w)| w * sphere_distance(*y, p).powi(2)).sum()
    };
    nelder_mead(&obj, &[0.0, 0.0], 0.2, 1e-14).1
}
