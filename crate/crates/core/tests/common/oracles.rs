//! Independent reference computations used by the test suites.
//!
//! Nothing in here calls into the library: each oracle recomputes its
//! quantity from first principles (quadrature, bisection, matrix powers,
//! exhaustive search).
#![allow(dead_code)]

use std::f64::consts::PI;

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Pre-split so a narrow feature cannot hide between the first samples.
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == pieces { b } else { lo + h };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 48)
        })
        .sum()
}

/// Gaussian tail by integrating the standard normal density.
pub fn gaussian_tail_by_quadrature(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - gaussian_tail_by_quadrature(-x);
    }
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    adaptive_simpson(pdf, x, x + 40.0, 1e-16)
}

/// Inverse Gaussian tail by bisection on the quadrature tail.
pub fn inverse_q_by_bisection(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_tail_by_quadrature(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Expected linearized packet error over an exponential SNR with mean `snr_avg`,
/// integrated numerically from the piecewise definition.
pub fn packet_error_by_quadrature(n: f64, b: f64, snr_avg: f64) -> f64 {
    let mu = (1.0 / (2.0 * PI)) * (n / (2f64.powf(2.0 * b / n) - 1.0)).sqrt();
    let beta = 2f64.powf(b / n) - 1.0;
    let g1 = beta - 1.0 / (2.0 * mu);
    let g2 = beta + 1.0 / (2.0 * mu);
    let pdf = |x: f64| (-x / snr_avg).exp() / snr_avg;
    let cap = 80.0 * snr_avg;
    let lower = g1.max(0.0);
    let outage = adaptive_simpson(pdf, 0.0, lower.min(cap), 1e-14);
    let linear = adaptive_simpson(
        |x: f64| (0.5 - mu * (x - beta)) * pdf(x),
        lower.min(cap),
        g2.min(cap),
        1e-14,
    );
    outage + linear
}

/// Poisson PMF by the recursive series `e^-x x^a / a!`.
pub fn poisson_pmf_series(mean: f64, a: usize) -> f64 {
    let mut term = (-mean).exp();
    for i in 0..a {
        term *= mean / (i + 1) as f64;
    }
    term
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Transition matrix of the per-user queue chain: from the empty state the
/// queue jumps to `a` with the Poisson probability of `a` arrivals (overflow
/// mass stays at 0); from `q >= 1` it drops to `q - 1` on success and stays
/// otherwise. `p_suc[q]` is used for `q >= 1`.
pub fn queue_transition_matrix(p_suc: &[f64], mean_arrivals: f64, q_th: usize) -> Vec<Vec<f64>> {
    let size = q_th + 1;
    let mut p = vec![vec![0.0; size]; size];
    let mut moved = 0.0;
    for a in 1..=q_th {
        let pa = poisson_pmf_series(mean_arrivals, a);
        p[0][a] = pa;
        moved += pa;
    }
    p[0][0] = 1.0 - moved;
    for q in 1..=q_th {
        p[q][q - 1] = p_suc[q];
        p[q][q] = 1.0 - p_suc[q];
    }
    p
}

/// Stationary vector by powering the transition matrix (repeated squaring
/// with row renormalization, then plain power-iteration polish).
pub fn stationary_by_power_iteration(p_suc: &[f64], mean_arrivals: f64, q_th: usize) -> Vec<f64> {
    let p = queue_transition_matrix(p_suc, mean_arrivals, q_th);
    let mut m = p.clone();
    for _ in 0..48 {
        m = mat_mul(&m, &m);
        // Row sums drift by rounding and the drift compounds under squaring.
        for row in m.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let size = q_th + 1;
    let mut pi: Vec<f64> = (0..size).map(|j| (0..size).map(|i| m[i][j]).sum::<f64>() / size as f64).collect();
    for _ in 0..200 {
        let next: Vec<f64> = (0..size)
            .map(|j| (0..size).map(|i| pi[i] * p[i][j]).sum())
            .collect();
        pi = next;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|v| v / total).collect()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`,
/// seeded by a coarse uniform scan.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    let scan: usize = 400;
    let h = (hi - lo) / scan as f64;
    let mut best: usize = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..=scan {
        let v = f(lo + h * i as f64);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let mut a = lo + h * best.saturating_sub(1) as f64;
    let mut b = (lo + h * (best + 1) as f64).min(hi);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
