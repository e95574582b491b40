//! Reference computations that share no code with the library: direct
//! numerical integration, grid search with bisection, dense linear algebra.
#![allow(dead_code)]

use std::f64::consts::PI;

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Composite Simpson on `[lo, hi]` with `panels` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// `E[g(Z)]` with `Z ~ N(0,1)`, `g` smooth on each of the pieces separated by
/// `kinks`. Samples on a kink are nudged into the piece being integrated.
pub fn gauss_expect(g: impl Fn(f64) -> f64, kinks: &[f64], panels: usize) -> f64 {
    const L: f64 = 12.0;
    let mut pts = vec![-L];
    let mut ks: Vec<f64> = kinks.iter().copied().filter(|k| k.abs() < L).collect();
    ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.extend(ks);
    pts.push(L);
    pts.windows(2)
        .map(|w| {
            let nudge = 1e-12 * (w[1] - w[0]);
            let inside = |z: f64| {
                g(if z == w[0] {
                    z + nudge
                } else if z == w[1] {
                    z - nudge
                } else {
                    z
                })
            };
            simpson(|z| inside(z) * phi(z), w[0], w[1], panels)
        })
        .sum()
}

/// `(E[eta^2], E[eta'], E[|eta|])` for `eta(x) = clamp(x / (1 + gamma), -a, a)`
/// evaluated at `tau Z`.
pub fn kernels_oracle(tau: f64, a: f64, gamma: f64, panels: usize) -> (f64, f64, f64) {
    let eta = |x: f64| (x / (1.0 + gamma)).max(-a).min(a);
    let k = a * (1.0 + gamma) / tau;
    let kinks = [-k, k];
    let m2 = gauss_expect(|z| eta(tau * z).powi(2), &kinks, panels);
    let d1 = gauss_expect(
        |z| {
            if (tau * z).abs() < a * (1.0 + gamma) {
                1.0 / (1.0 + gamma)
            } else {
                0.0
            }
        },
        &kinks,
        panels,
    );
    let mabs = gauss_expect(|z| eta(tau * z).abs(), &[-k, 0.0, k], panels);
    (m2, d1, mabs)
}

/// Root of `f` on a sign-changing bracket by the Illinois variant of
/// regula falsi.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let (mut flo, mut fhi) = (f(lo), f(hi));
    assert!(flo * fhi <= 0.0, "no sign change on [{lo}, {hi}]");
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    let mut side = 0;
    for _ in 0..500 {
        let x = (lo * fhi - hi * flo) / (fhi - flo);
        let fx = f(x);
        if fx == 0.0 || hi - lo <= tol * (1.0 + x.abs()) {
            return x;
        }
        if (fx > 0.0) == (flo > 0.0) {
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
        if (hi - lo).abs() <= tol * (1.0 + x.abs()) {
            return x;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed point `(tau^2, gamma)` by a grid scan for the sign change of the
/// calibration equation, then nested bisection, with every expectation from
/// quadrature.
pub fn fixed_point_oracle(a: f64, delta: f64, rho: f64) -> (f64, f64) {
    const PANELS: usize = 1024;
    let tau2_of = |gamma: f64| {
        let g = |t2: f64| 1.0 + kernels_oracle(t2.sqrt(), a, gamma, PANELS).0 / delta - t2;
        bisect(g, 1.0, 1.0 + a * a / delta + 1e-9, 1e-15)
    };
    let calib = |gamma: f64| {
        let t2 = tau2_of(gamma);
        gamma * (1.0 - kernels_oracle(t2.sqrt(), a, gamma, PANELS).1 / delta) - rho
    };
    let (lo, hi) = (rho * (1.0 - 1e-9), rho + 1.0 / delta + 1.0);
    let steps = 24;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&g| calib(g)).collect();
    let i = (0..steps)
        .find(|&i| vals[i] * vals[i + 1] <= 0.0)
        .expect("calibration sign change");
    let gamma = bisect(calib, grid[i], grid[i + 1], 1e-15);
    (tau2_of(gamma), gamma)
}

/// `delta rho (tau^2 - 1) + delta rho^2 tau^2 / gamma^2 + lambda a^2` from the
/// oracle fixed point.
pub fn risk_oracle(a: f64, delta: f64, rho: f64, lambda: f64) -> f64 {
    let (t2, g) = fixed_point_oracle(a, delta, rho);
    delta * rho * (t2 - 1.0) + delta * rho * rho * t2 / (g * g) + lambda * a * a
}

/// Row-major dense matrix helper.
#[derive(Clone, Debug)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub v: Vec<f64>,
}

impl Dense {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut v = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                v.push(f(i, j));
            }
        }
        Self { rows, cols, v }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.cols + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.at(i, j) * x[j]).sum())
            .collect()
    }

    pub fn t_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.at(i, j) * y[i]).sum())
            .collect()
    }
}

/// Solves `(H^T H + rho I) x = H^T s` by Cholesky.
pub fn ridge_oracle(h: &Dense, s: &[f64], rho: f64) -> Vec<f64> {
    let n = h.cols;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..h.rows).map(|k| h.at(k, i) * h.at(k, j)).sum::<f64>()
                + if i == j { rho } else { 0.0 };
        }
    }
    let b = h.t_mul_vec(s);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if i == j {
                sum.sqrt()
            } else {
                sum / l[j * n + j]
            };
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    x
}

/// `(1/N)|s - Hx|^2 + (rho/N)|x|^2`.
pub fn objective(h: &Dense, s: &[f64], x: &[f64], rho: f64) -> f64 {
    let r = h.mul_vec(x);
    let res: f64 = r.iter().zip(s).map(|(a, b)| (b - a).powi(2)).sum();
    let reg: f64 = x.iter().map(|v| v * v).sum();
    (res + rho * reg) / h.cols as f64
}

/// Minimum of the box-constrained ridge objective for `N = 2` by exhaustive
/// grid search followed by local refinement.
pub fn box_ridge_2d_oracle(h: &Dense, s: &[f64], rho: f64, a: f64) -> (Vec<f64>, f64) {
    assert_eq!(h.cols, 2);
    let f = |x0: f64, x1: f64| objective(h, s, &[x0, x1], rho);
    let mut best = (0.0, 0.0, f64::INFINITY);
    let g = 400;
    for i in 0..=g {
        for j in 0..=g {
            let x0 = -a + 2.0 * a * i as f64 / g as f64;
            let x1 = -a + 2.0 * a * j as f64 / g as f64;
            let v = f(x0, x1);
            if v < best.2 {
                best = (x0, x1, v);
            }
        }
    }
    let mut step = 2.0 * a / g as f64;
    while step > 1e-13 {
        let mut moved = false;
        for (d0, d1) in [
            (1.0, 0.0),
            (-1.0, 0.0),
            (0.0, 1.0),
            (0.0, -1.0),
            (1.0, 1.0),
            (-1.0, -1.0),
            (1.0, -1.0),
            (-1.0, 1.0),
        ] {
            let x0 = (best.0 + d0 * step).clamp(-a, a);
            let x1 = (best.1 + d1 * step).clamp(-a, a);
            let v = f(x0, x1);
            if v < best.2 {
                best = (x0, x1, v);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (vec![best.0, best.1], best.2)
}

/// Minimizes `(1/N)|s - Hx|^2 + (rho/N)|x|^2 + lambda |x|_inf^2` by
/// multi-start subgradient descent with diminishing steps; returns the best
/// value found.
pub fn unconstrained_subgradient_oracle(
    h: &Dense,
    s: &[f64],
    rho: f64,
    lambda: f64,
    starts: usize,
) -> f64 {
    let n = h.cols;
    let nf = n as f64;
    let val = |x: &[f64]| {
        let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        objective(h, s, x, rho) + lambda * inf * inf
    };
    let mut best = f64::INFINITY;
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut uniform = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..starts {
        let mut x: Vec<f64> = (0..n).map(|_| 2.0 * uniform() - 1.0).collect();
        let mut x_best = val(&x);
        for it in 0..20_000 {
            let r: Vec<f64> = h.mul_vec(&x).iter().zip(s).map(|(a, b)| a - b).collect();
            let mut g: Vec<f64> = h
                .t_mul_vec(&r)
                .iter()
                .zip(&x)
                .map(|(a, xi)| 2.0 * (a + rho * xi) / nf)
                .collect();
            let (imax, inf) = x.iter().enumerate().fold((0, 0.0f64), |m, (i, v)| {
                if v.abs() > m.1 {
                    (i, v.abs())
                } else {
                    m
                }
            });
            g[imax] += 2.0 * lambda * inf * x[imax].signum();
            let step = 0.5 / (1.0 + it as f64).sqrt();
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= step * gi;
            }
            x_best = x_best.min(val(&x));
        }
        best = best.min(x_best);
    }
    best
}
