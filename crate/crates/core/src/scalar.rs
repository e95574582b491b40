//! Box denoiser `eta_a(x; gamma) = clamp(x / (1 + gamma), -a, a)` and the
//! Gaussian expectations over `Z ~ N(0, 1)` that the asymptotic analysis is
//! built from.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// `1 / sqrt(2 pi)`
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Parameters of the clipped-shrinkage denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserParams {
    /// Box level, `a >= 0`.
    pub a: f64,
    /// Shrinkage `gamma`; positive for anything produced by the fixed-point
    /// solver, zero is accepted by the kernels.
    pub gamma: f64,
}

impl DenoiserParams {
    pub fn new(a: f64, gamma: f64) -> Self {
        debug_assert!(
            a >= 0.0 && gamma >= 0.0,
            "invalid denoiser params a={a} gamma={gamma}"
        );
        Self { a, gamma }
    }

    /// Clip threshold on the *input* scale: `|x| < a (1 + gamma)` is the
    /// interior of the denoiser.
    #[inline]
    pub fn input_threshold(&self) -> f64 {
        self.a * (1.0 + self.gamma)
    }
}

/// The three Gaussian expectations of `eta_a(tau Z; gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelResult {
    /// `E[eta^2]`
    pub m2: f64,
    /// `E[eta']`
    pub d1: f64,
    /// `E[|eta|]`
    pub mabs: f64,
}

#[inline]
pub fn denoise(x: f64, p: DenoiserParams) -> f64 {
    (x / (1.0 + p.gamma)).clamp(-p.a, p.a)
}

/// Almost-everywhere derivative of [`denoise`]; zero on the kink.
#[inline]
pub fn denoise_deriv(x: f64, p: DenoiserParams) -> f64 {
    if x.abs() / (1.0 + p.gamma) < p.a {
        1.0 / (1.0 + p.gamma)
    } else {
        0.0
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal tail `Q(x) = P(Z > x)`.
#[inline]
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P(|Z| < b)` for `b >= 0`, evaluated without cancellation.
#[inline]
pub fn central_mass(b: f64) -> f64 {
    libm::erf(b / SQRT_2)
}

/// `E[Z^2 ; |Z| < b]`.
#[inline]
pub fn truncated_second_moment(b: f64) -> f64 {
    if b < 1e-3 {
        // Series: 2 b^3 / (3 sqrt(2 pi)) (1 - 3 b^2 / 10 + ...); direct form cancels.
        let b2 = b * b;
        2.0 * INV_SQRT_2PI * b * b2 / 3.0 * (1.0 - 0.3 * b2 + 3.0 * b2 * b2 / 56.0)
    } else {
        central_mass(b) - 2.0 * b * normal_pdf(b)
    }
}

/// Closed-form kernels. With `c = tau / (1 + gamma)` the denoised variable
/// is `clamp(c Z, -a, a)` and the clip point in `Z` units is `b = a / c`.
pub fn kernels_closed_form(tau: f64, p: DenoiserParams) -> GaussianKernelResult {
    debug_assert!(tau > 0.0);
    if p.a == 0.0 {
        return GaussianKernelResult {
            m2: 0.0,
            d1: 0.0,
            mabs: 0.0,
        };
    }
    let scale = tau / (1.0 + p.gamma);
    let b = p.a / scale;
    let tail = q_function(b);
    let m2 = scale * scale * truncated_second_moment(b) + 2.0 * p.a * p.a * tail;
    let d1 = central_mass(b) / (1.0 + p.gamma);
    let mabs = 2.0 * scale * (INV_SQRT_2PI - normal_pdf(b)) + 2.0 * p.a * tail;
    GaussianKernelResult { m2, d1, mabs }
}

/// Number of Simpson panels per smooth segment of the quadrature oracle.
const SIMPSON_PANELS: usize = 1 << 14;
/// Truncation half-width for the quadrature oracle (tail mass < 1e-23).
const QUAD_HALF_WIDTH: f64 = 10.0;

/// Composite Simpson on `[lo, hi]` with `panels` (even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    debug_assert!(panels.is_multiple_of(2));
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / panels as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..panels {
        let v = f(lo + h * i as f64);
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(lo) + f(hi) + 4.0 * odd + 2.0 * even)
}

/// `E[g(Z)]` for `Z ~ N(0,1)` by Simpson on `[-10, 10]`, split at the given
/// breakpoints so that each segment integrand is smooth.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(g: F, breakpoints: &[f64]) -> f64 {
    let mut knots = vec![-QUAD_HALF_WIDTH, QUAD_HALF_WIDTH];
    knots.extend(
        breakpoints
            .iter()
            .copied()
            .filter(|x| x.abs() < QUAD_HALF_WIDTH),
    );
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
        .windows(2)
        .map(|w| {
            // Segment ends are evaluated slightly inside the segment; exactly on
            // a kink rounding can pick the branch of the neighbouring segment.
            let nudge = |x: f64| 1e-12 * x.abs().max(1.0);
            let (lo, hi) = (w[0] + nudge(w[0]), w[1] - nudge(w[1]));
            if lo > hi {
                return 0.0;
            }
            simpson(
                |z| g(z.clamp(lo, hi)) * normal_pdf(z),
                w[0],
                w[1],
                SIMPSON_PANELS,
            )
        })
        .sum()
}

/// Quadrature oracle for [`kernels_closed_form`]; integrates the defining
/// expectations of [`denoise`] and [`denoise_deriv`] directly.
pub fn kernels_quadrature(tau: f64, p: DenoiserParams) -> GaussianKernelResult {
    debug_assert!(tau > 0.0);
    let kink = p.input_threshold() / tau;
    let bps = [-kink, kink];
    let m2 = gaussian_expectation(|z| denoise(tau * z, p).powi(2), &bps);
    let d1 = gaussian_expectation(|z| denoise_deriv(tau * z, p), &bps);
    let mabs = gaussian_expectation(|z| denoise(tau * z, p).abs(), &bps);
    GaussianKernelResult { m2, d1, mabs }
}

/// `sqrt(2 / pi)`, the mean of `|Z|`.
pub fn mean_abs_normal() -> f64 {
    (2.0 / PI).sqrt()
}
