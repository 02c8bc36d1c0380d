//! Discrete smoothing kernels: Dirac, Gaussian and Sobolev filters, and
//! fitting of their parameter to a prescribed support size.
//!
//! The Sobolev filter `S_γ` is the discrete Green's function of the screened
//! Poisson operator `Id − γΔ`: it solves `(Id − γΔ_h) S = δ₀` on the kernel
//! window, with `Δ_h` the 5-point Laplacian under homogeneous Neumann
//! conditions (half-sample mirroring). Convolving an L² gradient with `S_γ`
//! yields the H¹ (Sobolev) gradient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;

/// Residual bound the Sobolev solve must reach.
pub const SOBOLEV_RESIDUAL_TOL: f64 = 1e-10;

/// Default support threshold used when fitting kernel parameters.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Sobolev,
    Dirac,
    Custom,
}

/// Kernel families whose parameter can be fitted to a support size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    Gaussian,
    Sobolev,
}

/// An odd-sized square filter, weights stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    side: usize,
    weights: Vec<f64>,
    kind: KernelKind,
    parameter: f64,
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "kernel side must be odd and positive, got {side}"
        )));
    }
    Ok(())
}

impl Kernel {
    /// A user-supplied kernel. Weights are taken as given.
    pub fn custom(side: usize, weights: Vec<f64>) -> Result<Self> {
        check_side(side)?;
        if weights.len() != side * side {
            return Err(Error::Dimension(format!(
                "kernel of side {side} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::Data(format!("kernel weight {w} is not finite")));
        }
        Ok(Kernel {
            side,
            weights,
            kind: KernelKind::Custom,
            parameter: 0.0,
        })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.side / 2
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// σ for Gaussian kernels, γ for Sobolev kernels, 0 otherwise.
    #[inline]
    pub fn parameter(&self) -> f64 {
        self.parameter
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.side + col]
    }

    pub fn center_weight(&self) -> f64 {
        let r = self.radius();
        self.at(r, r)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest weight on the outermost ring of the window.
    pub fn ring_max(&self) -> f64 {
        let n = self.side;
        if n == 1 {
            return self.weights[0];
        }
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m
                .max(self.at(0, i))
                .max(self.at(n - 1, i))
                .max(self.at(i, 0))
                .max(self.at(i, n - 1));
        }
        m
    }

    /// Largest deviation from central symmetry `w(i,j) = w(n-1-i, n-1-j)`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.side;
        let mut m = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                m = m.max((self.at(i, j) - self.at(n - 1 - i, n - 1 - j)).abs());
            }
        }
        m
    }

    /// Kernel weights as a single-channel image.
    pub fn to_image(&self) -> Image {
        Image::from_parts(self.side, self.side, 1, self.weights.clone())
    }

    /// Text dump: side on the first line, then one row per line with
    /// 17 significant digits per weight.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.side);
        for row in self.weights.chunks(self.side) {
            for (j, w) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{w:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`Kernel::to_csv`]. The result has kind `Custom`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let side: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Format("kernel CSV: missing side header".into()))?;
        if side == 0 || side.is_multiple_of(2) || side > 4097 {
            return Err(Error::Format(format!("kernel CSV: invalid side {side}")));
        }
        let mut weights = Vec::with_capacity(side * side);
        for (r, line) in lines.enumerate() {
            if r >= side {
                return Err(Error::Format("kernel CSV: too many rows".into()));
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("kernel CSV row {r}: {e}")))?;
            if row.len() != side {
                return Err(Error::Format(format!(
                    "kernel CSV row {r}: expected {side} values, got {}",
                    row.len()
                )));
            }
            weights.extend(row);
        }
        if weights.len() != side * side {
            return Err(Error::Format("kernel CSV: too few rows".into()));
        }
        Kernel::custom(side, weights).map_err(|e| Error::Format(e.to_string()))
    }
}

/// The discrete Dirac impulse: center 1, all other weights 0.
pub fn dirac(side: usize) -> Result<Kernel> {
    check_side(side)?;
    let mut weights = vec![0.0; side * side];
    weights[side * side / 2] = 1.0;
    Ok(Kernel {
        side,
        weights,
        kind: KernelKind::Dirac,
        parameter: 0.0,
    })
}

/// Sampled Gaussian `exp(-(x²+y²)/(2σ²))` on the window, normalized to unit mass.
///
/// Built as the outer product of the normalized 1D kernel, so it is exactly
/// separable and symmetric under transpose and 180° rotation.
pub fn gaussian_kernel(side: usize, sigma: f64) -> Result<Kernel> {
    check_side(side)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let g = gaussian_1d(side, sigma);
    let mut weights = Vec::with_capacity(side * side);
    for a in &g {
        for b in &g {
            weights.push(a * b);
        }
    }
    Ok(Kernel {
        side,
        weights,
        kind: KernelKind::Gaussian,
        parameter: sigma,
    })
}

/// Normalized 1D sampled Gaussian.
pub fn gaussian_1d(side: usize, sigma: f64) -> Vec<f64> {
    let r = (side / 2) as f64;
    let mut g: Vec<f64> = (0..side)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    // Pair symmetric terms so the sum is independent of summation direction.
    let half = side / 2;
    let mut total = g[half];
    for k in 1..=half {
        total += g[half - k] + g[half + k];
    }
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Applies `Id − γΔ_h` (Neumann, half-sample mirror) on a `side×side` grid.
fn screened_poisson_apply(side: usize, gamma: f64, s: &[f64], out: &mut [f64]) {
    for i in 0..side {
        for j in 0..side {
            let p = i * side + j;
            let mut lap = 0.0;
            if i > 0 {
                lap += s[p - side] - s[p];
            }
            if i + 1 < side {
                lap += s[p + side] - s[p];
            }
            if j > 0 {
                lap += s[p - 1] - s[p];
            }
            if j + 1 < side {
                lap += s[p + 1] - s[p];
            }
            out[p] = s[p] - gamma * lap;
        }
    }
}

/// `‖(Id − γΔ_h) w − δ₀‖_∞` for weights `w` on a `side×side` grid.
pub fn screened_poisson_residual(side: usize, gamma: f64, weights: &[f64]) -> f64 {
    let mut aw = vec![0.0; side * side];
    screened_poisson_apply(side, gamma, weights, &mut aw);
    let center = side * side / 2;
    aw.iter()
        .enumerate()
        .map(|(p, v)| (v - if p == center { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// Sobolev filter: solves `(Id − γΔ_h) S = δ₀` by conjugate gradients.
///
/// The operator is symmetric positive definite (identity plus a scaled graph
/// Laplacian), so CG converges. Weights are renormalized to unit mass after
/// the solve to strip round-off; Neumann conditions already give mass 1.
pub fn sobolev_kernel(side: usize, gamma: f64) -> Result<Kernel> {
    check_side(side)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let n = side * side;
    let center = n / 2;
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    r[center] = 1.0;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = 1.0;
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        screened_poisson_apply(side, gamma, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        if rr_new.sqrt() < 1e-15 {
            break;
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    let mass: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= mass);
    symmetrize(side, &mut x);

    let residual = screened_poisson_residual(side, gamma, &x);
    if residual.is_nan() || residual > SOBOLEV_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "Sobolev solve for side {side}, gamma {gamma} stalled at residual {residual:e}"
        )));
    }
    Ok(Kernel {
        side,
        weights: x,
        kind: KernelKind::Sobolev,
        parameter: gamma,
    })
}

/// Averages the eight dihedral images of the kernel, removing the last-bit
/// asymmetries that CG round-off introduces.
fn symmetrize(side: usize, w: &mut [f64]) {
    let n = side - 1;
    let src = w.to_vec();
    for i in 0..side {
        for j in 0..side {
            let vals = [
                src[i * side + j],
                src[j * side + i],
                src[(n - i) * side + (n - j)],
                src[(n - j) * side + (n - i)],
                src[(n - i) * side + j],
                src[i * side + (n - j)],
                src[(n - j) * side + i],
                src[j * side + (n - i)],
            ];
            // Fixed pairing so all eight orbit members get the identical sum.
            let mut sorted = vals;
            sorted.sort_by(f64::total_cmp);
            w[i * side + j] = sorted.iter().sum::<f64>() / 8.0;
        }
    }
}

/// Builds a kernel of the given family and parameter.
pub fn smoothing_kernel(kind: SmoothingKind, side: usize, parameter: f64) -> Result<Kernel> {
    match kind {
        SmoothingKind::Gaussian => gaussian_kernel(side, parameter),
        SmoothingKind::Sobolev => sobolev_kernel(side, parameter),
    }
}

/// Finds the parameter (σ or γ) at which the largest outer-ring weight of the
/// `side×side` kernel equals `threshold`.
///
/// Bisection in log-parameter over `[1e-6, side²]`. The outer-ring weight is
/// expected to grow monotonically with the parameter; a violation observed
/// during bisection is reported as a fit error.
pub fn fit_kernel_parameter(kind: SmoothingKind, side: usize, threshold: f64) -> Result<f64> {
    check_side(side)?;
    if side < 3 {
        return Err(Error::Parameter(format!(
            "fitting needs side >= 3, got {side}"
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let ring = |p: f64| -> Result<f64> { Ok(smoothing_kernel(kind, side, p)?.ring_max()) };

    let (mut lo, mut hi) = (1e-6_f64, (side * side) as f64);
    let (mut f_lo, mut f_hi) = (ring(lo)?, ring(hi)?);
    if !(f_lo < threshold && f_hi > threshold) {
        return Err(Error::Fit(format!(
            "{kind:?} side {side}: threshold {threshold:e} not bracketed; \
             ring max is {f_lo:e} at {lo:e} and {f_hi:e} at {hi:e}"
        )));
    }
    let tol = 1e-9 * threshold;
    let mut best = (f64::INFINITY, lo);
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let f_mid = ring(mid)?;
        if !(f_lo <= f_mid && f_mid <= f_hi) {
            return Err(Error::Fit(format!(
                "{kind:?} side {side}: ring weight not monotone in the parameter \
                 ({f_lo:e} at {lo:e}, {f_mid:e} at {mid:e}, {f_hi:e} at {hi:e})"
            )));
        }
        let err = (f_mid - threshold).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= tol || hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
        if f_mid < threshold {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    if best.0 > 1e-6 * threshold {
        return Err(Error::Fit(format!(
            "{kind:?} side {side}: bisection stalled {:e} away from threshold {threshold:e}",
            best.0
        )));
    }
    Ok(best.1)
}

/// Kernel of the given family fitted to `threshold` on a `side×side` window.
pub fn fitted_kernel(kind: SmoothingKind, side: usize, threshold: f64) -> Result<Kernel> {
    let p = fit_kernel_parameter(kind, side, threshold)?;
    smoothing_kernel(kind, side, p)
}
