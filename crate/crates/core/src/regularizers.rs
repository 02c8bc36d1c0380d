//! Explicit regularizers `R(u)`: relaxed total variation and Dirichlet energy.
//!
//! Both use the same stencil pair: forward differences for `∇` (zero at the
//! far border, i.e. replicate) and backward differences for `div`, chosen as
//! the exact negative adjoint of `∇`. Channels are treated independently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;

pub const DEFAULT_TV_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    Tv,
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    #[serde(default)]
    pub kind: RegularizerKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_TV_EPSILON
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::None,
            lambda: 0.0,
            epsilon: DEFAULT_TV_EPSILON,
        }
    }
}

impl RegularizerSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn tv(lambda: f64, epsilon: f64) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Tv,
            lambda,
            epsilon,
        }
    }

    pub fn dirichlet(lambda: f64) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Dirichlet,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Parameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.kind == RegularizerKind::Tv && !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "TV epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Whether the term contributes anything at all.
    pub fn is_active(&self) -> bool {
        self.kind != RegularizerKind::None && self.lambda != 0.0
    }

    /// `(λR(u), λ∇R(u))`, or `None` when inactive.
    pub fn weighted(&self, u: &Image) -> Result<Option<(f64, Image)>> {
        self.validate()?;
        if !self.is_active() {
            return Ok(None);
        }
        let (value, grad) = match self.kind {
            RegularizerKind::Tv => tv(u, self.epsilon)?,
            RegularizerKind::Dirichlet => dirichlet(u)?,
            RegularizerKind::None => unreachable!("inactive kinds return early"),
        };
        Ok(Some((self.lambda * value, grad.scaled(self.lambda)?)))
    }
}

/// A discrete vector field: one `(∂x, ∂y)` pair per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub dx: Image,
    pub dy: Image,
}

/// Forward-difference gradient; the difference across the far border is 0.
pub fn grad(u: &Image) -> Field {
    let (h, w, c) = u.shape();
    let mut dx = u.zeros_like();
    let mut dy = u.zeros_like();
    let s = u.as_slice();
    {
        let gx = dx.as_mut_slice();
        let gy = dy.as_mut_slice();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let i = (y * w + x) * c + ch;
                    if x + 1 < w {
                        gx[i] = s[i + c] - s[i];
                    }
                    if y + 1 < h {
                        gy[i] = s[i + w * c] - s[i];
                    }
                }
            }
        }
    }
    Field { dx, dy }
}

/// Backward-difference divergence, the negative adjoint of [`grad`]:
/// `⟨grad u, p⟩ = ⟨u, −div p⟩` for all `u`, `p`.
pub fn div(p: &Field) -> Result<Image> {
    p.dx.require_same_shape(&p.dy, "div")?;
    let (h, w, c) = p.dx.shape();
    let px = p.dx.as_slice();
    let py = p.dy.as_slice();
    let mut out = p.dx.zeros_like();
    let o = out.as_mut_slice();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let i = (y * w + x) * c + ch;
                let mut v = 0.0;
                if x + 1 < w {
                    v += px[i];
                }
                if x > 0 {
                    v -= px[i - c];
                }
                if y + 1 < h {
                    v += py[i];
                }
                if y > 0 {
                    v -= py[i - w * c];
                }
                o[i] = v;
            }
        }
    }
    Ok(out)
}

/// Relaxed total variation `Σ sqrt(‖∇u‖² + ε²)` and its exact gradient
/// `−div(∇u / sqrt(‖∇u‖² + ε²))`.
pub fn tv(u: &Image, epsilon: f64) -> Result<(f64, Image)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "TV epsilon must be positive, got {epsilon}"
        )));
    }
    u.check_finite()?;
    let g = grad(u);
    let eps2 = epsilon * epsilon;
    let mut value = 0.0;
    let mut nx = g.dx.clone();
    let mut ny = g.dy.clone();
    for (a, b) in nx.as_mut_slice().iter_mut().zip(ny.as_mut_slice()) {
        let mag = (*a * *a + *b * *b + eps2).sqrt();
        value += mag;
        *a /= mag;
        *b /= mag;
    }
    let d = div(&Field { dx: nx, dy: ny })?;
    let gradient = d.scaled(-1.0)?;
    Ok((value, gradient))
}

/// Dirichlet energy `Σ ‖∇u‖²` and its exact gradient `−2·div(∇u)`.
pub fn dirichlet(u: &Image) -> Result<(f64, Image)> {
    u.check_finite()?;
    let g = grad(u);
    let value = g
        .dx
        .as_slice()
        .iter()
        .chain(g.dy.as_slice())
        .map(|v| v * v)
        .sum();
    let gradient = div(&g)?.scaled(-2.0)?;
    Ok((value, gradient))
}
