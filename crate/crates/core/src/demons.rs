//! Demons-type pre-image iteration
//!
//! ```text
//! u ← K_e ∗ (u − τ · K_f ∗ (∇_u D + λ∇_u R))
//! ```
//!
//! An absent kernel stands for the Dirac impulse. With both kernels absent
//! this is plain gradient descent; `K_e` alone gives elastic demons
//! (smoothing of the iterate), `K_f` alone fluid demons (smoothing of the
//! update, e.g. a Sobolev gradient flow when `K_f` is a Sobolev filter), and
//! both together the fluid-elastic scheme.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::Network;
use crate::error::{Error, Result};
use crate::grid::{convolve, resample_to, BoundaryRule, Image};
use crate::kernels::Kernel;
use crate::objectives::{ObjectiveKind, ObjectiveSpec};
use crate::regularizers::RegularizerSpec;

/// Largest admissible jitter, as a fraction of the input size.
pub const MAX_JITTER_FRACTION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct DemonsConfig {
    /// `K_e`, applied to the updated iterate. `None` means identity.
    pub elastic_kernel: Option<Kernel>,
    /// `K_f`, applied to the gradient. `None` means identity.
    pub fluid_kernel: Option<Kernel>,
    /// τ
    pub step_size: f64,
    pub steps: usize,
    pub regularizer: RegularizerSpec,
    /// Project every iterate onto `[0, 1]`.
    pub clamp: bool,
    pub seed: u64,
    pub boundary: BoundaryRule,
}

impl Default for DemonsConfig {
    fn default() -> Self {
        DemonsConfig {
            elastic_kernel: None,
            fluid_kernel: None,
            step_size: 1.0,
            steps: 100,
            regularizer: RegularizerSpec::none(),
            clamp: false,
            seed: 0,
            boundary: BoundaryRule::Replicate,
        }
    }
}

impl DemonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Parameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        self.regularizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Octave {
    pub scale: f64,
    pub steps: usize,
    pub step_size: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctaveSchedule {
    /// Empty means one octave at scale 1 using the config's steps and τ.
    #[serde(default)]
    pub octaves: Vec<Octave>,
    #[serde(default)]
    pub jitter_fraction: f64,
}

impl OctaveSchedule {
    /// No octaves, no jitter.
    pub fn single() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_JITTER_FRACTION).contains(&self.jitter_fraction) {
            return Err(Error::Parameter(format!(
                "jitter fraction must lie in [0, {MAX_JITTER_FRACTION}], got {}",
                self.jitter_fraction
            )));
        }
        for (i, o) in self.octaves.iter().enumerate() {
            if !(o.scale.is_finite() && o.scale > 0.0) {
                return Err(Error::Parameter(format!("octave {i}: scale must be positive")));
            }
            if o.steps == 0 {
                return Err(Error::Parameter(format!("octave {i}: steps must be at least 1")));
            }
            if !(o.step_size.is_finite() && o.step_size > 0.0) {
                return Err(Error::Parameter(format!(
                    "octave {i}: step size must be positive"
                )));
            }
        }
        if self.octaves.windows(2).any(|w| w[1].scale < w[0].scale) {
            return Err(Error::Parameter("octave scales must be non-decreasing".into()));
        }
        Ok(())
    }

    /// The octaves to run, falling back to the config's steps and τ.
    pub fn resolved(&self, config: &DemonsConfig) -> Vec<Octave> {
        if self.octaves.is_empty() {
            vec![Octave {
                scale: 1.0,
                steps: config.steps,
                step_size: config.step_size,
            }]
        } else {
            self.octaves.clone()
        }
    }
}

/// Starting point of a run.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Image(Image),
    /// Uniform noise in `[low, high]` drawn from the run seed.
    Noise { low: f64, high: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::Noise {
            low: 0.4,
            high: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub octave: usize,
    pub data_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub grad_maxnorm: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub final_image: Image,
    pub metrics: Vec<StepMetrics>,
    pub wall_time: Duration,
}

impl RunResult {
    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        self.final_image == other.final_image && self.metrics == other.metrics
    }
}

/// One iteration: `K_e ∗ (u − τ·(K_f ∗ grad))`, then the optional clamp.
pub fn demons_step(u: &Image, grad: &Image, config: &DemonsConfig) -> Result<Image> {
    u.require_same_shape(grad, "demons_step gradient")?;
    let update = match &config.fluid_kernel {
        Some(k) => convolve(grad, k, config.boundary)?,
        None => grad.clone(),
    };
    let stepped = u.lincomb(1.0, &update, -config.step_size)?;
    let mut next = match &config.elastic_kernel {
        Some(k) => convolve(&stepped, k, config.boundary)?,
        None => stepped,
    };
    if config.clamp {
        next = next.clamped(0.0, 1.0);
    }
    Ok(next)
}

/// Integer translation by `(dx, dy)` with replicate fill:
/// `out(y, x) = u(clamp(y − dy), clamp(x − dx))`.
pub fn jitter_shift(image: &Image, offset: (isize, isize)) -> Result<Image> {
    let (dx, dy) = offset;
    let (h, w, _) = image.shape();
    if dx.unsigned_abs() > w || dy.unsigned_abs() > h {
        return Err(Error::Parameter(format!(
            "offset ({dx}, {dy}) exceeds image size {w}x{h}"
        )));
    }
    Ok(window(image, -dy, -dx, h, w))
}

/// `height×width` window whose origin sits at `(top, left)` in `u`, with
/// replicate fill outside `u`.
fn window(u: &Image, top: isize, left: isize, height: usize, width: usize) -> Image {
    let (h, w, c) = u.shape();
    let src = u.as_slice();
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let sy = (y as isize + top).clamp(0, h as isize - 1) as usize;
        for x in 0..width {
            let sx = (x as isize + left).clamp(0, w as isize - 1) as usize;
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Image::from_parts(height, width, c, out)
}

/// Maps a window gradient back onto the full frame by the inverse shift,
/// again with replicate fill.
fn unwindow(g: &Image, top: isize, left: isize, height: usize, width: usize) -> Image {
    window(g, -top, -left, height, width)
}

fn random_offset(rng: &mut ChaCha8Rng, fraction: f64, height: usize, width: usize) -> (isize, isize) {
    let ry = (fraction * height as f64).round() as isize;
    let rx = (fraction * width as f64).round() as isize;
    let dx = if rx > 0 { rng.gen_range(-rx..=rx) } else { 0 };
    let dy = if ry > 0 { rng.gen_range(-ry..=ry) } else { 0 };
    (dx, dy)
}

/// The starting iterate `run` uses for a network input of `shape` under
/// `seed`. Noise comes from the same stream as the run's first draws.
pub fn initial_image(init: &Init, shape: (usize, usize, usize), seed: u64) -> Result<Image> {
    draw_init(init, shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn draw_init(init: &Init, shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w, c) = shape;
    match init {
        Init::Image(im) => {
            if im.channels() != c {
                return Err(Error::Dimension(format!(
                    "initial image has {} channels, expected {c}",
                    im.channels()
                )));
            }
            Ok(im.clone())
        }
        Init::Noise { low, high } => {
            if !(low.is_finite() && high.is_finite() && low <= high) {
                return Err(Error::Parameter(format!("bad noise range [{low}, {high}]")));
            }
            Image::from_fn(h, w, c, |_, _, _| {
                if low == high {
                    *low
                } else {
                    rng.gen_range(*low..*high)
                }
            })
        }
    }
}

/// Runs the full schedule.
///
/// Per octave the current iterate is bilinearly resampled to
/// `scale × base size`. Every step draws a jitter offset, evaluates the
/// objective on the network-sized window of the shifted iterate, maps the
/// gradient back with the inverse shift, adds `λ∇R`, and applies
/// [`demons_step`]. All randomness comes from `config.seed`.
pub fn run(
    net: &Network,
    objective: &ObjectiveSpec,
    config: &DemonsConfig,
    schedule: &OctaveSchedule,
    init: &Init,
) -> Result<RunResult> {
    config.validate()?;
    schedule.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let constant_gradient = match &objective.kind {
        ObjectiveKind::ConstantGradient { gradient } => Some(gradient),
        _ => {
            net.layer_shape(objective.layer)?;
            None
        }
    };
    let (base_h, base_w, base_c) = match constant_gradient {
        Some(g) => g.shape(),
        None => {
            let s = net.input_shape();
            (s.height, s.width, s.channels)
        }
    };

    let mut u = draw_init(init, (base_h, base_w, base_c), &mut rng)?;

    let octaves = schedule.resolved(config);
    let total_steps: usize = octaves.iter().map(|o| o.steps).sum();
    let mut metrics = Vec::with_capacity(total_steps);
    let mut step = 0;
    for (oi, octave) in octaves.iter().enumerate() {
        let h = ((octave.scale * base_h as f64).round() as usize).max(1);
        let w = ((octave.scale * base_w as f64).round() as usize).max(1);
        if u.shape() != (h, w, base_c) {
            u = resample_to(&u, h, w)?;
        }
        let step_config = DemonsConfig {
            step_size: octave.step_size,
            ..config.clone()
        };
        for _ in 0..octave.steps {
            let (data_term, mut gradient) = match constant_gradient {
                Some(g) => (g.dot(&u)?, g.clone()),
                None => {
                    let (dx, dy) =
                        random_offset(&mut rng, schedule.jitter_fraction, base_h, base_w);
                    let top = (h as isize - base_h as isize).div_euclid(2) - dy;
                    let left = (w as isize - base_w as isize).div_euclid(2) - dx;
                    let view = window(&u, top, left, base_h, base_w);
                    let trace = net.forward_trace(&view, objective.layer)?;
                    let code = crate::cnn::FeatureCode::new(
                        trace.activations[objective.layer + 1].as_slice().to_vec(),
                        objective.layer,
                    );
                    let (value, cot) = objective.evaluate(&code)?;
                    let g = net.backward_from_trace(&trace, objective.layer, &cot, None)?;
                    (value, unwindow(&g, top, left, h, w))
                }
            };
            let reg_term = match config.regularizer.weighted(&u)? {
                Some((value, g)) => {
                    gradient = gradient.lincomb(1.0, &g, 1.0)?;
                    value
                }
                None => 0.0,
            };
            metrics.push(StepMetrics {
                step,
                octave: oi,
                data_term,
                reg_term,
                total: data_term + reg_term,
                grad_maxnorm: gradient.max_abs(),
            });
            if !data_term.is_finite() || !reg_term.is_finite() {
                return Err(Error::Numerical(format!(
                    "step {step} (octave {oi}): non-finite energy; {}",
                    last_good(&metrics)
                )));
            }
            u = demons_step(&u, &gradient, &step_config).map_err(|e| {
                Error::Numerical(format!(
                    "step {step} (octave {oi}) produced an invalid iterate ({e}); {}",
                    last_good(&metrics)
                ))
            })?;
            step += 1;
        }
    }
    Ok(RunResult {
        final_image: u,
        metrics,
        wall_time: started.elapsed(),
    })
}

fn last_good(metrics: &[StepMetrics]) -> String {
    match metrics.iter().rev().find(|m| m.total.is_finite()) {
        Some(m) => format!(
            "last finite step {} had total {} and gradient max-norm {}",
            m.step, m.total, m.grad_maxnorm
        ),
        None => "no finite step was recorded".to_string(),
    }
}

pub const METRICS_HEADER: &str = "step,octave,data_term,reg_term,total,grad_maxnorm";

/// Metrics as CSV, 17 significant digits per real.
pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            m.step, m.octave, m.data_term, m.reg_term, m.total, m.grad_maxnorm
        );
    }
    out
}

/// Parses the format written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<StepMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics CSV: bad header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("metrics CSV row {i}: {line:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(StepMetrics {
                step: f[0].parse().map_err(|_| bad())?,
                octave: f[1].parse().map_err(|_| bad())?,
                data_term: real(f[2])?,
                reg_term: real(f[3])?,
                total: real(f[4])?,
                grad_maxnorm: real(f[5])?,
            })
        })
        .collect()
}
