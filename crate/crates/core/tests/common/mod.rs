//! Oracles and helpers shared by the integration tests.
#![allow(clippy::needless_range_loop, dead_code)]

use preimage_forge::cnn::{parameter_gradients, FeatureCode, LayerSpec, Network, Shape};
use preimage_forge::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Fraction of the largest gradient entry below which a coordinate is
/// compared against that floor instead of its own magnitude. Central
/// differences at `FD_STEP` carry an absolute rounding error near 1e-11, so
/// entries much smaller than the gradient's scale cannot be resolved to a
/// relative 1e-6.
pub const REL_FLOOR: f64 = 1e-3;

/// Relative error of `a` against `b`, with the denominator floored at `floor`;
/// 0 when both values are exactly 0.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
}

pub fn random_code(len: usize, origin: usize, seed: u64) -> FeatureCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureCode::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), origin)
}

/// Dense solve of `a x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// The matrix of `Id − γΔ_h` on a `side×side` grid with zero-flux borders:
/// every in-grid neighbour pair contributes a graph-Laplacian edge.
pub fn screened_poisson_matrix(side: usize, gamma: f64) -> Vec<Vec<f64>> {
    let n = side * side;
    let mut a = vec![vec![0.0; n]; n];
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            a[i][i] += 1.0;
            let neighbours = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbours {
                if ny < side && nx < side {
                    let j = ny * side + nx;
                    a[i][i] += gamma;
                    a[i][j] -= gamma;
                }
            }
        }
    }
    a
}

/// Direct sum-of-products 2D convolution with replicate borders.
pub fn naive_convolve(u: &Image, k: &[f64], side: usize) -> Image {
    let r = (side / 2) as isize;
    let (h, w, c) = u.shape();
    Image::from_fn(h, w, c, |y, x, ch| {
        let mut s = 0.0;
        for i in 0..side {
            for j in 0..side {
                let yy = (y as isize - (i as isize - r)).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize - (j as isize - r)).clamp(0, w as isize - 1) as usize;
                s += k[i * side + j] * u.get(yy, xx, ch);
            }
        }
        s
    })
    .unwrap()
}

/// Networks used for gradient checks, with every parameter randomized
/// (including affine scale and shift, which initialize to 1 and 0).
pub fn random_architectures() -> Vec<(&'static str, Network)> {
    let specs: Vec<(&str, Shape, Vec<LayerSpec>)> = vec![
        (
            "conv-pool-dense",
            Shape::new(10, 10, 2),
            vec![
                LayerSpec::conv(4, 3),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::conv(5, 3),
                LayerSpec::Relu,
                LayerSpec::dense(4),
            ],
        ),
        (
            "strided-affine-avg",
            Shape::new(9, 11, 1),
            vec![
                LayerSpec::Conv {
                    out_channels: 6,
                    kernel_side: 5,
                    stride: 2,
                },
                LayerSpec::AffineNorm,
                LayerSpec::Relu,
                LayerSpec::conv(3, 1),
                LayerSpec::AvgPoolGlobal,
                LayerSpec::dense(3),
            ],
        ),
        (
            "deep-mixed",
            Shape::new(12, 12, 3),
            vec![
                LayerSpec::conv(4, 3),
                LayerSpec::AffineNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv {
                    out_channels: 4,
                    kernel_side: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::dense(5),
                LayerSpec::Relu,
                LayerSpec::dense(2),
            ],
        ),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(k, (name, shape, layers))| {
            let net = Network::new(shape, layers, 100 + k as u64).unwrap();
            (name, randomize_params(net, 200 + k as u64))
        })
        .collect()
}

pub fn randomize_params(mut net: Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(usize, String)> = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(l, ts)| ts.iter().map(move |t| (l, t.name.clone())))
        .collect();
    for (l, name) in names {
        for v in net.param_mut(l, &name).unwrap() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    net
}

/// `⟨forward(u, layer), cot⟩`.
pub fn probe(net: &Network, u: &Image, layer: usize, cot: &FeatureCode) -> f64 {
    let code = net.forward(u, layer).unwrap();
    code.values.iter().zip(&cot.values).map(|(a, b)| a * b).sum()
}

fn pattern(net: &Network, u: &Image, layer: usize) -> Vec<u64> {
    net.forward_trace(u, layer).unwrap().activation_pattern(net)
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Compares `backward_input` with central differences at `n` sampled input
/// coordinates. Coordinates whose stencil crosses a ReLU or max-pool switch
/// are skipped; they are counted separately.
pub fn check_input_gradient(net: &Network, layer: usize, n: usize, seed: u64) -> GradCheck {
    let s = net.input_shape();
    let u = random_image(s.height, s.width, s.channels, seed);
    let cot = random_code(net.layer_shape(layer).unwrap().len(), layer, seed + 1);
    let g = net.backward_input(&u, layer, &cot).unwrap();
    let floor = REL_FLOOR * g.max_abs();
    let base = pattern(net, &u, layer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    let mut attempts = 0;
    while out.checked < n && attempts < 20 * n {
        attempts += 1;
        let i = rng.gen_range(0..u.len());
        let mut plus = u.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let plus = Image::new(s.height, s.width, s.channels, plus).unwrap();
        let minus = Image::new(s.height, s.width, s.channels, minus).unwrap();
        if pattern(net, &plus, layer) != base || pattern(net, &minus, layer) != base {
            out.skipped += 1;
            continue;
        }
        let fd = (probe(net, &plus, layer, &cot) - probe(net, &minus, layer, &cot)) / (2.0 * FD_STEP);
        out.worst = out.worst.max(rel_err(fd, g.as_slice()[i], floor));
        out.checked += 1;
    }
    out
}

/// Same as [`check_input_gradient`] for the parameters.
pub fn check_param_gradient(net: &Network, layer: usize, n: usize, seed: u64) -> GradCheck {
    let s = net.input_shape();
    let u = random_image(s.height, s.width, s.channels, seed);
    let cot = random_code(net.layer_shape(layer).unwrap().len(), layer, seed + 1);
    let (_, grads) = parameter_gradients(net, &u, layer, &cot).unwrap();
    let floor = REL_FLOOR
        * grads
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
    let base = pattern(net, &u, layer);
    let coords: Vec<(usize, usize, usize)> = net
        .params()
        .iter()
        .enumerate()
        .take(layer + 1)
        .flat_map(|(l, ts)| {
            ts.iter()
                .enumerate()
                .flat_map(move |(t, tensor)| (0..tensor.data.len()).map(move |k| (l, t, k)))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    let mut attempts = 0;
    while out.checked < n && attempts < 20 * n && !coords.is_empty() {
        attempts += 1;
        let (l, t, k) = coords[rng.gen_range(0..coords.len())];
        let name = net.params()[l][t].name.clone();
        let shifted = |delta: f64| {
            let mut m = net.clone();
            m.param_mut(l, &name).unwrap()[k] += delta;
            m
        };
        let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
        if pattern(&plus, &u, layer) != base || pattern(&minus, &u, layer) != base {
            out.skipped += 1;
            continue;
        }
        let fd = (probe(&plus, &u, layer, &cot) - probe(&minus, &u, layer, &cot)) / (2.0 * FD_STEP);
        out.worst = out.worst.max(rel_err(fd, grads[l][t][k], floor));
        out.checked += 1;
    }
    out
}

/// Central-difference check of a scalar function of an image against its
/// claimed gradient at `n` sampled coordinates; returns the worst relative error.
pub fn check_image_gradient(
    f: impl Fn(&Image) -> f64,
    u: &Image,
    grad: &Image,
    n: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = u.shape();
    let floor = REL_FLOOR * grad.max_abs();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = rng.gen_range(0..u.len());
        let mut plus = u.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let fd = (f(&Image::new(h, w, c, plus).unwrap()) - f(&Image::new(h, w, c, minus).unwrap()))
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, grad.as_slice()[i], floor));
    }
    worst
}

pub mod identities {
    //! Scheme identities of the demons update, each returning the largest
    //! deviation from its independent oracle.

    use super::{naive_convolve, random_image};
    use preimage_forge::cnn::{Architecture, Network};
    use preimage_forge::demons::{demons_step, run, DemonsConfig, Init, OctaveSchedule};
    use preimage_forge::kernels::{dirac, gaussian_kernel, sobolev_kernel};
    use preimage_forge::objectives::{ObjectiveSpec, ZMode};
    use preimage_forge::Image;

    fn inversion_setup() -> (Network, ObjectiveSpec, Image) {
        let net = super::randomize_params(Architecture::Vggish.build(1).unwrap(), 2);
        let layer = 3;
        let target = net.forward(&random_image(32, 32, 1, 3), layer).unwrap();
        let z = ZMode::TargetNorm.resolve(&target, None);
        let objective = ObjectiveSpec::inversion(target, 2, z).unwrap();
        (net, objective, random_image(32, 32, 1, 4))
    }

    fn plain_gradient(net: &Network, objective: &ObjectiveSpec, u: &Image) -> (f64, Image) {
        let code = net.forward(u, objective.layer).unwrap();
        let (value, cot) = objective.evaluate(&code).unwrap();
        (value, net.backward_input(u, objective.layer, &cot).unwrap())
    }

    /// Dirac-kernel demons against hand-rolled `u ← u − τ∇D`, per step over
    /// `steps` steps: compares each iterate and each recorded data term.
    pub fn identity_reduces_to_plain_descent(steps: usize) -> f64 {
        let (net, objective, u0) = inversion_setup();
        let tau = 0.5;
        let config = DemonsConfig {
            elastic_kernel: Some(dirac(3).unwrap()),
            fluid_kernel: Some(dirac(5).unwrap()),
            step_size: tau,
            steps,
            ..DemonsConfig::default()
        };
        let result = run(&net, &objective, &config, &OctaveSchedule::single(), &Init::Image(u0.clone())).unwrap();
        let mut worst: f64 = 0.0;
        let mut u = u0;
        for m in &result.metrics {
            let (value, g) = plain_gradient(&net, &objective, &u);
            worst = worst.max((m.data_term - value).abs());
            let next = u.lincomb(1.0, &g, -tau).unwrap();
            let stepped = demons_step(&u, &g, &config).unwrap();
            worst = worst.max(stepped.max_abs_diff(&next).unwrap());
            u = next;
        }
        worst.max(result.final_image.max_abs_diff(&u).unwrap())
    }

    /// Fluid demons with a frozen gradient `g`: `uⁿ = u⁰ − nτ(K_f∗g)`.
    pub fn fluid_telescoping(n: usize) -> f64 {
        let u0 = random_image(20, 24, 1, 5);
        let g = random_image(20, 24, 1, 6).lincomb(1.0, &Image::filled(20, 24, 1, 0.5).unwrap(), -1.0).unwrap();
        let side = 5;
        let k = sobolev_kernel(side, 1.0).unwrap();
        let tau = 0.1;
        let config = DemonsConfig {
            fluid_kernel: Some(k.clone()),
            step_size: tau,
            steps: n,
            ..DemonsConfig::default()
        };
        let objective = ObjectiveSpec::constant_gradient(g.clone());
        let net = Architecture::Vggish.build(0).unwrap();
        let result = run(&net, &objective, &config, &OctaveSchedule::single(), &Init::Image(u0.clone())).unwrap();
        let smoothed = naive_convolve(&g, k.weights(), side);
        let expected = u0.lincomb(1.0, &smoothed, -(n as f64) * tau).unwrap();
        result.final_image.max_abs_diff(&expected).unwrap()
    }

    /// Elastic demons with zero gradient against `n` direct convolutions,
    /// plus the interior against the `n`-fold self-convolved kernel.
    pub fn elastic_exponential_smoothing(n: usize) -> f64 {
        let (h, w) = (40, 44);
        let u0 = random_image(h, w, 1, 7);
        let side = 3;
        let k = gaussian_kernel(side, 0.9).unwrap();
        let config = DemonsConfig {
            elastic_kernel: Some(k.clone()),
            steps: n,
            ..DemonsConfig::default()
        };
        let objective = ObjectiveSpec::constant_gradient(Image::zeros(h, w, 1).unwrap());
        let net = Architecture::Vggish.build(0).unwrap();
        let result = run(&net, &objective, &config, &OctaveSchedule::single(), &Init::Image(u0.clone())).unwrap();

        let mut direct = u0.clone();
        for _ in 0..n {
            direct = naive_convolve(&direct, k.weights(), side);
        }
        let mut worst = result.final_image.max_abs_diff(&direct).unwrap();

        // K^{*n} by repeated full convolution of the weights.
        let mut kn = vec![1.0];
        let mut kn_side = 1;
        for _ in 0..n {
            let full = kn_side + side - 1;
            let mut next = vec![0.0; full * full];
            for p in 0..kn_side * kn_side {
                for q in 0..side * side {
                    let (y, x) = (p / kn_side + q / side, p % kn_side + q % side);
                    next[y * full + x] += kn[p] * k.weights()[q];
                }
            }
            kn = next;
            kn_side = full;
        }
        let r = kn_side / 2;
        for y in r..h - r {
            for x in r..w - r {
                let mut s = 0.0;
                for i in 0..kn_side {
                    for j in 0..kn_side {
                        s += kn[i * kn_side + j] * u0.get(y + r - i, x + r - j, 0);
                    }
                }
                worst = worst.max((result.final_image.get(y, x, 0) - s).abs());
            }
        }
        worst
    }
}
