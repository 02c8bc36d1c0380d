//! Cross-architecture reconstruction harness.
//!
//! Each image is reconstructed from an inner layer of one model and then
//! classified by the other model; the top-1 hit rate measures how much
//! class information the reconstruction retained.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{predict, synth_dataset, Network, NUM_CLASSES};
use crate::demons::{run, DemonsConfig, Init, OctaveSchedule};
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::kernels::{fitted_kernel, SmoothingKind, DEFAULT_SUPPORT_THRESHOLD};
use crate::objectives::{ObjectiveSpec, ZMode};
use crate::regularizers::RegularizerSpec;

/// Regularization scheme used for a reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Preset {
    /// Plain gradient descent with relaxed total variation.
    Tv,
    /// Sobolev-filtered gradient (fluid demons).
    FluidSobolev,
    /// Sobolev-filtered gradient and Sobolev-filtered iterate.
    FluidElasticSobolev,
    /// The original image stands in for its reconstruction.
    Identity,
}

impl Preset {
    pub const TABLE: [Preset; 3] = [Preset::Tv, Preset::FluidSobolev, Preset::FluidElasticSobolev];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tv => "tv",
            Preset::FluidSobolev => "fluid-sobolev",
            Preset::FluidElasticSobolev => "fluid-elastic-sobolev",
            Preset::Identity => "identity",
        }
    }
}

/// Knobs of the reconstruction runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSettings {
    pub steps: usize,
    pub step_size: f64,
    pub tv_lambda: f64,
    pub tv_epsilon: f64,
    /// Window of the fluid Sobolev filter.
    pub fluid_side: usize,
    /// Window of the elastic Sobolev filter.
    pub elastic_side: usize,
    pub support_threshold: f64,
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        ReconstructionSettings {
            steps: 150,
            step_size: 1.0,
            tv_lambda: 1e-4,
            tv_epsilon: 1e-2,
            fluid_side: 11,
            elastic_side: 3,
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
        }
    }
}

impl ReconstructionSettings {
    /// Demons configuration for a preset; `None` for [`Preset::Identity`].
    pub fn demons_config(&self, preset: Preset, seed: u64) -> Result<Option<DemonsConfig>> {
        let sobolev = |side| fitted_kernel(SmoothingKind::Sobolev, side, self.support_threshold);
        let base = DemonsConfig {
            step_size: self.step_size,
            steps: self.steps,
            clamp: true,
            seed,
            ..DemonsConfig::default()
        };
        Ok(Some(match preset {
            Preset::Identity => return Ok(None),
            Preset::Tv => DemonsConfig {
                regularizer: RegularizerSpec::tv(self.tv_lambda, self.tv_epsilon),
                ..base
            },
            Preset::FluidSobolev => DemonsConfig {
                fluid_kernel: Some(sobolev(self.fluid_side)?),
                ..base
            },
            Preset::FluidElasticSobolev => DemonsConfig {
                fluid_kernel: Some(sobolev(self.fluid_side)?),
                elastic_kernel: Some(sobolev(self.elastic_side)?),
                ..base
            },
        }))
    }
}

/// Reconstructs `image` from its code at `layer` of `net`.
pub fn reconstruct(
    net: &Network,
    layer: usize,
    image: &Image,
    config: Option<&DemonsConfig>,
) -> Result<Image> {
    let Some(config) = config else {
        return Ok(image.clone());
    };
    let target = net.forward(image, layer)?;
    let z = ZMode::TargetNorm.resolve(&target, None);
    let objective = ObjectiveSpec::inversion(target, 2, z)?;
    let result = run(net, &objective, config, &OctaveSchedule::single(), &Init::default())?;
    Ok(result.final_image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateOptions {
    pub n_images: usize,
    pub seed: u64,
    pub presets: Vec<Preset>,
    /// Reconstruction layers; `None` picks the layer before the first dense layer.
    pub layer_a: Option<usize>,
    pub layer_b: Option<usize>,
    pub settings: ReconstructionSettings,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            n_images: 30,
            seed: 0,
            presets: Preset::TABLE.to_vec(),
            layer_a: None,
            layer_b: None,
            settings: ReconstructionSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateEntry {
    /// `a_to_b`: reconstructed with model A, classified by model B.
    pub direction: String,
    pub preset: Preset,
    pub layer: usize,
    pub correct: usize,
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub n_images: usize,
    pub seed: u64,
    pub settings: ReconstructionSettings,
    pub results: Vec<EvaluateEntry>,
}

impl EvaluateReport {
    pub fn top1(&self, direction: &str, preset: Preset) -> Option<f64> {
        self.results
            .iter()
            .find(|e| e.direction == direction && e.preset == preset)
            .map(|e| e.top1)
    }
}

/// Runs both directions for every preset. Images are reconstructed in
/// parallel and aggregated in index order.
pub fn evaluate(
    model_a: &Network,
    model_b: &Network,
    options: &EvaluateOptions,
) -> Result<EvaluateReport> {
    if model_a.input_shape() != model_b.input_shape() {
        return Err(Error::Dimension(format!(
            "models disagree on input shape: {:?} vs {:?}",
            model_a.input_shape(),
            model_b.input_shape()
        )));
    }
    for (name, net) in [("A", model_a), ("B", model_b)] {
        let out = net.layer_shape(net.output_layer())?.len();
        if out != NUM_CLASSES {
            return Err(Error::Dimension(format!(
                "model {name} has {out} outputs, expected {NUM_CLASSES}"
            )));
        }
    }
    let data = synth_dataset(options.seed, options.n_images)?;
    let layer_a = options.layer_a.unwrap_or_else(|| model_a.deepest_pre_dense());
    let layer_b = options.layer_b.unwrap_or_else(|| model_b.deepest_pre_dense());
    model_a.layer_shape(layer_a)?;
    model_b.layer_shape(layer_b)?;

    let mut results = Vec::new();
    for (direction, source, layer, judge) in [
        ("a_to_b", model_a, layer_a, model_b),
        ("b_to_a", model_b, layer_b, model_a),
    ] {
        for &preset in &options.presets {
            let hits = data
                .images
                .par_iter()
                .zip(&data.labels)
                .enumerate()
                .map(|(i, (image, &label))| {
                    let seed = options.seed.wrapping_add(i as u64);
                    let config = options.settings.demons_config(preset, seed)?;
                    let rec = reconstruct(source, layer, image, config.as_ref())?;
                    Ok(usize::from(predict(judge, &rec)? == label))
                })
                .collect::<Result<Vec<_>>>()?;
            let correct: usize = hits.iter().sum();
            results.push(EvaluateEntry {
                direction: direction.to_string(),
                preset,
                layer,
                correct,
                top1: correct as f64 / data.len() as f64,
            });
        }
    }
    Ok(EvaluateReport {
        n_images: options.n_images,
        seed: options.seed,
        settings: options.settings.clone(),
        results,
    })
}
