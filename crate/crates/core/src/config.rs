//! JSON run configuration for the `maximize` and `invert` commands.
//!
//! A config is parsed strictly (unknown keys are errors), then resolved:
//! defaults that depend on the model (layer, kernel parameters, `Z`) are
//! computed and written back, so the resolved document fully describes the
//! run and parses back to itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cnn::{load_model, Architecture, Network};
use crate::demons::{initial_image, run, DemonsConfig, Init, OctaveSchedule, RunResult};
use crate::error::{Error, Result};
use crate::grid::{decode_ppm, BoundaryRule, Image};
use crate::kernels::{
    dirac, fit_kernel_parameter, smoothing_kernel, Kernel, SmoothingKind,
    DEFAULT_SUPPORT_THRESHOLD,
};
use crate::objectives::{ObjectiveSpec, ZMode};
use crate::regularizers::RegularizerSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub demons: DemonsSection,
    #[serde(default)]
    pub schedule: OctaveSchedule,
    pub output: OutputSection,
}

/// Exactly one of `path` (a saved model) or `builtin` (a freshly
/// initialized reference architecture drawn from `seed`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Architecture>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Inversion,
    ActivationMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveName,
    /// Defaults to the layer before the first dense layer for inversion and
    /// to the output layer for activation maximization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    /// Inversion: the image whose code is matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_image: Option<PathBuf>,
    /// Activation maximization: the unit to drive up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
    #[serde(default = "default_p")]
    pub p: u8,
    #[serde(default)]
    pub z_mode: ZMode,
    /// Explicit normalization; overrides `z_mode` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

fn default_p() -> u8 {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Dirac,
    Gaussian,
    Sobolev,
}

/// A smoothing kernel: either an explicit `parameter` (σ or γ) or a support
/// `threshold` from which the parameter is fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelChoice {
    pub kind: KernelName,
    pub side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
}

impl KernelChoice {
    /// Fills in the fitted parameter when only a threshold is given.
    pub fn resolved(&self) -> Result<KernelChoice> {
        let smoothing = match self.kind {
            KernelName::Dirac => return Ok(self.clone()),
            KernelName::Gaussian => SmoothingKind::Gaussian,
            KernelName::Sobolev => SmoothingKind::Sobolev,
        };
        if self.parameter.is_some() {
            return Ok(self.clone());
        }
        let threshold = self.threshold.unwrap_or(DEFAULT_SUPPORT_THRESHOLD);
        Ok(KernelChoice {
            threshold: Some(threshold),
            parameter: Some(fit_kernel_parameter(smoothing, self.side, threshold)?),
            ..self.clone()
        })
    }

    pub fn build(&self) -> Result<Kernel> {
        let resolved = self.resolved()?;
        let parameter = resolved.parameter.unwrap_or_default();
        match self.kind {
            KernelName::Dirac => dirac(self.side),
            KernelName::Gaussian => smoothing_kernel(SmoothingKind::Gaussian, self.side, parameter),
            KernelName::Sobolev => smoothing_kernel(SmoothingKind::Sobolev, self.side, parameter),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemonsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elastic: Option<KernelChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluid: Option<KernelChoice>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub clamp: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boundary: BoundaryRule,
}

fn default_tau() -> f64 {
    1.0
}

fn default_steps() -> usize {
    100
}

impl Default for DemonsSection {
    fn default() -> Self {
        DemonsSection {
            elastic: None,
            fluid: None,
            tau: default_tau(),
            steps: default_steps(),
            clamp: false,
            seed: 0,
            boundary: BoundaryRule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

/// Everything `run` needs, built from a resolved config.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub network: Network,
    pub objective: ObjectiveSpec,
    pub demons: DemonsConfig,
    pub init: Init,
}

impl PreparedRun {
    pub fn execute(&self) -> Result<RunResult> {
        run(
            &self.network,
            &self.objective,
            &self.demons,
            &self.config.schedule,
            &self.init,
        )
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| config_err(format!("invalid run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Checks every referenced path and the structural constraints that do
    /// not need the model.
    pub fn validate(&self) -> Result<()> {
        match (&self.model.path, &self.model.builtin) {
            (Some(p), None) => require_file(p, "model.path")?,
            (None, Some(_)) => {}
            _ => return Err(config_err("model: give exactly one of `path` or `builtin`")),
        }
        match self.objective.kind {
            ObjectiveName::Inversion => {
                let Some(t) = &self.objective.target_image else {
                    return Err(config_err("objective: inversion needs `target_image`"));
                };
                require_file(t, "objective.target_image")?;
                if self.objective.unit.is_some() {
                    return Err(config_err("objective: `unit` only applies to activation_max"));
                }
                if !matches!(self.objective.p, 1 | 2) {
                    return Err(config_err(format!(
                        "objective: p must be 1 or 2, got {}",
                        self.objective.p
                    )));
                }
            }
            ObjectiveName::ActivationMax => {
                if self.objective.unit.is_none() {
                    return Err(config_err("objective: activation_max needs `unit`"));
                }
                if self.objective.target_image.is_some() {
                    return Err(config_err("objective: `target_image` only applies to inversion"));
                }
            }
        }
        if let Some(z) = self.objective.z {
            if !(z.is_finite() && z > 0.0) {
                return Err(config_err(format!("objective: z must be positive, got {z}")));
            }
        }
        for out in std::iter::once(&self.output.image).chain(&self.output.metrics) {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
            if let Some(dir) = parent {
                if !dir.is_dir() {
                    return Err(config_err(format!(
                        "output directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        self.regularizer.validate()?;
        self.schedule.validate()?;
        self.demons_config(None, None)?.validate()
    }

    fn demons_config(&self, elastic: Option<Kernel>, fluid: Option<Kernel>) -> Result<DemonsConfig> {
        Ok(DemonsConfig {
            elastic_kernel: elastic,
            fluid_kernel: fluid,
            step_size: self.demons.tau,
            steps: self.demons.steps,
            regularizer: self.regularizer,
            clamp: self.demons.clamp,
            seed: self.demons.seed,
            boundary: self.demons.boundary,
        })
    }

    fn network(&self) -> Result<Network> {
        match (&self.model.path, self.model.builtin) {
            (Some(p), _) => load_model(p),
            (None, Some(arch)) => arch.build(self.model.seed),
            (None, None) => Err(config_err("model: give exactly one of `path` or `builtin`")),
        }
    }

    /// Validates, loads the model and fills every model-dependent default.
    pub fn prepare(&self) -> Result<PreparedRun> {
        self.validate()?;
        let network = self.network()?;
        let mut config = self.clone();
        let obj = &mut config.objective;
        let layer = *obj.layer.get_or_insert(match obj.kind {
            ObjectiveName::Inversion => network.deepest_pre_dense(),
            ObjectiveName::ActivationMax => network.output_layer(),
        });
        network
            .layer_shape(layer)
            .map_err(|e| config_err(format!("objective.layer: {e}")))?;

        let init = Init::default();
        let objective = match obj.kind {
            ObjectiveName::Inversion => {
                let path = obj.target_image.as_ref().expect("validated");
                let target = load_target(path, &network)?;
                let code = network.forward(&target, layer)?;
                let z = *obj.z.get_or_insert_with(|| obj.z_mode.resolve(&code, None));
                ObjectiveSpec::inversion(code, obj.p, z)?
            }
            ObjectiveName::ActivationMax => {
                let unit = obj.unit.expect("validated");
                let width = network.layer_shape(layer)?.len();
                if unit >= width {
                    return Err(config_err(format!(
                        "objective.unit {unit} out of range for layer {layer} of width {width}"
                    )));
                }
                let z = match obj.z {
                    Some(z) => z,
                    None => {
                        let s = network.input_shape();
                        let u0 = initial_image(
                            &init,
                            (s.height, s.width, s.channels),
                            config.demons.seed,
                        )?;
                        let code = network.forward(&u0, layer)?;
                        *obj.z.insert(obj.z_mode.resolve(&code, Some(unit)))
                    }
                };
                ObjectiveSpec::activation_max(layer, unit, z)?
            }
        };

        let resolve = |k: &Option<KernelChoice>| k.as_ref().map(KernelChoice::resolved).transpose();
        config.demons.elastic = resolve(&config.demons.elastic)?;
        config.demons.fluid = resolve(&config.demons.fluid)?;
        let build = |k: &Option<KernelChoice>| k.as_ref().map(KernelChoice::build).transpose();
        let demons =
            config.demons_config(build(&config.demons.elastic)?, build(&config.demons.fluid)?)?;
        Ok(PreparedRun {
            config,
            network,
            objective,
            demons,
            init,
        })
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config_err(format!("{what}: {} is not a readable file", path.display())))
    }
}

fn load_target(path: &Path, net: &Network) -> Result<Image> {
    let image = decode_ppm(path)?;
    let s = net.input_shape();
    if image.shape() != (s.height, s.width, s.channels) {
        return Err(Error::Dimension(format!(
            "target image {} is {:?}, the model expects {}x{}x{}",
            path.display(),
            image.shape(),
            s.height,
            s.width,
            s.channels
        )));
    }
    Ok(image)
}
