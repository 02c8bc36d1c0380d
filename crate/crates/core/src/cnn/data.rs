//! Procedural three-class shape dataset.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{decode_ppm, encode_ppm, Image};

pub const CANVAS_SIDE: usize = 32;
pub const NUM_CLASSES: usize = 3;

/// Size of the reference dataset and its train/validation split.
pub const REFERENCE_DATASET_SIZE: usize = 600;
pub const REFERENCE_TRAIN_SIZE: usize = 480;

const LABEL_INDEX: &str = "labels.json";

/// Labelled single-channel images.
///
/// Classes: 0 filled disk, 1 plus sign, 2 hollow square.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelIndex {
    seed: u64,
    files: Vec<String>,
    labels: Vec<usize>,
}

/// Draws `n` canvases, class `i % 3` for example `i`.
///
/// Each shape gets a center jitter of ±4 px, a size jitter of ±3 px, an
/// intensity in `[0.6, 1.0]` and additive uniform noise of amplitude 0.05;
/// samples are clamped to `[0, 1]`.
pub fn synth_dataset(seed: u64, n: usize) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(NUM_CLASSES) {
        return Err(Error::Parameter(format!(
            "dataset size must be a positive multiple of {NUM_CLASSES}, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % NUM_CLASSES;
        images.push(draw_shape(label, &mut rng)?);
        labels.push(label);
    }
    Ok(Dataset {
        images,
        labels,
        seed,
    })
}

fn draw_shape(label: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let mid = (CANVAS_SIDE as f64 - 1.0) / 2.0;
    let cy = mid + rng.gen_range(-4.0..=4.0);
    let cx = mid + rng.gen_range(-4.0..=4.0);
    let size_jitter: f64 = rng.gen_range(-3.0..=3.0);
    let intensity: f64 = rng.gen_range(0.6..=1.0);
    let inside: Box<dyn Fn(f64, f64) -> bool> = match label {
        0 => {
            let radius = 7.0 + size_jitter;
            Box::new(move |dy, dx| dy * dy + dx * dx <= radius * radius)
        }
        1 => {
            let arm = 10.0 + size_jitter;
            let half_width = 1.5;
            Box::new(move |dy: f64, dx: f64| {
                (dy.abs() <= half_width && dx.abs() <= arm)
                    || (dx.abs() <= half_width && dy.abs() <= arm)
            })
        }
        _ => {
            let half_side = 9.0 + size_jitter;
            let thickness = 2.0;
            Box::new(move |dy: f64, dx: f64| {
                let d = dy.abs().max(dx.abs());
                d <= half_side && d > half_side - thickness
            })
        }
    };
    let mut data = Vec::with_capacity(CANVAS_SIDE * CANVAS_SIDE);
    for y in 0..CANVAS_SIDE {
        for x in 0..CANVAS_SIDE {
            let base = if inside(y as f64 - cy, x as f64 - cx) {
                intensity
            } else {
                0.0
            };
            let noise: f64 = rng.gen_range(-0.05..=0.05);
            data.push((base + noise).clamp(0.0, 1.0));
        }
    }
    Image::new(CANVAS_SIDE, CANVAS_SIDE, 1, data)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits into the first `n_first` examples and the rest.
    pub fn split_at(&self, n_first: usize) -> (Dataset, Dataset) {
        let n = n_first.min(self.len());
        (
            Dataset {
                images: self.images[..n].to_vec(),
                labels: self.labels[..n].to_vec(),
                seed: self.seed,
            },
            Dataset {
                images: self.images[n..].to_vec(),
                labels: self.labels[n..].to_vec(),
                seed: self.seed,
            },
        )
    }

    /// The reference dataset for `seed`, split into training and validation.
    pub fn reference_split(seed: u64) -> Result<(Dataset, Dataset)> {
        Ok(synth_dataset(seed, REFERENCE_DATASET_SIZE)?.split_at(REFERENCE_TRAIN_SIZE))
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes one PGM per image plus a JSON label index.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.len());
        for (i, image) in self.images.iter().enumerate() {
            let name = format!("{i:05}.pgm");
            encode_ppm(image, dir.join(&name))?;
            files.push(name);
        }
        let index = LabelIndex {
            seed: self.seed,
            files,
            labels: self.labels.clone(),
        };
        let path = dir.join(LABEL_INDEX);
        let json = serde_json::to_string_pretty(&index).expect("label index serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`Dataset::save_dir`]. Samples come back
    /// quantized to the 8-bit grid.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let path = dir.join(LABEL_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: LabelIndex = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if index.files.len() != index.labels.len() {
            return Err(Error::Format("label index: files and labels differ in length".into()));
        }
        if let Some(l) = index.labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Format(format!("label index: class {l} out of range")));
        }
        let images = index
            .files
            .iter()
            .map(|f| {
                if f.contains(['/', '\\']) || f.starts_with('.') {
                    return Err(Error::Format(format!("label index: bad file name {f:?}")));
                }
                decode_ppm(dir.join(f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            images,
            labels: index.labels,
            seed: index.seed,
        })
    }
}
