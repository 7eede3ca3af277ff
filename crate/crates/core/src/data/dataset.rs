//! Synthetic fine-grained dataset: every class shares one of a few global
//! base patterns, class identity lives in a small local marker, and samples
//! jitter by a couple of pixels plus additive noise. Small inter-class and
//! large intra-class variation, at desk scale.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::pnm::{load_pnm, save_pnm};
use crate::error::{CekdError, Result};
use crate::numerics::{RngStream, Tensor};
use crate::parallel::map_indexed;

const TRAIN_FRACTION: f64 = 0.75;
const JITTER_PX: i64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Total samples per class; the first 75% are the train split.
    pub samples_per_class: usize,
    pub image_hw: usize,
    pub channels: usize,
    pub marker_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> DatasetSpec {
        DatasetSpec {
            num_classes: 8,
            samples_per_class: 160,
            image_hw: 32,
            channels: 1,
            marker_size: 6,
            noise_std: 0.05,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.samples_per_class < 4 {
            return Err(CekdError::Config("need >= 2 classes and >= 4 samples per class".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(CekdError::Config("channels must be 1 or 3".into()));
        }
        if self.marker_size >= self.image_hw / 2 {
            return Err(CekdError::Config("marker_size must be < image_hw / 2".into()));
        }
        if self.noise_std < 0.0 {
            return Err(CekdError::Config("noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Stable content hash over the serialized spec.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    pub fn train_per_class(&self) -> usize {
        ((self.samples_per_class as f64) * TRAIN_FRACTION).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub generation_seed: u64,
    pub spec_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn train_samples(&self) -> Vec<&Sample> {
        let train: std::collections::HashSet<&str> =
            self.manifest.train_ids.iter().map(|s| s.as_str()).collect();
        self.samples.iter().filter(|s| train.contains(s.id.as_str())).collect()
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        let test: std::collections::HashSet<&str> =
            self.manifest.test_ids.iter().map(|s| s.as_str()).collect();
        self.samples.iter().filter(|s| test.contains(s.id.as_str())).collect()
    }
}

/// Smooth global pattern shared within a superclass (class parity).
fn base_pattern(spec: &DatasetSpec, class: usize, y: usize, x: usize) -> f64 {
    let hw = spec.image_hw as f64;
    let (fy, fx) = (y as f64 / hw, x as f64 / hw);
    match class % 2 {
        // radial gradient
        0 => {
            let d = ((fy - 0.5).powi(2) + (fx - 0.5).powi(2)).sqrt();
            (0.5 - d).max(0.0)
        }
        // diagonal ramp
        _ => 0.45 * (fy + fx) / 2.0 + 0.1,
    }
}

/// Marker anchor for a class, laid out on a grid with margin for jitter.
fn marker_anchor(spec: &DatasetSpec, class: usize) -> (usize, usize) {
    let cells = (spec.num_classes as f64).sqrt().ceil() as usize;
    let margin = JITTER_PX as usize + 1;
    let span = spec.image_hw - spec.marker_size - 2 * margin;
    let (row, col) = (class / cells, class % cells);
    let step = |i: usize| {
        if cells == 1 {
            span / 2
        } else {
            i * span / (cells - 1)
        }
    };
    (margin + step(row.min(cells - 1)), margin + step(col))
}

fn render_sample(spec: &DatasetSpec, class: usize, index: usize) -> Sample {
    let hw = spec.image_hw;
    let mut rng = RngStream::new(spec.seed)
        .child_indexed("sample", (class * spec.samples_per_class + index) as u64);
    // noise_std == 0 also disables jitter, so a class renders identically
    let (dy, dx) = if spec.noise_std > 0.0 {
        (
            rng.next_below((2 * JITTER_PX + 1) as usize) as i64 - JITTER_PX,
            rng.next_below((2 * JITTER_PX + 1) as usize) as i64 - JITTER_PX,
        )
    } else {
        (0, 0)
    };
    let (ay, ax) = marker_anchor(spec, class);
    let (my, mx) = (
        (ay as i64 + dy).clamp(0, (hw - spec.marker_size) as i64) as usize,
        (ax as i64 + dx).clamp(0, (hw - spec.marker_size) as i64) as usize,
    );
    let normal = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut image = Tensor::zeros(&[spec.channels, hw, hw]);
    for ch in 0..spec.channels {
        for y in 0..hw {
            for x in 0..hw {
                let mut v = base_pattern(spec, class, y, x);
                let in_marker = y >= my && y < my + spec.marker_size && x >= mx && x < mx + spec.marker_size;
                if in_marker {
                    // cross-shaped marker for odd classes, solid for even
                    let (ry, rx) = (y - my, x - mx);
                    let mid = spec.marker_size / 2;
                    let lit = if (class / 2) % 2 == 0 {
                        true
                    } else {
                        ry.abs_diff(mid) <= 1 || rx.abs_diff(mid) <= 1
                    };
                    if lit {
                        v = 0.95;
                    }
                }
                if spec.noise_std > 0.0 {
                    v += normal.sample(&mut rng);
                }
                let idx = image.idx3(ch, y, x);
                image.data_mut()[idx] = v.clamp(0.0, 1.0);
            }
        }
    }
    Sample {
        image,
        label: class,
        id: format!("c{class:02}_{index:04}"),
    }
}

/// Generate the dataset and its train/test split, deterministically.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.num_classes * spec.samples_per_class;
    let samples: Vec<Sample> = map_indexed(total, |i| {
        let class = i / spec.samples_per_class;
        let index = i % spec.samples_per_class;
        render_sample(spec, class, index)
    });
    let train_n = spec.train_per_class();
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for s in &samples {
        let index: usize = s.id[4..].parse().expect("id format");
        if index < train_n {
            train_ids.push(s.id.clone());
        } else {
            test_ids.push(s.id.clone());
        }
    }
    Ok(Dataset {
        manifest: SplitManifest {
            train_ids,
            test_ids,
            generation_seed: spec.seed,
            spec_hash: spec.hash(),
        },
        spec: spec.clone(),
        samples,
    })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Directory layout: `images/<id>.pgm|ppm`, `labels.tsv`, `manifest.json`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let ext = if dataset.spec.channels == 3 { "ppm" } else { "pgm" };
    for s in &dataset.samples {
        save_pnm(&images.join(format!("{}.{ext}", s.id)), &s.image)?;
    }
    let train: std::collections::HashSet<&str> =
        dataset.manifest.train_ids.iter().map(|s| s.as_str()).collect();
    let mut tsv = String::new();
    for s in &dataset.samples {
        let split = if train.contains(s.id.as_str()) { "train" } else { "test" };
        tsv.push_str(&format!("{}\t{}\t{}\n", s.id, s.label, split));
    }
    atomic_write(&dir.join("labels.tsv"), tsv.as_bytes())?;
    let manifest = serde_json::json!({
        "spec": dataset.spec,
        "seed": dataset.manifest.generation_seed,
        "spec_hash": dataset.manifest.spec_hash,
        "train_ids": dataset.manifest.train_ids,
        "test_ids": dataset.manifest.test_ids,
    });
    atomic_write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| CekdError::Config(e.to_string()))?
            .as_bytes(),
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_raw = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest_json: serde_json::Value = serde_json::from_str(&manifest_raw)
        .map_err(|e| CekdError::Config(format!("manifest.json: {e}")))?;
    let spec: DatasetSpec = serde_json::from_value(manifest_json["spec"].clone())
        .map_err(|e| CekdError::Config(format!("manifest.json spec: {e}")))?;
    let manifest = SplitManifest {
        train_ids: serde_json::from_value(manifest_json["train_ids"].clone())
            .map_err(|e| CekdError::Config(format!("manifest train_ids: {e}")))?,
        test_ids: serde_json::from_value(manifest_json["test_ids"].clone())
            .map_err(|e| CekdError::Config(format!("manifest test_ids: {e}")))?,
        generation_seed: manifest_json["seed"].as_u64().unwrap_or(spec.seed),
        spec_hash: manifest_json["spec_hash"].as_u64().unwrap_or(0),
    };
    let mut labels = BTreeMap::new();
    for (lineno, line) in fs::read_to_string(dir.join("labels.tsv"))?.lines().enumerate() {
        let mut parts = line.split('\t');
        let (id, class) = (
            parts.next().ok_or_else(|| CekdError::Config(format!("labels.tsv line {lineno}")))?,
            parts
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| CekdError::Config(format!("labels.tsv line {lineno}")))?,
        );
        labels.insert(id.to_string(), class);
    }
    let ext = if spec.channels == 3 { "ppm" } else { "pgm" };
    let samples: Vec<Sample> = labels
        .into_iter()
        .map(|(id, label)| -> Result<Sample> {
            let image = load_pnm(&dir.join("images").join(format!("{id}.{ext}")))?;
            Ok(Sample { image, label, id })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { spec, samples, manifest })
}

/// Deterministic shuffled batches of indices into `n` train samples.
/// Batches smaller than 2 are dropped (pairing needs two samples).
pub fn batch_iter(n: usize, batch_size: usize, dataset_seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(CekdError::invalid("batch_size must be >= 2"));
    }
    let mut rng = RngStream::new(dataset_seed).child_indexed("epoch", epoch);
    let order = rng.permutation(n);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect())
}

/// Random horizontal flip (p = 0.5) and random crop with 2-pixel zero
/// padding back to the original size.
pub fn basic_transforms(image: &Tensor, rng: &mut RngStream) -> Tensor {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let flip = rng.next_bool(0.5);
    let pad = 2usize;
    let oy = rng.next_below(2 * pad + 1);
    let ox = rng.next_below(2 * pad + 1);
    let mut out = Tensor::zeros(image.shape());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // source coordinate in the padded image
                let sy = y as i64 + oy as i64 - pad as i64;
                let sx = x as i64 + ox as i64 - pad as i64;
                let v = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                    let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                    image.at3(ch, sy as usize, sx)
                } else {
                    0.0
                };
                let idx = out.idx3(ch, y, x);
                out.data_mut()[idx] = v;
            }
        }
    }
    out
}
