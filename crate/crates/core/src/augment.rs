//! Data mixing augmentations: MixUp, CutMix and SnapMix.
//!
//! Each mixer produces a blended image plus two label weights. MixUp and
//! CutMix weights close to one; SnapMix weights come from semantic mass
//! under the sampled boxes and need not sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{CekdError, Result};
use crate::numerics::{sample_beta, RngStream, Tensor};
use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixKind {
    MixUp,
    CutMix,
    SnapMix,
}

/// A mixing method with its Beta parameter and per-pair application probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixMethod {
    pub kind: MixKind,
    pub alpha: f64,
    pub apply_prob: f64,
}

impl MixMethod {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(CekdError::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(CekdError::invalid(format!(
                "apply_prob must be in [0,1], got {}",
                self.apply_prob
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box `[y0,y1) x [x0,x1)` acting as the binary cut mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxMask {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BoxMask {
    pub fn empty() -> BoxMask {
        BoxMask { y0: 0, x0: 0, y1: 0, x1: 0 }
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn area_ratio(&self, h: usize, w: usize) -> f64 {
        self.area() as f64 / (h * w) as f64
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

/// A mixed image with its two label weights, before labels are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedImage {
    pub image: Tensor,
    pub w_a: f64,
    pub w_b: f64,
    pub method: MixKind,
}

/// One augmented sample: mixed image, dual labels, dual weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: Tensor,
    pub label_a: usize,
    pub label_b: usize,
    pub w_a: f64,
    pub w_b: f64,
    pub method: MixKind,
}

impl MixedImage {
    pub fn with_labels(self, label_a: usize, label_b: usize) -> MixedSample {
        MixedSample {
            image: self.image,
            label_a,
            label_b,
            w_a: self.w_a,
            w_b: self.w_b,
            method: self.method,
        }
    }
}

/// A batch of mixed samples; both branches mix the same pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub samples: Vec<MixedSample>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> Result<Tensor> {
        let imgs: Vec<Tensor> = self.samples.iter().map(|s| s.image.clone()).collect();
        Tensor::stack(&imgs)
    }

    pub fn labels_a(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label_a).collect()
    }

    pub fn labels_b(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label_b).collect()
    }

    pub fn weights_a(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.w_a).collect()
    }

    pub fn weights_b(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.w_b).collect()
    }
}

/// Nonnegative per-pixel semantic mass summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub values: Tensor,
}

impl SemanticMap {
    /// Total mass inside a box.
    pub fn mass_in(&self, b: &BoxMask) -> f64 {
        let mut acc = 0.0;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                acc += self.values.at2(y, x);
            }
        }
        acc
    }
}

fn check_same_shape(xa: &Tensor, xb: &Tensor) -> Result<()> {
    if xa.shape() != xb.shape() {
        return Err(CekdError::invalid(format!(
            "image shape mismatch: {:?} vs {:?}",
            xa.shape(),
            xb.shape()
        )));
    }
    if xa.shape().len() != 3 {
        return Err(CekdError::invalid("expected [C,H,W] images"));
    }
    Ok(())
}

/// Convex pixel blend: `lambda * xa + (1-lambda) * xb`.
pub fn mixup(xa: &Tensor, xb: &Tensor, lambda: f64) -> Result<MixedImage> {
    check_same_shape(xa, xb)?;
    let data: Vec<f64> = xa
        .data()
        .iter()
        .zip(xb.data())
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(MixedImage {
        image: Tensor::from_vec(xa.shape(), data)?,
        w_a: lambda,
        w_b: 1.0 - lambda,
        method: MixKind::MixUp,
    })
}

/// Sample a box with side lengths `round(H*sqrt(lambda)) x round(W*sqrt(lambda))`.
///
/// The corner is clamped so the box always fits; the effective area ratio is
/// therefore fixed by the rounded sides and independent of the center draw.
pub fn sample_box(h: usize, w: usize, lambda: f64, rng: &mut RngStream) -> BoxMask {
    let side_h = ((h as f64) * lambda.sqrt()).round() as usize;
    let side_w = ((w as f64) * lambda.sqrt()).round() as usize;
    if side_h == 0 || side_w == 0 {
        return BoxMask::empty();
    }
    let side_h = side_h.min(h);
    let side_w = side_w.min(w);
    let cy = rng.next_below(h);
    let cx = rng.next_below(w);
    let y0 = cy.saturating_sub(side_h / 2).min(h - side_h);
    let x0 = cx.saturating_sub(side_w / 2).min(w - side_w);
    BoxMask { y0, x0, y1: y0 + side_h, x1: x0 + side_w }
}

/// Cut-and-paste: `xb` inside the box, `xa` outside; weights by pixel count.
pub fn cutmix(xa: &Tensor, xb: &Tensor, b: &BoxMask) -> Result<MixedImage> {
    check_same_shape(xa, xb)?;
    let (c, h, w) = (xa.shape()[0], xa.shape()[1], xa.shape()[2]);
    if b.y1 > h || b.x1 > w {
        return Err(CekdError::invalid("box exceeds image bounds"));
    }
    let mut image = xa.clone();
    for ch in 0..c {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let idx = image.idx3(ch, y, x);
                image.data_mut()[idx] = xb.data()[idx];
            }
        }
    }
    let ratio = b.area_ratio(h, w);
    Ok(MixedImage {
        image,
        w_a: 1.0 - ratio,
        w_b: ratio,
        method: MixKind::CutMix,
    })
}

/// Normalize a CAM into per-pixel semantic mass.
///
/// Negative activations are clamped to zero first; if everything clamps
/// away, the uniform map is returned.
pub fn semantic_map(cam: &Tensor) -> Result<SemanticMap> {
    if cam.shape().len() != 2 {
        return Err(CekdError::invalid("semantic_map expects a [H,W] tensor"));
    }
    let clamped = cam.map(|v| v.max(0.0));
    let sum: f64 = clamped.data().iter().sum();
    let values = if sum > 0.0 {
        clamped.map(|v| v / sum)
    } else {
        Tensor::full(cam.shape(), 1.0 / cam.len() as f64)
    };
    Ok(SemanticMap { values })
}

/// Bilinear resize of a `[C,h,w]` region with corner-aligned sampling.
pub fn region_transform(region: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    if region.shape().len() != 3 {
        return Err(CekdError::invalid("region_transform expects [C,h,w]"));
    }
    let (c, h, w) = (region.shape()[0], region.shape()[1], region.shape()[2]);
    if target_h == h && target_w == w {
        return Ok(region.clone());
    }
    let src = |extent: usize, target: usize, i: usize| -> f64 {
        if target == 1 {
            (extent - 1) as f64 / 2.0
        } else {
            i as f64 * (extent - 1) as f64 / (target - 1) as f64
        }
    };
    let mut out = Tensor::zeros(&[c, target_h, target_w]);
    for ch in 0..c {
        for ty in 0..target_h {
            let sy = src(h, target_h, ty);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for tx in 0..target_w {
                let sx = src(w, target_w, tx);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v = region.at3(ch, y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + region.at3(ch, y0, x1) * (1.0 - fy) * fx
                    + region.at3(ch, y1, x0) * fy * (1.0 - fx)
                    + region.at3(ch, y1, x1) * fy * fx;
                let idx = out.idx3(ch, ty, tx);
                out.data_mut()[idx] = v;
            }
        }
    }
    Ok(out)
}

/// SnapMix: paste a resized region of `xb` into `xa`, weighting labels by
/// the semantic mass of the two boxes.
pub fn snapmix(
    xa: &Tensor,
    xb: &Tensor,
    sa: &SemanticMap,
    sb: &SemanticMap,
    rng: &mut RngStream,
    alpha: f64,
) -> Result<MixedImage> {
    check_same_shape(xa, xb)?;
    let (c, h, w) = (xa.shape()[0], xa.shape()[1], xa.shape()[2]);
    if sa.values.shape() != [h, w] || sb.values.shape() != [h, w] {
        return Err(CekdError::invalid("semantic map shape mismatch"));
    }
    let lambda_a = sample_beta(alpha, rng)?;
    let lambda_b = sample_beta(alpha, rng)?;
    let box_a = sample_box(h, w, lambda_a, rng);
    let box_b = sample_box(h, w, lambda_b, rng);

    let mut image = xa.clone();
    if box_a.area() > 0 {
        let region = if box_b.area() > 0 {
            // extract xb's box, resize it onto xa's box
            let mut patch = Tensor::zeros(&[c, box_b.height(), box_b.width()]);
            for ch in 0..c {
                for y in 0..box_b.height() {
                    for x in 0..box_b.width() {
                        let idx = patch.idx3(ch, y, x);
                        patch.data_mut()[idx] = xb.at3(ch, box_b.y0 + y, box_b.x0 + x);
                    }
                }
            }
            region_transform(&patch, box_a.height(), box_a.width())?
        } else {
            // nothing cut from xb: fill with zeros
            Tensor::zeros(&[c, box_a.height(), box_a.width()])
        };
        for ch in 0..c {
            for y in 0..box_a.height() {
                for x in 0..box_a.width() {
                    let idx = image.idx3(ch, box_a.y0 + y, box_a.x0 + x);
                    image.data_mut()[idx] = region.at3(ch, y, x);
                }
            }
        }
    }
    let w_a = (1.0 - sa.mass_in(&box_a)).clamp(0.0, 1.0);
    let w_b = sb.mass_in(&box_b).clamp(0.0, 1.0);
    Ok(MixedImage {
        image,
        w_a,
        w_b,
        method: MixKind::SnapMix,
    })
}

/// Provides the raw CAM of `(image, class)` at image resolution.
pub type CamProvider<'a> = &'a (dyn Fn(&Tensor, usize) -> Result<Tensor> + Sync);

/// Sample the pairing permutation shared by both branches.
pub fn sample_pairing(n: usize, rng: &mut RngStream) -> Vec<usize> {
    rng.permutation(n)
}

/// Mix each sample `i` with its partner `pairing[i]`.
///
/// Randomness is drawn from a child stream keyed by the unordered pair, so
/// the two directed samples of a pair share one lambda (and box draws), and
/// the result is independent of evaluation order and thread count. With
/// probability `1 - apply_prob` a pair passes through unmixed as
/// `(y, y, 1, 0)`.
pub fn apply_augmentation(
    images: &[Tensor],
    labels: &[usize],
    pairing: &[usize],
    method: &MixMethod,
    cam_provider: Option<CamProvider<'_>>,
    rng: &RngStream,
) -> Result<MixedBatch> {
    method.validate()?;
    let n = images.len();
    if n == 0 {
        return Err(CekdError::invalid("empty batch"));
    }
    if labels.len() != n || pairing.len() != n {
        return Err(CekdError::invalid("batch/labels/pairing length mismatch"));
    }
    if method.kind == MixKind::SnapMix && cam_provider.is_none() {
        return Err(CekdError::invalid("SnapMix requires a cam_provider"));
    }

    let results = map_indexed(n, |i| -> Result<MixedSample> {
        let j = pairing[i];
        let pair_key = (i.min(j) * n + i.max(j)) as u64;
        let mut stream = rng.child_indexed("pair", pair_key);
        let mixed = stream.next_bool(method.apply_prob) && i != j;
        if !mixed {
            return Ok(MixedSample {
                image: images[i].clone(),
                label_a: labels[i],
                label_b: labels[i],
                w_a: 1.0,
                w_b: 0.0,
                method: method.kind,
            });
        }
        let (xa, xb) = (&images[i], &images[j]);
        let mixed_image = match method.kind {
            MixKind::MixUp => {
                let lambda = sample_beta(method.alpha, &mut stream)?;
                // the directed partner blends with the complementary weight
                let lambda = if i < j { lambda } else { 1.0 - lambda };
                mixup(xa, xb, lambda)?
            }
            MixKind::CutMix => {
                let lambda = sample_beta(method.alpha, &mut stream)?;
                let (h, w) = (xa.shape()[1], xa.shape()[2]);
                let b = sample_box(h, w, lambda, &mut stream);
                cutmix(xa, xb, &b)?
            }
            MixKind::SnapMix => {
                let cam = cam_provider.expect("checked above");
                let sa = semantic_map(&cam(xa, labels[i])?)?;
                let sb = semantic_map(&cam(xb, labels[j])?)?;
                snapmix(xa, xb, &sa, &sb, &mut stream, method.alpha)?
            }
        };
        Ok(mixed_image.with_labels(labels[i], labels[j]))
    });

    let samples: Result<Vec<MixedSample>> = results.into_iter().collect();
    Ok(MixedBatch { samples: samples? })
}
