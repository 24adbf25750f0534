//! Procedural datasets: Gaussian-mixture point clouds and single-shape images.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ToyError;
use crate::tensor::ImageTensor;
use crate::variation::derive_seed;

/// Lattice levels a mixture mean may take in each coordinate.
const LATTICE: [f32; 5] = [0.2, 0.35, 0.5, 0.65, 0.8];
const FILL_RANGE: (f32, f32) = (0.4, 1.0);
/// Stripe width (pixels) used by [`style_shift`].
pub const DEFAULT_STRIPE_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Disc,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    HorizontalStripes,
    VerticalStripes,
    Checker,
}

/// Texture replacing a flat fill: two intensities alternating every `width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureStyle {
    pub pattern: Pattern,
    pub width: usize,
    pub low: f32,
    pub high: f32,
}

impl TextureStyle {
    pub fn value_at(&self, x: usize, y: usize) -> f32 {
        let w = self.width.max(1);
        let phase = match self.pattern {
            Pattern::HorizontalStripes => (y / w) % 2,
            Pattern::VerticalStripes => (x / w) % 2,
            Pattern::Checker => (x / w + y / w) % 2,
        };
        if phase == 0 {
            self.high
        } else {
            self.low
        }
    }
}

/// Geometry and appearance of one rendered shape.
///
/// `half_w`/`half_h` are half extents for rectangles, `half_w` is the radius of
/// a disc and the arm length of a cross, whose arms are `2 * thickness + 1` wide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptor {
    pub kind: ShapeKind,
    pub cx: usize,
    pub cy: usize,
    pub half_w: usize,
    pub half_h: usize,
    pub thickness: usize,
    pub fill: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<TextureStyle>,
}

impl ShapeDescriptor {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let dx = x.abs_diff(self.cx);
        let dy = y.abs_diff(self.cy);
        match self.kind {
            ShapeKind::Rectangle => dx <= self.half_w && dy <= self.half_h,
            ShapeKind::Disc => dx * dx + dy * dy <= self.half_w * self.half_w,
            ShapeKind::Cross => {
                (dx <= self.thickness && dy <= self.half_w) || (dy <= self.thickness && dx <= self.half_w)
            }
        }
    }

    pub fn value_at(&self, x: usize, y: usize) -> f32 {
        if !self.covers(x, y) {
            return 0.0;
        }
        match &self.style {
            None => self.fill,
            Some(style) => style.value_at(x, y),
        }
    }
}

/// Content label attached to each sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentLabel {
    Component { index: usize },
    Shape(ShapeDescriptor),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Gmm {
        dims: usize,
        components: usize,
        sigma: f32,
    },
    Shapes {
        side: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub samples: Vec<ImageTensor>,
    pub labels: Option<Vec<ContentLabel>>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape_descriptors(&self) -> Option<Vec<ShapeDescriptor>> {
        self.labels
            .as_ref()?
            .iter()
            .map(|l| match l {
                ContentLabel::Shape(d) => Some(*d),
                ContentLabel::Component { .. } => None,
            })
            .collect()
    }
}

fn sample_rng(seed: u64, index: usize, stream: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64, stream))
}

/// Points from a `components`-way Gaussian mixture with means on a seeded lattice.
pub fn gen_gmm_dataset(
    n: usize,
    dims: usize,
    components: usize,
    sigma: f32,
    seed: u64,
) -> Result<Dataset, ToyError> {
    if n == 0 || dims == 0 || components == 0 {
        return Err(ToyError::InvalidParams("n, d and K must be at least 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ToyError::InvalidParams(format!(
            "sigma {sigma} must be finite and >= 0"
        )));
    }
    let mut mean_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, 0));
    let means: Vec<Vec<f32>> = (0..components)
        .map(|_| {
            (0..dims)
                .map(|_| LATTICE[mean_rng.random_range(0..LATTICE.len())])
                .collect()
        })
        .collect();

    let (samples, labels): (Vec<_>, Vec<_>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i, 0);
            let c = rng.random_range(0..components);
            let data: Vec<f32> = means[c]
                .iter()
                .map(|&m| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    (m + sigma * z).clamp(0.0, 1.0)
                })
                .collect();
            (
                ImageTensor::from_vec(data).expect("finite"),
                ContentLabel::Component { index: c },
            )
        })
        .unzip();

    Ok(Dataset {
        kind: DatasetKind::Gmm {
            dims,
            components,
            sigma,
        },
        samples,
        labels: Some(labels),
        seed,
    })
}

/// Inclusive size range used by the shape generator for a given side.
pub fn size_range(side: usize) -> (usize, usize) {
    (side / 8, side / 4)
}

fn random_shape<R: Rng>(side: usize, rng: &mut R) -> ShapeDescriptor {
    let (lo, hi) = size_range(side);
    let kind = match rng.random_range(0..3) {
        0 => ShapeKind::Rectangle,
        1 => ShapeKind::Disc,
        _ => ShapeKind::Cross,
    };
    let half_w = rng.random_range(lo..=hi);
    let half_h = match kind {
        ShapeKind::Rectangle => rng.random_range(lo..=hi),
        _ => half_w,
    };
    let thickness = match kind {
        ShapeKind::Cross => rng.random_range(0..=1),
        _ => 0,
    };
    let cx = rng.random_range(half_w..=side - 1 - half_w);
    let cy = rng.random_range(half_h..=side - 1 - half_h);
    let fill = rng.random_range(FILL_RANGE.0..=FILL_RANGE.1);
    ShapeDescriptor {
        kind,
        cx,
        cy,
        half_w,
        half_h,
        thickness,
        fill,
        style: None,
    }
}

/// Renders a descriptor into a `(1, side, side)` image.
pub fn render_shape(desc: &ShapeDescriptor, side: usize) -> ImageTensor {
    let data = (0..side * side)
        .map(|i| desc.value_at(i % side, i / side))
        .collect();
    ImageTensor::new(vec![1, side, side], data).expect("side*side pixels")
}

/// Grayscale `side x side` images with one seeded shape each.
pub fn gen_shape_dataset(n: usize, side: usize, seed: u64) -> Result<Dataset, ToyError> {
    if side < 8 {
        return Err(ToyError::InvalidParams(format!("side {side} is below 8")));
    }
    if n == 0 {
        return Err(ToyError::InvalidParams("n must be at least 1".into()));
    }
    let descs: Vec<ShapeDescriptor> = (0..n)
        .into_par_iter()
        .map(|i| random_shape(side, &mut sample_rng(seed, i, 0)))
        .collect();
    let samples = descs.par_iter().map(|d| render_shape(d, side)).collect();
    Ok(Dataset {
        kind: DatasetKind::Shapes { side },
        samples,
        labels: Some(descs.into_iter().map(ContentLabel::Shape).collect()),
        seed,
    })
}

/// Palette for the shifted style: a fill-dependent bright tone and a darker partner.
fn shifted_palette(fill: f32) -> (f32, f32) {
    let high = (1.3 - fill).clamp(0.3, 1.0);
    (0.4 * high, high)
}

/// Same geometry per image, flat fill replaced by a stripe or checker texture.
pub fn style_shift(ds: &Dataset, seed: u64) -> Result<Dataset, ToyError> {
    style_shift_with_width(ds, seed, DEFAULT_STRIPE_WIDTH)
}

pub fn style_shift_with_width(ds: &Dataset, seed: u64, width: usize) -> Result<Dataset, ToyError> {
    let side = match ds.kind {
        DatasetKind::Shapes { side } => side,
        DatasetKind::Gmm { .. } => return Err(ToyError::MissingDescriptors),
    };
    let descs = ds.shape_descriptors().ok_or(ToyError::MissingDescriptors)?;
    if width == 0 {
        return Err(ToyError::InvalidParams("stripe width must be positive".into()));
    }
    let shifted: Vec<ShapeDescriptor> = descs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = sample_rng(seed, i, 1);
            let pattern = match rng.random_range(0..3) {
                0 => Pattern::HorizontalStripes,
                1 => Pattern::VerticalStripes,
                _ => Pattern::Checker,
            };
            let (low, high) = shifted_palette(d.fill);
            ShapeDescriptor {
                style: Some(TextureStyle {
                    pattern,
                    width,
                    low,
                    high,
                }),
                ..*d
            }
        })
        .collect();
    let samples = shifted.par_iter().map(|d| render_shape(d, side)).collect();
    Ok(Dataset {
        kind: ds.kind,
        samples,
        labels: Some(shifted.into_iter().map(ContentLabel::Shape).collect()),
        seed,
    })
}

/// Disjoint member / nonmember index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipSplit {
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
}

impl MembershipSplit {
    pub fn is_member(&self, index: usize) -> bool {
        self.members.binary_search(&index).is_ok()
    }
}

/// Seeded uniform 50/50 partition of `0..n`; members get `n / 2` indices.
pub fn split_members(n: usize, seed: u64) -> Result<MembershipSplit, ToyError> {
    if n == 0 {
        return Err(ToyError::EmptyDataset);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX - 1, 0)));
    let mut members = idx[..n / 2].to_vec();
    let mut nonmembers = idx[n / 2..].to_vec();
    members.sort_unstable();
    nonmembers.sort_unstable();
    Ok(MembershipSplit { members, nonmembers })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    seed: u64,
    #[serde(flatten)]
    kind: DatasetKind,
    count: usize,
    labels: Option<Vec<ContentLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<MembershipSplit>,
}

/// Writes `sample_NNNNN.tnsr` files plus `manifest.json`.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    ds: &Dataset,
    split: Option<&MembershipSplit>,
) -> Result<(), ToyError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, s) in ds.samples.iter().enumerate() {
        s.write_tnsr(dir.join(format!("sample_{i:05}.tnsr")))?;
    }
    let manifest = DatasetManifest {
        seed: ds.seed,
        kind: ds.kind,
        count: ds.len(),
        labels: ds.labels.clone(),
        split: split.cloned(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Dataset, Option<MembershipSplit>), ToyError> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let samples = (0..manifest.count)
        .map(|i| ImageTensor::read_tnsr(dir.join(format!("sample_{i:05}.tnsr"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        Dataset {
            kind: manifest.kind,
            samples,
            labels: manifest.labels,
            seed: manifest.seed,
        },
        manifest.split,
    ))
}
