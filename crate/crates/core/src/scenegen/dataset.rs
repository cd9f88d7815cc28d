//! Labeled image sets, the generator entry point, and the dataset file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic        7 bytes "S2T-DS1"
//! N, C, H, W   u32 each
//! num_classes  u32
//! pixels       N*C*H*W f32, row-major NCHW
//! labels       N i32
//! manifest     UTF-8 JSON to end of file
//! ```

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{SimParams, DEFAULT_M};
use super::render::{draw_properties, render_image, ImageDraw};
use super::shapes::{pretrain_class, ObjectClass, PRETRAIN_CLASSES};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::seed;

pub const DATASET_MAGIC: &[u8; 7] = b"S2T-DS1";
pub const ALLOWED_SIZES: [usize; 3] = [16, 32, 64];

/// Request for a generated pre-training dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub num_classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub params: SimParams,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "num_classes must be at least 2".into(),
            ));
        }
        if self.images_per_class < 1 {
            return Err(Error::InvalidArgument(
                "images_per_class must be at least 1".into(),
            ));
        }
        if !ALLOWED_SIZES.contains(&self.image_size) {
            return Err(Error::InvalidArgument(format!(
                "image_size {} not in {ALLOWED_SIZES:?}",
                self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Generated(GenSpec),
    External { tag: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: DataSource,
    pub class_names: Vec<String>,
    pub classes: Vec<ObjectClass>,
    /// One entry per image, in image order.
    pub provenance: Vec<ImageDraw>,
}

/// Images (`N x 3 x H x W`), labels, and their manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub manifest: Manifest,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Builds a set from rendered draws of the given classes.
    pub fn render(
        classes: Vec<ObjectClass>,
        draws: Vec<ImageDraw>,
        size: usize,
        source: DataSource,
    ) -> Result<Self> {
        if let Some(bad) = draws.iter().find(|d| d.class >= classes.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad.class,
                classes: classes.len(),
            });
        }
        let rows: Vec<Vec<f64>> = draws
            .par_iter()
            .map(|d| render_image(&classes[d.class], d, size))
            .collect();
        let images = Tensor::stack(&[3, size, size], &rows)?;
        let labels = draws.iter().map(|d| d.class).collect();
        Ok(LabeledImageSet {
            images,
            labels,
            manifest: Manifest {
                source,
                class_names: classes.iter().map(|c| c.name.clone()).collect(),
                classes,
                provenance: draws,
            },
        })
    }

    /// Rows `idx` of the set, with provenance kept in step.
    pub fn subset(&self, idx: &[usize]) -> LabeledImageSet {
        let mut manifest = self.manifest.clone();
        manifest.provenance = idx
            .iter()
            .filter_map(|&i| self.manifest.provenance.get(i).cloned())
            .collect();
        LabeledImageSet {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            manifest,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let shape = self.images.shape();
        let mut out = Vec::with_capacity(27 + self.images.len() * 4 + self.len() * 4);
        out.extend_from_slice(DATASET_MAGIC);
        for &d in shape.iter().chain(std::iter::once(&self.num_classes())) {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.images.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as i32).to_le_bytes());
        }
        out.extend_from_slice(&serde_json::to_vec(&self.manifest)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("dataset", d);
        if bytes.len() < 27 || &bytes[..7] != DATASET_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let u = |i: usize| {
            u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize
        };
        let (n, c, h, w, k) = (u(0), u(1), u(2), u(3), u(4));
        let px = n * c * h * w;
        let pix_end = 27 + px * 4;
        let lab_end = pix_end + n * 4;
        if bytes.len() < lab_end {
            return Err(bad("truncated body"));
        }
        let data = bytes[27..pix_end]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let labels = bytes[pix_end..lab_end]
            .chunks_exact(4)
            .map(|b| {
                let l = i32::from_le_bytes(b.try_into().unwrap());
                usize::try_from(l)
                    .ok()
                    .filter(|&l| l < k)
                    .ok_or_else(|| bad("label out of range"))
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest: Manifest = serde_json::from_slice(&bytes[lab_end..])?;
        if manifest.class_names.len() != k {
            return Err(bad("manifest class count disagrees with header"));
        }
        Ok(LabeledImageSet {
            images: Tensor::from_vec(&[n, c, h, w], data)?,
            labels,
            manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read(path)?)
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(seed::checksum(&self.to_bytes()?))
    }

    /// Binary PPM with one row per class holding up to `per_row` images.
    pub fn contact_sheet_ppm(&self, per_row: usize) -> Vec<u8> {
        let s = self.image_shape()[1];
        let classes = self.num_classes();
        let (w, h) = (per_row * s, classes * s);
        let mut rgb = vec![0u8; w * h * 3];
        let mut slot = vec![0usize; classes];
        for (i, &label) in self.labels.iter().enumerate() {
            let col = slot[label];
            if col >= per_row {
                continue;
            }
            slot[label] += 1;
            let img = self.images.row(i);
            for y in 0..s {
                for x in 0..s {
                    for c in 0..3 {
                        let v = img[c * s * s + y * s + x];
                        rgb[((label * s + y) * w + col * s + x) * 3 + c] =
                            (v * 255.0).round() as u8;
                    }
                }
            }
        }
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&rgb);
        out
    }
}

/// Renders the pre-training dataset described by `spec`.
///
/// Images are ordered class-major; image `c * images_per_class + j` draws its
/// properties from streams keyed by that index.
pub fn render_dataset(spec: &GenSpec) -> Result<LabeledImageSet> {
    spec.validate()?;
    let classes: Vec<ObjectClass> = (0..spec.num_classes).map(pretrain_class).collect();
    let draws = (0..spec.num_classes)
        .flat_map(|c| (0..spec.images_per_class).map(move |j| (c, j)))
        .map(|(c, j)| {
            let index = (c * spec.images_per_class + j) as u64;
            draw_properties(&spec.params, spec.seed, index, c, classes[c].parts.len())
        })
        .collect();
    LabeledImageSet::render(
        classes,
        draws,
        spec.image_size,
        DataSource::Generated(spec.clone()),
    )
}

/// Class-bank offset of the reference corpus; its classes never overlap the pre-training bank.
pub const REFERENCE_CLASS_OFFSET: usize = 40;

/// A held-out corpus with its own class bank where every image switches each
/// variation on independently with probability one half.
pub fn render_reference(
    num_classes: usize,
    images_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    let spec = GenSpec {
        num_classes,
        images_per_class,
        image_size,
        seed,
        params: SimParams::all_on(DEFAULT_M),
    };
    spec.validate()?;
    let classes: Vec<ObjectClass> = (0..num_classes)
        .map(|k| pretrain_class(REFERENCE_CLASS_OFFSET + PRETRAIN_CLASSES + k))
        .collect();
    let mut draws = Vec::with_capacity(num_classes * images_per_class);
    for c in 0..num_classes {
        for j in 0..images_per_class {
            let index = (c * images_per_class + j) as u64;
            let mut mix = seed::stream(seed, "reference-mix", index);
            let flags = (0..DEFAULT_M).map(|_| mix.gen_bool(0.5)).collect();
            let params = SimParams::new(flags)?;
            draws.push(draw_properties(
                &params,
                seed,
                index,
                c,
                classes[c].parts.len(),
            ));
        }
    }
    LabeledImageSet::render(
        classes,
        draws,
        image_size,
        DataSource::External {
            tag: format!("reference:{seed}"),
        },
    )
}
