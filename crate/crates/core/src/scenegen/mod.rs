//! Deterministic procedural 2-D renderer.
//!
//! Eight binary simulation parameters gate per-image variation: in-plane
//! rotation, object scale, light intensity, light tint, shading direction,
//! Gaussian focus blur, textured backgrounds, and random part materials.
//! When a flag is off its property stays at the canonical constant for
//! every image; when on, it is drawn uniformly per image from its range.

mod dataset;
mod params;
mod render;
pub mod shapes;

pub use dataset::{
    render_dataset, render_reference, DataSource, GenSpec, LabeledImageSet, Manifest,
    ALLOWED_SIZES, DATASET_MAGIC,
};
pub use params::{
    enumerate_space, params_decode, params_encode, Param, SimParams, DEFAULT_M, MAX_M, PARAM_NAMES,
};
pub use render::{
    draw_properties, gaussian_blur, render_image, BackgroundDraw, ImageDraw, BLUR_RANGE,
    CANONICAL_SCALE, INTENSITY_RANGE, SCALE_RANGE, TINT_RANGE,
};
pub use shapes::{ObjectClass, Part, Pattern, Shape};
