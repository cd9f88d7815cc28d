//! Per-image property draws and the rasterizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Param, SimParams};
use super::shapes::{
    background_value, material_bank, ObjectClass, BACKGROUND_COUNT, MATERIAL_BANK_SIZE,
};
use crate::seed;

pub const CANONICAL_ROTATION_DEG: f64 = 0.0;
pub const CANONICAL_SCALE: f64 = 0.8;
pub const CANONICAL_INTENSITY: f64 = 1.0;
pub const CANONICAL_TINT: [f64; 3] = [1.0, 1.0, 1.0];
pub const CANONICAL_LIGHT_ANGLE_DEG: f64 = 0.0;
pub const CANONICAL_BLUR: f64 = 0.0;
pub const CANONICAL_BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

pub const SCALE_RANGE: (f64, f64) = (0.5, 1.0);
pub const INTENSITY_RANGE: (f64, f64) = (0.5, 1.3);
pub const TINT_RANGE: (f64, f64) = (0.7, 1.3);
pub const BLUR_RANGE: (f64, f64) = (0.0, 1.5);

/// Strength of the directional shading gradient across the image.
const SHADING: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDraw {
    pub pattern: usize,
    pub colors: [[f64; 3]; 2],
    pub phase: f64,
}

/// Everything that determines one rendered image; doubles as its provenance record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDraw {
    pub class: usize,
    pub rotation_deg: f64,
    pub scale: f64,
    pub intensity: f64,
    pub tint: [f64; 3],
    pub light_angle_deg: f64,
    pub blur_sigma: f64,
    /// `None` is the fixed mid-gray backdrop.
    pub background: Option<BackgroundDraw>,
    /// Material-bank index per part; `None` keeps each part's class material.
    pub materials: Option<Vec<usize>>,
    /// Object center in image coordinates; only task renderers move it.
    pub offset: [f64; 2],
}

impl ImageDraw {
    /// All properties at their canonical values.
    pub fn canonical(class: usize) -> Self {
        ImageDraw {
            class,
            rotation_deg: CANONICAL_ROTATION_DEG,
            scale: CANONICAL_SCALE,
            intensity: CANONICAL_INTENSITY,
            tint: CANONICAL_TINT,
            light_angle_deg: CANONICAL_LIGHT_ANGLE_DEG,
            blur_sigma: CANONICAL_BLUR,
            background: None,
            materials: None,
            offset: [0.0, 0.0],
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

/// Draws the properties of image `image_index`.
///
/// Each parameter reads its own stream keyed by `(seed, parameter, image_index)`,
/// so toggling one flag never shifts the draws of another.
pub fn draw_properties(
    params: &SimParams,
    seed: u64,
    image_index: u64,
    class: usize,
    part_count: usize,
) -> ImageDraw {
    let mut d = ImageDraw::canonical(class);
    let on = |p: Param| params.is_on(p);
    let rng = |p: Param| seed::stream(seed, p.name(), image_index);
    if on(Param::Rotation) {
        d.rotation_deg = rng(Param::Rotation).gen_range(0.0..360.0);
    }
    if on(Param::Distance) {
        d.scale = uniform(&mut rng(Param::Distance), SCALE_RANGE);
    }
    if on(Param::LightIntensity) {
        d.intensity = uniform(&mut rng(Param::LightIntensity), INTENSITY_RANGE);
    }
    if on(Param::LightColor) {
        let mut r = rng(Param::LightColor);
        d.tint = [
            uniform(&mut r, TINT_RANGE),
            uniform(&mut r, TINT_RANGE),
            uniform(&mut r, TINT_RANGE),
        ];
    }
    if on(Param::LightDirection) {
        d.light_angle_deg = rng(Param::LightDirection).gen_range(0.0..360.0);
    }
    if on(Param::FocusBlur) {
        d.blur_sigma = uniform(&mut rng(Param::FocusBlur), BLUR_RANGE);
    }
    if on(Param::Background) {
        let mut r = rng(Param::Background);
        let pattern = r.gen_range(0..BACKGROUND_COUNT);
        let mut color = || [r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()];
        let colors = [color(), color()];
        d.background = Some(BackgroundDraw {
            pattern,
            colors,
            phase: r.gen(),
        });
    }
    if on(Param::Materials) {
        let mut r = rng(Param::Materials);
        d.materials = Some(
            (0..part_count)
                .map(|_| r.gen_range(0..MATERIAL_BANK_SIZE))
                .collect(),
        );
    }
    d
}

/// Renders `class` under `draw` to a `3 x size x size` image with values in `[0, 1]`.
///
/// Pixel values are rounded to `f32` precision so the dataset file format
/// stores them exactly.
pub fn render_image(class: &ObjectClass, draw: &ImageDraw, size: usize) -> Vec<f64> {
    const SS: usize = 2;
    let plane = size * size;
    let mut img = vec![0.0; 3 * plane];
    let (rs, rc) = draw.rotation_deg.to_radians().sin_cos();
    let (ls, lc) = draw.light_angle_deg.to_radians().sin_cos();
    let materials: Vec<_> = class
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| match &draw.materials {
            Some(m) => material_bank(m.get(i).copied().unwrap_or(0)),
            None => p.material,
        })
        .collect();
    for py in 0..size {
        for px in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = ((px as f64 + (sx as f64 + 0.5) / SS as f64) / size as f64) * 2.0 - 1.0;
                    let y = ((py as f64 + (sy as f64 + 0.5) / SS as f64) / size as f64) * 2.0 - 1.0;
                    let c = shade_point(class, draw, &materials, x, y, (rs, rc), (ls, lc));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                img[k * plane + py * size + px] = acc[k] / (SS * SS) as f64;
            }
        }
    }
    if draw.blur_sigma > 1e-9 {
        for k in 0..3 {
            gaussian_blur(&mut img[k * plane..(k + 1) * plane], size, draw.blur_sigma);
        }
    }
    for v in &mut img {
        *v = f64::from(v.clamp(0.0, 1.0) as f32);
    }
    img
}

fn shade_point(
    class: &ObjectClass,
    draw: &ImageDraw,
    materials: &[super::shapes::Material],
    x: f64,
    y: f64,
    (rs, rc): (f64, f64),
    (ls, lc): (f64, f64),
) -> [f64; 3] {
    let dx = (x - draw.offset[0]) / draw.scale;
    let dy = (y - draw.offset[1]) / draw.scale;
    // inverse rotation into object coordinates
    let ox = rc * dx + rs * dy;
    let oy = -rs * dx + rc * dy;
    for (part, mat) in class.parts.iter().zip(materials).rev() {
        let (u, v) = part.local(ox, oy);
        if part.shape.contains(u, v) {
            let base = mat.shade(u, v);
            let light = draw.intensity * (1.0 + SHADING * (x * lc + y * ls));
            return [
                base[0] * light * draw.tint[0],
                base[1] * light * draw.tint[1],
                base[2] * light * draw.tint[2],
            ];
        }
    }
    match &draw.background {
        None => CANONICAL_BACKGROUND,
        Some(b) => {
            let t = background_value(b.pattern, x, y, b.phase);
            let [c0, c1] = b.colors;
            [
                c0[0] * (1.0 - t) + c1[0] * t,
                c0[1] * (1.0 - t) + c1[1] * t,
                c0[2] * (1.0 - t) + c1[2] * t,
            ]
        }
    }
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(plane: &mut [f64], size: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * plane[y * size + clamp(x as isize + j as isize - radius)])
                .sum();
        }
    }
    for y in 0..size {
        for x in 0..size {
            plane[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[clamp(y as isize + j as isize - radius) * size + x])
                .sum();
        }
    }
}
