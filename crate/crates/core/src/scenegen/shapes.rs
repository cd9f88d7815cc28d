//! Procedural object classes, materials, and background patterns.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Part outline, evaluated in part-local coordinates where the part spans roughly `[-1, 1]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Polygon { sides: u32 },
    Star { points: u32, inner: f64 },
    Ring { inner: f64 },
    Cross { thickness: f64 },
    Rect { aspect: f64 },
    Ellipse { aspect: f64 },
}

impl Shape {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let r = u.hypot(v);
        match *self {
            Shape::Polygon { sides } => {
                let sector = 2.0 * PI / sides as f64;
                let theta = v.atan2(u).rem_euclid(sector) - sector / 2.0;
                r * theta.cos() <= (sector / 2.0).cos()
            }
            Shape::Star { points, inner } => {
                let sector = 2.0 * PI / points as f64;
                let phi = (v.atan2(u) + PI / 2.0).rem_euclid(sector);
                let t = (phi - sector / 2.0).abs() / (sector / 2.0);
                r <= inner + (1.0 - inner) * t
            }
            Shape::Ring { inner } => r <= 1.0 && r >= inner,
            Shape::Cross { thickness } => {
                (u.abs() <= thickness && v.abs() <= 1.0) || (v.abs() <= thickness && u.abs() <= 1.0)
            }
            Shape::Rect { aspect } => u.abs() <= 1.0 && v.abs() <= aspect,
            Shape::Ellipse { aspect } => u * u + (v / aspect) * (v / aspect) <= 1.0,
        }
    }
}

/// Surface pattern; `value` is in `[0, 1]` and modulates the material color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Solid,
    StripesH,
    StripesV,
    Checker,
    Dots,
    Diagonal,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::Solid,
        Pattern::StripesH,
        Pattern::StripesV,
        Pattern::Checker,
        Pattern::Dots,
        Pattern::Diagonal,
    ];

    pub fn value(self, u: f64, v: f64) -> f64 {
        const F: f64 = 2.2;
        let band = |x: f64| {
            if (x * F).rem_euclid(1.0) < 0.5 {
                1.0
            } else {
                0.0
            }
        };
        match self {
            Pattern::Solid => 1.0,
            Pattern::StripesH => band(v),
            Pattern::StripesV => band(u),
            Pattern::Checker => {
                if band(u) == band(v) {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Dots => {
                let cu = (u * F).rem_euclid(1.0) - 0.5;
                let cv = (v * F).rem_euclid(1.0) - 0.5;
                if cu * cu + cv * cv < 0.09 {
                    0.0
                } else {
                    1.0
                }
            }
            Pattern::Diagonal => band((u + v) * std::f64::consts::FRAC_1_SQRT_2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub color: [f64; 3],
    pub pattern: Pattern,
}

impl Material {
    pub fn solid(color: [f64; 3]) -> Self {
        Material {
            color,
            pattern: Pattern::Solid,
        }
    }

    pub fn shade(&self, u: f64, v: f64) -> [f64; 3] {
        let t = 0.45 + 0.55 * self.pattern.value(u, v);
        [self.color[0] * t, self.color[1] * t, self.color[2] * t]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub shape: Shape,
    /// Center in object coordinates.
    pub offset: [f64; 2],
    pub size: f64,
    /// Part orientation in radians.
    pub angle: f64,
    pub material: Material,
}

impl Part {
    pub fn new(shape: Shape, material: Material) -> Self {
        Part {
            shape,
            offset: [0.0, 0.0],
            size: 1.0,
            angle: 0.0,
            material,
        }
    }

    pub fn at(mut self, offset: [f64; 2], size: f64) -> Self {
        self.offset = offset;
        self.size = size;
        self
    }

    pub fn turned(mut self, angle: f64) -> Self {
        self.angle = angle;
        self
    }

    /// Part-local coordinates of object point `(x, y)`.
    pub fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (
            (x - self.offset[0]) / self.size,
            (y - self.offset[1]) / self.size,
        );
        let (s, c) = self.angle.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// A class of objects: parts drawn back to front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub name: String,
    pub parts: Vec<Part>,
}

/// Converts hue in turns, saturation and value to RGB.
pub fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Number of entries in the random-material bank.
pub const MATERIAL_BANK_SIZE: usize = 12;

/// Material `i` of the bank drawn from when materials are randomized.
pub fn material_bank(i: usize) -> Material {
    let i = i % MATERIAL_BANK_SIZE;
    Material {
        color: hsv(i as f64 * 5.0 / 12.0, 0.75, 0.9),
        pattern: Pattern::ALL[i % Pattern::ALL.len()],
    }
}

/// Number of procedural background patterns.
pub const BACKGROUND_COUNT: usize = 16;

/// Value of background pattern `index` at image point `(x, y)` in `[-1, 1]^2`.
pub fn background_value(index: usize, x: f64, y: f64, phase: f64) -> f64 {
    let freq = if index < 8 { 1.5 } else { 3.0 };
    let wave = |t: f64| 0.5 + 0.5 * (2.0 * PI * (t * freq + phase)).sin();
    match index % 8 {
        0 => 0.5 + 0.5 * x,
        1 => 0.5 + 0.5 * y,
        2 => wave(y),
        3 => wave(x),
        4 => {
            if wave(x) > 0.5 && wave(y) > 0.5 || wave(x) <= 0.5 && wave(y) <= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        5 => wave((x + y) * 0.7),
        6 => wave(x.hypot(y)),
        _ => 0.5 + 0.25 * ((3.0 * x + phase * 6.0).sin() + (2.0 * y - phase * 4.0).cos()),
    }
}

/// Default number of classes in the pre-training bank.
pub const PRETRAIN_CLASSES: usize = 12;

fn bank_color(k: usize) -> [f64; 3] {
    hsv(k as f64 * 0.381_966, 0.7, 0.85)
}

/// Class `k` of the pre-training bank. The first twelve are fixed designs;
/// later indices are composites derived from `k`.
pub fn pretrain_class(k: usize) -> ObjectClass {
    let m = Material::solid(bank_color(k));
    let accent = Material::solid(bank_color(k + 7));
    let (name, parts): (&str, Vec<Part>) = match k {
        0 => ("triangle", vec![Part::new(Shape::Polygon { sides: 3 }, m)]),
        1 => ("square", vec![Part::new(Shape::Polygon { sides: 4 }, m)]),
        2 => ("pentagon", vec![Part::new(Shape::Polygon { sides: 5 }, m)]),
        3 => ("hexagon", vec![Part::new(Shape::Polygon { sides: 6 }, m)]),
        4 => (
            "star5",
            vec![Part::new(
                Shape::Star {
                    points: 5,
                    inner: 0.45,
                },
                m,
            )],
        ),
        5 => (
            "star8",
            vec![Part::new(
                Shape::Star {
                    points: 8,
                    inner: 0.6,
                },
                m,
            )],
        ),
        6 => ("ring", vec![Part::new(Shape::Ring { inner: 0.55 }, m)]),
        7 => ("cross", vec![Part::new(Shape::Cross { thickness: 0.3 }, m)]),
        8 => (
            "disc_with_square",
            vec![
                Part::new(Shape::Ellipse { aspect: 1.0 }, m),
                Part::new(Shape::Polygon { sides: 4 }, accent).at([0.0, 0.0], 0.45),
            ],
        ),
        9 => ("bar", vec![Part::new(Shape::Rect { aspect: 0.35 }, m)]),
        10 => (
            "twin_triangles",
            vec![
                Part::new(Shape::Polygon { sides: 3 }, m).at([-0.45, 0.0], 0.55),
                Part::new(Shape::Polygon { sides: 3 }, accent)
                    .at([0.45, 0.0], 0.55)
                    .turned(PI),
            ],
        ),
        11 => (
            "ringed_star",
            vec![
                Part::new(Shape::Ring { inner: 0.8 }, m),
                Part::new(
                    Shape::Star {
                        points: 4,
                        inner: 0.35,
                    },
                    accent,
                )
                .at([0.0, 0.0], 0.7),
            ],
        ),
        _ => {
            let outer = [
                Shape::Polygon {
                    sides: 3 + (k % 5) as u32,
                },
                Shape::Star {
                    points: 3 + (k % 6) as u32,
                    inner: 0.5,
                },
                Shape::Ellipse { aspect: 0.6 },
            ][k % 3];
            let inner = [
                Shape::Ring { inner: 0.5 },
                Shape::Cross { thickness: 0.25 },
                Shape::Rect { aspect: 0.5 },
                Shape::Polygon { sides: 4 },
            ][(k / 3) % 4];
            return ObjectClass {
                name: format!("composite{k}"),
                parts: vec![
                    Part::new(outer, m),
                    Part::new(inner, accent)
                        .at([0.0, 0.0], 0.5)
                        .turned(k as f64 * 0.4),
                ],
            };
        }
    };
    ObjectClass {
        name: name.to_string(),
        parts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_contain_their_center_except_ring() {
        let shapes = [
            Shape::Polygon { sides: 3 },
            Shape::Polygon { sides: 6 },
            Shape::Star {
                points: 5,
                inner: 0.4,
            },
            Shape::Cross { thickness: 0.3 },
            Shape::Rect { aspect: 0.4 },
            Shape::Ellipse { aspect: 0.5 },
        ];
        for s in shapes {
            assert!(s.contains(0.0, 0.0), "{s:?}");
            assert!(!s.contains(1.5, 1.5), "{s:?}");
        }
        assert!(!Shape::Ring { inner: 0.5 }.contains(0.0, 0.0));
        assert!(Shape::Ring { inner: 0.5 }.contains(0.75, 0.0));
    }

    #[test]
    fn pretrain_bank_names_are_unique() {
        let names: std::collections::HashSet<_> = (0..30).map(|k| pretrain_class(k).name).collect();
        assert_eq!(names.len(), 30);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-12);
    }
}
