//! Synthetic test objects on the unit square `[-1, 1]^2`.
//!
//! Row `i` of an `m1 x m2` image sits at `y = 1 - (2i + 1) / m1` and column
//! `j` at `x = -1 + (2j + 1) / m2`, so images are stored top row first.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
    Disk,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::SheppLogan => "shepp_logan",
            PhantomKind::RandomEllipses => "random_ellipses",
            PhantomKind::Disk => "disk",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "random_ellipses" => Ok(PhantomKind::RandomEllipses),
            "disk" => Ok(PhantomKind::Disk),
            other => Err(BenchError::PhantomKind(other.to_string())),
        }
    }
}

/// Sampling ranges for random-ellipse phantoms, in unit-square coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseRanges {
    /// Inclusive range of inner ellipse counts.
    pub count: (usize, usize),
    /// Semi-axes of the body ellipse that holds the others.
    pub body_axis: (f64, f64),
    pub body_value: (f64, f64),
    pub axis: (f64, f64),
    /// Inner centres lie within this radius.
    pub centre_radius: f64,
    /// Additive intensity of inner ellipses; negative values carve holes.
    pub value: (f64, f64),
}

impl Default for EllipseRanges {
    fn default() -> Self {
        EllipseRanges {
            count: (3, 6),
            body_axis: (0.6, 0.85),
            body_value: (0.2, 0.4),
            axis: (0.06, 0.3),
            centre_radius: 0.45,
            value: (-0.15, 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: (usize, usize),
    pub seed: u64,
    pub ranges: EllipseRanges,
    /// Disk radius as a fraction of the half width.
    pub radius: f64,
    /// Sub-samples per pixel side used for area averaging.
    pub supersample: usize,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, grid: (usize, usize), seed: u64) -> Self {
        PhantomSpec {
            kind,
            grid,
            seed,
            ranges: EllipseRanges::default(),
            radius: 0.5,
            supersample: 2,
        }
    }
}

/// One additive ellipse: value, semi-axes, centre and rotation in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub value: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Ten-ellipse head phantom with the high-contrast intensity table, whose
/// values already lie in `[0, 1]`.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    const TABLE: [[f64; 6]; 10] = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    TABLE
        .iter()
        .map(|r| Ellipse {
            value: r[0],
            a: r[1],
            b: r[2],
            x0: r[3],
            y0: r[4],
            phi: r[5].to_radians(),
        })
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

/// Body ellipse followed by the inner ellipses drawn from `ranges`.
pub fn random_ellipses(ranges: &EllipseRanges, seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Ellipse {
        value: draw(&mut rng, ranges.body_value),
        a: draw(&mut rng, ranges.body_axis),
        b: draw(&mut rng, ranges.body_axis),
        x0: 0.0,
        y0: 0.0,
        phi: rng.random_range(0.0..PI),
    }];
    let count = rng.random_range(ranges.count.0..=ranges.count.1.max(ranges.count.0));
    for _ in 0..count {
        let r = ranges.centre_radius * rng.random::<f64>().sqrt();
        let th = rng.random_range(0.0..2.0 * PI);
        out.push(Ellipse {
            value: draw(&mut rng, ranges.value),
            a: draw(&mut rng, ranges.axis),
            b: draw(&mut rng, ranges.axis),
            x0: r * th.cos(),
            y0: r * th.sin(),
            phi: rng.random_range(0.0..PI),
        });
    }
    out
}

/// Rasterise additive ellipses with `s x s` sub-samples per pixel and clamp
/// to `[0, 1]`.
pub fn rasterize(ellipses: &[Ellipse], grid: (usize, usize), s: usize) -> Array2<f64> {
    let (m1, m2) = grid;
    let s = s.max(1);
    let inv = 1.0 / (s * s) as f64;
    Array2::from_shape_fn(grid, |(i, j)| {
        let mut acc = 0.0;
        for si in 0..s {
            let y = 1.0 - (2.0 * (i * s + si) as f64 + 1.0) / (m1 * s) as f64;
            for sj in 0..s {
                let x = -1.0 + (2.0 * (j * s + sj) as f64 + 1.0) / (m2 * s) as f64;
                let v: f64 = ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.value)
                    .sum();
                acc += v.clamp(0.0, 1.0);
            }
        }
        acc * inv
    })
}

/// Deterministic phantom for `spec`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Array2<f64>> {
    let (m1, m2) = spec.grid;
    if m1 == 0 || m2 == 0 {
        return Err(BenchError::Grid(m1, m2));
    }
    let ellipses = match spec.kind {
        PhantomKind::SheppLogan => shepp_logan_ellipses(),
        PhantomKind::RandomEllipses => random_ellipses(&spec.ranges, spec.seed),
        PhantomKind::Disk => {
            if spec.radius <= 0.0 {
                return Ok(Array2::zeros(spec.grid));
            }
            vec![Ellipse {
                value: 1.0,
                a: spec.radius,
                b: spec.radius,
                x0: 0.0,
                y0: 0.0,
                phi: 0.0,
            }]
        }
    };
    Ok(rasterize(&ellipses, spec.grid, spec.supersample))
}

/// `count` random-ellipse phantoms with seeds `seed, seed + 1, ...`.
pub fn ellipse_set(grid: (usize, usize), seed: u64, count: usize) -> Result<Vec<Array2<f64>>> {
    (0..count as u64)
        .map(|k| {
            make_phantom(&PhantomSpec::new(
                PhantomKind::RandomEllipses,
                grid,
                seed + k,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_radius_zero_is_blank() {
        let mut spec = PhantomSpec::new(PhantomKind::Disk, (9, 7), 0);
        spec.radius = 0.0;
        let img = make_phantom(&spec).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_area_matches_circle() {
        let mut spec = PhantomSpec::new(PhantomKind::Disk, (128, 128), 0);
        spec.supersample = 4;
        let img = make_phantom(&spec).unwrap();
        // pixel area is (2/128)^2, disk area pi r^2
        let area = img.sum() * (2.0f64 / 128.0).powi(2);
        assert!((area - std::f64::consts::PI * 0.25).abs() < 2e-3, "{area}");
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let a = ellipse_set((24, 24), 5, 2).unwrap();
        let b = ellipse_set((24, 24), 5, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn shepp_logan_centre_and_range() {
        let mut spec = PhantomSpec::new(PhantomKind::SheppLogan, (65, 65), 0);
        spec.supersample = 1;
        let img = make_phantom(&spec).unwrap();
        // centre pixel sits inside the skull and the brain ellipse only
        assert!((img[[32, 32]] - 0.2).abs() < 1e-12);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img[[0, 0]], 0.0);
    }

    #[test]
    fn zero_grid_is_rejected() {
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::Disk, (0, 4), 0)).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            PhantomKind::SheppLogan,
            PhantomKind::RandomEllipses,
            PhantomKind::Disk,
        ] {
            assert_eq!(k.to_string().parse::<PhantomKind>().unwrap(), k);
        }
        assert!("cube".parse::<PhantomKind>().is_err());
    }
}
