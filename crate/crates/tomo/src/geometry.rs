use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::GeometryConfig;
use crate::error::{Result, TomoError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Beam {
    Parallel,
    Fan,
}

impl Beam {
    /// Angular range covered by the full view set.
    pub fn angular_range(self) -> f64 {
        match self {
            Beam::Parallel => PI,
            Beam::Fan => 2.0 * PI,
        }
    }
}

/// A validated acquisition geometry.
///
/// Parallel-beam views are uniform on `[0, pi)`, fan-beam views on `[0, 2 pi)`.
/// The fan-beam detector is flat; the source sits `src_dist` from the rotation
/// centre and the detector plane `det_dist` on the opposite side.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    beam: Beam,
    angles: Vec<f64>,
    n_det: usize,
    det_spacing: f64,
    src_dist: f64,
    det_dist: f64,
    grid: (usize, usize),
    pixel_size: f64,
}

/// Sorted indices into a geometry's full view set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ViewSubset {
    indices: Vec<usize>,
    n_full: usize,
}

impl ViewSubset {
    pub fn new(indices: Vec<usize>, n_full: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(TomoError::InvalidSubset("empty view subset".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TomoError::InvalidSubset(
                "indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= n_full {
                return Err(TomoError::InvalidSubset(format!(
                    "index {last} out of range for {n_full} views"
                )));
            }
        }
        Ok(ViewSubset { indices, n_full })
    }

    /// Evenly decimated subset: `indices[k] = floor(k * n_full / q1)`.
    pub fn decimate(n_full: usize, q1: usize) -> Result<Self> {
        if q1 == 0 || q1 > n_full {
            return Err(TomoError::ViewCount {
                q1,
                n_views: n_full,
            });
        }
        let indices = (0..q1).map(|k| k * n_full / q1).collect();
        Ok(ViewSubset { indices, n_full })
    }

    pub fn full(n_full: usize) -> Self {
        ViewSubset {
            indices: (0..n_full).collect(),
            n_full,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.n_full
    }
}

impl ScanGeometry {
    pub fn new(cfg: &GeometryConfig) -> Result<Self> {
        let invalid = |msg: &str| Err(TomoError::InvalidGeometry(msg.to_string()));
        if cfg.n_views == 0 {
            return invalid("n_views must be positive");
        }
        if cfg.n_det == 0 {
            return invalid("n_det must be positive");
        }
        if cfg.grid.0 == 0 || cfg.grid.1 == 0 {
            return invalid("grid dimensions must be positive");
        }
        if !(cfg.det_spacing > 0.0) || !cfg.det_spacing.is_finite() {
            return invalid("det_spacing must be positive");
        }
        if !(cfg.pixel_size > 0.0) || !cfg.pixel_size.is_finite() {
            return invalid("pixel_size must be positive");
        }
        let radius = support_radius(cfg.grid, cfg.pixel_size);
        let half_span = 0.5 * cfg.n_det as f64 * cfg.det_spacing;
        let reach = match cfg.beam {
            Beam::Parallel => half_span,
            Beam::Fan => {
                if !(cfg.src_dist > 0.0) || !(cfg.det_dist > 0.0) {
                    return invalid("fan beam requires positive src_dist and det_dist");
                }
                if cfg.src_dist <= radius {
                    return invalid("source lies inside the image support");
                }
                let sdd = cfg.src_dist + cfg.det_dist;
                cfg.src_dist * half_span / (sdd * sdd + half_span * half_span).sqrt()
            }
        };
        if reach < radius {
            return Err(TomoError::Coverage { reach, radius });
        }
        let range = cfg.beam.angular_range();
        let angles = (0..cfg.n_views)
            .map(|k| range * k as f64 / cfg.n_views as f64)
            .collect();
        Ok(ScanGeometry {
            beam: cfg.beam,
            angles,
            n_det: cfg.n_det,
            det_spacing: cfg.det_spacing,
            src_dist: if cfg.beam == Beam::Fan {
                cfg.src_dist
            } else {
                0.0
            },
            det_dist: if cfg.beam == Beam::Fan {
                cfg.det_dist
            } else {
                0.0
            },
            grid: cfg.grid,
            pixel_size: cfg.pixel_size,
        })
    }

    pub fn config(&self) -> GeometryConfig {
        GeometryConfig {
            beam: self.beam,
            n_views: self.angles.len(),
            n_det: self.n_det,
            det_spacing: self.det_spacing,
            src_dist: self.src_dist,
            det_dist: self.det_dist,
            grid: self.grid,
            pixel_size: self.pixel_size,
        }
    }

    pub fn beam(&self) -> Beam {
        self.beam
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn view_angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn det_spacing(&self) -> f64 {
        self.det_spacing
    }

    pub fn src_dist(&self) -> Option<f64> {
        (self.beam == Beam::Fan).then_some(self.src_dist)
    }

    pub fn det_dist(&self) -> Option<f64> {
        (self.beam == Beam::Fan).then_some(self.det_dist)
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn sparse_subset(&self, q1: usize) -> Result<ViewSubset> {
        ViewSubset::decimate(self.n_views(), q1)
    }

    pub fn full_subset(&self) -> ViewSubset {
        ViewSubset::full(self.n_views())
    }

    pub(crate) fn check_subset(&self, views: &ViewSubset) -> Result<()> {
        if views.n_full() != self.n_views() {
            return Err(TomoError::InvalidSubset(format!(
                "subset refers to {} full views, geometry has {}",
                views.n_full(),
                self.n_views()
            )));
        }
        Ok(())
    }

    /// Detector element centre, measured along the detector from its middle.
    pub(crate) fn det_coord(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_det as f64 - 1.0)) * self.det_spacing
    }

    /// Scale source and detector distances by independent factors drawn
    /// uniformly from `[1 - rel, 1 + rel]`.
    pub fn perturb(&self, rel: f64, seed: u64) -> Result<ScanGeometry> {
        if self.beam != Beam::Fan {
            return Err(TomoError::NotFanBeam);
        }
        if !(rel.abs() <= 0.05) {
            return Err(TomoError::Perturbation(rel));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: f64 = rng.random_range(-1.0..=1.0);
        let b: f64 = rng.random_range(-1.0..=1.0);
        let mut cfg = self.config();
        cfg.src_dist *= 1.0 + rel * a;
        cfg.det_dist *= 1.0 + rel * b;
        ScanGeometry::new(&cfg)
    }
}

/// Radius of the circle circumscribing the pixel grid.
pub(crate) fn support_radius(grid: (usize, usize), pixel_size: f64) -> f64 {
    let w = grid.1 as f64 * pixel_size;
    let h = grid.0 as f64 * pixel_size;
    0.5 * (w * w + h * h).sqrt()
}
