//! Linear interpolation of a sparse sinogram onto the full view set.
//!
//! Views are periodic: fan-beam data wraps at 2 pi, parallel-beam data wraps
//! at pi where the view at `theta + pi` is the view at `theta` with the
//! detector axis reversed.

use crate::error::{Result, TomoError};
use crate::geometry::{Beam, ScanGeometry, ViewSubset};
use crate::Sinogram;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    row: usize,
    weight: f64,
    reversed: bool,
}

/// Precomputed interpolation weights from a subset to all views.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewInterpolation {
    n_det: usize,
    n_sparse: usize,
    taps: Vec<[Tap; 2]>,
}

impl ViewInterpolation {
    pub fn new(geom: &ScanGeometry, views: &ViewSubset) -> Result<Self> {
        geom.check_subset(views)?;
        if views.is_empty() {
            return Err(TomoError::InvalidSubset("empty view subset".into()));
        }
        let n_full = geom.n_views();
        let idx = views.indices();
        let q1 = idx.len();
        let wrap_reverses = geom.beam() == Beam::Parallel;
        let mut taps = Vec::with_capacity(n_full);
        for v in 0..n_full {
            // position of the last subset view at or before v
            let pos = idx.partition_point(|&i| i <= v);
            let tap = if pos > 0 && idx[pos - 1] == v {
                let t = Tap {
                    row: pos - 1,
                    weight: 1.0,
                    reversed: false,
                };
                [t, Tap { weight: 0.0, ..t }]
            } else {
                // lower neighbour (possibly wrapped from the end) and upper
                // neighbour (possibly wrapped from the start)
                let (lo_row, lo_pos, lo_wrapped) = if pos == 0 {
                    (q1 - 1, idx[q1 - 1] as f64 - n_full as f64, true)
                } else {
                    (pos - 1, idx[pos - 1] as f64, false)
                };
                let (hi_row, hi_pos, hi_wrapped) = if pos == q1 {
                    (0, (idx[0] + n_full) as f64, true)
                } else {
                    (pos, idx[pos] as f64, false)
                };
                let t = (v as f64 - lo_pos) / (hi_pos - lo_pos);
                [
                    Tap {
                        row: lo_row,
                        weight: 1.0 - t,
                        reversed: lo_wrapped && wrap_reverses,
                    },
                    Tap {
                        row: hi_row,
                        weight: t,
                        reversed: hi_wrapped && wrap_reverses,
                    },
                ]
            };
            taps.push(tap);
        }
        Ok(ViewInterpolation {
            n_det: geom.n_det(),
            n_sparse: q1,
            taps,
        })
    }

    pub fn n_full(&self) -> usize {
        self.taps.len()
    }

    pub fn n_sparse(&self) -> usize {
        self.n_sparse
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    /// `sparse` is `n_sparse x n_det`, `full` is `n_full x n_det`, both row-major.
    pub fn apply(&self, sparse: &[f64], full: &mut [f64]) {
        let n = self.n_det;
        assert_eq!(sparse.len(), self.n_sparse * n);
        assert_eq!(full.len(), self.taps.len() * n);
        for (row, taps) in full.chunks_mut(n).zip(&self.taps) {
            row.fill(0.0);
            for tap in taps {
                if tap.weight == 0.0 {
                    continue;
                }
                let src = &sparse[tap.row * n..][..n];
                if tap.reversed {
                    for (o, s) in row.iter_mut().zip(src.iter().rev()) {
                        *o += tap.weight * s;
                    }
                } else {
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += tap.weight * s;
                    }
                }
            }
        }
    }

    pub fn apply_transpose(&self, full: &[f64], sparse: &mut [f64]) {
        let n = self.n_det;
        assert_eq!(sparse.len(), self.n_sparse * n);
        assert_eq!(full.len(), self.taps.len() * n);
        sparse.fill(0.0);
        for (row, taps) in full.chunks(n).zip(&self.taps) {
            for tap in taps {
                if tap.weight == 0.0 {
                    continue;
                }
                let dst = &mut sparse[tap.row * n..][..n];
                if tap.reversed {
                    for (d, s) in dst.iter_mut().rev().zip(row) {
                        *d += tap.weight * s;
                    }
                } else {
                    for (d, s) in dst.iter_mut().zip(row) {
                        *d += tap.weight * s;
                    }
                }
            }
        }
    }
}

impl ScanGeometry {
    /// Interpolate a sparse-view sinogram to every view of the geometry.
    pub fn upsample_views(&self, y: &Sinogram) -> Result<Sinogram> {
        self.check_sinogram(y)?;
        let interp = ViewInterpolation::new(self, &y.views)?;
        let data = y.data.as_standard_layout();
        let mut out = Sinogram::zeros(self.full_subset(), self.n_det());
        interp.apply(
            data.as_slice().expect("standard layout"),
            out.data.as_slice_mut().expect("fresh array"),
        );
        Ok(out)
    }
}
