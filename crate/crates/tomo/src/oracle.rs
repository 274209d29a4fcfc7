use ndarray::Array2;

use crate::error::{Result, TomoError};
use crate::geometry::{ScanGeometry, ViewSubset};

const ORACLE_MAX_PIXELS: usize = 4096;

impl ScanGeometry {
    /// Explicit `(q1 * n_det) x (m1 * m2)` system matrix; column `j` is the
    /// projection of the `j`-th unit-pixel image. Only for small grids.
    pub fn dense_matrix(&self, views: &ViewSubset) -> Result<Array2<f64>> {
        let n_pix = self.n_pixels();
        if n_pix > ORACLE_MAX_PIXELS {
            return Err(TomoError::OracleTooLarge(n_pix));
        }
        self.check_subset(views)?;
        let rows = views.len() * self.n_det();
        let mut a = Array2::zeros((rows, n_pix));
        let mut unit = vec![0.0; n_pix];
        let mut col = vec![0.0; rows];
        for j in 0..n_pix {
            unit[j] = 1.0;
            self.project_views(&unit, views.indices(), &mut col);
            unit[j] = 0.0;
            for (r, &v) in col.iter().enumerate() {
                a[[r, j]] = v;
            }
        }
        Ok(a)
    }
}
