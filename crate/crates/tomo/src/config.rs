use std::fmt::Write as _;

use crate::error::{Result, TomoError};
use crate::geometry::{Beam, ScanGeometry};

/// Unvalidated geometry parameters, as read from a preset or a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryConfig {
    pub beam: Beam,
    pub n_views: usize,
    pub n_det: usize,
    /// Detector element pitch in mm.
    pub det_spacing: f64,
    /// Source to rotation centre, mm (fan beam only).
    pub src_dist: f64,
    /// Rotation centre to detector plane, mm (fan beam only).
    pub det_dist: f64,
    /// `(rows, cols)` of the image grid.
    pub grid: (usize, usize),
    pub pixel_size: f64,
}

const KEYS: [&str; 9] = [
    "beam",
    "n_views",
    "n_det",
    "det_spacing_mm",
    "src_dist_mm",
    "det_dist_mm",
    "grid_m1",
    "grid_m2",
    "pixel_size_mm",
];

impl GeometryConfig {
    /// 1024 fan-beam views over 360 degrees, 1024 flat-detector cells at 2 mm,
    /// source and detector 500 mm from the centre, 512x512 grid.
    pub fn fan_1024() -> Self {
        GeometryConfig {
            beam: Beam::Fan,
            n_views: 1024,
            n_det: 1024,
            det_spacing: 2.0,
            src_dist: 500.0,
            det_dist: 500.0,
            grid: (512, 512),
            pixel_size: 0.9,
        }
    }

    /// 720 parallel-beam views over 180 degrees, 729 detector cells.
    pub fn parallel_720() -> Self {
        GeometryConfig {
            beam: Beam::Parallel,
            n_views: 720,
            n_det: 729,
            det_spacing: 1.0,
            src_dist: 0.0,
            det_dist: 0.0,
            grid: (512, 512),
            pixel_size: 1.0,
        }
    }

    /// Small fan-beam setup used for the desk-scale experiments.
    pub fn toy_fan_60() -> Self {
        GeometryConfig {
            beam: Beam::Fan,
            n_views: 60,
            n_det: 64,
            det_spacing: 1.6,
            src_dist: 64.0,
            det_dist: 64.0,
            grid: (32, 32),
            pixel_size: 1.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fan-1024" => Ok(Self::fan_1024()),
            "parallel-720" => Ok(Self::parallel_720()),
            "toy-fan-60" => Ok(Self::toy_fan_60()),
            other => Err(TomoError::UnknownPreset(other.to_string())),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["fan-1024", "parallel-720", "toy-fan-60"]
    }

    /// Rescale to a different grid while keeping the physical field of view
    /// and detector extent: pixel and detector pitch grow by the same factor,
    /// the detector count shrinks by it (rounded up).
    pub fn with_grid(&self, m1: usize, m2: usize) -> Self {
        let old = self.grid.0.max(self.grid.1) as f64;
        let new = m1.max(m2).max(1) as f64;
        let s = old / new;
        GeometryConfig {
            grid: (m1, m2),
            pixel_size: self.pixel_size * s,
            det_spacing: self.det_spacing * s,
            n_det: (self.n_det as f64 / s).ceil() as usize,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<ScanGeometry> {
        ScanGeometry::new(self)
    }

    /// Parse the line-oriented `key=value` format. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: [Option<(usize, String)>; 9] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TomoError::Config {
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if values[slot].is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
            values[slot] = Some((lineno + 1, value.trim().to_string()));
        }

        fn get<T: std::str::FromStr>(
            values: &[Option<(usize, String)>; 9],
            idx: usize,
        ) -> Result<Option<T>> {
            match &values[idx] {
                None => Ok(None),
                Some((line, v)) => v.parse().map(Some).map_err(|_| TomoError::Config {
                    line: *line,
                    msg: format!("cannot parse `{v}` for {}", KEYS[idx]),
                }),
            }
        }
        let required = |idx: usize| TomoError::Config {
            line: 0,
            msg: format!("missing key `{}`", KEYS[idx]),
        };

        let beam = match &values[0] {
            None => return Err(required(0)),
            Some((_, v)) if v == "fan" => Beam::Fan,
            Some((_, v)) if v == "parallel" => Beam::Parallel,
            Some((line, v)) => {
                return Err(TomoError::Config {
                    line: *line,
                    msg: format!("beam must be `fan` or `parallel`, got `{v}`"),
                })
            }
        };
        let n_views = get::<usize>(&values, 1)?.ok_or_else(|| required(1))?;
        let n_det = get::<usize>(&values, 2)?.ok_or_else(|| required(2))?;
        let det_spacing = get::<f64>(&values, 3)?.ok_or_else(|| required(3))?;
        let (src_dist, det_dist) = match beam {
            Beam::Fan => (
                get::<f64>(&values, 4)?.ok_or_else(|| required(4))?,
                get::<f64>(&values, 5)?.ok_or_else(|| required(5))?,
            ),
            Beam::Parallel => (
                get::<f64>(&values, 4)?.unwrap_or(0.0),
                get::<f64>(&values, 5)?.unwrap_or(0.0),
            ),
        };
        let m1 = get::<usize>(&values, 6)?.ok_or_else(|| required(6))?;
        let m2 = get::<usize>(&values, 7)?.ok_or_else(|| required(7))?;
        let pixel_size = get::<f64>(&values, 8)?.ok_or_else(|| required(8))?;
        Ok(GeometryConfig {
            beam,
            n_views,
            n_det,
            det_spacing,
            src_dist,
            det_dist,
            grid: (m1, m2),
            pixel_size,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let beam = match self.beam {
            Beam::Fan => "fan",
            Beam::Parallel => "parallel",
        };
        let _ = writeln!(s, "beam={beam}");
        let _ = writeln!(s, "n_views={}", self.n_views);
        let _ = writeln!(s, "n_det={}", self.n_det);
        let _ = writeln!(s, "det_spacing_mm={}", self.det_spacing);
        if self.beam == Beam::Fan {
            let _ = writeln!(s, "src_dist_mm={}", self.src_dist);
            let _ = writeln!(s, "det_dist_mm={}", self.det_dist);
        }
        let _ = writeln!(s, "grid_m1={}", self.grid.0);
        let _ = writeln!(s, "grid_m2={}", self.grid.1);
        let _ = writeln!(s, "pixel_size_mm={}", self.pixel_size);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for name in GeometryConfig::preset_names() {
            let cfg = GeometryConfig::preset(name).unwrap();
            assert_eq!(GeometryConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn parse_with_comments() {
        let text = "# toy\nbeam = parallel\nn_views=12\nn_det=24\ndet_spacing_mm=1\n\ngrid_m1=16\ngrid_m2=16\npixel_size_mm=1 # mm\n";
        let cfg = GeometryConfig::parse(text).unwrap();
        assert_eq!(cfg.beam, Beam::Parallel);
        assert_eq!(cfg.grid, (16, 16));
        assert!(cfg.build().is_ok());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            GeometryConfig::parse("beam=cone"),
            Err(TomoError::Config { line: 1, .. })
        ));
        assert!(matches!(
            GeometryConfig::parse("beam=fan\nfoo=1"),
            Err(TomoError::Config { line: 2, .. })
        ));
        let missing =
            "beam=fan\nn_views=4\nn_det=4\ndet_spacing_mm=1\ngrid_m1=4\ngrid_m2=4\npixel_size_mm=1";
        assert!(GeometryConfig::parse(missing).is_err());
        assert!(GeometryConfig::parse("beam=fan\nbeam=fan").is_err());
        assert!(matches!(
            GeometryConfig::preset("cone-9"),
            Err(TomoError::UnknownPreset(_))
        ));
    }

    #[test]
    fn scaled_parallel_preset() {
        let cfg = GeometryConfig::parallel_720().with_grid(256, 256);
        assert_eq!(cfg.n_det, 365);
        assert_eq!(cfg.n_views, 720);
        assert!(cfg.build().is_ok());
        assert!(GeometryConfig::fan_1024().with_grid(64, 64).build().is_ok());
    }
}
