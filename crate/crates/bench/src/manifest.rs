//! Dataset manifests: a geometry preset plus tensor-file images assigned to
//! train, val and test splits.
//!
//! ```text
//! # comment
//! geometry toy_fan_60
//! train   images/a.tgrd
//! test    images/b.tgrd
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{BenchError, Result};
use crate::tgrd::read_image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub geometry: String,
    pub entries: Vec<(PathBuf, Split)>,
}

impl DatasetManifest {
    /// Parse manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut geometry = None;
        let mut entries = Vec::new();
        let mut seen: BTreeMap<PathBuf, Split> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |msg: String| BenchError::Manifest { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut parts = body.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let value = parts.next().ok_or_else(|| err("missing value".into()))?;
            if parts.next().is_some() {
                return Err(err("too many fields".into()));
            }
            if key == "geometry" {
                if geometry.replace(value.to_string()).is_some() {
                    return Err(err("geometry given twice".into()));
                }
                continue;
            }
            let split: Split = key.parse().map_err(err)?;
            let path = base.join(value);
            match seen.get(&path) {
                Some(&s) if s != split => {
                    return Err(err(format!(
                        "{} listed in both {s} and {split}",
                        path.display()
                    )))
                }
                Some(_) => return Err(err(format!("{} listed twice", path.display()))),
                None => {}
            }
            seen.insert(path.clone(), split);
            entries.push((path, split));
        }
        let geometry = geometry.ok_or(BenchError::Manifest {
            line: 0,
            msg: "no geometry line".into(),
        })?;
        Ok(DatasetManifest { geometry, entries })
    }

    /// Read and parse a manifest, then check that every image exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base)?;
        for (p, _) in &m.entries {
            if !p.is_file() {
                return Err(BenchError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("manifest image {} not found", p.display()),
                )));
            }
        }
        Ok(m)
    }

    pub fn paths(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |(_, s)| *s == split)
            .map(|(p, _)| p.as_path())
    }

    pub fn images(&self, split: Split) -> Result<Vec<Array2<f64>>> {
        self.paths(split).map(read_image).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let text =
            "# data\ngeometry toy_fan_60\ntrain a.tgrd\n\nval b.tgrd # held out\ntest c.tgrd\n";
        let m = DatasetManifest::parse(text, Path::new("/d")).unwrap();
        assert_eq!(m.geometry, "toy_fan_60");
        assert_eq!(m.entries.len(), 3);
        assert_eq!(
            m.paths(Split::Val).collect::<Vec<_>>(),
            vec![Path::new("/d/b.tgrd")]
        );
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let text = "geometry g\ntrain a.tgrd\ntest a.tgrd\n";
        let e = DatasetManifest::parse(text, Path::new(".")).unwrap_err();
        assert!(matches!(e, BenchError::Manifest { line: 3, .. }), "{e}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        for text in [
            "train a.tgrd\n",
            "geometry g\nfoo a\n",
            "geometry g\ntrain\n",
            "geometry g\ngeometry h\n",
        ] {
            assert!(
                DatasetManifest::parse(text, Path::new(".")).is_err(),
                "{text:?}"
            );
        }
    }
}
