//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "MVMS" u32 version
//! u32 p, n, n_s, c_in, channel_mask, unshared, x0_zero
//! f64 slope, gamma
//! u64 param_count
//! u32 has_optimizer [u64 adam_step, f64 lr, beta1, beta2, eps]
//! u32 has_rng       [u8 seed[32], u128 word_pos]
//! u64 train_step
//! u32 blob_count, then per blob:
//!     u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 payload
//! ```
//!
//! Parameter blobs are named `set<k>/<tensor>`; Adam moments follow as
//! `m/set<k>/<tensor>` and `v/set<k>/<tensor>`.

use std::path::Path;

use mvms_diffcore::Tensor;
use thiserror::Error;

use crate::adam::Adam;
use crate::model::ModelConfig;
use crate::msgc::MsgcParams;
use crate::refine::ChannelSet;

pub const MAGIC: &[u8; 4] = b"MVMS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint {field} is {got}, model expects {expected}")]
    Mismatch {
        field: &'static str,
        expected: String,
        got: String,
    },
    #[error("header declares {header} parameters but blobs hold {blobs}")]
    ParamCount { header: u64, blobs: u64 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Serialisable RNG position for `ChaCha8Rng`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub gamma: f64,
    pub params: Vec<MsgcParams>,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngState>,
    pub train_step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn blob(&mut self, name: &str, t: &Tensor) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u32()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(CheckpointError::Malformed(format!("flag value {v}"))),
        }
    }
    fn blob(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("blob name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let bytes = self.take(count * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("blob `{name}`: {e}")))?;
        Ok((name, t))
    }
}

fn set_prefix(k: usize) -> String {
    format!("set{k}/")
}

impl Checkpoint {
    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|p| p.count() as u64).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        for v in [c.p, c.n, c.n_s, c.channels.len()] {
            w.u32(v as u32);
        }
        w.u32(c.channels.mask() as u32);
        w.u32(c.unshared as u32);
        w.u32(c.x0_zero as u32);
        w.f64(c.slope);
        w.f64(self.gamma);
        w.u64(self.param_count());
        match &self.optimizer {
            Some(a) => {
                w.u32(1);
                w.u64(a.step);
                for v in [a.lr, a.beta1, a.beta2, a.eps] {
                    w.f64(v);
                }
            }
            None => w.u32(0),
        }
        match &self.rng {
            Some(r) => {
                w.u32(1);
                w.0.extend_from_slice(&r.seed);
                w.0.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => w.u32(0),
        }
        w.u64(self.train_step);

        let mut blobs: Vec<(String, &Tensor)> = Vec::new();
        for (k, p) in self.params.iter().enumerate() {
            for (name, t) in p.named() {
                blobs.push((format!("{}{name}", set_prefix(k)), t));
            }
        }
        let n_params = blobs.len();
        if let Some(a) = &self.optimizer {
            let names: Vec<String> = blobs.iter().map(|(n, _)| n.clone()).collect();
            for (n, t) in names.iter().zip(&a.m) {
                blobs.push((format!("m/{n}"), t));
            }
            for (n, t) in names.iter().zip(&a.v) {
                blobs.push((format!("v/{n}"), t));
            }
        }
        debug_assert!(self.optimizer.is_none() || blobs.len() == 3 * n_params);
        w.u32(blobs.len() as u32);
        for (name, t) in blobs {
            w.blob(&name, t);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let p = r.u32()? as usize;
        let n = r.u32()? as usize;
        let n_s = r.u32()? as usize;
        let c_in = r.u32()? as usize;
        let mask = r.u32()?;
        let channels = u8::try_from(mask)
            .ok()
            .and_then(ChannelSet::from_mask)
            .filter(|s| s.len() == c_in)
            .ok_or_else(|| {
                CheckpointError::Malformed(format!("channel mask {mask:#x} with c_in {c_in}"))
            })?;
        let unshared = r.flag()?;
        let x0_zero = r.flag()?;
        let slope = r.f64()?;
        let gamma = r.f64()?;
        let header_count = r.u64()?;
        let config = ModelConfig {
            p,
            n,
            n_s,
            slope,
            channels,
            unshared,
            x0_zero,
        };
        config
            .validate()
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let optim_header = if r.flag()? {
            Some((r.u64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?))
        } else {
            None
        };
        let rng = if r.flag()? {
            let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            Some(RngState { seed, word_pos })
        } else {
            None
        };
        let train_step = r.u64()?;
        let blob_count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(blob_count.min(4096));
        for _ in 0..blob_count {
            blobs.push(r.blob()?);
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }

        let sets = config.param_sets();
        let dims = config.dims();
        let per_set = crate::msgc::MsgcParams::zeros(dims)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?
            .names()
            .len();
        let n_params = per_set * sets;
        let expected_blobs = if optim_header.is_some() {
            3 * n_params
        } else {
            n_params
        };
        if blobs.len() != expected_blobs {
            return Err(CheckpointError::Malformed(format!(
                "expected {expected_blobs} blobs, found {}",
                blobs.len()
            )));
        }
        let blob_params: u64 = blobs[..n_params].iter().map(|(_, t)| t.len() as u64).sum();
        if blob_params != header_count {
            return Err(CheckpointError::ParamCount {
                header: header_count,
                blobs: blob_params,
            });
        }

        let mut rest = blobs.into_iter();
        let mut params = Vec::with_capacity(sets);
        for k in 0..sets {
            let prefix = set_prefix(k);
            let mut items = Vec::with_capacity(per_set);
            for (name, t) in rest.by_ref().take(per_set) {
                let short = name.strip_prefix(&prefix).ok_or_else(|| {
                    CheckpointError::Malformed(format!("blob `{name}` outside `{prefix}`"))
                })?;
                items.push((short.to_string(), t));
            }
            params.push(
                MsgcParams::from_named(dims, items)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            );
        }
        let optimizer = match optim_header {
            Some((step, lr, beta1, beta2, eps)) => {
                let names: Vec<String> = params
                    .iter()
                    .enumerate()
                    .flat_map(|(k, p)| {
                        p.names()
                            .into_iter()
                            .map(move |n| format!("{}{n}", set_prefix(k)))
                    })
                    .collect();
                let shapes: Vec<Vec<usize>> = params
                    .iter()
                    .flat_map(|p| p.tensors().into_iter().map(|t| t.shape().to_vec()))
                    .collect();
                let mut take_moments = |tag: &str| -> Result<Vec<Tensor>> {
                    let mut out = Vec::with_capacity(n_params);
                    for ((name, t), (want, shape)) in
                        rest.by_ref().take(n_params).zip(names.iter().zip(&shapes))
                    {
                        if name != format!("{tag}/{want}") || t.shape() != shape.as_slice() {
                            return Err(CheckpointError::Malformed(format!(
                                "unexpected moment blob `{name}`"
                            )));
                        }
                        out.push(t);
                    }
                    Ok(out)
                };
                let m = take_moments("m")?;
                let v = take_moments("v")?;
                Some(Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            config,
            gamma,
            params,
            optimizer,
            rng,
            train_step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Typed error unless the checkpoint was written for `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let c = &self.config;
        let fields: [(&'static str, String, String); 7] = [
            ("p", config.p.to_string(), c.p.to_string()),
            ("n", config.n.to_string(), c.n.to_string()),
            ("n_s", config.n_s.to_string(), c.n_s.to_string()),
            (
                "channels",
                format!("{:?}", config.channels),
                format!("{:?}", c.channels),
            ),
            (
                "unshared",
                config.unshared.to_string(),
                c.unshared.to_string(),
            ),
            ("x0_zero", config.x0_zero.to_string(), c.x0_zero.to_string()),
            ("slope", config.slope.to_string(), c.slope.to_string()),
        ];
        for (field, expected, got) in fields {
            if expected != got {
                return Err(CheckpointError::Mismatch {
                    field,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(optim: bool) -> Checkpoint {
        let config = ModelConfig {
            p: 2,
            n: 2,
            n_s: 3,
            unshared: true,
            ..ModelConfig::default()
        };
        let params: Vec<MsgcParams> = (0..3)
            .map(|k| MsgcParams::init(config.dims(), k).unwrap())
            .collect();
        let optimizer = optim.then(|| {
            let mut a = Adam::new(1e-3, params.iter().flat_map(|p| p.tensors()));
            a.step = 7;
            for (i, m) in a.m.iter_mut().enumerate() {
                m.data_mut().iter_mut().for_each(|v| *v = i as f64 * 0.5);
            }
            a
        });
        Checkpoint {
            config,
            gamma: 0.5,
            params,
            optimizer,
            rng: Some(RngState {
                seed: [3; 32],
                word_pos: 1 << 70,
            }),
            train_step: 42,
        }
    }

    #[test]
    fn byte_round_trip() {
        for optim in [false, true] {
            let c = sample(optim);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_typed_errors() {
        let bytes = sample(true).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut count = bytes.clone();
        // param_count sits after magic, version, 7 u32 fields and 2 f64s
        let off = 4 + 4 + 7 * 4 + 16;
        count[off] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&count),
            Err(CheckpointError::ParamCount { .. })
        ));
    }

    #[test]
    fn config_mismatch() {
        let c = sample(false);
        let mut other = c.config;
        other.n = 1;
        assert!(matches!(
            c.check_config(&other),
            Err(CheckpointError::Mismatch { field: "n", .. })
        ));
        c.check_config(&c.config).unwrap();
    }
}
