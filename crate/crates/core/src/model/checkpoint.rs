//! Binary checkpoint: magic, version byte, a text block holding the run
//! configuration plus provenance, then named row-major `f64` tensors.

use std::collections::HashMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::PreparedDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{Model, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NFARECM1";
pub const CHECKPOINT_VERSION: u8 = 1;
const SEPARATOR: &str = "---\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub fingerprint: String,
    /// Epoch the parameters come from; 0 is the initialization.
    pub epoch: usize,
    pub params: ModelParams<Matrix>,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, "length overflow"))
    }
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model::new(self.config.model.clone(), self.params.clone())
    }

    /// Fails with a provenance error unless the checkpoint was trained on `ds`.
    pub fn verify(&self, ds: &PreparedDataset) -> Result<()> {
        if self.fingerprint != ds.fingerprint {
            return Err(Error::Provenance(format!(
                "checkpoint was trained on dataset {} but the bundle is {}",
                self.fingerprint, ds.fingerprint
            )));
        }
        if self.params.n_items() != ds.split.full.n_items() {
            return Err(Error::Provenance(format!(
                "checkpoint has {} items, dataset has {}",
                self.params.n_items(),
                ds.split.full.n_items()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        let text = format!(
            "dataset_fingerprint = {}\nepoch = {}\n{SEPARATOR}{}",
            self.fingerprint,
            self.epoch,
            self.config.to_text()
        );
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let names = self.params.names();
        out.extend_from_slice(&(names.len() as u64).to_le_bytes());
        self.params.visit(&mut |name, m| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, at: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let text_len = r.len()?;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::format(path, "config block is not UTF-8"))?;
        let (meta, cfg_text) = text
            .split_once(SEPARATOR)
            .ok_or_else(|| Error::format(path, "config block lacks separator"))?;
        let mut fingerprint = None;
        let mut epoch = None;
        for line in meta.lines() {
            match line.split_once(" = ") {
                Some(("dataset_fingerprint", v)) => fingerprint = Some(v.to_string()),
                Some(("epoch", v)) => epoch = v.parse().ok(),
                _ => return Err(Error::format(path, format!("bad metadata line `{line}`"))),
            }
        }
        let (Some(fingerprint), Some(epoch)) = (fingerprint, epoch) else {
            return Err(Error::format(path, "missing fingerprint or epoch"));
        };
        let config = RunConfig::from_text(cfg_text)?;

        let count = r.len()?;
        let mut blocks: HashMap<String, Matrix> = HashMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let rows = r.len()?;
            let cols = r.len()?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::format(path, "tensor size overflow"))?;
            let raw = r.take(n)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_shape_vec((rows, cols), vals).expect("size checked");
            blocks.insert(name, m);
        }
        if r.at != buf.len() {
            return Err(Error::format(path, "trailing bytes after tensors"));
        }
        let n_items = blocks
            .get("item_embedding")
            .map(Matrix::nrows)
            .ok_or_else(|| Error::format(path, "missing tensor `item_embedding`"))?;
        let mut params = ModelParams::zeros(&config.model, n_items);
        let mut problem = None;
        params.visit_mut(&mut |name, slot| {
            if problem.is_some() {
                return;
            }
            match blocks.remove(&name) {
                Some(m) if m.dim() == slot.dim() => *slot = m,
                Some(m) => {
                    problem = Some(format!(
                        "tensor `{name}` has shape {:?}, expected {:?}",
                        m.shape(),
                        slot.shape()
                    ))
                }
                None => problem = Some(format!("missing tensor `{name}`")),
            }
        });
        if let Some(p) = problem {
            return Err(Error::format(path, p));
        }
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::format(path, format!("unexpected tensor `{extra}`")));
        }
        Ok(Checkpoint {
            config,
            fingerprint,
            epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, path)
    }
}
