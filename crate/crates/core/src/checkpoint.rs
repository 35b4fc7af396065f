//! Binary checkpoint files.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8.
//!
//! ```text
//! "ICAD" | version u32 | model kind u32 | patch size u32
//! run config (TOML string) | layer list (JSON string)
//! tensor count u32 | tensors
//! optimizer flag u8 | [step u64 | alpha, beta1, beta2, eps f64 | m tensors | v tensors]
//! tensor = name string | rank u32 | dims u32 ... | f32 values, row-major
//! ```

use std::path::Path;

use crate::baseline::AutoencoderNet;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::net::{CompletionNet, LayerSpec};
use crate::optim::{Adam, AdamConfig, Parameter};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ICAD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub config: RunConfig,
    pub optimizer: Option<Adam<f32>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.str(name);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::format("checkpoint", "invalid UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.str()?.to_owned();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("checkpoint", "tensor too large"))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(self.model.kind().code());
        w.u32(self.model.patch_size() as u32);
        w.str(&self.config.to_toml());
        let layers: &[LayerSpec] = match &self.model {
            Model::Completion(n) => n.layers(),
            Model::Autoencoder(_) => &[],
        };
        w.str(&serde_json::to_string(layers).expect("layer list serializes"));
        let params = self.model.parameters();
        w.u32(params.len() as u32);
        for p in params {
            w.tensor(&p.name, &p.value);
        }
        match &self.optimizer {
            None => w.0.push(0),
            Some(opt) => {
                w.0.push(1);
                w.0.extend_from_slice(&opt.step.to_le_bytes());
                let c = opt.config;
                for v in [c.alpha, c.beta1, c.beta2, c.eps] {
                    w.0.extend_from_slice(&v.to_le_bytes());
                }
                for (p, m) in params.iter().zip(&opt.m) {
                    w.tensor(&p.name, m);
                }
                for (p, v) in params.iter().zip(&opt.v) {
                    w.tensor(&p.name, v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_code(r.u32()?)
            .ok_or_else(|| Error::format("checkpoint", "unknown model kind"))?;
        let patch = r.u32()? as usize;
        let config = RunConfig::from_toml(r.str()?)?;
        let layers: Vec<LayerSpec> = serde_json::from_str(r.str()?)
            .map_err(|e| Error::format("checkpoint", format!("layer list: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (name, value) = r.tensor()?;
            params.push(Parameter::new(name, value));
        }
        let model = match kind {
            ModelKind::Completion => {
                Model::Completion(CompletionNet::from_parameters(layers, patch, params)?)
            }
            ModelKind::Autoencoder => {
                Model::Autoencoder(AutoencoderNet::from_parameters(patch, params)?)
            }
        };
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let config = AdamConfig {
                    alpha: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let n = model.parameters().len();
                let mut moments = [Vec::with_capacity(n), Vec::with_capacity(n)];
                for buf in &mut moments {
                    for p in model.parameters() {
                        let (name, t) = r.tensor()?;
                        if name != p.name || t.shape() != p.value.shape() {
                            return Err(Error::format(
                                "checkpoint",
                                format!("optimizer state for {name} does not match {}", p.name),
                            ));
                        }
                        buf.push(t);
                    }
                }
                let [m, v] = moments;
                Some(Adam { config, step, m, v })
            }
            flag => return Err(Error::format("checkpoint", format!("bad optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self {
            model,
            config,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
