//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GCGN" | version: u32 | text_len: u64 | text (TOML: model spec, scaler, history)
//! { name_len: u32 | name | count: u64 | count × f64 }*
//! checksum: u64 (FNV-1a over every preceding byte)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{FusionConfig, FusionWrapper, LinearConfig, LinearForecaster};
use crate::data::{ScalerStats, SeriesWindow};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{GcgNet, LossVars, ModelConfig};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{Forecaster, History, Trainable};

pub const MAGIC: &[u8; 4] = b"GCGN";
pub const VERSION: u32 = 1;

/// Model kind plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Gcgnet(ModelConfig),
    Linear(LinearConfig),
    Fusion(FusionConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Gcgnet(_) => "gcgnet",
            Self::Linear(_) => "linear",
            Self::Fusion(_) => "fusion",
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self {
            Self::Gcgnet(c) => (c.n_endo, c.n_exo, c.lookback, c.horizon),
            Self::Linear(c) => (c.n_endo, c.n_exo, c.lookback, c.horizon),
            Self::Fusion(c) => (c.n_endo, c.n_exo, c.lookback, c.horizon),
        }
    }
}

/// Any model that can live in a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Gcgnet(GcgNet),
    Linear(LinearForecaster),
    Fusion(FusionWrapper),
}

impl AnyModel {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Gcgnet(c) => Self::Gcgnet(GcgNet::new(c.clone(), seed)?),
            ModelSpec::Linear(c) => Self::Linear(LinearForecaster::new(c.clone(), seed)?),
            ModelSpec::Fusion(c) => Self::Fusion(FusionWrapper::new(c.clone(), seed)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::Gcgnet(m) => ModelSpec::Gcgnet(m.config().clone()),
            Self::Linear(m) => ModelSpec::Linear(m.config().clone()),
            Self::Fusion(m) => ModelSpec::Fusion(m.config().clone()),
        }
    }
}

impl Forecaster for AnyModel {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor> {
        match self {
            Self::Gcgnet(m) => m.predict(window),
            Self::Linear(m) => m.predict(window),
            Self::Fusion(m) => m.predict(window),
        }
    }
}

impl Trainable for AnyModel {
    fn params(&self) -> &ParamStore {
        match self {
            Self::Gcgnet(m) => Trainable::params(m),
            Self::Linear(m) => Trainable::params(m),
            Self::Fusion(m) => Trainable::params(m),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::Gcgnet(m) => Trainable::params_mut(m),
            Self::Linear(m) => Trainable::params_mut(m),
            Self::Fusion(m) => Trainable::params_mut(m),
        }
    }

    fn loss_graph<'p>(&'p self, g: &mut Graph<'p>, window: &SeriesWindow, rng: &mut Rng) -> Result<LossVars> {
        match self {
            Self::Gcgnet(m) => m.loss_graph(g, window, rng),
            Self::Linear(m) => m.loss_graph(g, window, rng),
            Self::Fusion(m) => m.loss_graph(g, window, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelSpec,
    scaler: ScalerStats,
    #[serde(default)]
    channels: Channels,
    #[serde(default)]
    history: History,
}

/// Column names the model was trained on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub endo: Vec<String>,
    pub exo: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub scaler: ScalerStats,
    pub channels: Channels,
    pub history: History,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        model: ckpt.model.spec(),
        scaler: ckpt.scaler.clone(),
        channels: ckpt.channels.clone(),
        history: ckpt.history.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Corrupt(format!("cannot encode metadata: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (name, t) in ckpt.model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 + 4 + 8 + 8 {
        return Err(Error::Corrupt("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a64(body) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut cur = Cursor { buf: body, pos: 8 };
    let text_len = cur.u64("metadata length")? as usize;
    let text = std::str::from_utf8(cur.take(text_len, "metadata")?)
        .map_err(|_| Error::Corrupt("metadata is not UTF-8".into()))?;
    let meta: Meta = toml::from_str(text).map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;

    let mut model = AnyModel::build(&meta.model, 0)?;
    let store = model.params_mut();
    let mut seen = vec![false; store.len()];
    while cur.pos < body.len() {
        let name_len = cur.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "parameter name")?)
            .map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let count = cur.u64("element count")? as usize;
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Corrupt("element count overflow".into()))?, "parameter data")?;
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::Corrupt(format!("unknown parameter {name}")))?;
        let target = store.get_mut(id).expect("id from store");
        if target.numel() != count {
            return Err(Error::Corrupt(format!(
                "parameter {name} has {count} elements, model expects {}",
                target.numel()
            )));
        }
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        seen[id.0] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let name = store.iter().nth(missing).map(|(n, _)| n.to_string()).unwrap_or_default();
        return Err(Error::Corrupt(format!("parameter {name} missing")));
    }
    Ok(Checkpoint {
        model,
        scaler: meta.scaler,
        channels: meta.channels,
        history: meta.history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
