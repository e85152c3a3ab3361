//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian `u32` version, then tagged
//! sections (`[u8; 4]` tag, `u64` payload length, payload) ending with
//! `END\0`. All numbers are little-endian; floats are stored bit-exact.

use std::path::Path;

use crate::belief::SampleStore;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::neuralnet::{Activation, DenseNet, Layer, LayerSpec};

pub const MAGIC: &[u8; 8] = b"ANOMAC\0\x01";
pub const VERSION: u32 = 1;

const CONF: &[u8; 4] = b"CONF";
const META: &[u8; 4] = b"META";
const ACTR: &[u8; 4] = b"ACTR";
const CRIT: &[u8; 4] = b"CRIT";
const SMPL: &[u8; 4] = b"SMPL";
const END: &[u8; 4] = b"END\0";

/// Where the training random streams stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub env_word_pos: u128,
    pub policy_word_pos: u128,
}

/// Everything needed to resume training or run tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub actor: DenseNet<f64>,
    pub critic: DenseNet<f64>,
    pub store: SampleStore,
    pub episodes: u64,
    pub rng: RngState,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn section(&mut self, tag: &[u8; 4], payload: &[u8]) {
        self.0.extend_from_slice(tag);
        self.u64(payload.len() as u64);
        self.0.extend_from_slice(payload);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt(format!("truncated {} section", self.what)));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| corrupt(format!("length {n} exceeds {} section", self.what)))
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(corrupt(format!(
                "{} trailing bytes in {} section",
                self.buf.len(),
                self.what
            )))
        }
    }
}

fn encode_net(net: &DenseNet<f64>) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(net.learning_rate());
    w.f64(net.decay());
    w.u32(net.layers().len() as u32);
    for l in net.layers() {
        let s = l.spec();
        w.u32(s.input_dim as u32);
        w.u32(s.output_dim as u32);
        w.u8(s.activation.code());
        l.weights().iter().for_each(|&x| w.f64(x));
        l.biases().iter().for_each(|&x| w.f64(x));
    }
    w.0
}

fn decode_net(mut r: Reader<'_>) -> Result<DenseNet<f64>> {
    let lr = r.f64()?;
    let decay = r.f64()?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let code = r.u8()?;
        let activation =
            Activation::from_code(code).ok_or_else(|| corrupt(format!("unknown activation code {code}")))?;
        let count = input_dim
            .checked_mul(output_dim)
            .filter(|&c| c.saturating_mul(8) <= r.buf.len())
            .ok_or_else(|| corrupt(format!("layer {input_dim}x{output_dim} exceeds {} section", r.what)))?;
        let weights = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let biases = (0..output_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let spec = LayerSpec {
            input_dim,
            output_dim,
            activation,
        };
        layers.push(Layer::new(spec, weights, biases).map_err(|e| corrupt(e.to_string()))?);
    }
    r.finish()?;
    DenseNet::new(layers, lr, decay).map_err(|e| corrupt(e.to_string()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer::default();
        out.0.extend_from_slice(MAGIC);
        out.u32(VERSION);

        out.section(CONF, self.config.to_toml().as_bytes());

        let mut meta = Writer::default();
        meta.u64(self.episodes);
        meta.u64(self.rng.seed);
        meta.u128(self.rng.env_word_pos);
        meta.u128(self.rng.policy_word_pos);
        out.section(META, &meta.0);

        out.section(ACTR, &encode_net(&self.actor));
        out.section(CRIT, &encode_net(&self.critic));

        let mut smpl = Writer::default();
        smpl.u32(self.store.sensors() as u32);
        smpl.u32(self.store.hypotheses() as u32);
        self.store.totals().iter().for_each(|&v| smpl.u64(v));
        self.store.ones().iter().for_each(|&v| smpl.u64(v));
        out.section(SMPL, &smpl.0);

        out.section(END, &[]);
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            buf: bytes,
            what: "header",
        };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!(
                "unsupported checkpoint version {version} (this build reads version {VERSION})"
            )));
        }

        let mut config = None;
        let mut meta = None;
        let mut actor = None;
        let mut critic = None;
        let mut store = None;
        loop {
            r.what = "header";
            let tag: [u8; 4] = r.array()?;
            let len = r.len()?;
            let body = r.take(len)?;
            let name = String::from_utf8_lossy(&tag).trim_end_matches('\0').to_string();
            let section = |what| Reader { buf: body, what };
            match &tag {
                CONF => {
                    let text = std::str::from_utf8(body).map_err(|_| corrupt("config section is not UTF-8"))?;
                    let cfg = RunConfig::from_toml(text).map_err(|e| corrupt(format!("embedded config: {e}")))?;
                    config = Some(cfg);
                }
                META => {
                    let mut m = section("META");
                    let episodes = m.u64()?;
                    let rng = RngState {
                        seed: m.u64()?,
                        env_word_pos: m.u128()?,
                        policy_word_pos: m.u128()?,
                    };
                    m.finish()?;
                    meta = Some((episodes, rng));
                }
                ACTR => actor = Some(decode_net(section("ACTR"))?),
                CRIT => critic = Some(decode_net(section("CRIT"))?),
                SMPL => {
                    let mut s = section("SMPL");
                    let sensors = s.u32()? as usize;
                    let hyps = s.u32()? as usize;
                    let n = sensors
                        .checked_mul(hyps)
                        .filter(|&n| n.saturating_mul(16) <= s.buf.len())
                        .ok_or_else(|| corrupt("sample counts exceed SMPL section"))?;
                    let totals = (0..n).map(|_| s.u64()).collect::<Result<Vec<_>>>()?;
                    let ones = (0..n).map(|_| s.u64()).collect::<Result<Vec<_>>>()?;
                    s.finish()?;
                    store = Some(
                        SampleStore::from_counts(sensors, hyps, totals, ones).map_err(|e| corrupt(e.to_string()))?,
                    );
                }
                END => break,
                _ => return Err(corrupt(format!("unknown section `{name}`"))),
            }
        }
        if !r.buf.is_empty() {
            return Err(corrupt("data after END section"));
        }

        let missing = |s: &str| corrupt(format!("missing {s} section"));
        let config = config.ok_or_else(|| missing("CONF"))?;
        let (episodes, rng) = meta.ok_or_else(|| missing("META"))?;
        let actor = actor.ok_or_else(|| missing("ACTR"))?;
        let critic = critic.ok_or_else(|| missing("CRIT"))?;
        let store = store.ok_or_else(|| missing("SMPL"))?;

        let m = 1usize << config.environment.processes;
        let n = config.environment.processes;
        if actor.input_dim() != m || actor.output_dim() != n {
            return Err(corrupt(format!(
                "actor shape {}->{} does not match {n} processes",
                actor.input_dim(),
                actor.output_dim()
            )));
        }
        if critic.input_dim() != m || critic.output_dim() != 1 {
            return Err(corrupt("critic shape does not match the configuration"));
        }
        if store.sensors() != n || store.hypotheses() != m {
            return Err(corrupt("sample store shape does not match the configuration"));
        }
        Ok(Self {
            config,
            actor,
            critic,
            store,
            episodes,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
