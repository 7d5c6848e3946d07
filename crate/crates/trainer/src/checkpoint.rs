//! Binary checkpoints. Layout, all integers little-endian:
//!
//! ```text
//! "HAVC1" | version u32 | config (u32 length + UTF-8 key = value text)
//! | stage u32 | iteration u64 | expressions u32 | train frames u32
//! | rng seed [u8; 32] | rng stream u64 | rng word position u128
//! | record count u32 | records
//! ```
//!
//! A record is: name length u32, name bytes, dtype tag u8 (0 = f64,
//! 1 = u64), rank u32, dims u32 each, then the data. Records hold every
//! named parameter (`param/<name>`), the weight-volume seed grid and the
//! optimizer moments of both Adam instances.

use std::path::Path;

use diffcore::{Adam, ParamStore, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Avatar;
use crate::train::Trainer;

pub const MAGIC: &[u8; 5] = b"HAVC1";
pub const VERSION: u32 = 1;
const SEED_RECORD: &str = "const/weightvol.seed";

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    fn tensor(name: String, t: &Tensor) -> Self {
        Self {
            name,
            dims: t.shape().to_vec(),
            data: RecordData::F64(t.data().to_vec()),
        }
    }
}

fn adam_records(prefix: &str, opt: &Adam, store: &ParamStore, out: &mut Vec<Record>) {
    for (id, m, v, steps) in opt.export() {
        let name = store.name(id);
        out.push(Record::tensor(format!("{prefix}/{name}/m"), &m));
        out.push(Record::tensor(format!("{prefix}/{name}/v"), &v));
        out.push(Record {
            name: format!("{prefix}/{name}/steps"),
            dims: vec![],
            data: RecordData::U64(vec![steps]),
        });
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

pub fn to_bytes(tr: &Trainer) -> Vec<u8> {
    let av = &tr.avatar;
    let mut records: Vec<Record> = av
        .store
        .iter()
        .map(|(_, name, t)| Record::tensor(format!("param/{name}"), t))
        .collect();
    records.push(Record::tensor(SEED_RECORD.into(), &av.weights.seed));
    adam_records("adam_g", &tr.opt_g, &av.store, &mut records);
    adam_records("adam_d", &tr.opt_d, &av.store, &mut records);

    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u32(VERSION as usize);
    let text = av.cfg.to_text();
    w.u32(text.len());
    w.bytes(text.as_bytes());
    w.u32(tr.stage as usize);
    w.bytes(&tr.iteration.to_le_bytes());
    w.u32(av.expressions);
    w.u32(av.embeddings.frames);
    w.bytes(&tr.rng.get_seed());
    w.bytes(&tr.rng.get_stream().to_le_bytes());
    w.bytes(&tr.rng.get_word_pos().to_le_bytes());
    w.u32(records.len());
    for r in &records {
        w.u32(r.name.len());
        w.bytes(r.name.as_bytes());
        w.bytes(&[match r.data {
            RecordData::F64(_) => 0,
            RecordData::U64(_) => 1,
        }]);
        w.u32(r.dims.len());
        for &d in &r.dims {
            w.u32(d);
        }
        match &r.data {
            RecordData::F64(v) => v.iter().for_each(|x| w.bytes(&x.to_le_bytes())),
            RecordData::U64(v) => v.iter().for_each(|x| w.bytes(&x.to_le_bytes())),
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Trainer> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(5)? != MAGIC {
        return Err(r.err("not a HAVC1 checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("config is not UTF-8"))?;
    let cfg = Config::parse(text, path)?;
    let stage = r.u32()? as u32;
    let iteration = r.u64()?;
    let expressions = r.u32()?;
    let frames = r.u32()?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);

    let mut records = Vec::new();
    for _ in 0..r.u32()? {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.err("record name is not UTF-8"))?;
        let tag = r.take(1)?[0];
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data = match tag {
            0 => RecordData::F64(
                (0..count)
                    .map(|_| Ok(f64::from_le_bytes(r.array()?)))
                    .collect::<Result<_>>()?,
            ),
            1 => RecordData::U64((0..count).map(|_| r.u64()).collect::<Result<_>>()?),
            t => return Err(r.err(format!("record `{name}` has unknown dtype tag {t}"))),
        };
        records.push(Record { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }

    let mut tr = Trainer::new(Avatar::new(&cfg, expressions, frames)?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    tr.rng = rng;
    tr.stage = stage;
    tr.iteration = iteration;

    let tensor = |rec: &Record| -> Result<Tensor> {
        match &rec.data {
            RecordData::F64(v) => Ok(Tensor::new(&rec.dims, v.clone())?),
            RecordData::U64(_) => Err(r.err(format!("record `{}` should hold f64 data", rec.name))),
        }
    };
    let mut seen_params = 0;
    let mut moments: std::collections::BTreeMap<(String, String), (Option<Tensor>, Option<Tensor>, Option<u64>)> =
        Default::default();
    for rec in &records {
        if let Some(name) = rec.name.strip_prefix("param/") {
            let id = tr
                .avatar
                .store
                .id(name)
                .ok_or_else(|| r.err(format!("unknown parameter `{name}`")))?;
            let t = tensor(rec)?;
            if t.shape() != tr.avatar.store.get(id).shape() {
                return Err(r.err(format!("parameter `{name}` has shape {:?}", t.shape())));
            }
            tr.avatar.store.set(id, t)?;
            seen_params += 1;
        } else if rec.name == SEED_RECORD {
            let t = tensor(rec)?;
            if t.shape() != tr.avatar.weights.seed.shape() {
                return Err(r.err("weight volume seed has the wrong shape"));
            }
            tr.avatar.weights.seed = t;
        } else if let Some((opt, rest)) = rec.name.split_once('/') {
            let (pname, part) = rest.rsplit_once('/').ok_or_else(|| r.err(format!("bad record `{}`", rec.name)))?;
            let slot = moments.entry((opt.to_string(), pname.to_string())).or_default();
            match (part, &rec.data) {
                ("m", _) => slot.0 = Some(tensor(rec)?),
                ("v", _) => slot.1 = Some(tensor(rec)?),
                ("steps", RecordData::U64(v)) if v.len() == 1 => slot.2 = Some(v[0]),
                _ => return Err(r.err(format!("bad record `{}`", rec.name))),
            }
        } else {
            return Err(r.err(format!("unknown record `{}`", rec.name)));
        }
    }
    if seen_params != tr.avatar.store.len() {
        return Err(r.err(format!(
            "{seen_params} parameter records for {} parameters",
            tr.avatar.store.len()
        )));
    }
    for ((opt, pname), slot) in moments {
        let id = tr
            .avatar
            .store
            .id(&pname)
            .ok_or_else(|| r.err(format!("optimizer state for unknown parameter `{pname}`")))?;
        let (Some(m), Some(v), Some(steps)) = slot else {
            return Err(r.err(format!("incomplete optimizer state for `{pname}`")));
        };
        match opt.as_str() {
            "adam_g" => tr.opt_g.import(id, m, v, steps),
            "adam_d" => tr.opt_d.import(id, m, v, steps),
            _ => return Err(r.err(format!("unknown optimizer `{opt}`"))),
        }
    }
    Ok(tr)
}

pub fn save(tr: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(tr)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
