//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "DSPC" | u32 version | u32 len | config text (key = value lines)
//! u32 n_records | records...
//! 32-byte SHA-256 of everything above
//! ```
//!
//! A record is `u16 name_len | name | u8 dtype | u8 rank | u64 dims[rank] |
//! payload`, with dtype 0 = f64, 1 = f32, 2 = u8, 3 = u64.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, Moments, TrainConfig, TrainState};
use crate::model::{DSparsE, ModelConfig};
use crate::{Error, Real, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSPC";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F64 = 0,
    F32 = 1,
    U8 = 2,
    U64 = 3,
}

impl Dtype {
    fn real() -> Self {
        if std::mem::size_of::<Real>() == 8 {
            Dtype::F64
        } else {
            Dtype::F32
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 | Dtype::U64 => 8,
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Dtype::F64,
            1 => Dtype::F32,
            2 => Dtype::U8,
            3 => Dtype::U64,
            other => return Err(Error::Integrity(format!("unknown dtype tag {other}"))),
        })
    }
}

struct Record {
    name: String,
    dtype: Dtype,
    dims: Vec<usize>,
    payload: Vec<u8>,
}

impl Record {
    fn reals(name: String, dims: Vec<usize>, values: &[Real]) -> Self {
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Record {
            name,
            dtype: Dtype::real(),
            dims,
            payload,
        }
    }

    fn bytes(name: String, values: Vec<u8>) -> Self {
        Record {
            name,
            dtype: Dtype::U8,
            dims: vec![values.len()],
            payload: values,
        }
    }

    fn u64s(name: String, values: &[u64]) -> Self {
        Record {
            name,
            dtype: Dtype::U64,
            dims: vec![values.len()],
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn expect(&self, dtype: Dtype, len: usize) -> Result<()> {
        if self.dtype != dtype {
            return Err(Error::Integrity(format!(
                "record '{}' has dtype {:?}, expected {dtype:?}",
                self.name, self.dtype
            )));
        }
        if self.payload.len() != len * dtype.width() {
            return Err(Error::Integrity(format!(
                "record '{}' holds {} bytes, expected {}",
                self.name,
                self.payload.len(),
                len * dtype.width()
            )));
        }
        Ok(())
    }

    fn to_reals(&self, len: usize) -> Result<Vec<Real>> {
        self.expect(Dtype::real(), len)?;
        const W: usize = std::mem::size_of::<Real>();
        Ok(self
            .payload
            .chunks_exact(W)
            .map(|c| Real::from_le_bytes(c.try_into().expect("chunk width")))
            .collect())
    }

    fn to_u64s(&self, len: usize) -> Result<Vec<u64>> {
        self.expect(Dtype::U64, len)?;
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk width")))
            .collect())
    }
}

fn config_text(state: &TrainState) -> String {
    let mut out = String::new();
    for (k, v) in state.model.config().to_pairs() {
        out.push_str(&format!("model.{k} = {v}\n"));
    }
    for (k, v) in state.train.to_pairs() {
        out.push_str(&format!("train.{k} = {v}\n"));
    }
    out.push_str(&format!("epoch = {}\n", state.epoch));
    out
}

fn collect_records(state: &TrainState) -> Vec<Record> {
    let mut records = Vec::new();
    for (id, p) in state.model.store().iter() {
        records.push(Record::reals(format!("param/{}", p.name), p.value.shape().to_vec(), p.value.values()));
        if let Some(mask) = &p.mask {
            records.push(Record::bytes(format!("mask/{}", p.name), mask.iter().map(|&k| k as u8).collect()));
        }
        let m = &state.adam.moments[id.index()];
        records.push(Record::reals(format!("adam_m/{}", p.name), vec![m.m.len()], &m.m));
        records.push(Record::reals(format!("adam_v/{}", p.name), vec![m.v.len()], &m.v));
        records.push(Record::u64s(format!("adam_step/{}", p.name), &[m.step]));
    }
    for (i, bn) in state.model.decoder().bn_states().into_iter().enumerate() {
        records.push(Record::reals(format!("bn/{i}/mean"), vec![bn.running_mean.len()], &bn.running_mean));
        records.push(Record::reals(format!("bn/{i}/var"), vec![bn.running_var.len()], &bn.running_var));
    }
    let mut rng = state.rng.get_seed().to_vec();
    rng.extend(state.rng.get_stream().to_le_bytes());
    rng.extend(state.rng.get_word_pos().to_le_bytes());
    records.push(Record::bytes("rng".into(), rng));
    records
}

/// Serialises a training state.
pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    let text = config_text(state);
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text.as_bytes());
    let records = collect_records(state);
    out.extend((records.len() as u32).to_le_bytes());
    for r in records {
        out.extend((r.name.len() as u16).to_le_bytes());
        out.extend(r.name.as_bytes());
        out.push(r.dtype as u8);
        out.push(r.dims.len() as u8);
        for d in &r.dims {
            out.extend((*d as u64).to_le_bytes());
        }
        out.extend(&r.payload);
    }
    let digest = Sha256::digest(&out);
    out.extend(digest.as_slice());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Integrity("checkpoint is truncated".into()));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("invalid UTF-8".into()))
    }
}

fn parse_config(text: &str) -> Result<(ModelConfig, TrainConfig, usize)> {
    let mut model = BTreeMap::new();
    let mut train = BTreeMap::new();
    let mut epoch = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Integrity(format!("bad config line '{line}'")))?;
        if let Some(k) = k.strip_prefix("model.") {
            model.insert(k.to_string(), v.to_string());
        } else if let Some(k) = k.strip_prefix("train.") {
            train.insert(k.to_string(), v.to_string());
        } else if k == "epoch" {
            epoch = v.parse().ok();
        } else {
            return Err(Error::Integrity(format!("unknown config key '{k}'")));
        }
    }
    let epoch = epoch.ok_or_else(|| Error::Integrity("missing epoch".into()))?;
    Ok((ModelConfig::from_pairs(&model)?, TrainConfig::from_pairs(&train)?, epoch))
}

/// Restores a training state written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Integrity("checkpoint is truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let text_len = r.u32()? as usize;
    let (model_cfg, train_cfg, epoch) = parse_config(&r.string(text_len)?)?;
    if train_cfg.precision != crate::PRECISION {
        return Err(Error::Integrity(format!(
            "checkpoint was written in {} but this build computes in {}",
            train_cfg.precision,
            crate::PRECISION
        )));
    }

    let n_records = r.u32()? as usize;
    let mut records = BTreeMap::new();
    for _ in 0..n_records {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let dtype = Dtype::from_u8(r.u8()?)?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::Integrity(format!("record '{name}' is too large")))?;
        let payload = r.take(len)?.to_vec();
        records.insert(
            name.clone(),
            Record {
                name,
                dtype,
                dims,
                payload,
            },
        );
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after records".into()));
    }
    let get = |name: &str| {
        records
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("missing record '{name}'")))
    };

    let mut model = DSparsE::new(model_cfg)?;
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(train_cfg.lr));
    for (id, p) in model.store_mut().iter_mut() {
        let n = p.value.numel();
        let rec = get(&format!("param/{}", p.name))?;
        if rec.dims != p.value.shape() {
            return Err(Error::Integrity(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                p.name,
                rec.dims,
                p.value.shape()
            )));
        }
        p.value.values_mut().copy_from_slice(&rec.to_reals(n)?);
        if let Some(mask) = &mut p.mask {
            let rec = get(&format!("mask/{}", p.name))?;
            rec.expect(Dtype::U8, n)?;
            for (m, &b) in mask.iter_mut().zip(&rec.payload) {
                *m = b != 0;
            }
        }
        adam.moments[id.index()] = Moments {
            m: get(&format!("adam_m/{}", p.name))?.to_reals(n)?,
            v: get(&format!("adam_v/{}", p.name))?.to_reals(n)?,
            step: get(&format!("adam_step/{}", p.name))?.to_u64s(1)?[0],
        };
    }
    for (i, bn) in model.decoder_mut().bn_states_mut().into_iter().enumerate() {
        let w = bn.running_mean.len();
        bn.running_mean = get(&format!("bn/{i}/mean"))?.to_reals(w)?;
        bn.running_var = get(&format!("bn/{i}/var"))?.to_reals(w)?;
    }
    let rng_rec = get("rng")?;
    rng_rec.expect(Dtype::U8, 56)?;
    let raw = &rng_rec.payload;
    let mut rng = ChaCha8Rng::from_seed(raw[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(raw[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(raw[40..56].try_into().expect("16 bytes")));

    Ok(TrainState {
        model,
        adam,
        rng,
        train: train_cfg,
        epoch,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::generate_toy_kg;
    use rand::RngCore;

    fn trained() -> TrainState {
        let kg = generate_toy_kg(24, 4).unwrap();
        let model = ModelConfig {
            n_entities: kg.n_entities(),
            n_relations: kg.n_relations(),
            dim: 6,
            hidden: 6,
            depth: 2,
            dropout: 0.1,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            batch_size: 8,
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(model, train).unwrap();
        state.fit(&kg, |_| {}).unwrap();
        state
    }

    #[test]
    fn round_trip_is_bitwise() {
        let state = trained();
        let bytes = to_bytes(&state);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(back.epoch, 2);
        assert_eq!(back.adam, state.adam);
        let (mut a, mut b) = (state.rng.clone(), back.rng.clone());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&trained());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(from_bytes(&flipped), Err(Error::Integrity(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Integrity(_))));
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Integrity(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = to_bytes(&trained());
        bytes.truncate(bytes.len() - DIGEST_LEN);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend(digest.as_slice());
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }
}
