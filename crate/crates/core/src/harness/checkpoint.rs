//! Binary checkpoint files and registry directories.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ZTOPCKPT" | u32 version | str problem | u64 epoch | f64 val_score
//! u32 count, then count x (str instance_id, f64 objective)
//! u32 count, then count x (str name, u32 rank, rank x u64 dim, f32 values)
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::error::{read_to_string, write};
use super::HarnessError;
use crate::autodiff::Tensor;
use crate::policy::{Params, Policy};
use crate::training::{Checkpoint, CheckpointRegistry};

pub const MAGIC: &[u8; 8] = b"ZTOPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

pub fn encode_checkpoint<P: Policy>(ckpt: &Checkpoint<P>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, P::PROBLEM.tag());
    out.extend_from_slice(&(ckpt.epoch as u64).to_le_bytes());
    out.extend_from_slice(&ckpt.val_score.to_le_bytes());
    out.extend_from_slice(&(ckpt.per_instance.len() as u32).to_le_bytes());
    for (id, v) in &ckpt.per_instance {
        put_str(&mut out, id);
        out.extend_from_slice(&v.to_le_bytes());
    }
    let params = ckpt.params.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.entries() {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint<P: Policy>(bytes: &[u8]) -> Result<Checkpoint<P>, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Format("bad magic bytes".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let problem = r.str("problem tag")?;
    if problem != P::PROBLEM.tag() {
        return Err(CheckpointError::Format(format!(
            "checkpoint is for {problem}, expected {}",
            P::PROBLEM
        )));
    }
    let epoch = r.u64("epoch")? as usize;
    let val_score = r.f64("val_score")?;
    let count = r.u32("instance count")?;
    let mut per_instance = BTreeMap::new();
    for _ in 0..count {
        let id = r.str("instance id")?;
        per_instance.insert(id, r.f64("instance objective")?);
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("tensor dim").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflows")))?;
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: size overflows")))?,
            "tensor values",
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = P::from_params(Params::new(entries))
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        epoch,
        params,
        val_score,
        per_instance,
    })
}

pub fn save_checkpoint<P: Policy>(path: &Path, ckpt: &Checkpoint<P>) -> Result<(), HarnessError> {
    write(path, encode_checkpoint(ckpt))
}

pub fn load_checkpoint<P: Policy>(path: &Path) -> Result<Checkpoint<P>, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

const REGISTRY_FILE: &str = "registry.txt";

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

/// Writes every entry plus a small index; stale checkpoint files are removed first.
pub fn save_registry<P: Policy>(
    dir: &Path,
    reg: &CheckpointRegistry<P>,
) -> Result<(), HarnessError> {
    if dir.exists() {
        for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
            let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "ckpt") {
                std::fs::remove_file(&path).map_err(|e| HarnessError::io(&path, e))?;
            }
        }
    }
    let mut index = format!(
        "id {}\nproblem {}\nretention {}\n",
        reg.id,
        reg.problem,
        reg.retention()
    );
    for c in reg.entries() {
        save_checkpoint(&dir.join(checkpoint_name(c.epoch)), c)?;
        index.push_str(&format!("epoch {}\n", c.epoch));
    }
    write(&dir.join(REGISTRY_FILE), index)
}

pub fn load_registry<P: Policy>(dir: &Path) -> Result<CheckpointRegistry<P>, HarnessError> {
    let index_path = dir.join(REGISTRY_FILE);
    let text = read_to_string(&index_path)?;
    let bad =
        |line: usize, m: &str| HarnessError::Data(format!("{}:{line}: {m}", index_path.display()));
    let (mut id, mut retention, mut epochs) = (None, None, Vec::new());
    for (i, line) in text.lines().enumerate() {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| bad(i + 1, "malformed line"))?;
        match key {
            "id" => id = Some(value.to_string()),
            "problem" if value == P::PROBLEM.tag() => {}
            "problem" => return Err(bad(i + 1, &format!("registry is for {value}"))),
            "retention" => {
                retention = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| bad(i + 1, "bad retention"))?,
                )
            }
            "epoch" => epochs.push(
                value
                    .parse::<usize>()
                    .map_err(|_| bad(i + 1, "bad epoch"))?,
            ),
            _ => return Err(bad(i + 1, &format!("unknown key {key}"))),
        }
    }
    let mut reg = CheckpointRegistry::new(
        id.ok_or_else(|| bad(0, "missing id"))?,
        retention.ok_or_else(|| bad(0, "missing retention"))?,
    );
    for epoch in epochs {
        let ckpt: Checkpoint<P> = load_checkpoint(&dir.join(checkpoint_name(epoch)))?;
        if ckpt.epoch != epoch {
            return Err(HarnessError::Data(format!(
                "{}: holds epoch {}",
                checkpoint_name(epoch),
                ckpt.epoch
            )));
        }
        reg.push(ckpt)?;
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::maxcut::{MaxcutDims, MaxcutPolicyParams};
    use crate::policy::tsp::{TspDims, TspPolicyParams};
    use crate::seeding::rng_for;

    fn tsp_ckpt(epoch: usize) -> Checkpoint<TspPolicyParams> {
        let mut params = TspPolicyParams::init(TspDims::default(), &mut rng_for(epoch as u64, "i"));
        params.params_mut().round_to_f32();
        Checkpoint {
            epoch,
            params,
            val_score: 3.0 + 1.0 / 3.0,
            per_instance: [("a".to_string(), 1.25), ("b".to_string(), 0.1)].into(),
        }
    }

    #[test]
    fn round_trip_is_exact_for_rounded_params() {
        let c = tsp_ckpt(7);
        let back: Checkpoint<TspPolicyParams> = decode_checkpoint(&encode_checkpoint(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unrounded_values_come_back_at_f32_precision() {
        let mut c = tsp_ckpt(1);
        c.params = TspPolicyParams::init(TspDims::default(), &mut rng_for(1, "i"));
        let back: Checkpoint<TspPolicyParams> = decode_checkpoint(&encode_checkpoint(&c)).unwrap();
        for (a, b) in c
            .params
            .params()
            .tensors()
            .iter()
            .zip(back.params.params().tensors())
        {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&tsp_ckpt(1));
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint::<TspPolicyParams>(&bytes),
            Err(CheckpointError::Format(_))
        ));
        let mut bytes = encode_checkpoint(&tsp_ckpt(1));
        bytes[8] = 9;
        assert!(matches!(
            decode_checkpoint::<TspPolicyParams>(&bytes),
            Err(CheckpointError::Format(_))
        ));
        let bytes = encode_checkpoint(&tsp_ckpt(1));
        assert!(matches!(
            decode_checkpoint::<MaxcutPolicyParams>(&bytes),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = encode_checkpoint(&tsp_ckpt(1));
        for cut in [12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint::<TspPolicyParams>(&bytes[..cut]),
                Err(CheckpointError::Corrupt(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            decode_checkpoint::<TspPolicyParams>(&extra),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn registry_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = CheckpointRegistry::new("maxcut-1", 10);
        for e in 1..=4 {
            let mut params = MaxcutPolicyParams::init(MaxcutDims::default(), &mut rng_for(e, "i"));
            params.params_mut().round_to_f32();
            reg.push(Checkpoint {
                epoch: e as usize,
                params,
                val_score: 0.9 + e as f64 / 100.0,
                per_instance: BTreeMap::new(),
            })
            .unwrap();
        }
        save_registry(dir.path(), &reg).unwrap();
        let back: CheckpointRegistry<MaxcutPolicyParams> = load_registry(dir.path()).unwrap();
        assert_eq!(back.id, reg.id);
        assert_eq!(back.retention(), 10);
        for (a, b) in back.entries().iter().zip(reg.entries()) {
            assert_eq!(**a, **b);
        }
        let err = load_registry::<TspPolicyParams>(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
