//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"FSFCKPT1"
//! u32     meta length, then that many bytes of UTF-8 JSON
//! u64     step count
//! block   params
//! u8      has optimizer state; if 1: f64 beta1, beta2, epsilon, lr,
//!         block first moments, block second moments
//! u8      has EMA state; if 1: f64 decay, block shadow
//! ```
//!
//! where `block` is `u32 count` followed by `count` records of
//! `u32 name-len, name bytes, u32 rows, u32 cols, rows*cols f64`.
//! f64 payloads are raw little-endian bits, so round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::optim::{AdamState, EmaState};
use crate::tensor::param::ParamStore;

const MAGIC: &[u8; 8] = b"FSFCKPT1";

/// Everything a run needs to resume or evaluate: parameters, optional
/// optimizer moments, optional EMA shadow, and a self-describing JSON
/// metadata blob (architecture, config echo, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    pub ema: Option<EmaState>,
}

impl Checkpoint {
    pub fn new(params: ParamStore, meta: serde_json::Value) -> Self {
        Checkpoint { meta, params, adam: None, ema: None }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            w.write_all(MAGIC)?;
            let meta = serde_json::to_vec(&self.meta)?;
            write_u32(&mut w, meta.len() as u32)?;
            w.write_all(&meta)?;
            w.write_all(&self.params.step_count().to_le_bytes())?;
            write_block(&mut w, self.params.raw())?;
            match &self.adam {
                Some(a) => {
                    w.write_all(&[1u8])?;
                    for x in [a.beta1, a.beta2, a.epsilon, a.learning_rate] {
                        w.write_all(&x.to_le_bytes())?;
                    }
                    let (m, v) = a.moments();
                    write_block(&mut w, m)?;
                    write_block(&mut w, v)?;
                }
                None => w.write_all(&[0u8])?,
            }
            match &self.ema {
                Some(e) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&e.decay.to_le_bytes())?;
                    write_block(&mut w, e.shadow())?;
                }
                None => w.write_all(&[0u8])?,
            }
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| {
            Error::Checkpoint(format!("cannot open {}: {e}", path.display()))
        })?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}; not a checkpoint or unsupported version",
                String::from_utf8_lossy(&magic)
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)
            .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
        let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
        let step_count = read_u64(&mut r)?;
        let raw = read_block(&mut r)?;
        let mut params = ParamStore::new();
        for (k, v) in raw {
            params.insert(&k, v)?;
        }
        params.set_step_count(step_count);

        let adam = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let beta1 = read_f64(&mut r)?;
                let beta2 = read_f64(&mut r)?;
                let epsilon = read_f64(&mut r)?;
                let lr = read_f64(&mut r)?;
                let m = read_block(&mut r)?;
                let v = read_block(&mut r)?;
                let mut state = AdamState::new(&params, lr, beta1, beta2, epsilon);
                state.restore_moments(m, v);
                Some(state)
            }
            x => return Err(Error::Checkpoint(format!("bad optimizer flag {x}"))),
        };
        let ema = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let decay = read_f64(&mut r)?;
                let shadow = read_block(&mut r)?;
                let mut state = EmaState::new(&params, decay);
                state.restore_shadow(shadow);
                Some(state)
            }
            x => return Err(Error::Checkpoint(format!("bad EMA flag {x}"))),
        };

        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { meta, params, adam, ema })
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_block<W: Write>(w: &mut W, block: &BTreeMap<String, Array2<f64>>) -> Result<()> {
    write_u32(w, block.len() as u32)?;
    for (name, arr) in block {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, arr.nrows() as u32)?;
        write_u32(w, arr.ncols() as u32)?;
        for x in arr.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_block<R: Read>(r: &mut R) -> Result<BTreeMap<String, Array2<f64>>> {
    let count = read_u32(r)? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-UTF-8 parameter name".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(r)?);
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("bad shape: {e}")))?;
        out.insert(name, arr);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::optim::{AdamState, EmaState};
    use crate::tensor::param::randn;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = crate::rng::stream(3, "ckpt-test");
        let mut params = ParamStore::new();
        params.insert("a", randn(&mut rng, (3, 4), 1.0)).unwrap();
        params.insert("b", randn(&mut rng, (1, 7), 0.3)).unwrap();
        params.set_step_count(42);
        let mut adam = AdamState::with_defaults(&params, 1e-3);
        let m = params.raw().clone();
        let v = params.raw().clone();
        adam.restore_moments(m, v);
        let ema = EmaState::new(&params, 0.99995);
        let mut ckpt = Checkpoint::new(params, serde_json::json!({"arch": {"hidden": 128}}));
        ckpt.adam = Some(adam);
        ckpt.ema = Some(ema);
        ckpt
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.fsfckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(loaded.meta, ckpt.meta);
        assert_eq!(loaded.params.step_count(), 42);
        for (name, arr) in ckpt.params.iter() {
            let l = loaded.params.get(name).unwrap();
            assert!(arr.iter().zip(l.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let (m0, _) = ckpt.adam.as_ref().unwrap().moments();
        let (m1, _) = loaded.adam.as_ref().unwrap().moments();
        assert_eq!(m0, m1);
        assert_eq!(
            loaded.ema.as_ref().unwrap().shadow(),
            ckpt.ema.as_ref().unwrap().shadow()
        );

        // Saving the loaded checkpoint reproduces the file byte-for-byte.
        let path2 = dir.path().join("test2.fsfckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fsfckpt");
        fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trail.fsfckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
