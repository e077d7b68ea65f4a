//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"VLCKPT\0\0"            8 bytes
//! version u32                       currently 1
//! meta    u32 length + UTF-8 bytes  free-form (the model config as JSON)
//! count   u32                       number of parameters
//! per parameter:
//!   name  u32 length + UTF-8 bytes
//!   rows  u64, cols u64
//!   value rows*cols f64, row-major
//! has_opt u8                        0 or 1
//! if has_opt:
//!   lr, weight_decay, beta1, beta2, eps  f64 each
//!   step  u64
//!   per parameter, in the same order: first moment then second moment,
//!   rows*cols f64 each
//! ```

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VLCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: String,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
}

pub fn write_checkpoint<W: Write>(mut w: W, meta: &str, params: &ParamStore, optimizer: Option<&AdamW>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, meta)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for id in params.ids() {
        write_str(&mut w, params.name(id))?;
        write_tensor(&mut w, params.value(id))?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            let c = opt.config;
            for v in [c.lr, c.weight_decay, c.beta1, c.beta2, c.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&opt.step_count().to_le_bytes())?;
            let (first, second) = opt.moments();
            if first.len() != params.len() {
                return Err(TensorError::State("optimizer not initialised for these parameters".into()));
            }
            for (m, v) in first.iter().zip(second) {
                write_values(&mut w, m)?;
                write_values(&mut w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta = read_str(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let values = read_f64s(&mut r, rows * cols)?;
        params.add(name, Tensor::from_vec(rows, cols, values)?);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            let mut h = [0.0; 5];
            for v in &mut h {
                *v = read_f64(&mut r)?;
            }
            let config = AdamWConfig {
                lr: h[0],
                weight_decay: h[1],
                beta1: h[2],
                beta2: h[3],
                eps: h[4],
            };
            let step = read_u64(&mut r)?;
            let mut first = Vec::with_capacity(count);
            let mut second = Vec::with_capacity(count);
            for id in params.ids() {
                let (rows, cols) = params.value(id).shape();
                first.push(Tensor::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?);
                second.push(Tensor::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?);
            }
            Some(AdamW::from_state(config, step, first, second))
        }
        other => return Err(TensorError::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.cols() as u64).to_le_bytes())?;
    write_values(w, t)
}

fn write_values<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| TensorError::Checkpoint(format!("invalid utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut store = ParamStore::new();
        let a = store.add("enc.w", Tensor::from_vec(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, -7.0]).unwrap());
        store.add("enc.b", Tensor::zeros(1, 3));
        store.grad_mut(a).fill(0.25);
        let mut opt = AdamW::for_params(AdamWConfig::default(), &store);
        opt.step(&mut store).unwrap();

        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, "{\"hidden\":3}", &store, Some(&opt)).unwrap();
        let ck = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(ck.meta, "{\"hidden\":3}");
        assert_eq!(ck.params.len(), 2);
        for id in store.ids() {
            assert_eq!(ck.params.name(id), store.name(id));
            assert_eq!(ck.params.value(id), store.value(id));
        }
        let restored = ck.optimizer.unwrap();
        assert_eq!(restored.step_count(), 1);
        assert_eq!(restored.moments().0, opt.moments().0);
        assert_eq!(restored.moments().1, opt.moments().1);
    }

    #[test]
    fn rejects_foreign_files() {
        let err = read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, TensorError::Checkpoint(_)));
    }
}
