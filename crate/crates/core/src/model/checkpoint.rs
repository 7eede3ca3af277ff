//! Versioned binary parameter checkpoint.
//!
//! Layout (little endian): magic `CEKD`, format version, the network
//! configuration, the RNG seed lineage, then every parameter tensor with its
//! shape and raw f64 bits. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CekdError, Result};
use crate::model::net::{NetConfig, Params};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"CEKD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    /// Seeds the parameters descend from (init seed, train seed, ...).
    pub seed_lineage: Vec<u64>,
    pub params: Params,
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            self.u32(d as u32)?;
        }
        for &v in t.data() {
            self.u64(v.to_bits())?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    input: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input.read_exact(&mut buf).map_err(|_| CekdError::Parse {
            offset: self.offset,
            message: "truncated checkpoint".into(),
        })?;
        self.offset += N;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CekdError::Parse {
                offset: self.offset,
                message: format!("implausible tensor rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_bits(self.u64()?));
        }
        Tensor::from_vec(&shape, data)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = Writer { out: BufWriter::new(file) };
        w.out.write_all(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(ckpt.config.input_channels as u32)?;
        w.u32(ckpt.config.input_hw as u32)?;
        w.u32(ckpt.config.num_classes as u32)?;
        w.u32(ckpt.config.conv_channels.len() as u32)?;
        for (&ch, &pool) in ckpt.config.conv_channels.iter().zip(&ckpt.config.pool_after) {
            w.u32(ch as u32)?;
            w.u32(pool as u32)?;
        }
        w.u32(ckpt.seed_lineage.len() as u32)?;
        for &s in &ckpt.seed_lineage {
            w.u64(s)?;
        }
        let tensors = ckpt.params.tensors();
        w.u32(tensors.len() as u32)?;
        for t in tensors {
            w.tensor(t)?;
        }
        w.out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = Reader { input: BufReader::new(file), offset: 0 };
    let magic = r.bytes::<4>()?;
    if &magic != MAGIC {
        return Err(CekdError::Parse {
            offset: 0,
            message: "bad magic, not a checkpoint file".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CekdError::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let input_channels = r.u32()? as usize;
    let input_hw = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let n_blocks = r.u32()? as usize;
    let mut conv_channels = Vec::with_capacity(n_blocks);
    let mut pool_after = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        conv_channels.push(r.u32()? as usize);
        pool_after.push(r.u32()? != 0);
    }
    let config = NetConfig {
        input_channels,
        input_hw,
        conv_channels,
        pool_after,
        num_classes,
    };
    config.validate().map_err(|e| CekdError::Parse {
        offset: r.offset,
        message: format!("invalid config in checkpoint: {e}"),
    })?;
    let n_seeds = r.u32()? as usize;
    let mut seed_lineage = Vec::with_capacity(n_seeds);
    for _ in 0..n_seeds {
        seed_lineage.push(r.u64()?);
    }
    let n_tensors = r.u32()? as usize;
    let mut params = Params::zeros_like(&config);
    {
        let slots = params.tensors_mut();
        if slots.len() != n_tensors {
            return Err(CekdError::Parse {
                offset: r.offset,
                message: format!("expected {} tensors, file has {n_tensors}", slots.len()),
            });
        }
        for slot in slots {
            let t = r.tensor()?;
            if t.shape() != slot.shape() {
                return Err(CekdError::Parse {
                    offset: r.offset,
                    message: format!(
                        "tensor shape {:?} does not match config shape {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                });
            }
            *slot = t;
        }
    }
    Ok(Checkpoint {
        config,
        seed_lineage,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::init_params;
    use crate::numerics::RngStream;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = NetConfig {
            input_channels: 1,
            input_hw: 8,
            conv_channels: vec![4, 4],
            pool_after: vec![true, false],
            num_classes: 3,
        };
        let mut rng = RngStream::new(5);
        let params = init_params(&config, &mut rng).unwrap();
        let ckpt = Checkpoint {
            config,
            seed_lineage: vec![5, 99],
            params,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn rejects_truncation() {
        let config = NetConfig::default();
        let mut rng = RngStream::new(1);
        let ckpt = Checkpoint {
            params: init_params(&config, &mut rng).unwrap(),
            config,
            seed_lineage: vec![1],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
