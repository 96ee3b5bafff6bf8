//! Checkpoint file: three text lines (header, model kind, config) followed
//! by a little-endian `u32` parameter count and, per parameter in
//! declaration order, a `u32` length and that many `f32` values.
//!
//! Values are stored at 32-bit precision. A model whose parameters are
//! already representable in `f32` round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

use super::{Model, ModelConfig, ModelError, ModelKind};

pub const CKPT_HEADER: &str = "sentvae-ckpt v1";

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<(), ModelError> {
    writeln!(w, "{CKPT_HEADER}")?;
    writeln!(w, "{}", model.kind().as_str())?;
    writeln!(w, "{}", model.config().to_line())?;
    let ps = model.params();
    w.write_all(&(ps.len() as u32).to_le_bytes())?;
    for (_, p) in ps.iter() {
        let data = p.value.data();
        w.write_all(&(data.len() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * data.len());
        for &v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut rest = &bytes[..];
    let mut line = || -> Result<String, ModelError> {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ModelError::Checkpoint("truncated header".into()))?;
        let s = std::str::from_utf8(&rest[..nl])
            .map_err(|_| ModelError::Checkpoint("header is not UTF-8".into()))?
            .to_string();
        rest = &rest[nl + 1..];
        Ok(s)
    };
    if line()? != CKPT_HEADER {
        return Err(ModelError::Checkpoint("bad header".into()));
    }
    let kind: ModelKind = line()?.parse().map_err(ModelError::Checkpoint)?;
    let config = ModelConfig::from_line(&line()?)?;

    let take_u32 = |rest: &mut &[u8]| -> Result<u32, ModelError> {
        if rest.len() < 4 {
            return Err(ModelError::Checkpoint("truncated parameters".into()));
        }
        let v = u32::from_le_bytes(rest[..4].try_into().unwrap());
        *rest = &rest[4..];
        Ok(v)
    };
    // The rng only fills values that are overwritten below.
    let mut model = Model::new(kind, config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = take_u32(&mut rest)? as usize;
    if count != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, found {count}",
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (_, p) in model.params().iter() {
        let len = take_u32(&mut rest)? as usize;
        if len != p.value.len() || rest.len() < 4 * len {
            return Err(ModelError::Checkpoint(format!("bad length for {}", p.name)));
        }
        let data = rest[..4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        rest = &rest[4 * len..];
        values.push(Tensor::new(p.value.shape().to_vec(), data)?);
    }
    if !rest.is_empty() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    model.params_mut().load_values(values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Direction;

    fn small(kind: ModelKind) -> Model {
        let mut cfg = ModelConfig::new(9);
        cfg.embedding_dim = 4;
        cfg.hidden_dim = 5;
        cfg.z_dim = 3;
        cfg.highway_layers = 1;
        cfg.direction = Direction::RightToLeft;
        let mut m = Model::new(kind, cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        m.params_mut().round_to_f32();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [ModelKind::Vae, ModelKind::Rnnlm] {
            let m = small(kind);
            let mut buf = Vec::new();
            write_checkpoint(&m, &mut buf).unwrap();
            assert!(buf.starts_with(b"sentvae-ckpt v1\n"));
            let back = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.config(), m.config());
            for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
                assert_eq!(a.name, b.name);
                let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "{}", a.name);
            }
            let mut again = Vec::new();
            write_checkpoint(&back, &mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = small(ModelKind::Vae);
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
        assert!(read_checkpoint(&b"nope\n"[..]).is_err());
    }
}
