//! Versioned parameter checkpoints.
//!
//! Layout (all integers u32 LE, all values f64 LE):
//! `"MSROI1"`, kind, categories, head features, layer count, then per
//! layer the kernel extents `out in kh kw`, the kernel values and the
//! `out` bias values.

use std::io::{self, Read, Write};

use super::{LayerParams, Tensor, TensorError};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MSROI1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    MultiStructure = 0,
    ClassActivation = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: CheckpointKind,
    pub categories: usize,
    pub head_features: usize,
    pub layers: Vec<LayerParams<T>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "extent exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_values<T: Scalar, R: Read>(r: &mut R, n: usize) -> Result<Vec<T>, CheckpointError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect())
}

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, ckpt.kind as usize)?;
    put_u32(w, ckpt.categories)?;
    put_u32(w, ckpt.head_features)?;
    put_u32(w, ckpt.layers.len())?;
    for layer in &ckpt.layers {
        for &e in layer.kernel.shape() {
            put_u32(w, e)?;
        }
        for v in layer.kernel.data().iter().chain(layer.bias.data()) {
            w.write_all(&v.to_le_f64_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<T>, CheckpointError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let kind = match get_u32(r)? {
        0 => CheckpointKind::MultiStructure,
        1 => CheckpointKind::ClassActivation,
        k => return Err(CheckpointError::Malformed(format!("unknown network kind {k}"))),
    };
    let categories = get_u32(r)?;
    let head_features = get_u32(r)?;
    let count = get_u32(r)?;
    if count > 4096 {
        return Err(CheckpointError::Malformed(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let shape = [get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?];
        if shape[2] != shape[3] || shape.iter().any(|&e| e == 0) {
            return Err(CheckpointError::Malformed(format!("layer {i} has kernel extents {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(CheckpointError::Malformed(format!("layer {i} too large")));
        }
        let kernel = Tensor::from_vec(&shape, get_values(r, n)?)?;
        let bias = Tensor::from_vec(&[shape[0]], get_values(r, shape[0])?)?;
        layers.push(LayerParams::new(kernel, bias, shape[2] / 2, 1)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes after last layer".into()));
    }
    Ok(Checkpoint {
        kind,
        categories,
        head_features,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = LayerParams::glorot(4, 3, 3, &mut rng);
        a.bias.data_mut()[2] = -0.125;
        Checkpoint {
            kind: CheckpointKind::MultiStructure,
            categories: 2,
            head_features: 2,
            layers: vec![a, LayerParams::glorot(4, 4, 1, &mut rng)],
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..6], b"MSROI1");
        assert_eq!(&buf[6..10], &0u32.to_le_bytes());
        assert_eq!(&buf[18..22], &2u32.to_le_bytes());
        assert_eq!(&buf[22..38], &[4, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0]);
        let expected = 6 + 16 + (16 + (108 + 4) * 8) + (16 + (16 + 4) * 8);
        assert_eq!(buf.len(), expected);
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let back: Checkpoint<f64> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            read_checkpoint::<f64, _>(&mut &b"MSROI2\0\0"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f64, _>(&mut buf.as_slice()).is_err());
    }
}
