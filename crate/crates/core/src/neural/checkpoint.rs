//! Binary checkpoint format.
//!
//! ```text
//! magic       8 bytes  "XVOTEQN\0"
//! version     u32 LE
//! n_dims      u32 LE
//! layer_dims  n_dims x u32 LE
//! parameters  f64 LE, layer by layer: weights (row-major, outputs x inputs), then bias
//! ```

use std::fs;
use std::path::Path;

use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XVOTEQN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &Mlp) -> Vec<u8> {
    let dims = net.layer_dims();
    let mut out = Vec::with_capacity(16 + 4 * dims.len() + 8 * net.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "parameters")?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { bytes };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let n_dims = r.u32("layer count")? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::CorruptCheckpoint(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
        return Err(Error::CorruptCheckpoint(format!("inconsistent layer dims {dims:?}")));
    }
    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if r.bytes.len() != expected * 8 {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} parameter bytes for dims {dims:?}, found {}",
            expected * 8,
            r.bytes.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let weights = (0..inputs * outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    let net = Mlp::from_layers(layers)?;
    if net.params().any(|p| !p.is_finite()) {
        return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        Mlp::random(&[6, 64, 64, 2], &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let a = net();
        save_checkpoint(&a, &path).unwrap();
        let b = load_checkpoint(&path).unwrap();
        assert!(a.params().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..6).map(|_| rng.random()).collect();
            assert_eq!(a.forward(&obs).unwrap(), b.forward(&obs).unwrap());
        }
        assert_eq!(encode_checkpoint(&b), fs::read(&path).unwrap());
    }

    #[test]
    fn header_declares_dims() {
        let bytes = encode_checkpoint(&net());
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), CHECKPOINT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        let dims: Vec<u32> = bytes[16..32]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![6, 64, 64, 2]);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = encode_checkpoint(&net());
        for cut in [0, 5, 12, 20, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
                "{cut}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn wrong_version_and_magic() {
        let mut bytes = encode_checkpoint(&net());
        bytes[8] = 9;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));
        bytes[0] = b'Y';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let mut bytes = encode_checkpoint(&net());
        // claim a wider first hidden layer than the payload carries
        bytes[20..24].copy_from_slice(&65u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_checkpoint(Path::new("/nonexistent/stops.ckpt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/stops.ckpt"));
    }
}
