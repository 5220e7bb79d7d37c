//! Weight checkpoints.
//!
//! ```text
//! "RCKN" | version u16 | n_in u16 | n_rec u16 | n_out u16 | config hash [32]
//! w_in (n_rec·n_in) | w_rec (n_rec·n_rec) | w_out (n_out·n_rec)     raw i8
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::snn::Weights;

pub const MAGIC: &[u8; 4] = b"RCKN";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 * 4 + 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub weights: Weights,
}

fn dim(n: usize) -> Result<[u8; 2]> {
    u16::try_from(n)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("dimension {n} exceeds u16")))
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let w = &self.weights;
        let mut b = Vec::with_capacity(HEADER_LEN + w.w_in.len() + w.w_rec.len() + w.w_out.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&dim(w.n_in)?);
        b.extend_from_slice(&dim(w.n_rec)?);
        b.extend_from_slice(&dim(w.n_out)?);
        b.extend_from_slice(&self.config_hash);
        for region in [&w.w_in, &w.w_rec, &w.w_out] {
            b.extend(region.iter().map(|&x| x as u8));
        }
        Ok(b)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let u16_at = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        let version = u16_at(4) as u16;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let (n_in, n_rec, n_out) = (u16_at(6), u16_at(8), u16_at(10));
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(&bytes[12..44]);
        let sizes = [n_rec * n_in, n_rec * n_rec, n_out * n_rec];
        if bytes.len() != HEADER_LEN + sizes.iter().sum::<usize>() {
            return Err(Error::Checkpoint(format!(
                "size mismatch: {} bytes for ({n_in}, {n_rec}, {n_out})",
                bytes.len()
            )));
        }
        let mut pos = HEADER_LEN;
        let mut take = |n: usize| {
            let v: Vec<i8> = bytes[pos..pos + n].iter().map(|&x| x as i8).collect();
            pos += n;
            v
        };
        let w_in = take(sizes[0]);
        let w_rec = take(sizes[1]);
        let w_out = take(sizes[2]);
        Ok(Checkpoint {
            config_hash,
            weights: Weights {
                n_in,
                n_rec,
                n_out,
                w_in,
                w_rec,
                w_out,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn check_hash(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.config_hash != expected {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs config {}",
                hex::encode(self.config_hash),
                hex::encode(expected)
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejects() {
        let mut w = Weights::zeros(3, 2, 1);
        w.w_in = vec![-127, 0, 5, 127, -1, 2];
        w.w_out = vec![9, -9];
        let c = Checkpoint {
            config_hash: [7; 32],
            weights: w,
        };
        let b = c.encode().unwrap();
        assert_eq!(b.len(), 44 + 6 + 4 + 2);
        assert_eq!(Checkpoint::decode(&b).unwrap(), c);
        assert!(Checkpoint::decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        assert!(c.check_hash(&[7; 32]).is_ok());
        assert!(matches!(c.check_hash(&[0; 32]), Err(Error::Checkpoint(_))));
    }
}
