//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `BSLCKPT\0`, `u32` version, `u64` n_users,
//! n_items, dim, seed, epoch, adam step, `f64` beta1, beta2, eps, then the
//! user matrix, item matrix and the four Adam moment matrices as `f64` bit
//! patterns, followed by the SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AdamState, EmbeddingTable};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BSLCKPT\0";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub table: EmbeddingTable,
    pub adam: AdamState,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.table;
        let mut out = Vec::with_capacity(96 + 8 * 3 * (t.user_matrix().len() + t.item_matrix().len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            t.n_users() as u64,
            t.n_items() as u64,
            t.dim() as u64,
            self.seed,
            self.epoch as u64,
            self.adam.step,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for m in [
            t.user_matrix(),
            t.item_matrix(),
            &self.adam.user_m,
            &self.adam.user_v,
            &self.adam.item_m,
            &self.adam.item_v,
        ] {
            for v in m {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_users = r.usize()?;
        let n_items = r.usize()?;
        let dim = r.usize()?;
        let seed = r.u64()?;
        let epoch = r.usize()?;
        let step = r.u64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let user_len = n_users.checked_mul(dim).ok_or_else(|| corrupt("shape overflow"))?;
        let item_len = n_items.checked_mul(dim).ok_or_else(|| corrupt("shape overflow"))?;
        let users = r.f64s(user_len)?;
        let items = r.f64s(item_len)?;
        let user_m = r.f64s(user_len)?;
        let user_v = r.f64s(user_len)?;
        let item_m = r.f64s(item_len)?;
        let item_v = r.f64s(item_len)?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let table = EmbeddingTable::from_parts(n_users, n_items, dim, users, items)?;
        Ok(Checkpoint {
            table,
            adam: AdamState {
                beta1,
                beta2,
                eps,
                step,
                user_m,
                user_v,
                item_m,
                item_v,
            },
            seed,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size out of range".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("shape overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}
