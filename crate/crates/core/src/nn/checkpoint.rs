//! Binary checkpoint: `AFR1` magic, u16 format version, profile name,
//! normalization stats, actor and critic (topology + little-endian f64
//! values), trailing CRC32 over everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::NormalizationStats;
use crate::nn::network::{Head, NetworkParams, Topology};

pub const MAGIC: &[u8; 4] = b"AFR1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: NetworkParams,
    pub critic: NetworkParams,
    pub norm: NormalizationStats,
    pub profile_name: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let name = self.profile_name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.norm.max_chunk_size.to_le_bytes());
        for net in [&self.actor, &self.critic] {
            write_topology(&mut out, net.topology());
            out.extend_from_slice(&(net.parameter_count() as u64).to_le_bytes());
            for v in net.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::CorruptFile("missing AFR1 magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 10 {
            return Err(Error::CorruptFile("file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }

        let mut r = Reader { buf: body, pos: 6 };
        let name_len = r.u32()? as usize;
        let profile_name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptFile("profile name is not utf-8".into()))?;
        let norm = NormalizationStats {
            max_chunk_size: r.u64()?,
        };
        let actor = read_network(&mut r)?;
        let critic = read_network(&mut r)?;
        if r.pos != body.len() {
            return Err(Error::CorruptFile("trailing bytes".into()));
        }
        Ok(Self {
            actor,
            critic,
            norm,
            profile_name,
        })
    }

    /// CRC32 of the serialized body (the value stored in the trailer),
    /// handy as a content identifier.
    pub fn fingerprint(&self) -> u32 {
        let bytes = self.to_bytes();
        crc32fast::hash(&bytes[..bytes.len() - 4])
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn write_topology(out: &mut Vec<u8>, t: &Topology) {
    let (kind, actions) = match t.head {
        Head::Actor { actions } => (0u8, actions),
        Head::Critic => (1u8, 1),
    };
    out.push(kind);
    let mut put = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(actions);
    put(t.vector_lens.len());
    for &l in &t.vector_lens {
        put(l);
    }
    for v in [
        t.filters,
        t.kernel,
        t.scalar_inputs,
        t.scalar_units,
        t.hidden_layers,
        t.hidden_units,
    ] {
        put(v);
    }
}

fn read_network(r: &mut Reader<'_>) -> Result<NetworkParams> {
    let head = match r.take(1)?[0] {
        0 => Head::Actor {
            actions: r.u32()? as usize,
        },
        1 => {
            r.u32()?;
            Head::Critic
        }
        other => return Err(Error::CorruptFile(format!("unknown head kind {other}"))),
    };
    let n_vec = r.u32()? as usize;
    let vector_lens = (0..n_vec)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut fields = [0usize; 6];
    for f in fields.iter_mut() {
        *f = r.u32()? as usize;
    }
    let [filters, kernel, scalar_inputs, scalar_units, hidden_layers, hidden_units] = fields;
    let topology = Topology {
        head,
        vector_lens,
        filters,
        kernel,
        scalar_inputs,
        scalar_units,
        hidden_layers,
        hidden_units,
    };
    topology
        .validate()
        .map_err(|e| Error::CorruptFile(format!("bad topology: {e}")))?;
    let count = r.u64()? as usize;
    if count != topology.parameter_count() {
        return Err(Error::CorruptFile(
            "parameter count does not match topology".into(),
        ));
    }
    let raw = r.take(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptFile("size overflow".into()))?,
    )?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    NetworkParams::from_flat(topology, &values).map_err(|e| Error::CorruptFile(e.to_string()))
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
            .ok_or_else(|| Error::CorruptFile("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::build_network;

    fn sample() -> Checkpoint {
        Checkpoint {
            actor: build_network(Head::Actor { actions: 5 }, 5, 2, 8, 1).unwrap(),
            critic: build_network(Head::Critic, 5, 2, 8, 2).unwrap(),
            norm: NormalizationStats {
                max_chunk_size: 123_456,
            },
            profile_name: "qoe_b".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.afr");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.profile_name, "qoe_b");
        assert_eq!(back.norm, ckpt.norm);
        for (a, b) in [(&ckpt.actor, &back.actor), (&ckpt.critic, &back.critic)] {
            assert_eq!(a.topology(), b.topology());
            assert!(a
                .values()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 8] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptFile(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0xff;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }
}
