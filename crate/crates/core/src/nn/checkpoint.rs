//! Binary parameter/optimizer container.
//!
//! Layout: 8-byte magic, u32 LE version, u32 LE header length, a JSON header,
//! then the parameters, first moments and second moments as f32 LE.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::network::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PAFPCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    endianness: String,
    dtype: String,
    spec: NetworkSpec,
    param_count: usize,
    adam: AdamConfig,
    adam_t: u64,
    seed_lineage: Vec<u64>,
}

/// Everything needed to resume or reuse a trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: AdamState<f32>,
    /// Seeds from the master seed down to this model's initialisation.
    pub seed_lineage: Vec<u64>,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let n = ckpt.network.param_count();
    if ckpt.optimizer.m.len() != n || ckpt.optimizer.v.len() != n {
        return Err(Error::Checkpoint("optimizer state does not match the network".into()));
    }
    let header = Header {
        endianness: "little".into(),
        dtype: "f32".into(),
        spec: ckpt.network.spec().clone(),
        param_count: n,
        adam: ckpt.optimizer.config,
        adam_t: ckpt.optimizer.t,
        seed_lineage: ckpt.seed_lineage.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 12 * n);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for block in [&ckpt.network.params, &ckpt.optimizer.m, &ckpt.optimizer.v] {
        for v in block.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_f32s(bytes: &mut &[u8], n: usize) -> Result<Vec<f32>> {
    let raw = take(bytes, 4 * n)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let mut bytes = all.as_slice();
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut bytes)? as usize;
    let header: Header =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.endianness != "little" || header.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "unsupported encoding {}/{}",
            header.endianness, header.dtype
        )));
    }
    let n = header.param_count;
    let params = read_f32s(&mut bytes, n)?;
    let m = read_f32s(&mut bytes, n)?;
    let v = read_f32s(&mut bytes, n)?;
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    let network = Network::from_params(header.spec, params)
        .map_err(|e| Error::Checkpoint(format!("parameter count mismatch: {e}")))?;
    Ok(Checkpoint {
        network,
        optimizer: AdamState { config: header.adam, t: header.adam_t, m, v },
        seed_lineage: header.seed_lineage,
    })
}

#[cfg(test)]
mod tests {
    use super::super::network::init_params;
    use super::super::spec::{build_conv_net, ConvNetConfig};
    use super::*;
    use crate::rng::SimRng;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let spec = build_conv_net(16, 2, 4, ConvNetConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        let network: Network<f32> = init_params(&spec, &mut rng).unwrap();
        let n = network.param_count();
        let mut optimizer = AdamState::new(AdamConfig::default(), n);
        optimizer.t = 17;
        optimizer.m = (0..n).map(|_| rng.random::<f32>()).collect();
        optimizer.v = (0..n).map(|_| rng.random::<f32>() * 1e-3).collect();
        Checkpoint { network, optimizer, seed_lineage: vec![42, 7, 99] }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.network.params), bits(&c.network.params));
    }

    #[test]
    fn rejects_damage() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 2]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }
}
