//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "DIQNNCKP"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON      {"network": NetworkSpec, "param_count": n, "metadata": {...}}
//! params     n × f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DIQNNCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    network: NetworkSpec,
    param_count: usize,
    #[serde(default)]
    metadata: serde_json::Map<String, serde_json::Value>,
}

/// A network together with free-form metadata stored next to it.
#[derive(Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    net: &Network,
    metadata: &serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        network: net.spec().clone(),
        param_count: net.param_count(),
        metadata: metadata.clone(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Format("checkpoint header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    for p in net.theta() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint (magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    read_exact(&mut r, &mut word, "header length")?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    read_exact(&mut r, &mut header, "header")?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    header.network.validate()?;
    if header.network.param_count() != header.param_count {
        return Err(Error::Format(format!(
            "header declares {} parameters but the layers need {}",
            header.param_count,
            header.network.param_count()
        )));
    }
    let mut bytes = vec![0u8; header.param_count * 8];
    read_exact(&mut r, &mut bytes, "parameters")?;
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint {
        network: Network::from_params(header.network, params)?,
        metadata: header.metadata,
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Length(format!("checkpoint ends inside the {what}"))
        }
        _ => Error::Io(e),
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network,
    metadata: &serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), net, metadata)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
