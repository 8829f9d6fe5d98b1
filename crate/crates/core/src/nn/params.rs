//! Checkpoint format: one JSON header line describing the architecture,
//! followed by the parameters as raw little-endian `f64` in canonical flat
//! order (layer-major, weights row-major, then bias).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::net::{Activation, DenseNet};

#[derive(Serialize, Deserialize)]
struct LayerDesc {
    out: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    layers: Vec<LayerDesc>,
}

pub fn write_checkpoint<W: Write>(net: &DenseNet, mut w: W) -> Result<()> {
    let header = Header {
        input_dim: net.input_dim(),
        layers: net
            .layer_spec()
            .into_iter()
            .map(|(out, activation)| LayerDesc { out, activation })
            .collect(),
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| CoreError::Serialization(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for v in net.serialize_params() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<DenseNet> {
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(CoreError::Serialization(
                "checkpoint ended before header newline".into(),
            ));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::Serialization(format!("bad checkpoint header: {e}")))?;
    let spec: Vec<(usize, Activation)> = header
        .layers
        .iter()
        .map(|l| (l.out, l.activation))
        .collect();
    let mut net = DenseNet::zeros(header.input_dim, &spec)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != net.param_count() * 8 {
        return Err(CoreError::Shape(format!(
            "checkpoint body has {} bytes, architecture needs {}",
            body.len(),
            net.param_count() * 8
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    net.deserialize_params(&flat)?;
    Ok(net)
}

pub fn save_checkpoint(net: &DenseNet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(net, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<DenseNet> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}
