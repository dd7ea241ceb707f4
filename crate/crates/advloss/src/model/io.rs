//! Model persistence: a short text header followed by the raw parameter
//! block.
//!
//! ```text
//! mlp 1
//! dims 2 16 16 3
//! activation relu
//! end
//! <little-endian f64: per layer, weights row-major then bias>
//! ```
//!
//! Save followed by load is bit-exact on the parameters.

use std::fs;
use std::path::Path;

use super::{LayerParams, MlpModel, ModelError};
use crate::numerics::BatchMatrix;

const FORMAT_LINE: &str = "mlp 1";

pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), ModelError> {
    let dims = model
        .dims()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut bytes = format!("{FORMAT_LINE}\ndims {dims}\nactivation relu\nend\n").into_bytes();
    for layer in model.layers() {
        for &w in layer.weight.data() {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for &b in &layer.bias {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel, ModelError> {
    let bytes = fs::read(path)?;
    // The header is ASCII lines up to and including "end\n".
    let header_end = find_header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| ModelError::MalformedFile("header is not utf-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(FORMAT_LINE) {
        return Err(ModelError::MalformedFile(format!(
            "expected format line `{FORMAT_LINE}`"
        )));
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| ModelError::MalformedFile("missing dims line".into()))?;
    let dims = parse_dims(dims_line)?;
    match lines.next() {
        Some("activation relu") => {}
        other => {
            return Err(ModelError::MalformedFile(format!(
                "unsupported activation line {other:?}"
            )))
        }
    }

    let param_count: usize = dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
    let payload = &bytes[header_end..];
    if payload.len() != param_count * 8 {
        return Err(ModelError::MalformedFile(format!(
            "parameter block is {} bytes, dims imply {}",
            payload.len(),
            param_count * 8
        )));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let data: Vec<f64> = values.by_ref().take(out * inp).collect();
        let bias: Vec<f64> = values.by_ref().take(out).collect();
        layers.push(LayerParams {
            weight: BatchMatrix::new(out, inp, data)
                .map_err(|e| ModelError::MalformedFile(e.to_string()))?,
            bias,
        });
    }
    // MlpModel::new re-checks chaining and finiteness.
    MlpModel::new(layers)
}

fn find_header_end(bytes: &[u8]) -> Result<usize, ModelError> {
    let needle = b"\nend\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
        .ok_or_else(|| ModelError::MalformedFile("missing end-of-header marker".into()))
}

fn parse_dims(line: &str) -> Result<Vec<usize>, ModelError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("dims") {
        return Err(ModelError::MalformedFile("missing dims line".into()));
    }
    let dims: Vec<usize> = parts
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| ModelError::MalformedFile(format!("bad dimension `{t}`")))
        })
        .collect::<Result<_, _>>()?;
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(ModelError::MalformedFile(
            "dims must list at least input and output widths".into(),
        ));
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    use crate::model::{make_blobs, train, TrainConfig};

    #[test]
    fn round_trip_preserves_logits_bit_for_bit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.mlp");
        let data = make_blobs(120, 2, 3, 0.08, 3).unwrap();
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        save_model(&outcome.model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(outcome.model, loaded);
        let probe = data.features();
        let a = outcome.model.forward(probe).unwrap();
        let b = loaded.forward(probe).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.mlp");
        let data = make_blobs(60, 2, 2, 0.08, 3).unwrap();
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        save_model(&outcome.model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelError::MalformedFile(_))
        ));
    }

    #[test]
    fn header_payload_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.mlp");
        // dims say 2 -> 2 (6 params) but we write 4 values.
        let mut bytes = b"mlp 1\ndims 2 2\nactivation relu\nend\n".to_vec();
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelError::MalformedFile(_))
        ));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.mlp");
        let mut bytes = b"mlp 1\ndims 1 2\nactivation relu\nend\n".to_vec();
        for v in [1.0f64, f64::NAN, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelError::NonFiniteParameter)
        ));
    }
}
