//! Checkpoint container.
//!
//! Layout: the magic bytes `DLEN1\n`, one manifest line per parameter
//! (`name \t f32 \t <space-separated shape> \t <byte offset> \t <byte length>`),
//! an empty line, then the concatenated little-endian `f32` payloads. Offsets
//! are relative to the start of the payload.

use std::io::Write;
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

pub const MAGIC: &[u8] = b"DLEN1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor,
}

pub fn encode(entries: &[CheckpointEntry]) -> Result<Vec<u8>, NnError> {
    let mut header = Vec::new();
    let mut payload = Vec::new();
    header.extend_from_slice(MAGIC);
    for e in entries {
        if e.name.is_empty() || e.name.contains(['\t', '\n']) {
            return Err(NnError::Checkpoint(format!("invalid parameter name {:?}", e.name)));
        }
        let offset = payload.len();
        for v in e.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let shape: Vec<String> = e.tensor.shape().iter().map(usize::to_string).collect();
        writeln!(
            header,
            "{}\tf32\t{}\t{}\t{}",
            e.name,
            shape.join(" "),
            offset,
            payload.len() - offset
        )
        .expect("write to Vec");
    }
    header.push(b'\n');
    header.extend_from_slice(&payload);
    Ok(header)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, NnError> {
    let bad = |msg: String| NnError::Checkpoint(msg);
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing DLEN1 magic".into()))?;

    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let nl = rest[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated manifest".into()))?;
        let line = &rest[pos..pos + nl];
        pos += nl + 1;
        if line.is_empty() {
            break;
        }
        lines.push(std::str::from_utf8(line).map_err(|_| bad("manifest is not UTF-8".into()))?);
    }
    let payload = &rest[pos..];

    let mut entries = Vec::with_capacity(lines.len());
    let mut expected_offset = 0usize;
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dtype, shape, offset, length] = fields[..] else {
            return Err(bad(format!("manifest line {} has {} fields", i + 1, fields.len())));
        };
        if dtype != "f32" {
            return Err(bad(format!("{name}: unsupported dtype {dtype}")));
        }
        let shape: Vec<usize> = shape
            .split(' ')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("{name}: bad shape {shape:?}")))?;
        let offset: usize = offset.parse().map_err(|_| bad(format!("{name}: bad offset")))?;
        let length: usize = length.parse().map_err(|_| bad(format!("{name}: bad length")))?;
        let count: usize = shape.iter().product();
        if offset != expected_offset || length != count * 4 || offset + length > payload.len() {
            return Err(bad(format!("{name}: inconsistent offset/length")));
        }
        expected_offset += length;
        let data = payload[offset..offset + length]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(CheckpointEntry {
            name: name.to_string(),
            tensor: Tensor::new(shape, data)?,
        });
    }
    if expected_offset != payload.len() {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok(entries)
}

pub fn entries_from_store(store: &ParamStore) -> Vec<CheckpointEntry> {
    store
        .iter()
        .map(|p| CheckpointEntry {
            name: p.name.clone(),
            tensor: p.value.clone(),
        })
        .collect()
}

pub fn save(path: &Path, store: &ParamStore) -> Result<(), NnError> {
    let bytes = encode(&entries_from_store(store))?;
    std::fs::write(path, bytes).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Vec<CheckpointEntry>, NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Copies checkpoint values into `store`. The manifest must name exactly the
/// store's parameters with the same shapes.
pub fn restore(store: &mut ParamStore, entries: &[CheckpointEntry]) -> Result<(), NnError> {
    if entries.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", e.name)))?;
        if store.get(id).value.shape() != e.tensor.shape() {
            return Err(NnError::Checkpoint(format!(
                "{}: shape {:?} in checkpoint, {:?} in model",
                e.name,
                e.tensor.shape(),
                store.get(id).value.shape()
            )));
        }
        store.get_mut(id).value = e.tensor.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::normal_tensor;
    use proptest::prelude::*;

    #[test]
    fn layout_is_as_documented() {
        let entries = vec![
            CheckpointEntry {
                name: "w".into(),
                tensor: Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap(),
            },
            CheckpointEntry {
                name: "b".into(),
                tensor: Tensor::vector(vec![0.5]).unwrap(),
            },
        ];
        let bytes = encode(&entries).unwrap();
        let header = b"DLEN1\nw\tf32\t2 1\t0\t8\nb\tf32\t1\t8\t4\n\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), header.len() + 12);
    }

    #[test]
    fn rejects_truncated_and_mismatched() {
        let mut s = ParamStore::new();
        s.add("w", normal_tensor(&[3, 2], 1.0, 4)).unwrap();
        let bytes = encode(&entries_from_store(&s)).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[1..]).is_err());

        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(restore(&mut other, &decode(&bytes).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(-1e30f32..1e30f32, 1..40),
            split in 1usize..40,
        ) {
            let split = split.min(values.len());
            let (a, b) = values.split_at(split);
            let mut entries = vec![CheckpointEntry {
                name: "first.weight".into(),
                tensor: Tensor::vector(a.to_vec()).unwrap(),
            }];
            if !b.is_empty() {
                entries.push(CheckpointEntry {
                    name: "second".into(),
                    tensor: Tensor::vector(b.to_vec()).unwrap(),
                });
            }
            let decoded = decode(&encode(&entries).unwrap()).unwrap();
            prop_assert_eq!(decoded.len(), entries.len());
            for (d, e) in decoded.iter().zip(&entries) {
                prop_assert_eq!(&d.name, &e.name);
                let lhs: Vec<u32> = d.tensor.data().iter().map(|v| v.to_bits()).collect();
                let rhs: Vec<u32> = e.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
