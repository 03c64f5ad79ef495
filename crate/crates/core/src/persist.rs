//! Artifact container.
//!
//! A trained pipeline is stored as one text file: a `#`-prefixed header line
//! naming the format version and config hash, followed by a JSON document.
//! Dense numeric arrays inside the document are encoded as base64 blocks of
//! little-endian `f64` values, each carrying its length and a SHA-256 digest
//! that is verified on load.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `#[serde(with = "crate::persist::block")]` for `Vec<f64>` fields.
pub mod block {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::sha256_hex;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Block {
        len: usize,
        sha256: String,
        data: String,
    }

    pub fn encode(values: &[f64]) -> (String, String) {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        (STANDARD.encode(&bytes), sha256_hex(&bytes))
    }

    pub fn decode(data: &str, len: usize, sha256: &str) -> Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(data).map_err(|e| format!("bad base64 block: {e}"))?;
        if bytes.len() != len * 8 {
            return Err(format!("block holds {} bytes, header says {len} values", bytes.len()));
        }
        if sha256_hex(&bytes) != sha256 {
            return Err("block checksum mismatch".to_string());
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let (data, sha256) = encode(values);
        Block {
            len: values.len(),
            sha256,
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let b = Block::deserialize(d)?;
        decode(&b.data, b.len, &b.sha256).map_err(D::Error::custom)
    }
}

/// Same encoding for row-major matrices stored as `Vec<Vec<f64>>`.
pub mod matrix {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct MatrixBlock {
        rows: usize,
        cols: usize,
        sha256: String,
        data: String,
    }

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let cols = m.first().map_or(0, Vec::len);
        let flat: Vec<f64> = m.iter().flatten().copied().collect();
        let (data, sha256) = super::block::encode(&flat);
        MatrixBlock {
            rows: m.len(),
            cols,
            sha256,
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let b = MatrixBlock::deserialize(d)?;
        let flat = super::block::decode(&b.data, b.rows * b.cols, &b.sha256).map_err(D::Error::custom)?;
        if b.cols == 0 {
            return Ok(vec![Vec::new(); b.rows]);
        }
        Ok(flat.chunks_exact(b.cols).map(<[f64]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "super::block")]
        v: Vec<f64>,
        #[serde(with = "super::matrix")]
        m: Vec<Vec<f64>>,
    }

    #[test]
    fn blocks_round_trip_bit_exactly() {
        let h = Holder {
            v: vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, 1.0 / 3.0],
            m: vec![vec![1.0, 2.0], vec![3.0, 4.5]],
        };
        let text = serde_json::to_string(&h).unwrap();
        let back: Holder = serde_json::from_str(&text).unwrap();
        assert_eq!(back, h);
        assert!(back.v[1].is_sign_negative());
    }

    #[test]
    fn corrupted_block_is_rejected() {
        let h = Holder {
            v: vec![1.0, 2.0],
            m: vec![],
        };
        let text = serde_json::to_string(&h).unwrap();
        let (data, _) = super::block::encode(&[1.0, 2.0]);
        let (other, _) = super::block::encode(&[1.0, 2.5]);
        let bad = text.replace(&data, &other);
        let err = serde_json::from_str::<Holder>(&bad).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }
}
