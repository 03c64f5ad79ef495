//! Segment matrix assembly and per-flow cluster-presence encoding.

use crate::error::{Error, Result};

/// One row of the clustering input, tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRow {
    pub flow: usize,
    /// 1-based segment index within the flow.
    pub segment: usize,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for SegmentRow {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Concatenates standardized segment statistics with the behavior embeddings
/// of the non-empty segments of every flow.
///
/// `tf[f]` holds one row per segment (empty ones included); `be[f]` holds one
/// embedding per non-empty segment, in order; `empty[f]` marks the gaps.
pub fn build_segment_matrix(
    tf: &[Vec<Vec<f64>>],
    be: &[Vec<Vec<f64>>],
    empty: &[Vec<bool>],
) -> Result<Vec<SegmentRow>> {
    if tf.len() != be.len() || tf.len() != empty.len() {
        return Err(Error::AlignmentError(format!(
            "{} statistic blocks, {} embedding blocks, {} masks",
            tf.len(),
            be.len(),
            empty.len()
        )));
    }
    let mut rows = Vec::new();
    for (f, ((stats, embeds), mask)) in tf.iter().zip(be).zip(empty).enumerate() {
        if stats.len() != mask.len() {
            return Err(Error::AlignmentError(format!(
                "flow {f}: {} segment rows but {} mask entries",
                stats.len(),
                mask.len()
            )));
        }
        let non_empty = mask.iter().filter(|e| !**e).count();
        if embeds.len() != non_empty {
            return Err(Error::AlignmentError(format!(
                "flow {f}: {} embeddings for {non_empty} non-empty segments",
                embeds.len()
            )));
        }
        let mut next_embed = embeds.iter();
        for (s, (row, is_empty)) in stats.iter().zip(mask).enumerate() {
            if *is_empty {
                continue;
            }
            let e = next_embed.next().unwrap();
            let mut values = Vec::with_capacity(row.len() + e.len());
            values.extend_from_slice(row);
            values.extend_from_slice(e);
            rows.push(SegmentRow {
                flow: f,
                segment: s + 1,
                values,
            });
        }
    }
    Ok(rows)
}

/// Multi-hot presence vector of dimension `k + 1`: bit `c` is set when some
/// segment of the flow fell in cluster `c`; bit `k` marks an empty segment.
pub fn encode_flow(clusters: &[usize], had_empty: bool, k: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; k + 1];
    for &c in clusters {
        if c >= k {
            return Err(Error::IndexOutOfRange { index: c, bound: k });
        }
        v[c] = 1.0;
    }
    if had_empty {
        v[k] = 1.0;
    }
    Ok(v)
}

/// Column names for the presence vector.
pub fn presence_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|c| format!("cluster_{c}"))
        .chain(std::iter::once("cluster_empty".to_string()))
        .collect()
}
