//! Flow-level and segment-level feature extraction, plus column standardization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorState;
use crate::error::{Error, Result};
use crate::flow::{Direction, Flow, Segment};
use crate::pcap::ParsedPacket;

/// Statistical feature dimension (flow level and per segment).
pub const STAT_DIM: usize = 16;
/// Behavioral count dimension: 14 states and ZERO, each per direction.
pub const BEHAVIOR_DIM: usize = 2 * (BehaviorState::COUNT + 1);

pub const STAT_FEATURE_NAMES: [&str; STAT_DIM] = [
    "packet_count_send",
    "packet_count_recv",
    "count_ratio",
    "size_sum_send",
    "size_sum_recv",
    "size_mean_send",
    "size_mean_recv",
    "size_std_send",
    "size_std_recv",
    "size_sum_ratio",
    "size_range_send",
    "size_range_recv",
    "iat_mean_send",
    "iat_mean_recv",
    "iat_std_send",
    "iat_std_recv",
];

pub type StatVector = [f64; STAT_DIM];
pub type BehaviorVector = [f64; BEHAVIOR_DIM];

/// Column names of the behavior vector: `<state>_send, <state>_recv` pairs, ZERO last.
pub fn behavior_feature_names() -> Vec<String> {
    BehaviorState::ALL
        .iter()
        .map(|s| s.short_name())
        .chain(std::iter::once("ZERO"))
        .flat_map(|n| [format!("{n}_send"), format!("{n}_recv")])
        .collect()
}

/// Column of a behavior count, given the code slot (0..=14) and direction.
pub fn behavior_column(slot: usize, dir: Direction) -> usize {
    2 * slot + usize::from(dir == Direction::Recv)
}

#[derive(Default)]
struct DirStats {
    count: usize,
    sizes: Vec<f64>,
    last_ts: Option<f64>,
    gaps: Vec<f64>,
}

impl DirStats {
    fn push(&mut self, p: &ParsedPacket) {
        self.count += 1;
        self.sizes.push(p.payload_len as f64);
        if let Some(prev) = self.last_ts {
            self.gaps.push(p.timestamp - prev);
        }
        self.last_ts = Some(p.timestamp);
    }
}

/// Population mean and standard deviation; (0, 0) for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn range(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    if xs.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// The sixteen statistics over any packet subsequence of a flow.
pub fn stat_features(flow: &Flow, packets: &[ParsedPacket]) -> StatVector {
    let mut send = DirStats::default();
    let mut recv = DirStats::default();
    for p in packets {
        match flow.direction(p) {
            Direction::Send => send.push(p),
            Direction::Recv => recv.push(p),
        }
    }
    let (size_mean_s, size_std_s) = mean_std(&send.sizes);
    let (size_mean_r, size_std_r) = mean_std(&recv.sizes);
    let (iat_mean_s, iat_std_s) = mean_std(&send.gaps);
    let (iat_mean_r, iat_std_r) = mean_std(&recv.gaps);
    let sum_s: f64 = send.sizes.iter().sum();
    let sum_r: f64 = recv.sizes.iter().sum();
    [
        send.count as f64,
        recv.count as f64,
        send.count as f64 / (recv.count.max(1)) as f64,
        sum_s,
        sum_r,
        size_mean_s,
        size_mean_r,
        size_std_s,
        size_std_r,
        sum_s / sum_r.max(1.0),
        range(&send.sizes),
        range(&recv.sizes),
        iat_mean_s,
        iat_mean_r,
        iat_std_s,
        iat_std_r,
    ]
}

/// Whole-flow statistical vector.
pub fn flow_features(flow: &Flow) -> StatVector {
    stat_features(flow, &flow.packets)
}

/// Per-direction behavior-code counts.
pub fn behavior_counts(flow: &Flow, packets: &[ParsedPacket]) -> BehaviorVector {
    let mut v = [0.0; BEHAVIOR_DIM];
    for p in packets {
        v[behavior_column(p.behavior_code.slot(), flow.direction(p))] += 1.0;
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub stats: StatVector,
    pub behavior: BehaviorVector,
    pub empty: bool,
}

pub fn segment_features(flow: &Flow, segment: &Segment<'_>) -> SegmentFeatures {
    if segment.is_empty() {
        return SegmentFeatures {
            stats: [0.0; STAT_DIM],
            behavior: [0.0; BEHAVIOR_DIM],
            empty: true,
        };
    }
    SegmentFeatures {
        stats: stat_features(flow, segment.packets),
        behavior: behavior_counts(flow, segment.packets),
        empty: false,
    }
}

/// Features of one flow at both levels of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub flow: StatVector,
    pub segments: Vec<SegmentFeatures>,
}

impl FeatureBundle {
    pub fn empty_mask(&self) -> Vec<bool> {
        self.segments.iter().map(|s| s.empty).collect()
    }
}

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "crate::persist::block")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::persist::block")]
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("standardizer needs at least one row"))?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / if *s > 0.0 { *s } else { 1.0 })
            .collect())
    }

    pub fn apply<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply_row(r.as_ref())).collect()
    }
}

/// Writes a delimited table with a header row; the first column is a row id.
pub fn write_feature_table<W: Write, R: AsRef<[f64]>>(
    out: &mut W,
    id_column: &str,
    names: &[String],
    rows: &[(String, R)],
) -> Result<()> {
    write!(out, "{id_column}")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    writeln!(out)?;
    for (id, row) in rows {
        let row = row.as_ref();
        if row.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                got: row.len(),
            });
        }
        write!(out, "{id}")?;
        for x in row {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
