//! Bidirectional flow assembly, long-connection filtering and time segmentation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pcap::ParsedPacket;

pub const PROTO_TCP: u8 = 6;

/// The three terminal classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerminalType {
    #[serde(rename = "LVRC")]
    Lvrc,
    #[serde(rename = "TTU")]
    Ttu,
    #[serde(rename = "LMT")]
    Lmt,
}

impl TerminalType {
    pub const ALL: [TerminalType; 3] = [TerminalType::Lvrc, TerminalType::Ttu, TerminalType::Lmt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerminalType::Lvrc => "LVRC",
            TerminalType::Ttu => "TTU",
            TerminalType::Lmt => "LMT",
        }
    }
}

impl fmt::Display for TerminalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerminalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LVRC" => Ok(TerminalType::Lvrc),
            "TTU" => Ok(TerminalType::Ttu),
            "LMT" => Ok(TerminalType::Lmt),
            other => Err(Error::Parse(format!("unknown terminal type `{other}`"))),
        }
    }
}

/// An (address, port) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Direction-free five-tuple: the lower endpoint always comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, protocol: u8) -> Self {
        if x <= y {
            Self { a: x, b: y, protocol }
        } else {
            Self { a: y, b: x, protocol }
        }
    }

    pub fn of(p: &ParsedPacket) -> Self {
        Self::new(
            Endpoint { ip: p.src_ip, port: p.src_port },
            Endpoint { ip: p.dst_ip, port: p.dst_port },
            PROTO_TCP,
        )
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Send,
    Recv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    /// Endpoint whose packets count as "sent".
    pub initiator: Endpoint,
    /// Time-ordered; ties keep arrival order.
    pub packets: Vec<ParsedPacket>,
    pub label: Option<TerminalType>,
}

impl Flow {
    pub fn id(&self) -> String {
        self.key.to_string()
    }

    pub fn start_ts(&self) -> f64 {
        self.packets[0].timestamp
    }

    pub fn end_ts(&self) -> f64 {
        self.packets[self.packets.len() - 1].timestamp
    }

    pub fn duration(&self) -> f64 {
        self.end_ts() - self.start_ts()
    }

    pub fn direction(&self, p: &ParsedPacket) -> Direction {
        if p.src_ip == self.initiator.ip && p.src_port == self.initiator.port {
            Direction::Send
        } else {
            Direction::Recv
        }
    }

    pub fn saw_syn(&self) -> bool {
        self.packets.iter().any(|p| p.tcp_flags.is_pure_syn())
    }

    pub fn saw_close(&self) -> bool {
        self.packets.iter().any(|p| p.tcp_flags.closes())
    }
}

/// Groups packets into one flow per bidirectional five-tuple.
///
/// Output is ordered by flow key, so the result does not depend on input order
/// except through the ordering of packets with identical timestamps.
pub fn assemble_flows<I, L>(packets: I, labeler: L) -> Vec<Flow>
where
    I: IntoIterator<Item = ParsedPacket>,
    L: Fn(&FlowKey) -> Option<TerminalType>,
{
    let mut groups: BTreeMap<FlowKey, Vec<ParsedPacket>> = BTreeMap::new();
    for p in packets {
        groups.entry(FlowKey::of(&p)).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(key, mut packets)| {
            packets.sort_by(|x, y| x.timestamp.total_cmp(&y.timestamp));
            let opener = packets
                .iter()
                .find(|p| p.tcp_flags.is_pure_syn())
                .unwrap_or(&packets[0]);
            let initiator = Endpoint {
                ip: opener.src_ip,
                port: opener.src_port,
            };
            let label = labeler(&key);
            Flow {
                key,
                initiator,
                packets,
                label,
            }
        })
        .collect()
}

/// Terminal address → class, read from `ip<TAB>class` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    by_ip: HashMap<Ipv4Addr, TerminalType>,
}

impl LabelMap {
    pub fn insert(&mut self, ip: Ipv4Addr, label: TerminalType) {
        self.by_ip.insert(ip, label);
    }

    pub fn get(&self, ip: &Ipv4Addr) -> Option<TerminalType> {
        self.by_ip.get(ip).copied()
    }

    pub fn len(&self) -> usize {
        self.by_ip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_ip.is_empty()
    }

    pub fn label_flow(&self, key: &FlowKey) -> Option<TerminalType> {
        self.get(&key.a.ip).or_else(|| self.get(&key.b.ip))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = LabelMap::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(ip), Some(class), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse(format!("label map line {}: expected `ip<TAB>type`", lineno + 1)));
            };
            let ip: Ipv4Addr = ip
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("label map line {}: bad address `{ip}`", lineno + 1)))?;
            map.insert(ip, class.parse()?);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<_> = self.by_ip.iter().collect();
        rows.sort();
        rows.iter().map(|(ip, t)| format!("{ip}\t{t}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub long: usize,
    pub short: usize,
    pub long_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<Flow>,
    pub dropped: Vec<Flow>,
    pub stats: FilterStats,
}

/// A flow is short when it both opens and closes inside the capture, or when
/// it lasts less than `min(min_duration, observation_window)`. Everything else
/// is a long connection and is kept.
pub fn filter_long_connections(flows: Vec<Flow>, min_duration: f64, observation_window: f64) -> FilterOutcome {
    let floor = min_duration.min(observation_window);
    let total = flows.len();
    let (kept, dropped): (Vec<Flow>, Vec<Flow>) = flows
        .into_iter()
        .partition(|f| !((f.saw_syn() && f.saw_close()) || f.duration() < floor));
    let long = kept.len();
    FilterOutcome {
        stats: FilterStats {
            total,
            long,
            short: dropped.len(),
            long_fraction: if total == 0 { 0.0 } else { long as f64 / total as f64 },
        },
        kept,
        dropped,
    }
}

/// Shared clock grid of `count` windows of width `tau` starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentGrid {
    pub origin: f64,
    pub tau: f64,
    pub count: usize,
}

/// Number of τ-windows needed to cover an observation window.
pub fn segment_count(observation_window: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !(observation_window > 0.0) {
        return Err(Error::InvalidParams(format!(
            "window {observation_window} and tau {tau} must be positive"
        )));
    }
    Ok(((observation_window / tau) - 1e-9).ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<'a> {
    /// 1-based.
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub packets: &'a [ParsedPacket],
}

impl Segment<'_> {
    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation<'a> {
    pub segments: Vec<Segment<'a>>,
    /// Packets that fell outside the grid and were clamped into the first or last window.
    pub clamped: usize,
}

impl SegmentGrid {
    pub fn new(origin: f64, tau: f64, count: usize) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParams(format!("segment length must be positive, got {tau}")));
        }
        if count == 0 {
            return Err(Error::InvalidParams("segment count must be at least 1".into()));
        }
        Ok(Self { origin, tau, count })
    }

    /// 0-based window of a timestamp, and whether it had to be clamped.
    pub fn locate(&self, ts: f64) -> (usize, bool) {
        let raw = ((ts - self.origin) / self.tau).floor();
        if raw < 0.0 {
            (0, true)
        } else if raw >= self.count as f64 {
            (self.count - 1, true)
        } else {
            (raw as usize, false)
        }
    }

    /// Splits a time-ordered flow into exactly `count` windows (half-open; a
    /// packet on a boundary goes to the later window).
    pub fn segment<'a>(&self, flow: &'a Flow) -> Segmentation<'a> {
        let mut bounds = vec![0usize; self.count + 1];
        let mut clamped = 0;
        let mut counts = vec![0usize; self.count];
        for p in &flow.packets {
            let (i, c) = self.locate(p.timestamp);
            counts[i] += 1;
            clamped += c as usize;
        }
        for i in 0..self.count {
            bounds[i + 1] = bounds[i] + counts[i];
        }
        let segments = (0..self.count)
            .map(|i| Segment {
                index: i + 1,
                start: self.origin + i as f64 * self.tau,
                end: self.origin + (i + 1) as f64 * self.tau,
                packets: &flow.packets[bounds[i]..bounds[i + 1]],
            })
            .collect();
        Segmentation { segments, clamped }
    }
}

/// Convenience wrapper over [`SegmentGrid::segment`].
pub fn segment_flow<'a>(flow: &'a Flow, origin: f64, tau: f64, count: usize) -> Result<Segmentation<'a>> {
    Ok(SegmentGrid::new(origin, tau, count)?.segment(flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehaviorCode;
    use crate::pcap::TcpFlags;

    fn pkt(ts: f64, src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16) -> ParsedPacket {
        ParsedPacket {
            timestamp: ts,
            src_ip: src.into(),
            dst_ip: dst.into(),
            src_port: sport,
            dst_port: dport,
            payload_len: 10,
            tcp_flags: TcpFlags::ACK,
            behavior_code: BehaviorCode::Zero,
        }
    }

    const A: [u8; 4] = [10, 1, 0, 5];
    const B: [u8; 4] = [10, 0, 0, 1];

    #[test]
    fn bidirectional_merge() {
        let ps = vec![pkt(0.0, A, 5000, B, 80), pkt(1.0, B, 80, A, 5000), pkt(2.0, A, 5000, B, 80)];
        let flows = assemble_flows(ps, |_| None);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].packets.len(), 3);
        assert_eq!(flows[0].initiator, Endpoint { ip: A.into(), port: 5000 });
    }

    #[test]
    fn different_ports_are_different_flows() {
        let ps = vec![pkt(0.0, A, 5000, B, 80), pkt(1.0, A, 5001, B, 80)];
        assert_eq!(assemble_flows(ps, |_| None).len(), 2);
    }

    #[test]
    fn syn_sender_is_initiator_even_if_not_first() {
        let mut syn = pkt(1.0, A, 5000, B, 80);
        syn.tcp_flags = TcpFlags::SYN;
        let ps = vec![pkt(0.5, B, 80, A, 5000), syn];
        let flows = assemble_flows(ps, |_| None);
        assert_eq!(flows[0].initiator.ip, Ipv4Addr::from(A));
    }

    #[test]
    fn out_of_order_packets_are_sorted() {
        let ordered: Vec<_> = (0..20).map(|i| pkt(i as f64 * 3.5, A, 5000, B, 80)).collect();
        let mut shuffled = ordered.clone();
        shuffled.reverse();
        shuffled.swap(3, 11);
        let flows = assemble_flows(shuffled, |_| None);
        assert_eq!(flows[0].packets, ordered);
    }

    #[test]
    fn label_map_parsing() {
        let m = LabelMap::parse("# terminals\n10.1.0.5\tTTU\n10.1.0.6\tlvrc\n").unwrap();
        assert_eq!(m.len(), 2);
        let key = FlowKey::of(&pkt(0.0, A, 5000, B, 80));
        assert_eq!(m.label_flow(&key), Some(TerminalType::Ttu));
        assert!(LabelMap::parse("10.1.0.5 TTU\n").is_err());
        assert!(LabelMap::parse("10.1.0.5\tXYZ\n").is_err());
    }

    fn flow_of(ps: Vec<ParsedPacket>) -> Flow {
        assemble_flows(ps, |_| None).remove(0)
    }

    #[test]
    fn full_window_without_syn_is_long() {
        let f = flow_of(vec![pkt(0.0, A, 1, B, 2), pkt(3599.0, B, 2, A, 1)]);
        let out = filter_long_connections(vec![f], 600.0, 3600.0);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.stats.long_fraction, 1.0);
    }

    #[test]
    fn short_handshake_flow_is_dropped() {
        let mut syn = pkt(100.0, A, 1, B, 2);
        syn.tcp_flags = TcpFlags::SYN;
        let mut fin = pkt(104.0, A, 1, B, 2);
        fin.tcp_flags = TcpFlags::FIN | TcpFlags::ACK;
        let f = flow_of(vec![syn, pkt(102.0, B, 2, A, 1), fin]);
        let out = filter_long_connections(vec![f], 600.0, 3600.0);
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.stats.long, 0);
    }

    #[test]
    fn grid_covers_an_hour_in_twelve_windows() {
        assert_eq!(segment_count(3600.0, 300.0).unwrap(), 12);
        assert_eq!(segment_count(3601.0, 300.0).unwrap(), 13);
        assert!(segment_count(3600.0, 0.0).is_err());
    }

    #[test]
    fn segment_assignment_and_boundaries() {
        let f = flow_of(vec![
            pkt(0.0, A, 1, B, 2),
            pkt(300.0, A, 1, B, 2),
            pkt(305.0, A, 1, B, 2),
            pkt(900.0, A, 1, B, 2),
        ]);
        let s = segment_flow(&f, 0.0, 300.0, 12).unwrap();
        assert_eq!(s.segments.len(), 12);
        assert_eq!(s.segments[0].packets.len(), 1);
        // t = 300 and t = 305 both land in segment 2
        assert_eq!(s.segments[1].index, 2);
        assert_eq!(s.segments[1].packets.len(), 2);
        assert!(s.segments[2].is_empty());
        assert_eq!(s.segments[3].packets.len(), 1);
        assert_eq!(s.clamped, 0);
    }

    #[test]
    fn late_packets_are_clamped_into_last_window() {
        let f = flow_of(vec![pkt(10.0, A, 1, B, 2), pkt(3600.0, A, 1, B, 2), pkt(4000.0, A, 1, B, 2)]);
        let s = segment_flow(&f, 0.0, 300.0, 12).unwrap();
        assert_eq!(s.segments[11].packets.len(), 2);
        assert_eq!(s.clamped, 2);
    }

    #[test]
    fn invalid_grid_params() {
        let f = flow_of(vec![pkt(0.0, A, 1, B, 2)]);
        assert!(matches!(segment_flow(&f, 0.0, 0.0, 12), Err(Error::InvalidParams(_))));
        assert!(matches!(segment_flow(&f, 0.0, -5.0, 12), Err(Error::InvalidParams(_))));
        assert!(matches!(segment_flow(&f, 0.0, 300.0, 0), Err(Error::InvalidParams(_))));
    }
}
