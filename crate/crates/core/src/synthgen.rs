//! Deterministic labeled traffic for the three terminal archetypes.
//!
//! Every flow is one TCP conversation between its own terminal address and a
//! shared master station. Randomness comes from ChaCha8 seeded with the master
//! seed, with the flow id selecting the stream (`set_stream(flow_id)`), so a
//! flow's packets depend only on `(seed, flow_id, config)`.
//!
//! Long flows carry no handshake and span several segments. Short flows open
//! with a SYN, close with a FIN and last at most a few minutes. Payloads are
//! the behavior byte at the table offset followed by zero filler; pure ACKs
//! carry no payload.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorCategory, BehaviorCode, BehaviorCodeTable, BehaviorState};
use crate::error::{Error, Result};
use crate::flow::{segment_count, LabelMap, SegmentGrid, TerminalType};
use crate::pcap::{build_tcp_frame, CaptureWriter, TcpFlags, TcpSegmentSpec, LINKTYPE_ETHERNET};

const MICROS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionProfile {
    pub size_mean: f64,
    pub size_std: f64,
    pub size_min: u32,
    pub size_max: u32,
    /// Probability of each behavior state, in canonical state order.
    pub mixture: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeProfile {
    pub name: TerminalType,
    /// Active 1-based segments of a long flow.
    pub schedule: Vec<usize>,
    /// Packets per active segment: mean and standard deviation.
    pub rate_mean: f64,
    pub rate_jitter: f64,
    /// Fraction of packets sent by the terminal.
    pub send_ratio: f64,
    /// Fraction of packets that are bare ACKs.
    pub ack_fraction: f64,
    pub send: DirectionProfile,
    pub recv: DirectionProfile,
}

/// Spreads `mass` evenly over the states of `dominant` and the rest evenly
/// over the remaining states.
pub fn category_mixture(dominant: &[BehaviorCategory], mass: f64) -> Vec<f64> {
    let inside = BehaviorState::ALL
        .iter()
        .filter(|s| dominant.contains(&s.category()))
        .count();
    let outside = BehaviorState::COUNT - inside;
    BehaviorState::ALL
        .iter()
        .map(|s| {
            if dominant.contains(&s.category()) {
                mass / inside as f64
            } else if outside == 0 {
                0.0
            } else {
                (1.0 - mass) / outside as f64
            }
        })
        .collect()
}

fn direction(mean: f64, std: f64, min: u32, max: u32, mixture: &[f64]) -> DirectionProfile {
    DirectionProfile {
        size_mean: mean,
        size_std: std,
        size_min: min,
        size_max: max,
        mixture: mixture.to_vec(),
    }
}

fn dominant(t: TerminalType) -> Vec<f64> {
    use BehaviorCategory::*;
    match t {
        TerminalType::Lvrc => category_mixture(&[Read], 0.85),
        TerminalType::Ttu => category_mixture(&[Transport], 0.85),
        TerminalType::Lmt => category_mixture(&[Write, Test], 0.85),
    }
}

impl ArchetypeProfile {
    /// Distinct rhythms at both levels: LVRC reads in bursts every third
    /// segment, TTU reports steadily, LMT exchanges a few large commands.
    pub fn easy(t: TerminalType) -> Self {
        let mix = dominant(t);
        match t {
            TerminalType::Lvrc => Self {
                name: t,
                schedule: vec![1, 4, 7, 10],
                rate_mean: 40.0,
                rate_jitter: 6.0,
                send_ratio: 0.45,
                ack_fraction: 0.1,
                send: direction(180.0, 40.0, 16, 400, &mix),
                recv: direction(60.0, 15.0, 8, 160, &mix),
            },
            TerminalType::Ttu => Self {
                name: t,
                schedule: (1..=12).collect(),
                rate_mean: 10.0,
                rate_jitter: 2.0,
                send_ratio: 0.7,
                ack_fraction: 0.1,
                send: direction(110.0, 20.0, 16, 240, &mix),
                recv: direction(40.0, 10.0, 8, 120, &mix),
            },
            TerminalType::Lmt => Self {
                name: t,
                schedule: vec![3, 9],
                rate_mean: 12.0,
                rate_jitter: 3.0,
                send_ratio: 0.5,
                ack_fraction: 0.1,
                send: direction(320.0, 80.0, 16, 800, &mix),
                recv: direction(48.0, 12.0, 8, 160, &mix),
            },
        }
    }

    /// Identical rates and sizes for every class; only the schedule phase and
    /// the behavior mixture inside active segments differ.
    pub fn hard(t: TerminalType) -> Self {
        let mix = dominant(t);
        let phase = t.index() + 1;
        Self {
            name: t,
            schedule: (phase..=12).step_by(3).collect(),
            rate_mean: 20.0,
            rate_jitter: 4.0,
            send_ratio: 0.5,
            ack_fraction: 0.1,
            send: direction(150.0, 40.0, 8, 400, &mix),
            recv: direction(60.0, 20.0, 8, 200, &mix),
        }
    }

    pub fn validate(&self, segments: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::BadProfile(format!("{}: {msg}", self.name)));
        if let Some(s) = self.schedule.iter().find(|&&s| s == 0 || s > segments) {
            return bad(format!("segment {s} outside 1..={segments}"));
        }
        if !(self.rate_mean >= 0.0) || !(self.rate_jitter >= 0.0) {
            return bad("packet rate must be non-negative".into());
        }
        for (what, p) in [("send_ratio", self.send_ratio), ("ack_fraction", self.ack_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{what} {p} outside [0, 1]"));
            }
        }
        for d in [&self.send, &self.recv] {
            if d.size_min > d.size_max || !(d.size_std >= 0.0) || !d.size_mean.is_finite() {
                return bad(format!("size distribution {d:?}"));
            }
            if d.mixture.len() != BehaviorState::COUNT || d.mixture.iter().any(|w| !(*w >= 0.0)) {
                return bad("mixture needs 14 non-negative weights".into());
            }
            if (d.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return bad("mixture must sum to 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub flows_per_class: usize,
    /// Capture length in seconds.
    pub duration: f64,
    pub tau: f64,
    /// Share of each class generated as long connections.
    pub long_fraction: f64,
    pub hard_mode: bool,
    /// Capture start, seconds since the epoch.
    pub start_time: u32,
    pub master_ip: Ipv4Addr,
    pub master_port: u16,
    /// Overrides the built-in archetypes when present.
    pub profiles: Option<Vec<ArchetypeProfile>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            flows_per_class: 200,
            duration: 3600.0,
            tau: 300.0,
            long_fraction: 0.86,
            hard_mode: false,
            start_time: 1_700_000_000,
            master_ip: Ipv4Addr::new(10, 0, 0, 1),
            master_port: 2404,
            profiles: None,
        }
    }
}

impl GeneratorConfig {
    pub fn segments(&self) -> Result<usize> {
        segment_count(self.duration, self.tau)
    }

    /// Profiles in class order.
    pub fn resolved_profiles(&self) -> Result<Vec<ArchetypeProfile>> {
        let profiles = match &self.profiles {
            Some(p) => {
                let mut sorted = Vec::new();
                for t in TerminalType::ALL {
                    let found: Vec<_> = p.iter().filter(|x| x.name == t).collect();
                    if found.len() != 1 {
                        return Err(Error::BadProfile(format!("expected exactly one profile for {t}")));
                    }
                    sorted.push(found[0].clone());
                }
                sorted
            }
            None if self.hard_mode => TerminalType::ALL.map(ArchetypeProfile::hard).to_vec(),
            None => TerminalType::ALL.map(ArchetypeProfile::easy).to_vec(),
        };
        let l = self.segments()?;
        for p in &profiles {
            p.validate(l)?;
        }
        Ok(profiles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flows_per_class == 0 {
            return Err(Error::InvalidParams("flows_per_class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.long_fraction) {
            return Err(Error::InvalidParams(format!("long_fraction {} outside [0, 1]", self.long_fraction)));
        }
        if !(self.duration > self.tau) || self.duration > 86_400.0 * 30.0 {
            return Err(Error::InvalidParams(format!(
                "duration {} must exceed tau {} and stay under 30 days",
                self.duration, self.tau
            )));
        }
        self.resolved_profiles().map(|_| ())
    }

    /// Long flows per class.
    pub fn long_per_class(&self) -> usize {
        (self.long_fraction * self.flows_per_class as f64).round() as usize
    }
}

/// One packet of a generated flow, before framing.
#[derive(Debug, Clone, PartialEq)]
pub struct GenPacket {
    /// Microseconds after capture start.
    pub offset_us: u64,
    pub from_terminal: bool,
    pub flags: TcpFlags,
    pub payload_len: u32,
    pub state: BehaviorCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEndpoints {
    pub terminal_ip: Ipv4Addr,
    pub terminal_port: u16,
    pub master_ip: Ipv4Addr,
    pub master_port: u16,
}

fn draw_size(d: &DirectionProfile, floor: u32, rng: &mut ChaCha8Rng) -> u32 {
    let n = Normal::new(d.size_mean, d.size_std.max(1e-12)).expect("validated std");
    let lo = d.size_min.max(floor);
    let hi = d.size_max.max(lo);
    (n.sample(rng).round().max(0.0) as u32).clamp(lo, hi)
}

fn draw_count(profile: &ArchetypeProfile, scale: f64, rng: &mut ChaCha8Rng) -> usize {
    let n = Normal::new(profile.rate_mean * scale, (profile.rate_jitter * scale).max(1e-12)).expect("validated");
    n.sample(rng).round().max(1.0) as usize
}

fn data_packet(
    profile: &ArchetypeProfile,
    offset_us: u64,
    from_terminal: bool,
    table: &BehaviorCodeTable,
    rng: &mut ChaCha8Rng,
) -> GenPacket {
    if rng.random::<f64>() < profile.ack_fraction {
        return GenPacket {
            offset_us,
            from_terminal,
            flags: TcpFlags::ACK,
            payload_len: 0,
            state: BehaviorCode::Zero,
        };
    }
    let d = if from_terminal { &profile.send } else { &profile.recv };
    let pick = WeightedIndex::new(&d.mixture).expect("validated mixture");
    let state = BehaviorState::ALL[pick.sample(rng)];
    GenPacket {
        offset_us,
        from_terminal,
        flags: TcpFlags::PSH | TcpFlags::ACK,
        payload_len: draw_size(d, table.offset() as u32 + 1, rng),
        state: BehaviorCode::State(state),
    }
}

/// Packets of one flow, sorted by time. `long` selects a scheduled long
/// connection; otherwise a short SYN..FIN exchange is produced. A long flow
/// with an empty schedule still gets one keepalive.
pub fn generate_flow(
    profile: &ArchetypeProfile,
    cfg: &GeneratorConfig,
    long: bool,
    table: &BehaviorCodeTable,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GenPacket>> {
    let l = cfg.segments()?;
    profile.validate(l)?;
    let end_us = (cfg.duration * MICROS) as u64;
    let tau_us = (cfg.tau * MICROS) as u64;
    let mut out = Vec::new();
    if long {
        for &s in &profile.schedule {
            let lo = (s as u64 - 1) * tau_us;
            let hi = (s as u64 * tau_us).min(end_us);
            for _ in 0..draw_count(profile, 1.0, rng) {
                let t = rng.random_range(lo..hi);
                let from_terminal = rng.random::<f64>() < profile.send_ratio;
                out.push(data_packet(profile, t, from_terminal, table, rng));
            }
        }
        if out.is_empty() {
            out.push(GenPacket {
                offset_us: rng.random_range(0..end_us),
                from_terminal: true,
                flags: TcpFlags::ACK,
                payload_len: 0,
                state: BehaviorCode::Zero,
            });
        }
        out.sort_by_key(|p| p.offset_us);
        // the terminal speaks first so it is the initiator
        out[0].from_terminal = true;
    } else {
        let span = rng.random_range((30.0 * MICROS) as u64..(240.0 * MICROS) as u64).min(end_us - 1);
        let start = rng.random_range(0..end_us - span);
        out.push(GenPacket {
            offset_us: start,
            from_terminal: true,
            flags: TcpFlags::SYN,
            payload_len: 0,
            state: BehaviorCode::Zero,
        });
        let mut body: Vec<GenPacket> = (0..draw_count(profile, 0.5, rng))
            .map(|_| {
                let t = rng.random_range(start + 1..start + span);
                let from_terminal = rng.random::<f64>() < profile.send_ratio;
                data_packet(profile, t, from_terminal, table, rng)
            })
            .collect();
        body.sort_by_key(|p| p.offset_us);
        out.extend(body);
        out.push(GenPacket {
            offset_us: start + span,
            from_terminal: true,
            flags: TcpFlags::FIN | TcpFlags::ACK,
            payload_len: 0,
            state: BehaviorCode::Zero,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFlow {
    pub flow_id: usize,
    pub archetype: TerminalType,
    pub terminal_ip: Ipv4Addr,
    pub terminal_port: u16,
    pub long: bool,
    /// Active segments the flow was drawn from (empty for short flows).
    pub schedule: Vec<usize>,
    pub packets: usize,
    pub bytes: u64,
    /// Packets per segment on the capture grid.
    pub segment_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub pcap: PathBuf,
    pub labels: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GeneratorConfig,
    pub profiles: Vec<ArchetypeProfile>,
    pub segment_count: usize,
    pub long_fraction: f64,
    pub paths: Option<DatasetPaths>,
    pub flows: Vec<ManifestFlow>,
}

impl Manifest {
    pub fn to_text(&self, config_hash: &str) -> String {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        format!("# termrec manifest config_hash={config_hash}\n{body}\n")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .skip_while(|l| l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        serde_json::from_str(&body).map_err(|e| Error::Parse(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// A packet placed on the capture timeline, ready to frame.
#[derive(Debug, Clone)]
pub struct TimedPacket {
    pub flow_id: usize,
    pub offset_us: u64,
    pub frame: Vec<u8>,
    pub state: BehaviorCode,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub packets: Vec<TimedPacket>,
    pub labels: LabelMap,
    pub manifest: Manifest,
}

struct FlowPlan {
    id: usize,
    class: TerminalType,
    long: bool,
    endpoints: FlowEndpoints,
    packets: Vec<GenPacket>,
}

fn plan_flow(
    id: usize,
    cfg: &GeneratorConfig,
    profiles: &[ArchetypeProfile],
    table: &BehaviorCodeTable,
) -> Result<FlowPlan> {
    let class = TerminalType::ALL[id % 3];
    let long = id / 3 < cfg.long_per_class();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id as u64);
    let endpoints = FlowEndpoints {
        terminal_ip: Ipv4Addr::from(0x0A01_0000u32 + id as u32 + 1),
        terminal_port: rng.random_range(20_000..60_000),
        master_ip: cfg.master_ip,
        master_port: cfg.master_port,
    };
    let packets = generate_flow(&profiles[class.index()], cfg, long, table, &mut rng)?;
    Ok(FlowPlan {
        id,
        class,
        long,
        endpoints,
        packets,
    })
}

/// Builds every flow, merges them onto one timeline and frames the packets.
///
/// Flows are interleaved by class (`flow_id % 3`). Within each class the first
/// `round(long_fraction * flows_per_class)` flows are long. The earliest packet
/// is moved to the capture start so the segment grid anchored at the first
/// packet coincides with the generator's grid, and colliding timestamps are
/// pushed apart by one microsecond.
pub fn generate_dataset(cfg: &GeneratorConfig, table: &BehaviorCodeTable) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.flows_per_class * 3 >= 0x00FF_0000 {
        return Err(Error::InvalidParams("too many flows for the 10.1.0.0/8 address plan".into()));
    }
    let profiles = cfg.resolved_profiles()?;
    let l = cfg.segments()?;
    let plans: Vec<FlowPlan> = (0..cfg.flows_per_class * 3)
        .into_par_iter()
        .map(|id| plan_flow(id, cfg, &profiles, table))
        .collect::<Result<_>>()?;

    let mut order: Vec<(u64, usize, usize)> = plans
        .iter()
        .flat_map(|f| f.packets.iter().enumerate().map(move |(i, p)| (p.offset_us, f.id, i)))
        .collect();
    order.sort_unstable();
    let mut times = Vec::with_capacity(order.len());
    for (n, &(t, _, _)) in order.iter().enumerate() {
        let t = if n == 0 { 0 } else { t.max(times[n - 1] + 1) };
        times.push(t);
    }

    let grid = SegmentGrid::new(0.0, cfg.tau, l)?;
    let mut seq: Vec<[u32; 2]> = plans.iter().map(|f| [f.id as u32 * 7919, f.id as u32 * 104_729]).collect();
    let mut ip_id = vec![[0u16; 2]; plans.len()];
    let mut flows: Vec<ManifestFlow> = plans
        .iter()
        .map(|f| ManifestFlow {
            flow_id: f.id,
            archetype: f.class,
            terminal_ip: f.endpoints.terminal_ip,
            terminal_port: f.endpoints.terminal_port,
            long: f.long,
            schedule: if f.long { profiles[f.class.index()].schedule.clone() } else { Vec::new() },
            packets: 0,
            bytes: 0,
            segment_counts: vec![0; l],
        })
        .collect();
    let mut packets = Vec::with_capacity(order.len());
    let mut payload = Vec::new();
    for (&(_, id, i), &t) in order.iter().zip(&times) {
        let plan = &plans[id];
        let p = &plan.packets[i];
        let e = plan.endpoints;
        let dir = usize::from(!p.from_terminal);
        let (src_ip, src_port, dst_ip, dst_port) = if p.from_terminal {
            (e.terminal_ip, e.terminal_port, e.master_ip, e.master_port)
        } else {
            (e.master_ip, e.master_port, e.terminal_ip, e.terminal_port)
        };
        payload.clear();
        payload.resize(p.payload_len as usize, 0);
        if let BehaviorCode::State(s) = p.state {
            payload[table.offset()] = table.code_for(s);
        }
        let frame = build_tcp_frame(&TcpSegmentSpec {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            seq: seq[id][dir],
            ack: seq[id][1 - dir],
            flags: p.flags,
            ip_id: ip_id[id][dir],
            payload: &payload,
        });
        let advance = p.payload_len + u32::from(p.flags.contains(TcpFlags::SYN) || p.flags.contains(TcpFlags::FIN));
        seq[id][dir] = seq[id][dir].wrapping_add(advance);
        ip_id[id][dir] = ip_id[id][dir].wrapping_add(1);
        let m = &mut flows[id];
        m.packets += 1;
        m.bytes += u64::from(p.payload_len);
        m.segment_counts[grid.locate(t as f64 / MICROS).0] += 1;
        packets.push(TimedPacket {
            flow_id: id,
            offset_us: t,
            frame,
            state: p.state,
        });
    }

    let mut labels = LabelMap::default();
    for f in &flows {
        labels.insert(f.terminal_ip, f.archetype);
    }
    let long = flows.iter().filter(|f| f.long).count();
    Ok(Dataset {
        labels,
        manifest: Manifest {
            config: cfg.clone(),
            profiles,
            segment_count: l,
            long_fraction: long as f64 / flows.len() as f64,
            paths: None,
            flows,
        },
        packets,
    })
}

impl Dataset {
    /// The capture as little-endian microsecond pcap bytes.
    pub fn pcap_bytes(&self) -> Result<Vec<u8>> {
        let start = u64::from(self.manifest.config.start_time);
        let mut w = CaptureWriter::new(Vec::new(), LINKTYPE_ETHERNET, 65_535)?;
        for p in &self.packets {
            let sec = start + p.offset_us / 1_000_000;
            let sec = u32::try_from(sec).map_err(|_| Error::InvalidParams("timestamp past 2106".into()))?;
            w.write_record(sec, (p.offset_us % 1_000_000) as u32, &p.frame)?;
        }
        Ok(w.into_inner())
    }

    /// Writes `capture.pcap`, `labels.tsv` and `manifest.json` into `dir`,
    /// creating it if needed.
    pub fn write(&mut self, dir: &Path, config_hash: &str) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = DatasetPaths {
            pcap: dir.join("capture.pcap"),
            labels: dir.join("labels.tsv"),
            manifest: dir.join("manifest.json"),
        };
        std::fs::write(&paths.pcap, self.pcap_bytes()?)?;
        let mut labels = std::fs::File::create(&paths.labels)?;
        writeln!(labels, "# termrec labels config_hash={config_hash}")?;
        labels.write_all(self.labels.to_text().as_bytes())?;
        // sibling file names, so the manifest does not depend on `dir`
        self.manifest.paths = Some(DatasetPaths {
            pcap: "capture.pcap".into(),
            labels: "labels.tsv".into(),
            manifest: "manifest.json".into(),
        });
        std::fs::write(&paths.manifest, self.manifest.to_text(config_hash))?;
        Ok(paths)
    }
}

/// Per-class mean of a per-flow quantity over the manifest's long flows.
pub fn class_means(manifest: &Manifest, value: impl Fn(&ManifestFlow) -> f64) -> BTreeMap<TerminalType, f64> {
    let mut acc: BTreeMap<TerminalType, (f64, usize)> = BTreeMap::new();
    for f in manifest.flows.iter().filter(|f| f.long) {
        let e = acc.entry(f.archetype).or_default();
        e.0 += value(f);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{assemble_flows, filter_long_connections};
    use crate::pcap::ingest_capture;

    fn small(hard: bool) -> GeneratorConfig {
        GeneratorConfig {
            flows_per_class: 10,
            hard_mode: hard,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_profiles_validate() {
        for t in TerminalType::ALL {
            ArchetypeProfile::easy(t).validate(12).unwrap();
            ArchetypeProfile::hard(t).validate(12).unwrap();
        }
        assert_eq!(ArchetypeProfile::hard(TerminalType::Lmt).schedule, vec![3, 6, 9, 12]);
    }

    #[test]
    fn bad_profiles_rejected() {
        let mut p = ArchetypeProfile::easy(TerminalType::Ttu);
        p.send.mixture[0] += 0.5;
        assert!(matches!(p.validate(12), Err(Error::BadProfile(_))));
        let mut p = ArchetypeProfile::easy(TerminalType::Ttu);
        p.schedule.push(13);
        assert!(p.validate(12).is_err());
        let mut p = ArchetypeProfile::easy(TerminalType::Ttu);
        p.send.size_min = 500;
        assert!(p.validate(12).is_err());
    }

    #[test]
    fn idle_profile_yields_one_keepalive() {
        let mut p = ArchetypeProfile::easy(TerminalType::Lmt);
        p.schedule.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pk = generate_flow(&p, &GeneratorConfig::default(), true, &BehaviorCodeTable::default(), &mut rng).unwrap();
        assert_eq!(pk.len(), 1);
    }

    #[test]
    fn burst_schedule_stays_in_its_segments() {
        let mut p = ArchetypeProfile::easy(TerminalType::Lvrc);
        p.schedule = vec![1, 5, 9];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pk = generate_flow(&p, &GeneratorConfig::default(), true, &BehaviorCodeTable::default(), &mut rng).unwrap();
        for q in &pk {
            let seg = q.offset_us / 300_000_000 + 1;
            assert!([1, 5, 9].contains(&seg), "segment {seg}");
        }
    }

    #[test]
    fn flow_generation_is_seeded() {
        let cfg = GeneratorConfig::default();
        let p = ArchetypeProfile::easy(TerminalType::Ttu);
        let t = BehaviorCodeTable::default();
        let a = generate_flow(&p, &cfg, true, &t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_flow(&p, &cfg, true, &t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thirty_flows_and_round_trip() {
        let table = BehaviorCodeTable::default();
        let ds = generate_dataset(&small(false), &table).unwrap();
        assert_eq!(ds.manifest.flows.len(), 30);
        let raw = ds.pcap_bytes().unwrap();
        let (pk, stats) = ingest_capture(&raw, &table).unwrap();
        assert_eq!(stats.skipped() + stats.malformed, 0);
        // strictly increasing timestamps and intended behavior codes
        for (w, (got, want)) in pk.windows(2).zip(pk.iter().zip(&ds.packets)) {
            assert!(w[1].timestamp > w[0].timestamp);
            assert_eq!(got.behavior_code, want.state);
        }
        let flows = assemble_flows(pk, |k| ds.labels.label_flow(k));
        assert_eq!(flows.len(), 30);
        for f in &flows {
            let ip = if f.key.a.ip == ds.manifest.config.master_ip { f.key.b.ip } else { f.key.a.ip };
            let m = ds.manifest.flows.iter().find(|m| m.terminal_ip == ip).unwrap();
            assert_eq!(f.packets.len(), m.packets);
            assert_eq!(f.label, Some(m.archetype));
            assert_eq!(f.initiator.ip, ip);
        }
    }

    #[test]
    fn long_flows_survive_the_filter() {
        let table = BehaviorCodeTable::default();
        for hard in [false, true] {
            let ds = generate_dataset(&small(hard), &table).unwrap();
            let (pk, _) = ingest_capture(&ds.pcap_bytes().unwrap(), &table).unwrap();
            let out = filter_long_connections(assemble_flows(pk, |_| None), 600.0, 3600.0);
            let expected = ds.manifest.flows.iter().filter(|f| f.long).count();
            assert_eq!(out.stats.long, expected);
        }
    }

    #[test]
    fn pcap_is_reproducible() {
        let table = BehaviorCodeTable::default();
        let a = generate_dataset(&small(true), &table).unwrap().pcap_bytes().unwrap();
        let b = generate_dataset(&small(true), &table).unwrap().pcap_bytes().unwrap();
        assert_eq!(a, b);
        let mut other = small(true);
        other.seed = 8;
        assert_ne!(a, generate_dataset(&other, &table).unwrap().pcap_bytes().unwrap());
    }

    #[test]
    fn manifest_text_round_trips() {
        let ds = generate_dataset(&small(false), &BehaviorCodeTable::default()).unwrap();
        let text = ds.manifest.to_text("abc");
        assert!(text.starts_with("# termrec manifest config_hash=abc\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), ds.manifest);
    }
}
