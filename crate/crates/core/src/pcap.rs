//! Classic libpcap capture files and Ethernet/IPv4/TCP decoding.
//!
//! Only the original pcap container is handled (not pcapng). Both byte orders
//! and both timestamp resolutions are accepted; the magic number decides which.

use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::behavior::{extract_behavior_code, BehaviorCode, BehaviorCodeTable};
use crate::error::{Error, Result};

pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;

const MAGIC_MICRO: u32 = 0xa1b2_c3d4;
const MAGIC_NANO: u32 = 0xa1b2_3c4d;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsResolution {
    Micro,
    Nano,
}

impl TsResolution {
    pub fn units_per_second(self) -> u32 {
        match self {
            TsResolution::Micro => 1_000_000,
            TsResolution::Nano => 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureHeader {
    pub magic: u32,
    pub version: (u16, u16),
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub link_type: u32,
    pub resolution: TsResolution,
    pub byte_order: ByteOrder,
}

impl CaptureHeader {
    pub fn parse(raw: &[u8]) -> Result<Self> {
        if raw.len() < GLOBAL_HEADER_LEN {
            return Err(Error::TruncatedHeader(raw.len()));
        }
        let le = u32::from_le_bytes(raw[0..4].try_into().unwrap());
        let (byte_order, resolution) = match le {
            MAGIC_MICRO => (ByteOrder::Little, TsResolution::Micro),
            MAGIC_NANO => (ByteOrder::Little, TsResolution::Nano),
            m if m == MAGIC_MICRO.swap_bytes() => (ByteOrder::Big, TsResolution::Micro),
            m if m == MAGIC_NANO.swap_bytes() => (ByteOrder::Big, TsResolution::Nano),
            _ => return Err(Error::BadMagic(u32::from_be_bytes(raw[0..4].try_into().unwrap()))),
        };
        let r = Reader { order: byte_order };
        Ok(Self {
            magic: r.u32(&raw[0..4]),
            version: (r.u16(&raw[4..6]), r.u16(&raw[6..8])),
            thiszone: r.u32(&raw[8..12]) as i32,
            sigfigs: r.u32(&raw[12..16]),
            snaplen: r.u32(&raw[16..20]),
            link_type: r.u32(&raw[20..24]),
            resolution,
            byte_order,
        })
    }
}

#[derive(Clone, Copy)]
struct Reader {
    order: ByteOrder,
}

impl Reader {
    fn u32(self, b: &[u8]) -> u32 {
        let a: [u8; 4] = b.try_into().unwrap();
        match self.order {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }

    fn u16(self, b: &[u8]) -> u16 {
        let a: [u8; 2] = b.try_into().unwrap();
        match self.order {
            ByteOrder::Little => u16::from_le_bytes(a),
            ByteOrder::Big => u16::from_be_bytes(a),
        }
    }
}

/// One captured frame borrowed from the input buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record<'a> {
    pub ts_sec: u32,
    /// Sub-second part in units of the capture's resolution.
    pub ts_frac: u32,
    pub resolution: TsResolution,
    pub orig_len: u32,
    pub data: &'a [u8],
}

impl Record<'_> {
    pub fn timestamp(&self) -> f64 {
        self.ts_sec as f64 + self.ts_frac as f64 / self.resolution.units_per_second() as f64
    }
}

/// Streaming iterator over the records of an in-memory capture.
///
/// A record whose header or body runs past the end of the buffer yields a
/// single `TruncatedRecord` error, after which iteration stops.
pub struct CaptureReader<'a> {
    header: CaptureHeader,
    buf: &'a [u8],
    pos: usize,
    index: usize,
    done: bool,
}

impl<'a> CaptureReader<'a> {
    pub fn new(raw: &'a [u8]) -> Result<Self> {
        let header = CaptureHeader::parse(raw)?;
        Ok(Self {
            header,
            buf: raw,
            pos: GLOBAL_HEADER_LEN,
            index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &CaptureHeader {
        &self.header
    }
}

impl<'a> Iterator for CaptureReader<'a> {
    type Item = Result<Record<'a>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.pos == self.buf.len() {
            return None;
        }
        let remaining = self.buf.len() - self.pos;
        if remaining < RECORD_HEADER_LEN {
            self.done = true;
            return Some(Err(Error::TruncatedRecord {
                index: self.index,
                declared: RECORD_HEADER_LEN,
                available: remaining,
            }));
        }
        let r = Reader {
            order: self.header.byte_order,
        };
        let h = &self.buf[self.pos..self.pos + RECORD_HEADER_LEN];
        let ts_sec = r.u32(&h[0..4]);
        let ts_frac = r.u32(&h[4..8]);
        let incl_len = r.u32(&h[8..12]) as usize;
        let orig_len = r.u32(&h[12..16]);
        let body_start = self.pos + RECORD_HEADER_LEN;
        let available = self.buf.len() - body_start;
        if incl_len > available {
            self.done = true;
            return Some(Err(Error::TruncatedRecord {
                index: self.index,
                declared: incl_len,
                available,
            }));
        }
        let data = &self.buf[body_start..body_start + incl_len];
        self.pos = body_start + incl_len;
        self.index += 1;
        Some(Ok(Record {
            ts_sec,
            ts_frac,
            resolution: self.header.resolution,
            orig_len,
            data,
        }))
    }
}

/// Parses the global header and returns an iterator over the records.
pub fn parse_capture(raw: &[u8]) -> Result<CaptureReader<'_>> {
    CaptureReader::new(raw)
}

/// Little-endian, microsecond-resolution capture writer.
pub struct CaptureWriter<W: Write> {
    out: W,
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(mut out: W, link_type: u32, snaplen: u32) -> Result<Self> {
        let mut h = Vec::with_capacity(GLOBAL_HEADER_LEN);
        h.extend_from_slice(&MAGIC_MICRO.to_le_bytes());
        h.extend_from_slice(&2u16.to_le_bytes());
        h.extend_from_slice(&4u16.to_le_bytes());
        h.extend_from_slice(&0i32.to_le_bytes());
        h.extend_from_slice(&0u32.to_le_bytes());
        h.extend_from_slice(&snaplen.to_le_bytes());
        h.extend_from_slice(&link_type.to_le_bytes());
        out.write_all(&h)?;
        Ok(Self { out })
    }

    pub fn write_record(&mut self, ts_sec: u32, ts_usec: u32, data: &[u8]) -> Result<()> {
        let len = data.len() as u32;
        let mut h = [0u8; RECORD_HEADER_LEN];
        h[0..4].copy_from_slice(&ts_sec.to_le_bytes());
        h[4..8].copy_from_slice(&ts_usec.to_le_bytes());
        h[8..12].copy_from_slice(&len.to_le_bytes());
        h[12..16].copy_from_slice(&len.to_le_bytes());
        self.out.write_all(&h)?;
        self.out.write_all(data)?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// TCP control bits (low byte of the flags field).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    /// SYN without ACK: the opening segment of a handshake.
    pub fn is_pure_syn(self) -> bool {
        self.contains(Self::SYN) && !self.contains(Self::ACK)
    }

    pub fn closes(self) -> bool {
        self.contains(Self::FIN) || self.contains(Self::RST)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedPacket {
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    /// Bytes of TCP payload.
    pub payload_len: u32,
    pub tcp_flags: TcpFlags,
    pub behavior_code: BehaviorCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NonIpv4,
    NonTcp(u8),
    Fragment,
    UnsupportedLink(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Packet(ParsedPacket),
    Skip(SkipReason),
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decodes one captured frame down to its TCP payload.
///
/// Never reads past `data`; every declared length is checked against it.
pub fn decode_packet(
    data: &[u8],
    timestamp: f64,
    link_type: u32,
    table: &BehaviorCodeTable,
) -> Result<Decoded> {
    let ip_start = match link_type {
        LINKTYPE_ETHERNET => {
            if data.len() < 14 {
                return Err(Error::MalformedPacket(format!("ethernet frame of {} bytes", data.len())));
            }
            let mut ethertype = be16(data, 12);
            let mut at = 14;
            // single 802.1Q tag
            if ethertype == 0x8100 {
                if data.len() < 18 {
                    return Err(Error::MalformedPacket("truncated VLAN tag".into()));
                }
                ethertype = be16(data, 16);
                at = 18;
            }
            if ethertype != 0x0800 {
                return Ok(Decoded::Skip(SkipReason::NonIpv4));
            }
            at
        }
        LINKTYPE_RAW => {
            if data.is_empty() {
                return Err(Error::MalformedPacket("empty raw IP frame".into()));
            }
            if data[0] >> 4 != 4 {
                return Ok(Decoded::Skip(SkipReason::NonIpv4));
            }
            0
        }
        other => return Ok(Decoded::Skip(SkipReason::UnsupportedLink(other))),
    };

    let ip = &data[ip_start..];
    if ip.len() < 20 {
        return Err(Error::MalformedPacket(format!("IPv4 header needs 20 bytes, have {}", ip.len())));
    }
    if ip[0] >> 4 != 4 {
        return Err(Error::MalformedPacket(format!("IP version {}", ip[0] >> 4)));
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    let total_len = be16(ip, 2) as usize;
    if ihl < 20 || total_len < ihl {
        return Err(Error::MalformedPacket(format!("IHL {ihl}, total length {total_len}")));
    }
    if total_len > ip.len() {
        return Err(Error::MalformedPacket(format!(
            "IPv4 total length {total_len} exceeds {} captured bytes",
            ip.len()
        )));
    }
    let frag_offset = be16(ip, 6) & 0x1fff;
    if frag_offset != 0 {
        return Ok(Decoded::Skip(SkipReason::Fragment));
    }
    let protocol = ip[9];
    if protocol != 6 {
        return Ok(Decoded::Skip(SkipReason::NonTcp(protocol)));
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let tcp = &ip[ihl..total_len];
    if tcp.len() < 20 {
        return Err(Error::MalformedPacket(format!("TCP header needs 20 bytes, have {}", tcp.len())));
    }
    let data_offset = (tcp[12] >> 4) as usize * 4;
    if data_offset < 20 || data_offset > tcp.len() {
        return Err(Error::MalformedPacket(format!(
            "TCP data offset {data_offset} with {} bytes of segment",
            tcp.len()
        )));
    }
    let payload = &tcp[data_offset..];
    Ok(Decoded::Packet(ParsedPacket {
        timestamp,
        src_ip,
        dst_ip,
        src_port: be16(tcp, 0),
        dst_port: be16(tcp, 2),
        payload_len: payload.len() as u32,
        tcp_flags: TcpFlags(tcp[13]),
        behavior_code: extract_behavior_code(payload, table),
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub packets: usize,
    pub skipped_non_ipv4: usize,
    pub skipped_non_tcp: usize,
    pub skipped_fragments: usize,
    pub skipped_link: usize,
    pub malformed: usize,
    pub truncated_records: usize,
}

impl IngestStats {
    pub fn skipped(&self) -> usize {
        self.skipped_non_ipv4 + self.skipped_non_tcp + self.skipped_fragments + self.skipped_link
    }
}

/// Parses a whole capture into TCP packets. Malformed frames and a truncated
/// tail are counted in the stats rather than aborting the read.
pub fn ingest_capture(raw: &[u8], table: &BehaviorCodeTable) -> Result<(Vec<ParsedPacket>, IngestStats)> {
    let reader = parse_capture(raw)?;
    let link_type = reader.header().link_type;
    let mut stats = IngestStats::default();
    let mut packets = Vec::new();
    for rec in reader {
        let rec = match rec {
            Ok(r) => r,
            Err(Error::TruncatedRecord { .. }) => {
                stats.truncated_records += 1;
                break;
            }
            Err(e) => return Err(e),
        };
        stats.records += 1;
        match decode_packet(rec.data, rec.timestamp(), link_type, table) {
            Ok(Decoded::Packet(p)) => {
                stats.packets += 1;
                packets.push(p);
            }
            Ok(Decoded::Skip(reason)) => match reason {
                SkipReason::NonIpv4 => stats.skipped_non_ipv4 += 1,
                SkipReason::NonTcp(_) => stats.skipped_non_tcp += 1,
                SkipReason::Fragment => stats.skipped_fragments += 1,
                SkipReason::UnsupportedLink(_) => stats.skipped_link += 1,
            },
            Err(_) => stats.malformed += 1,
        }
    }
    Ok((packets, stats))
}

fn ones_complement_sum(mut acc: u32, bytes: &[u8]) -> u32 {
    let mut chunks = bytes.chunks_exact(2);
    for c in &mut chunks {
        acc += u16::from_be_bytes([c[0], c[1]]) as u32;
    }
    if let [last] = chunks.remainder() {
        acc += (*last as u32) << 8;
    }
    acc
}

fn fold_checksum(mut acc: u32) -> u16 {
    while acc >> 16 != 0 {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    !(acc as u16)
}

/// Fields of a TCP segment to be framed by [`build_tcp_frame`].
#[derive(Debug, Clone, Copy)]
pub struct TcpSegmentSpec<'a> {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ip_id: u16,
    pub payload: &'a [u8],
}

/// Builds an Ethernet + IPv4 + TCP frame with valid IP and TCP checksums.
pub fn build_tcp_frame(spec: &TcpSegmentSpec<'_>) -> Vec<u8> {
    let tcp_len = 20 + spec.payload.len();
    let total_len = 20 + tcp_len;
    let mut f = Vec::with_capacity(14 + total_len);
    // locally administered MACs
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&0x0800u16.to_be_bytes());

    let ip_at = f.len();
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&(total_len as u16).to_be_bytes());
    f.extend_from_slice(&spec.ip_id.to_be_bytes());
    f.extend_from_slice(&0x4000u16.to_be_bytes()); // DF
    f.push(64);
    f.push(6);
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(&spec.src_ip.octets());
    f.extend_from_slice(&spec.dst_ip.octets());
    let ip_sum = fold_checksum(ones_complement_sum(0, &f[ip_at..ip_at + 20]));
    f[ip_at + 10..ip_at + 12].copy_from_slice(&ip_sum.to_be_bytes());

    let tcp_at = f.len();
    f.extend_from_slice(&spec.src_port.to_be_bytes());
    f.extend_from_slice(&spec.dst_port.to_be_bytes());
    f.extend_from_slice(&spec.seq.to_be_bytes());
    f.extend_from_slice(&spec.ack.to_be_bytes());
    f.push(5 << 4);
    f.push(spec.flags.0);
    f.extend_from_slice(&64240u16.to_be_bytes());
    f.extend_from_slice(&[0, 0]); // checksum
    f.extend_from_slice(&[0, 0]); // urgent
    f.extend_from_slice(spec.payload);

    let mut pseudo = Vec::with_capacity(12);
    pseudo.extend_from_slice(&spec.src_ip.octets());
    pseudo.extend_from_slice(&spec.dst_ip.octets());
    pseudo.push(0);
    pseudo.push(6);
    pseudo.extend_from_slice(&(tcp_len as u16).to_be_bytes());
    let acc = ones_complement_sum(ones_complement_sum(0, &pseudo), &f[tcp_at..]);
    let tcp_sum = fold_checksum(acc);
    f[tcp_at + 16..tcp_at + 18].copy_from_slice(&tcp_sum.to_be_bytes());
    f
}
