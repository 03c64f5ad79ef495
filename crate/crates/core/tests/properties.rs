use std::net::Ipv4Addr;

use proptest::prelude::*;
use termrec::behavior::BehaviorCodeTable;
use termrec::encoding::encode_flow;
use termrec::features::{mean_std, Standardizer};
use termrec::flow::{assemble_flows, segment_flow, Endpoint, FlowKey, PROTO_TCP};
use termrec::pcap::{
    build_tcp_frame, decode_packet, ingest_capture, parse_capture, CaptureWriter, Decoded, ParsedPacket, TcpFlags,
    TcpSegmentSpec, LINKTYPE_ETHERNET,
};

fn endpoint() -> impl Strategy<Value = Endpoint> {
    (any::<u32>(), any::<u16>()).prop_map(|(ip, port)| Endpoint {
        ip: Ipv4Addr::from(ip),
        port,
    })
}

fn packet(src: Endpoint, dst: Endpoint, timestamp: f64) -> ParsedPacket {
    ParsedPacket {
        timestamp,
        src_ip: src.ip,
        dst_ip: dst.ip,
        src_port: src.port,
        dst_port: dst.port,
        payload_len: 10,
        tcp_flags: TcpFlags(0x10),
        behavior_code: BehaviorCodeTable::default().lookup(1),
    }
}

proptest! {
    #[test]
    fn flow_key_is_symmetric(x in endpoint(), y in endpoint()) {
        prop_assert_eq!(FlowKey::new(x, y, PROTO_TCP), FlowKey::new(y, x, PROTO_TCP));
    }

    #[test]
    fn assembly_ignores_arrival_order(
        times in prop::collection::btree_set(0u32..1_000_000, 1..80),
        dirs in prop::collection::vec(0usize..4, 80),
        rotate in 0usize..80,
    ) {
        let ends = [
            Endpoint { ip: Ipv4Addr::new(10, 0, 0, 1), port: 2404 },
            Endpoint { ip: Ipv4Addr::new(10, 1, 0, 2), port: 40000 },
            Endpoint { ip: Ipv4Addr::new(10, 1, 0, 3), port: 40001 },
        ];
        let mut packets: Vec<ParsedPacket> = times
            .iter()
            .zip(&dirs)
            .map(|(t, d)| {
                let (s, r) = match d { 0 => (0, 1), 1 => (1, 0), 2 => (0, 2), _ => (2, 0) };
                packet(ends[s], ends[r], *t as f64 / 1000.0)
            })
            .collect();
        let ordered = assemble_flows(packets.clone(), |_| None);
        let n = packets.len();
        packets.rotate_left(rotate % n);
        packets.reverse();
        prop_assert_eq!(assemble_flows(packets, |_| None), ordered.clone());
        prop_assert_eq!(ordered.iter().map(|f| f.packets.len()).sum::<usize>(), n);
    }

    #[test]
    fn segmentation_conserves_packets(
        mut times in prop::collection::vec(-100.0f64..4000.0, 1..200),
        tau in 10.0f64..900.0,
        count in 1usize..20,
    ) {
        times.sort_by(f64::total_cmp);
        let a = Endpoint { ip: Ipv4Addr::new(10, 0, 0, 1), port: 2404 };
        let b = Endpoint { ip: Ipv4Addr::new(10, 1, 0, 2), port: 40000 };
        let flows = assemble_flows(times.iter().map(|t| packet(b, a, *t)), |_| None);
        let seg = segment_flow(&flows[0], 0.0, tau, count).unwrap();
        prop_assert_eq!(seg.segments.len(), count);
        prop_assert_eq!(seg.segments.iter().map(|s| s.packets.len()).sum::<usize>(), times.len());
        let outside = times.iter().filter(|t| **t < 0.0 || **t >= tau * count as f64).count();
        prop_assert_eq!(seg.clamped, outside);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..60),
    ) {
        let s = Standardizer::fit(&rows).unwrap();
        let z = s.apply(&rows).unwrap();
        for c in 0..4 {
            let raw: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let col: Vec<f64> = z.iter().map(|r| r[c]).collect();
            let (m, sd) = mean_std(&col);
            prop_assert!(m.abs() < 1e-9);
            if mean_std(&raw).1 > 1e-6 {
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn capture_writer_round_trips(
        records in prop::collection::vec((any::<u32>(), 0u32..1_000_000, prop::collection::vec(any::<u8>(), 0..200)), 0..30),
    ) {
        let mut w = CaptureWriter::new(Vec::new(), LINKTYPE_ETHERNET, 65535).unwrap();
        for (s, us, data) in &records {
            w.write_record(*s, *us, data).unwrap();
        }
        let bytes = w.into_inner();
        let back: Vec<_> = parse_capture(&bytes).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (r, (s, us, data)) in back.iter().zip(&records) {
            prop_assert_eq!((r.ts_sec, r.ts_frac, r.data), (*s, *us, data.as_slice()));
        }
    }

    #[test]
    fn framed_segments_decode_to_their_fields(
        src in endpoint(),
        dst in endpoint(),
        flags in any::<u8>(),
        payload in prop::collection::vec(any::<u8>(), 0..300),
    ) {
        let table = BehaviorCodeTable::default();
        let frame = build_tcp_frame(&TcpSegmentSpec {
            src_ip: src.ip,
            dst_ip: dst.ip,
            src_port: src.port,
            dst_port: dst.port,
            seq: 1,
            ack: 2,
            flags: TcpFlags(flags),
            ip_id: 3,
            payload: &payload,
        });
        let Decoded::Packet(p) = decode_packet(&frame, 1.5, LINKTYPE_ETHERNET, &table).unwrap() else {
            return Err(TestCaseError::fail("frame was skipped"));
        };
        prop_assert_eq!((p.src_ip, p.src_port, p.dst_ip, p.dst_port), (src.ip, src.port, dst.ip, dst.port));
        prop_assert_eq!(p.payload_len as usize, payload.len());
        prop_assert_eq!(p.tcp_flags, TcpFlags(flags));
        let expected = payload.first().map_or(table.lookup(0), |b| table.lookup(*b));
        prop_assert_eq!(p.behavior_code, expected);
    }

    #[test]
    fn arbitrary_bytes_never_panic_ingest(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = ingest_capture(&bytes, &BehaviorCodeTable::default());
    }

    #[test]
    fn presence_ignores_order_and_repeats(
        mut clusters in prop::collection::vec(0usize..15, 0..30),
        had_empty in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let v = encode_flow(&clusters, had_empty, 15).unwrap();
        clusters.sort_by_key(|c| (*c as u64).wrapping_mul(seed | 1) % 97);
        clusters.extend(clusters.clone());
        prop_assert_eq!(encode_flow(&clusters, had_empty, 15).unwrap(), v.clone());
        prop_assert_eq!(v.len(), 16);
        prop_assert_eq!(v.iter().filter(|x| **x == 1.0).count(), {
            let mut u = clusters.clone();
            u.sort();
            u.dedup();
            u.len() + usize::from(had_empty)
        });
    }
}
