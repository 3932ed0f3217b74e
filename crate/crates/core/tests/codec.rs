use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::net::Ipv4Addr;

use proptest::prelude::*;
use tcm_core::iphc::{
    mask, CodecError, CompressedRecord, Compressor, Decompressor, DefFields, RecordKind, RefreshPolicy, TcpIpHeader,
};
use tcm_core::mux::compress_stream;
use tcm_core::traffic::generate_scenario;
use tcm_core::{Direction, GameProfile};

fn state_hash<T: Hash>(x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    x.hash(&mut h);
    h.finish()
}

/// Plain one's-complement sum, written independently of the codec.
fn ones_complement_sum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        for pair in chunk.chunks(2) {
            let word = u16::from_be_bytes([pair[0], *pair.get(1).unwrap_or(&0)]);
            sum += u32::from(word);
        }
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

fn checksum_oracle(h: &TcpIpHeader) -> u16 {
    let bytes = h.to_bytes(None);
    let mut tcp = bytes[20..40].to_vec();
    tcp[16] = 0;
    tcp[17] = 0;
    let tcp_len = (20 + h.payload_len) as u16;
    let mut pseudo = Vec::new();
    pseudo.extend_from_slice(&h.def.src.octets());
    pseudo.extend_from_slice(&h.def.dst.octets());
    pseudo.extend_from_slice(&[0, 6]);
    pseudo.extend_from_slice(&tcp_len.to_be_bytes());
    !ones_complement_sum(&[&pseudo, &tcp])
}

fn base_header() -> TcpIpHeader {
    TcpIpHeader {
        def: DefFields::for_flow(0, Direction::ClientToServer),
        ipid: 100,
        seq: 1000,
        ack: 5000,
        window: 8192,
        push: true,
        urgent_pointer: 0,
        payload_len: 12,
    }
}

fn golden_sequence() -> Vec<TcpIpHeader> {
    let h0 = base_header();
    let h1 = TcpIpHeader {
        ipid: 101,
        seq: 1012,
        ..h0
    };
    let h2 = TcpIpHeader {
        ipid: 102,
        seq: 1024,
        ack: 75_000,
        window: 8142,
        push: false,
        payload_len: 0,
        ..h1
    };
    let h3 = TcpIpHeader { ipid: 402, ..h2 };
    vec![h0, h1, h2, h3]
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn ip_and_tcp_checksums_verify_independently() {
    for h in golden_sequence() {
        let bytes = h.to_bytes(None);
        assert_eq!(ones_complement_sum(&[&bytes[..20]]), 0xffff, "IP header checksum");
        assert_eq!(u16::from_be_bytes([bytes[36], bytes[37]]), checksum_oracle(&h));
        assert_eq!(h.tcp_checksum(), checksum_oracle(&h));
    }
    assert_eq!(base_header().def.src, Ipv4Addr::new(10, 0, 0, 0));
}

#[test]
fn golden_records_match_hand_encoding() {
    let seq = golden_sequence();
    let mut c = Compressor::new(RefreshPolicy::FirstOnly);
    let records: Vec<CompressedRecord> = seq.iter().map(|h| c.encode_header(h).unwrap()).collect();

    assert_eq!(records[0].kind, RecordKind::FullHeader);
    assert_eq!(records[0].to_bytes().len(), 40);

    // seq +12, ipid +1, push set
    let ck = seq[1].tcp_checksum().to_be_bytes();
    assert_eq!(records[1].to_bytes(), vec![0x00, 0x07, ck[0], ck[1], 0x0c, 0x01]);

    // window -50, ack +70000 (escaped), seq +12, ipid +1, push clear
    let ck = seq[2].tcp_checksum().to_be_bytes();
    assert_eq!(
        records[2].to_bytes(),
        vec![0x00, 0x1d, ck[0], ck[1], 0xce, 0x00, 0x00, 0x01, 0x24, 0xf8, 0x0c, 0x01]
    );

    // only ipid changes, by 300: escaped
    let ck = seq[3].tcp_checksum().to_be_bytes();
    assert_eq!(records[3].to_bytes(), vec![0x00, 0x01, ck[0], ck[1], 0x00, 0x01, 0x92]);

    for (r, h) in records.iter().zip(&seq) {
        assert_eq!(r.checksum, checksum_oracle(h));
    }
}

#[test]
fn golden_fixture_file() {
    let fixture = include_str!("fixtures/golden_records.txt");
    let lines: Vec<&str> = fixture
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .collect();
    let seq = golden_sequence();
    assert_eq!(lines.len(), seq.len());

    let mut c = Compressor::new(RefreshPolicy::FirstOnly);
    let mut d = Decompressor::new();
    for (line, h) in lines.iter().zip(&seq) {
        let (kind, bytes) = line.split_once(' ').unwrap();
        let kind = match kind {
            "full" => RecordKind::FullHeader,
            "compressed" => RecordKind::CompressedTcp,
            other => panic!("unknown record kind {other}"),
        };
        let record = c.encode_header(h).unwrap();
        assert_eq!(record.kind, kind);
        assert_eq!(hex(&record.to_bytes()), bytes.trim());

        let parsed = CompressedRecord::from_bytes(kind, &unhex(bytes.trim()), h.payload_len).unwrap();
        assert_eq!(d.decode(&parsed).unwrap(), *h);
    }
}

#[test]
fn generated_traffic_round_trips_with_synchronized_contexts() {
    for dir in Direction::ALL {
        let packets = generate_scenario(&GameProfile::wow(), dir, 40, 500, 11).unwrap();
        let entries = compress_stream(&packets, RefreshPolicy::FirstOnly).unwrap();
        let mut c = Compressor::new(RefreshPolicy::FirstOnly);
        let mut d = Decompressor::new();
        for (p, e) in packets.iter().zip(&entries) {
            let record = c.encode(p).unwrap();
            assert_eq!(record, e.record);
            let back = d.decode_packet(&record, p.arrival_us).unwrap();
            assert_eq!(back, *p);
            let enc = c.context(p.flow_id).unwrap();
            let dec = d.context(record.cid).unwrap();
            assert_eq!(state_hash(enc), state_hash(dec));
        }
    }
}

#[test]
fn compressed_headers_never_exceed_fourteen_bytes() {
    let packets = generate_scenario(&GameProfile::wow(), Direction::ClientToServer, 20, 2000, 3).unwrap();
    let entries = compress_stream(&packets, RefreshPolicy::FirstOnly).unwrap();
    let mut full = 0;
    for e in &entries {
        match e.record.kind {
            RecordKind::FullHeader => full += 1,
            RecordKind::CompressedTcp => assert!(e.record.header_len() <= 14),
        }
    }
    assert_eq!(full, 20);
}

#[test]
fn corrupted_mask_is_caught() {
    let seq = golden_sequence();
    let mut c = Compressor::new(RefreshPolicy::FirstOnly);
    let mut d = Decompressor::new();
    d.decode(&c.encode_header(&seq[0]).unwrap()).unwrap();
    let mut r = c.encode_header(&seq[1]).unwrap();
    r.mask |= mask::ACK;
    assert!(matches!(d.decode(&r), Err(CodecError::Framing(_))));
}

/// Field deltas: none, one-byte, or anything else.
fn u32_step() -> impl Strategy<Value = u32> {
    prop_oneof![Just(0u32), 1u32..=255, any::<u32>()]
}

fn u16_step() -> impl Strategy<Value = u16> {
    prop_oneof![Just(0u16), 1u16..=255, any::<u16>()]
}

fn window_step() -> impl Strategy<Value = i32> {
    prop_oneof![Just(0i32), -128i32..=127, -65535i32..=65535]
}

#[derive(Debug, Clone)]
struct Step {
    flow: u32,
    dseq: u32,
    dack: u32,
    dwin: i32,
    dipid: u16,
    push: bool,
    payload: u32,
}

fn step() -> impl Strategy<Value = Step> {
    (
        0u32..4,
        u32_step(),
        u32_step(),
        window_step(),
        u16_step(),
        any::<bool>(),
        0u32..1460,
    )
        .prop_map(|(flow, dseq, dack, dwin, dipid, push, payload)| Step {
            flow,
            dseq,
            dack,
            dwin,
            dipid,
            push,
            payload,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_field_evolution_round_trips(
        start in (any::<u32>(), any::<u32>(), any::<u16>(), any::<u16>()),
        steps in prop::collection::vec(step(), 1..200),
        refresh in prop_oneof![Just(RefreshPolicy::FirstOnly), (1u32..10).prop_map(RefreshPolicy::Every)],
    ) {
        let mut flows: Vec<TcpIpHeader> = (0..4)
            .map(|f| TcpIpHeader {
                def: DefFields::for_flow(f, if f % 2 == 0 { Direction::ClientToServer } else { Direction::ServerToClient }),
                ipid: start.3,
                seq: start.0,
                ack: start.1,
                window: start.2,
                push: false,
                urgent_pointer: 0,
                payload_len: 0,
            })
            .collect();
        let mut c = Compressor::new(refresh);
        let mut d = Decompressor::new();
        for s in steps {
            let h = &mut flows[s.flow as usize];
            h.seq = h.seq.wrapping_add(s.dseq);
            h.ack = h.ack.wrapping_add(s.dack);
            h.window = (i32::from(h.window) + s.dwin).rem_euclid(65536) as u16;
            h.ipid = h.ipid.wrapping_add(s.dipid);
            h.push = s.push;
            h.payload_len = s.payload;
            let record = c.encode_header(h).unwrap();
            if record.kind == RecordKind::CompressedTcp {
                prop_assert!(record.header_len() <= 4 + 3 + 5 + 5 + 3);
            }
            let wire = CompressedRecord::from_bytes(record.kind, &record.to_bytes(), record.payload_len).unwrap();
            prop_assert_eq!(&wire, &record);
            prop_assert_eq!(d.decode(&wire).unwrap(), *h);
            prop_assert_eq!(
                state_hash(c.context(s.flow).unwrap()),
                state_hash(d.context(record.cid).unwrap())
            );
        }
    }

    #[test]
    fn field_bytes_length_follows_the_mask(
        dseq in u32_step(), dack in u32_step(), dwin in window_step(), dipid in u16_step(),
    ) {
        let h0 = base_header();
        let h1 = TcpIpHeader {
            seq: h0.seq.wrapping_add(dseq),
            ack: h0.ack.wrapping_add(dack),
            window: (i32::from(h0.window) + dwin).rem_euclid(65536) as u16,
            ipid: h0.ipid.wrapping_add(dipid),
            ..h0
        };
        let mut c = Compressor::new(RefreshPolicy::FirstOnly);
        c.encode_header(&h0).unwrap();
        let r = c.encode_header(&h1).unwrap();

        // Independent length model: mask bit absent -> 0, else 1 or escape+full.
        let win_delta = h1.window.wrapping_sub(h0.window) as i16;
        let expect_w = if h1.window == h0.window { 0 } else if (-128..=127).contains(&win_delta) { 1 } else { 3 };
        let expect_a = match dack { 0 => 0, 1..=255 => 1, _ => 5 };
        let expect_s = match dseq { 0 => 0, 1..=255 => 1, _ => 5 };
        let expect_i = match dipid { 0 => 0, 1..=255 => 1, _ => 3 };
        prop_assert_eq!(r.field_bytes.len(), expect_w + expect_a + expect_s + expect_i);
        prop_assert_eq!(r.mask & mask::WINDOW != 0, expect_w > 0);
        prop_assert_eq!(r.mask & mask::ACK != 0, expect_a > 0);
        prop_assert_eq!(r.mask & mask::SEQ != 0, expect_s > 0);
        prop_assert_eq!(r.mask & mask::IPID != 0, expect_i > 0);
        prop_assert_eq!(r.mask & mask::RESERVED, 0);
    }

    #[test]
    fn truncated_or_padded_records_are_rejected(
        dseq in 1u32..=255, cut in 1usize..3, pad in any::<u8>(),
    ) {
        let h0 = base_header();
        let h1 = TcpIpHeader { seq: h0.seq + dseq, ipid: h0.ipid + 1, ..h0 };
        let mut c = Compressor::new(RefreshPolicy::FirstOnly);
        let mut d = Decompressor::new();
        d.decode(&c.encode_header(&h0).unwrap()).unwrap();
        let bytes = c.encode_header(&h1).unwrap().to_bytes();

        let short = CompressedRecord::from_bytes(RecordKind::CompressedTcp, &bytes[..bytes.len() - cut], 12).unwrap();
        prop_assert!(d.decode(&short).is_err());
        let mut long = bytes.clone();
        long.push(pad);
        let long = CompressedRecord::from_bytes(RecordKind::CompressedTcp, &long, 12).unwrap();
        prop_assert!(d.decode(&long).is_err());
    }
}
