use std::collections::HashMap;

use thiserror::Error;

use super::header::{DefFields, TcpIpHeader, HEADER_LEN, MAX_FLOW_ID};
use super::mask;
use crate::traffic::NativePacket;

/// CIDs are one byte.
pub const MAX_CONTEXTS: usize = 256;

const ESCAPE: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("no free context identifier for flow {flow_id} ({MAX_CONTEXTS} flows active)")]
    CidExhausted { flow_id: u32 },
    #[error("flow id {0} exceeds the simulated address space")]
    FlowOutOfRange(u32),
    #[error("urgent pointer is non-zero; urgent data is not compressible here")]
    UrgentPointerSet,
    #[error("no context for CID {0}")]
    ContextMiss(u8),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("checksum mismatch after decoding CID {cid}; context is out of sync")]
    ChecksumMismatch { cid: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RefreshPolicy {
    /// FULL_HEADER only for the first packet of a flow.
    #[default]
    FirstOnly,
    /// Also resend a FULL_HEADER once this many packets went compressed.
    Every(u32),
}

/// Per-flow state, kept identically by the compressor and the decompressor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompressionContext {
    pub cid: u8,
    pub def: DefFields,
    pub last_seq: u32,
    pub last_ack: u32,
    pub last_window: u16,
    pub last_ipid: u16,
    pub packets_since_full: u32,
}

impl CompressionContext {
    fn install(cid: u8, h: &TcpIpHeader) -> Self {
        CompressionContext {
            cid,
            def: h.def,
            last_seq: h.seq,
            last_ack: h.ack,
            last_window: h.window,
            last_ipid: h.ipid,
            packets_since_full: 0,
        }
    }

    fn advance(&mut self, h: &TcpIpHeader) {
        self.last_seq = h.seq;
        self.last_ack = h.ack;
        self.last_window = h.window;
        self.last_ipid = h.ipid;
        self.packets_since_full += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    FullHeader,
    CompressedTcp,
}

/// One compressed packet header plus the length of the payload behind it.
///
/// For a FULL_HEADER `field_bytes` holds the whole 40-byte header and `mask`
/// is zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompressedRecord {
    pub kind: RecordKind,
    pub cid: u8,
    pub mask: u8,
    pub checksum: u16,
    pub field_bytes: Vec<u8>,
    pub payload_len: u32,
}

impl CompressedRecord {
    pub fn header_len(&self) -> u32 {
        match self.kind {
            RecordKind::FullHeader => HEADER_LEN as u32,
            RecordKind::CompressedTcp => 4 + self.field_bytes.len() as u32,
        }
    }

    /// Header bytes as they go on the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self.kind {
            RecordKind::FullHeader => self.field_bytes.clone(),
            RecordKind::CompressedTcp => {
                let mut out = Vec::with_capacity(4 + self.field_bytes.len());
                out.push(self.cid);
                out.push(self.mask);
                out.extend_from_slice(&self.checksum.to_be_bytes());
                out.extend_from_slice(&self.field_bytes);
                out
            }
        }
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); the header kind comes from the
    /// enclosing framing.
    pub fn from_bytes(kind: RecordKind, bytes: &[u8], payload_len: u32) -> Result<Self, CodecError> {
        match kind {
            RecordKind::FullHeader => {
                if bytes.len() != HEADER_LEN {
                    return Err(CodecError::Framing(format!(
                        "full header is {} bytes, expected {HEADER_LEN}",
                        bytes.len()
                    )));
                }
                Ok(CompressedRecord {
                    kind,
                    cid: bytes[3],
                    mask: 0,
                    checksum: u16::from_be_bytes([bytes[36], bytes[37]]),
                    field_bytes: bytes.to_vec(),
                    payload_len,
                })
            }
            RecordKind::CompressedTcp => {
                if bytes.len() < 4 {
                    return Err(CodecError::Framing(format!(
                        "compressed header of {} bytes is shorter than 4",
                        bytes.len()
                    )));
                }
                Ok(CompressedRecord {
                    kind,
                    cid: bytes[0],
                    mask: bytes[1],
                    checksum: u16::from_be_bytes([bytes[2], bytes[3]]),
                    field_bytes: bytes[4..].to_vec(),
                    payload_len,
                })
            }
        }
    }
}

/// Compressor end of a link: one context per active flow.
#[derive(Debug, Default)]
pub struct Compressor {
    refresh: RefreshPolicy,
    contexts: HashMap<u32, CompressionContext>,
    cid_in_use: Vec<bool>,
}

impl Compressor {
    pub fn new(refresh: RefreshPolicy) -> Self {
        Compressor {
            refresh,
            contexts: HashMap::new(),
            cid_in_use: vec![false; MAX_CONTEXTS],
        }
    }

    pub fn context(&self, flow_id: u32) -> Option<&CompressionContext> {
        self.contexts.get(&flow_id)
    }

    pub fn active_flows(&self) -> usize {
        self.contexts.len()
    }

    /// Frees the CID of a finished flow.
    pub fn release(&mut self, flow_id: u32) {
        if let Some(ctx) = self.contexts.remove(&flow_id) {
            self.cid_in_use[usize::from(ctx.cid)] = false;
        }
    }

    pub fn encode(&mut self, packet: &NativePacket) -> Result<CompressedRecord, CodecError> {
        if packet.flow_id > MAX_FLOW_ID {
            return Err(CodecError::FlowOutOfRange(packet.flow_id));
        }
        self.encode_header(&TcpIpHeader::from_packet(packet))
    }

    pub fn encode_header(&mut self, h: &TcpIpHeader) -> Result<CompressedRecord, CodecError> {
        if h.urgent_pointer != 0 {
            return Err(CodecError::UrgentPointerSet);
        }
        let flow_id = h.def.flow_id();
        let refresh = self.refresh;
        match self.contexts.get_mut(&flow_id) {
            Some(ctx) if ctx.def == h.def && !refresh_due(refresh, ctx) => {
                let record = compress(ctx, h);
                ctx.advance(h);
                Ok(record)
            }
            Some(ctx) => {
                let cid = ctx.cid;
                *ctx = CompressionContext::install(cid, h);
                Ok(full_header(cid, h))
            }
            None => {
                let cid = self
                    .cid_in_use
                    .iter()
                    .position(|used| !used)
                    .ok_or(CodecError::CidExhausted { flow_id })?;
                self.cid_in_use[cid] = true;
                let cid = cid as u8;
                self.contexts.insert(flow_id, CompressionContext::install(cid, h));
                Ok(full_header(cid, h))
            }
        }
    }
}

fn refresh_due(policy: RefreshPolicy, ctx: &CompressionContext) -> bool {
    match policy {
        RefreshPolicy::FirstOnly => false,
        RefreshPolicy::Every(n) => ctx.packets_since_full >= n,
    }
}

fn full_header(cid: u8, h: &TcpIpHeader) -> CompressedRecord {
    let bytes = h.to_bytes(Some(cid));
    CompressedRecord {
        kind: RecordKind::FullHeader,
        cid,
        mask: 0,
        checksum: u16::from_be_bytes([bytes[36], bytes[37]]),
        field_bytes: bytes.to_vec(),
        payload_len: h.payload_len,
    }
}

fn compress(ctx: &CompressionContext, h: &TcpIpHeader) -> CompressedRecord {
    let mut m = 0u8;
    let mut fields = Vec::with_capacity(17);

    let dw = h.window.wrapping_sub(ctx.last_window) as i16;
    if dw != 0 {
        m |= mask::WINDOW;
        match i8::try_from(dw) {
            Ok(d) => fields.push(d as u8),
            Err(_) => {
                fields.push(ESCAPE);
                fields.extend_from_slice(&h.window.to_be_bytes());
            }
        }
    }
    for (bit, new, old) in [(mask::ACK, h.ack, ctx.last_ack), (mask::SEQ, h.seq, ctx.last_seq)] {
        let d = new.wrapping_sub(old);
        if d != 0 {
            m |= bit;
            match u8::try_from(d) {
                Ok(d) => fields.push(d),
                Err(_) => {
                    fields.push(ESCAPE);
                    fields.extend_from_slice(&new.to_be_bytes());
                }
            }
        }
    }
    let di = h.ipid.wrapping_sub(ctx.last_ipid);
    if di != 0 {
        m |= mask::IPID;
        match u8::try_from(di) {
            Ok(d) => fields.push(d),
            Err(_) => {
                fields.push(ESCAPE);
                fields.extend_from_slice(&h.ipid.to_be_bytes());
            }
        }
    }
    if h.push {
        m |= mask::PUSH;
    }

    CompressedRecord {
        kind: RecordKind::CompressedTcp,
        cid: ctx.cid,
        mask: m,
        checksum: h.tcp_checksum(),
        field_bytes: fields,
        payload_len: h.payload_len,
    }
}

/// Decompressor end of a link.
#[derive(Debug)]
pub struct Decompressor {
    contexts: Vec<Option<CompressionContext>>,
}

impl Default for Decompressor {
    fn default() -> Self {
        Decompressor {
            contexts: vec![None; MAX_CONTEXTS],
        }
    }
}

impl Decompressor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn context(&self, cid: u8) -> Option<&CompressionContext> {
        self.contexts[usize::from(cid)].as_ref()
    }

    pub fn decode(&mut self, record: &CompressedRecord) -> Result<TcpIpHeader, CodecError> {
        match record.kind {
            RecordKind::FullHeader => {
                let (h, cid) = TcpIpHeader::parse_full(&record.field_bytes, record.payload_len)?;
                if cid != record.cid {
                    return Err(CodecError::Framing(format!(
                        "record CID {} disagrees with header CID {cid}",
                        record.cid
                    )));
                }
                self.contexts[usize::from(cid)] = Some(CompressionContext::install(cid, &h));
                Ok(h)
            }
            RecordKind::CompressedTcp => {
                let ctx = self.contexts[usize::from(record.cid)]
                    .as_mut()
                    .ok_or(CodecError::ContextMiss(record.cid))?;
                let h = expand(ctx, record)?;
                if h.tcp_checksum() != record.checksum {
                    return Err(CodecError::ChecksumMismatch { cid: record.cid });
                }
                ctx.advance(&h);
                Ok(h)
            }
        }
    }

    pub fn decode_packet(&mut self, record: &CompressedRecord, arrival_us: u64) -> Result<NativePacket, CodecError> {
        self.decode(record).map(|h| h.to_packet(arrival_us))
    }
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl FieldReader<'_> {
    fn take<const N: usize>(&mut self, field: &str) -> Result<[u8; N], CodecError> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            CodecError::Framing(format!(
                "{field} field truncated: need {N} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length checked"))
    }

    /// Returns `Err(full bytes)` after an escape, `Ok(delta)` otherwise.
    fn delta_or_full<const N: usize>(&mut self, field: &str) -> Result<Result<u8, [u8; N]>, CodecError> {
        let [first] = self.take::<1>(field)?;
        if first == ESCAPE {
            Ok(Err(self.take::<N>(field)?))
        } else {
            Ok(Ok(first))
        }
    }
}

fn expand(ctx: &CompressionContext, record: &CompressedRecord) -> Result<TcpIpHeader, CodecError> {
    let m = record.mask;
    if m & mask::RESERVED != 0 {
        return Err(CodecError::Framing(format!("reserved mask bits set in {m:#010b}")));
    }
    if m & mask::URGENT != 0 {
        return Err(CodecError::Framing("urgent pointer is never compressed".into()));
    }
    let mut r = FieldReader {
        bytes: &record.field_bytes,
        pos: 0,
    };

    let mut window = ctx.last_window;
    if m & mask::WINDOW != 0 {
        window = match r.delta_or_full::<2>("window")? {
            Ok(d) => window.wrapping_add_signed(i16::from(d as i8)),
            Err(full) => u16::from_be_bytes(full),
        };
    }
    let mut ack = ctx.last_ack;
    if m & mask::ACK != 0 {
        ack = match r.delta_or_full::<4>("ack")? {
            Ok(d) => ack.wrapping_add(u32::from(d)),
            Err(full) => u32::from_be_bytes(full),
        };
    }
    let mut seq = ctx.last_seq;
    if m & mask::SEQ != 0 {
        seq = match r.delta_or_full::<4>("seq")? {
            Ok(d) => seq.wrapping_add(u32::from(d)),
            Err(full) => u32::from_be_bytes(full),
        };
    }
    let mut ipid = ctx.last_ipid;
    if m & mask::IPID != 0 {
        ipid = match r.delta_or_full::<2>("ipid")? {
            Ok(d) => ipid.wrapping_add(u16::from(d)),
            Err(full) => u16::from_be_bytes(full),
        };
    }
    if r.pos != record.field_bytes.len() {
        return Err(CodecError::Framing(format!(
            "{} trailing bytes after the fields announced by mask {m:#010b}",
            record.field_bytes.len() - r.pos
        )));
    }

    Ok(TcpIpHeader {
        def: ctx.def,
        ipid,
        seq,
        ack,
        window,
        push: m & mask::PUSH != 0,
        urgent_pointer: 0,
        payload_len: record.payload_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Direction;

    fn base() -> NativePacket {
        NativePacket {
            arrival_us: 0,
            direction: Direction::ClientToServer,
            flow_id: 3,
            payload_len: 12,
            push: true,
            seq: 1000,
            ack: 5000,
            window: 8000,
            ipid: 40,
        }
    }

    fn pair() -> (Compressor, Decompressor) {
        (Compressor::new(RefreshPolicy::FirstOnly), Decompressor::new())
    }

    fn roundtrip(c: &mut Compressor, d: &mut Decompressor, p: &NativePacket) -> CompressedRecord {
        let rec = c.encode(p).unwrap();
        let back = d.decode_packet(&rec, p.arrival_us).unwrap();
        assert_eq!(&back, p);
        assert_eq!(c.context(p.flow_id), d.context(rec.cid));
        rec
    }

    #[test]
    fn first_packet_is_full_header() {
        let (mut c, mut d) = pair();
        let rec = roundtrip(&mut c, &mut d, &base());
        assert_eq!(rec.kind, RecordKind::FullHeader);
        assert_eq!(rec.header_len(), 40);
        assert_eq!(rec.field_bytes[3], rec.cid);
    }

    #[test]
    fn seq_and_ipid_change() {
        let (mut c, mut d) = pair();
        let p0 = base();
        roundtrip(&mut c, &mut d, &p0);
        let p1 = NativePacket {
            seq: p0.seq + 12,
            ipid: p0.ipid + 1,
            ..p0
        };
        let rec = roundtrip(&mut c, &mut d, &p1);
        assert_eq!(rec.kind, RecordKind::CompressedTcp);
        assert_eq!(rec.header_len(), 6);
        assert_eq!(rec.mask, mask::SEQ | mask::IPID | mask::PUSH);
        assert_eq!(rec.field_bytes, [12, 1]);
    }

    #[test]
    fn large_ack_jump_is_escaped() {
        let (mut c, mut d) = pair();
        let p0 = base();
        roundtrip(&mut c, &mut d, &p0);
        let p1 = NativePacket {
            ack: p0.ack + 70_000,
            ipid: p0.ipid + 1,
            ..p0
        };
        let rec = roundtrip(&mut c, &mut d, &p1);
        let ack = (p0.ack + 70_000).to_be_bytes();
        assert_eq!(rec.field_bytes, [0, ack[0], ack[1], ack[2], ack[3], 1]);
        assert_eq!(rec.header_len(), 10);
    }

    #[test]
    fn negative_window_delta_fits_one_byte() {
        let (mut c, mut d) = pair();
        let p0 = base();
        roundtrip(&mut c, &mut d, &p0);
        let p1 = NativePacket {
            window: p0.window - 50,
            ipid: p0.ipid + 1,
            ..p0
        };
        let rec = roundtrip(&mut c, &mut d, &p1);
        assert_eq!(rec.header_len(), 6);
        assert_eq!(rec.mask & (mask::WINDOW | mask::IPID), mask::WINDOW | mask::IPID);
        assert_eq!(rec.field_bytes, [(-50i8) as u8, 1]);
    }

    #[test]
    fn window_range_edges() {
        for (delta, len) in [(-128i32, 1), (127, 1), (128, 3), (-129, 3)] {
            let (mut c, mut d) = pair();
            let p0 = base();
            roundtrip(&mut c, &mut d, &p0);
            let p1 = NativePacket {
                window: (i32::from(p0.window) + delta) as u16,
                ..p0
            };
            let rec = roundtrip(&mut c, &mut d, &p1);
            assert_eq!(rec.field_bytes.len(), len, "delta {delta}");
        }
    }

    #[test]
    fn ipid_clear_keeps_context_value() {
        let (mut c, mut d) = pair();
        let p0 = base();
        roundtrip(&mut c, &mut d, &p0);
        let p1 = NativePacket { seq: p0.seq + 1, ..p0 };
        let rec = roundtrip(&mut c, &mut d, &p1);
        assert_eq!(rec.mask & mask::IPID, 0);
        assert_eq!(d.context(rec.cid).unwrap().last_ipid, p0.ipid);
    }

    #[test]
    fn deltas_wrap_around() {
        let (mut c, mut d) = pair();
        let p0 = NativePacket {
            seq: u32::MAX - 5,
            ipid: u16::MAX,
            window: u16::MAX - 2,
            ..base()
        };
        roundtrip(&mut c, &mut d, &p0);
        let p1 = NativePacket {
            seq: 10,
            ipid: 0,
            window: 3,
            ..p0
        };
        let rec = roundtrip(&mut c, &mut d, &p1);
        assert_eq!(rec.field_bytes, [6, 16, 1]);
    }

    #[test]
    fn unknown_cid_is_a_context_miss() {
        let mut d = Decompressor::new();
        let rec = CompressedRecord::from_bytes(RecordKind::CompressedTcp, &[7, 0, 0, 0], 0).unwrap();
        assert_eq!(d.decode(&rec), Err(CodecError::ContextMiss(7)));
    }

    #[test]
    fn framing_errors() {
        let (mut c, mut d) = pair();
        let p0 = base();
        let full = c.encode(&p0).unwrap();
        d.decode(&full).unwrap();
        let good = c.encode(&NativePacket { seq: p0.seq + 3, ..p0 }).unwrap();

        let mut truncated = good.clone();
        truncated.field_bytes.clear();
        assert!(matches!(d.decode(&truncated), Err(CodecError::Framing(_))));

        let mut trailing = good.clone();
        trailing.field_bytes.push(9);
        assert!(matches!(d.decode(&trailing), Err(CodecError::Framing(_))));

        let mut reserved = good.clone();
        reserved.mask |= 0x80;
        assert!(matches!(d.decode(&reserved), Err(CodecError::Framing(_))));

        d.decode(&good).unwrap();
    }

    #[test]
    fn lost_packet_is_detected_by_checksum() {
        let (mut c, mut d) = pair();
        let p0 = base();
        d.decode(&c.encode(&p0).unwrap()).unwrap();
        let _lost = c
            .encode(&NativePacket {
                seq: p0.seq + 12,
                ipid: p0.ipid + 1,
                ..p0
            })
            .unwrap();
        let next = c
            .encode(&NativePacket {
                seq: p0.seq + 24,
                ipid: p0.ipid + 2,
                ..p0
            })
            .unwrap();
        assert!(matches!(d.decode(&next), Err(CodecError::ChecksumMismatch { .. })));
    }

    #[test]
    fn cid_space_is_bounded() {
        let mut c = Compressor::new(RefreshPolicy::FirstOnly);
        for flow in 0..MAX_CONTEXTS as u32 {
            c.encode(&NativePacket {
                flow_id: flow,
                ..base()
            })
            .unwrap();
        }
        let err = c.encode(&NativePacket { flow_id: 999, ..base() }).unwrap_err();
        assert_eq!(err, CodecError::CidExhausted { flow_id: 999 });
        c.release(5);
        let rec = c.encode(&NativePacket { flow_id: 999, ..base() }).unwrap();
        assert_eq!(rec.cid, 5);
    }

    #[test]
    fn periodic_refresh_resends_full_header() {
        let mut c = Compressor::new(RefreshPolicy::Every(3));
        let mut d = Decompressor::new();
        let kinds: Vec<_> = (0..8u16)
            .map(|i| {
                let p = NativePacket { ipid: i, ..base() };
                let rec = c.encode(&p).unwrap();
                assert_eq!(d.decode_packet(&rec, 0).unwrap(), p);
                rec.kind == RecordKind::FullHeader
            })
            .collect();
        assert_eq!(kinds, [true, false, false, false, true, false, false, false]);
    }

    #[test]
    fn urgent_pointer_is_refused() {
        let mut c = Compressor::new(RefreshPolicy::FirstOnly);
        let mut h = TcpIpHeader::from_packet(&base());
        h.urgent_pointer = 1;
        assert_eq!(c.encode_header(&h), Err(CodecError::UrgentPointerSet));
    }

    #[test]
    fn wire_bytes_round_trip() {
        let (mut c, _) = pair();
        let p0 = base();
        for p in [p0, NativePacket { ack: p0.ack + 1, ..p0 }] {
            let rec = c.encode(&p).unwrap();
            let back = CompressedRecord::from_bytes(rec.kind, &rec.to_bytes(), rec.payload_len).unwrap();
            assert_eq!(back, rec);
        }
    }
}
