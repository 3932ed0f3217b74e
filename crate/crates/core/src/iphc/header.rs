//! 40-byte TCP/IPv4 header of a simulated game packet.

use std::net::Ipv4Addr;

use crate::profile::Direction;
use crate::traffic::NativePacket;

use super::CodecError;

pub const HEADER_LEN: usize = 40;

const IP_VERSION_IHL: u8 = 0x45;
const IP_PROTO_TCP: u8 = 6;
const TCP_DATA_OFFSET: u8 = 5 << 4;
const TCP_FLAG_PSH: u8 = 0x08;
const TCP_FLAG_ACK: u8 = 0x10;
const DEFAULT_TTL: u8 = 64;

/// Base address of simulated clients; client `n` is `CLIENT_NET + n`.
const CLIENT_NET: u32 = 0x0a00_0000;
/// Largest flow id that maps onto a distinct client address.
pub const MAX_FLOW_ID: u32 = 0x00ff_ffff;
pub const SERVER_ADDR: Ipv4Addr = Ipv4Addr::new(198, 51, 100, 1);
pub const SERVER_PORT: u16 = 3724;
const CLIENT_PORT_BASE: u16 = 49152;

/// Header fields that never change within a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DefFields {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub ttl: u8,
    pub dont_fragment: bool,
}

impl DefFields {
    pub fn for_flow(flow_id: u32, direction: Direction) -> Self {
        let client = Ipv4Addr::from(CLIENT_NET + (flow_id & MAX_FLOW_ID));
        let client_port = CLIENT_PORT_BASE + (flow_id % 16384) as u16;
        let (src, dst, src_port, dst_port) = match direction {
            Direction::ClientToServer => (client, SERVER_ADDR, client_port, SERVER_PORT),
            Direction::ServerToClient => (SERVER_ADDR, client, SERVER_PORT, client_port),
        };
        DefFields {
            src,
            dst,
            src_port,
            dst_port,
            ttl: DEFAULT_TTL,
            dont_fragment: true,
        }
    }

    pub fn direction(&self) -> Direction {
        if self.src == SERVER_ADDR {
            Direction::ServerToClient
        } else {
            Direction::ClientToServer
        }
    }

    pub fn flow_id(&self) -> u32 {
        let client = match self.direction() {
            Direction::ClientToServer => self.src,
            Direction::ServerToClient => self.dst,
        };
        u32::from(client).wrapping_sub(CLIENT_NET) & MAX_FLOW_ID
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TcpIpHeader {
    pub def: DefFields,
    pub ipid: u16,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    pub push: bool,
    pub urgent_pointer: u16,
    pub payload_len: u32,
}

impl TcpIpHeader {
    pub fn from_packet(p: &NativePacket) -> Self {
        TcpIpHeader {
            def: DefFields::for_flow(p.flow_id, p.direction),
            ipid: p.ipid,
            seq: p.seq,
            ack: p.ack,
            window: p.window,
            push: p.push,
            urgent_pointer: 0,
            payload_len: p.payload_len,
        }
    }

    /// TCP checksum over the pseudo-header, this header and an all-zero
    /// payload of `payload_len` bytes.
    pub fn tcp_checksum(&self) -> u16 {
        let tcp_len = 20 + self.payload_len;
        let mut sum = 0u64;
        sum += u64::from(u32::from(self.def.src) >> 16) + u64::from(u32::from(self.def.src) & 0xffff);
        sum += u64::from(u32::from(self.def.dst) >> 16) + u64::from(u32::from(self.def.dst) & 0xffff);
        sum += u64::from(IP_PROTO_TCP);
        sum += u64::from(tcp_len >> 16) + u64::from(tcp_len & 0xffff);
        let tcp = self.tcp_bytes(0);
        for word in tcp.chunks_exact(2) {
            sum += u64::from(u16::from_be_bytes([word[0], word[1]]));
        }
        !fold(sum)
    }

    fn flags(&self) -> u8 {
        TCP_FLAG_ACK | if self.push { TCP_FLAG_PSH } else { 0 }
    }

    fn tcp_bytes(&self, checksum: u16) -> [u8; 20] {
        let mut b = [0u8; 20];
        b[0..2].copy_from_slice(&self.def.src_port.to_be_bytes());
        b[2..4].copy_from_slice(&self.def.dst_port.to_be_bytes());
        b[4..8].copy_from_slice(&self.seq.to_be_bytes());
        b[8..12].copy_from_slice(&self.ack.to_be_bytes());
        b[12] = TCP_DATA_OFFSET;
        b[13] = self.flags();
        b[14..16].copy_from_slice(&self.window.to_be_bytes());
        b[16..18].copy_from_slice(&checksum.to_be_bytes());
        b[18..20].copy_from_slice(&self.urgent_pointer.to_be_bytes());
        b
    }

    /// Serialized header. With `cid`, the low byte of the IP total length
    /// carries the context identifier (FULL_HEADER form) and the length is
    /// left to the link layer.
    pub fn to_bytes(&self, cid: Option<u8>) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0] = IP_VERSION_IHL;
        let total_len = match cid {
            Some(cid) => u16::from(cid),
            None => (HEADER_LEN as u32 + self.payload_len).min(u32::from(u16::MAX)) as u16,
        };
        b[2..4].copy_from_slice(&total_len.to_be_bytes());
        b[4..6].copy_from_slice(&self.ipid.to_be_bytes());
        if self.def.dont_fragment {
            b[6] = 0x40;
        }
        b[8] = self.def.ttl;
        b[9] = IP_PROTO_TCP;
        b[12..16].copy_from_slice(&self.def.src.octets());
        b[16..20].copy_from_slice(&self.def.dst.octets());
        let ip_sum = !fold(
            b[..20]
                .chunks_exact(2)
                .map(|w| u64::from(u16::from_be_bytes([w[0], w[1]])))
                .sum(),
        );
        b[10..12].copy_from_slice(&ip_sum.to_be_bytes());
        b[20..].copy_from_slice(&self.tcp_bytes(self.tcp_checksum()));
        b
    }

    /// Parses a FULL_HEADER, returning the header and the CID it carries.
    pub fn parse_full(bytes: &[u8], payload_len: u32) -> Result<(Self, u8), CodecError> {
        if bytes.len() != HEADER_LEN {
            return Err(CodecError::Framing(format!(
                "full header is {} bytes, expected {HEADER_LEN}",
                bytes.len()
            )));
        }
        if bytes[0] != IP_VERSION_IHL || bytes[9] != IP_PROTO_TCP || bytes[32] != TCP_DATA_OFFSET {
            return Err(CodecError::Framing("not an option-less TCP/IPv4 header".into()));
        }
        let be16 = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let be32 = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let cid = bytes[3];
        let flags = bytes[33];
        let header = TcpIpHeader {
            def: DefFields {
                src: Ipv4Addr::from(be32(12)),
                dst: Ipv4Addr::from(be32(16)),
                src_port: be16(20),
                dst_port: be16(22),
                ttl: bytes[8],
                dont_fragment: bytes[6] & 0x40 != 0,
            },
            ipid: be16(4),
            seq: be32(24),
            ack: be32(28),
            window: be16(34),
            push: flags & TCP_FLAG_PSH != 0,
            urgent_pointer: be16(38),
            payload_len,
        };
        if header.tcp_checksum() != be16(36) {
            return Err(CodecError::ChecksumMismatch { cid });
        }
        Ok((header, cid))
    }

    pub fn to_packet(&self, arrival_us: u64) -> NativePacket {
        NativePacket {
            arrival_us,
            direction: self.def.direction(),
            flow_id: self.def.flow_id(),
            payload_len: self.payload_len,
            push: self.push,
            seq: self.seq,
            ack: self.ack,
            window: self.window,
            ipid: self.ipid,
        }
    }
}

fn fold(mut sum: u64) -> u16 {
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}
