//! Generalized all-to-all crystal router.
//!
//! Messages carry an arbitrary destination rank; delivery happens in
//! ceil(log2 P) recursive-bisection rounds. The active range [lo, lo+n) is
//! split into a lower block of ceil(n/2) ranks and an upper block of
//! floor(n/2); rank id pairs with id +- ceil(n/2) and forwards every held
//! message whose destination lies in the partner's block. For powers of two
//! this is exactly the XOR-with-2^m partner schedule (high bit first). When
//! n is odd the unpaired middle rank folds its upper-going traffic onto the
//! first upper rank and receives nothing that round.

use super::Comm;
use crate::error::{Error, Result};

const TAG_CRYSTAL: u64 = u64::MAX - 3;

/// A message addressed to an arbitrary rank of the communicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedMessage {
    pub dest_rank: usize,
    pub source_rank: usize,
    pub tag: u64,
    pub payload: Vec<u8>,
}

impl RoutedMessage {
    pub fn new(dest_rank: usize, source_rank: usize, tag: u64, payload: Vec<u8>) -> Self {
        Self {
            dest_rank,
            source_rank,
            tag,
            payload,
        }
    }
}

/// Routing statistics for one crystal_route call on one rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouterStats {
    /// Exchange rounds this rank participated in (<= ceil(log2 P)).
    pub rounds: u32,
    /// Total payload bytes this rank forwarded during the rounds.
    pub bytes_forwarded: u64,
    /// Maximum number of messages held at any point.
    pub max_inbox: usize,
}

fn pack(msgs: &[RoutedMessage]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(msgs.len() as u32).to_le_bytes());
    for m in msgs {
        out.extend_from_slice(&(m.dest_rank as u32).to_le_bytes());
        out.extend_from_slice(&(m.source_rank as u32).to_le_bytes());
        out.extend_from_slice(&m.tag.to_le_bytes());
        out.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&m.payload);
    }
    out
}

fn unpack(bytes: &[u8]) -> Vec<RoutedMessage> {
    let mut off = 0;
    let count = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    off += 4;
    let mut msgs = Vec::with_capacity(count);
    for _ in 0..count {
        let dest = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        off += 4;
        let src = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        off += 4;
        let tag = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        let len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        off += 4;
        let payload = bytes[off..off + len].to_vec();
        off += len;
        msgs.push(RoutedMessage {
            dest_rank: dest,
            source_rank: src,
            tag,
            payload,
        });
    }
    msgs
}

pub fn crystal_route(
    comm: &Comm,
    outbox: Vec<RoutedMessage>,
) -> Result<(Vec<RoutedMessage>, RouterStats)> {
    let p = comm.size();
    let me = comm.rank();
    // destination validation happens before any exchange
    for m in &outbox {
        if m.dest_rank >= p {
            return Err(Error::Routing(format!(
                "destination {} out of range for communicator of size {}",
                m.dest_rank, p
            )));
        }
    }
    let mut stats = RouterStats::default();
    let mut inbox: Vec<RoutedMessage> = Vec::new();
    let mut pool: Vec<RoutedMessage> = Vec::new();
    for m in outbox {
        if m.dest_rank == me {
            inbox.push(m);
        } else {
            pool.push(m);
        }
    }
    stats.max_inbox = stats.max_inbox.max(inbox.len() + pool.len());

    let mut lo = 0usize;
    let mut n = p;
    while n > 1 {
        let nl = n.div_ceil(2);
        let bh = lo + nl;
        if me < bh {
            // lower block: forward everything destined at or above bh
            let (up, keep): (Vec<_>, Vec<_>) = pool.into_iter().partition(|m| m.dest_rank >= bh);
            pool = keep;
            let partner = me + nl;
            let sent_bytes: u64 = up.iter().map(|m| m.payload.len() as u64).sum();
            if partner < lo + n {
                let reply = comm.sendrecv_raw(partner, TAG_CRYSTAL, pack(&up));
                absorb(unpack(&reply), me, &mut inbox, &mut pool);
            } else {
                // unpaired middle rank of an odd block: fold upward traffic
                // onto the first upper rank, receive nothing this round
                comm.send_bytes(bh, TAG_CRYSTAL, pack(&up));
            }
            stats.bytes_forwarded += sent_bytes;
            n = nl;
        } else {
            // upper block: forward everything destined below bh
            let (down, keep): (Vec<_>, Vec<_>) = pool.into_iter().partition(|m| m.dest_rank < bh);
            pool = keep;
            let partner = me - nl;
            let sent_bytes: u64 = down.iter().map(|m| m.payload.len() as u64).sum();
            let reply = comm.sendrecv_raw(partner, TAG_CRYSTAL, pack(&down));
            absorb(unpack(&reply), me, &mut inbox, &mut pool);
            if n % 2 == 1 && me == bh {
                // extra packet folded over by the unpaired middle rank
                let extra = comm.recv_bytes(bh - 1, TAG_CRYSTAL);
                absorb(unpack(&extra), me, &mut inbox, &mut pool);
            }
            stats.bytes_forwarded += sent_bytes;
            lo = bh;
            n -= nl;
        }
        stats.rounds += 1;
        stats.max_inbox = stats.max_inbox.max(inbox.len() + pool.len());
    }
    debug_assert!(pool.is_empty(), "undelivered messages after routing");
    inbox.extend(pool);
    // deterministic delivery order
    inbox.sort_by(|a, b| (a.source_rank, a.tag).cmp(&(b.source_rank, b.tag)));
    Ok((inbox, stats))
}

fn absorb(
    msgs: Vec<RoutedMessage>,
    me: usize,
    inbox: &mut Vec<RoutedMessage>,
    pool: &mut Vec<RoutedMessage>,
) {
    for m in msgs {
        if m.dest_rank == me {
            inbox.push(m);
        } else {
            pool.push(m);
        }
    }
}
