//! Deterministic in-process message-passing runtime standing in for MPI.
//!
//! P ranks run as threads with isolated state; everything shared is
//! message-passed through per-rank mailboxes. The communication contract
//! mirrors MPI — collectives must be called by all ranks of a communicator
//! in the same order — so a real transport could be substituted behind the
//! same interface.
//!
//! Two schedulers are supported: `Concurrent` (threads run freely, blocking
//! on condvars) and `Serial` (a round-robin turnstile admits one runnable
//! rank at a time, switching at communication points). Results are
//! bitwise-identical across schedulers because message matching and
//! reduction orders are fixed.

mod crystal;

pub use crystal::{RoutedMessage, RouterStats};

use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

/// Scheduler mode for the rank harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Concurrent,
    Serial,
}

impl std::str::FromStr for Scheduler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concurrent" => Ok(Scheduler::Concurrent),
            "serial" => Ok(Scheduler::Serial),
            other => Err(Error::Config(format!("unknown scheduler '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

type MsgKey = (u32, u32, u64); // (comm id, source group rank, tag)

struct MailboxInner {
    queues: HashMap<MsgKey, VecDeque<Vec<u8>>>,
}

struct Mailbox {
    inner: Mutex<MailboxInner>,
    cv: Condvar,
}

struct TurnState {
    current: usize,
    active: Vec<bool>,
}

struct Turnstile {
    state: Mutex<TurnState>,
    cv: Condvar,
}

struct World {
    p: usize,
    scheduler: Scheduler,
    boxes: Vec<Mailbox>,
    turn: Turnstile,
    aborted: AtomicBool,
    abort_rank: AtomicUsize,
    next_comm_id: AtomicU32,
}

/// Panic payload used to cascade an abort through blocked ranks.
struct AbortSignal;

impl World {
    fn new(p: usize, scheduler: Scheduler) -> Self {
        World {
            p,
            scheduler,
            boxes: (0..p)
                .map(|_| Mailbox {
                    inner: Mutex::new(MailboxInner {
                        queues: HashMap::new(),
                    }),
                    cv: Condvar::new(),
                })
                .collect(),
            turn: Turnstile {
                state: Mutex::new(TurnState {
                    current: 0,
                    active: vec![true; p],
                }),
                cv: Condvar::new(),
            },
            aborted: AtomicBool::new(false),
            abort_rank: AtomicUsize::new(usize::MAX),
            next_comm_id: AtomicU32::new(1),
        }
    }

    fn check_abort(&self) {
        if self.aborted.load(Ordering::SeqCst) {
            panic::panic_any(AbortSignal);
        }
    }

    fn abort(&self, rank: usize) {
        if !self.aborted.swap(true, Ordering::SeqCst) {
            self.abort_rank.store(rank, Ordering::SeqCst);
        }
        for b in &self.boxes {
            b.cv.notify_all();
        }
        self.turn.cv.notify_all();
    }

    fn deposit(&self, dest_world: usize, key: MsgKey, bytes: Vec<u8>) {
        let mb = &self.boxes[dest_world];
        {
            let mut inner = mb.inner.lock().unwrap();
            inner.queues.entry(key).or_default().push_back(bytes);
        }
        mb.cv.notify_all();
        if self.scheduler == Scheduler::Serial {
            self.turn.cv.notify_all();
        }
    }

    fn try_take(&self, my_world: usize, key: MsgKey) -> Option<Vec<u8>> {
        let mb = &self.boxes[my_world];
        let mut inner = mb.inner.lock().unwrap();
        if let Some(q) = inner.queues.get_mut(&key) {
            if let Some(m) = q.pop_front() {
                if q.is_empty() {
                    inner.queues.remove(&key);
                }
                return Some(m);
            }
        }
        None
    }

    fn recv_blocking(&self, my_world: usize, key: MsgKey) -> Vec<u8> {
        match self.scheduler {
            Scheduler::Concurrent => {
                let mb = &self.boxes[my_world];
                let mut inner = mb.inner.lock().unwrap();
                loop {
                    self.check_abort();
                    if let Some(q) = inner.queues.get_mut(&key) {
                        if let Some(m) = q.pop_front() {
                            if q.is_empty() {
                                inner.queues.remove(&key);
                            }
                            return m;
                        }
                    }
                    inner = mb.cv.wait(inner).unwrap();
                }
            }
            Scheduler::Serial => loop {
                self.check_abort();
                if let Some(m) = self.try_take(my_world, key) {
                    return m;
                }
                self.yield_turn(my_world);
            },
        }
    }

    /// Serial mode: pass the turn to the next active rank, then wait
    /// until it rotates back here.
    fn yield_turn(&self, rank: usize) {
        let mut st = self.turn.state.lock().unwrap();
        if st.current == rank {
            if let Some(next) = next_active(&st.active, rank) {
                st.current = next;
            }
        }
        self.turn.cv.notify_all();
        while st.current != rank {
            self.check_abort();
            st = self.turn.cv.wait(st).unwrap();
            if self.aborted.load(Ordering::SeqCst) {
                drop(st);
                self.check_abort();
                return;
            }
        }
    }

    fn wait_for_turn(&self, rank: usize) {
        let mut st = self.turn.state.lock().unwrap();
        while st.current != rank {
            if self.aborted.load(Ordering::SeqCst) {
                drop(st);
                self.check_abort();
                return;
            }
            st = self.turn.cv.wait(st).unwrap();
        }
    }

    fn leave(&self, rank: usize) {
        let mut st = self.turn.state.lock().unwrap();
        st.active[rank] = false;
        if st.current == rank {
            if let Some(next) = next_active(&st.active, rank) {
                st.current = next;
            }
        }
        self.turn.cv.notify_all();
    }
}

fn next_active(active: &[bool], from: usize) -> Option<usize> {
    let p = active.len();
    for step in 1..=p {
        let r = (from + step) % p;
        if active[r] {
            return Some(r);
        }
    }
    None
}

/// One rank's handle on a communicator: a group of ranks with its own
/// message namespace. Split communicators partition the parent's ranks.
pub struct Comm {
    world: Arc<World>,
    id: u32,
    /// world rank per group rank, ascending group order
    members: Arc<Vec<usize>>,
    rank: usize,
}

const TAG_COLL: u64 = u64::MAX - 1;

impl Comm {
    fn world_comm(world: Arc<World>, rank: usize) -> Self {
        let p = world.p;
        Comm {
            world,
            id: 0,
            members: Arc::new((0..p).collect()),
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Group id of this communicator (0 for the world communicator).
    pub fn group_id(&self) -> u32 {
        self.id
    }

    /// World rank of a group rank.
    pub fn world_rank(&self, group_rank: usize) -> usize {
        self.members[group_rank]
    }

    /// Non-blocking deposit of a message for `dest` (group rank).
    pub fn send_bytes(&self, dest: usize, tag: u64, bytes: Vec<u8>) {
        assert!(dest < self.size(), "send dest {dest} out of range");
        self.world
            .deposit(self.members[dest], (self.id, self.rank as u32, tag), bytes);
    }

    /// Blocking receive of the next message from `src` (group rank) with
    /// the given tag. Matching is FIFO per (source, tag) channel.
    pub fn recv_bytes(&self, src: usize, tag: u64) -> Vec<u8> {
        assert!(src < self.size(), "recv src {src} out of range");
        self.world
            .recv_blocking(self.members[self.rank], (self.id, src as u32, tag))
    }

    /// Collective barrier (gather-to-root then release).
    pub fn barrier(&self) {
        if self.size() == 1 {
            return;
        }
        if self.rank == 0 {
            for src in 1..self.size() {
                let _ = self.recv_bytes(src, TAG_COLL);
            }
            for dest in 1..self.size() {
                self.send_bytes(dest, TAG_COLL, Vec::new());
            }
        } else {
            self.send_bytes(0, TAG_COLL, Vec::new());
            let _ = self.recv_bytes(0, TAG_COLL);
        }
    }

    /// Allreduce on an f64 vector. The reduction is performed on rank 0 in
    /// ascending rank order, so results are bitwise reproducible and match
    /// a fixed-order serial fold.
    pub fn allreduce(&self, buf: &mut [f64], op: ReduceOp) -> Result<()> {
        if self.size() == 1 {
            return Ok(());
        }
        if self.rank == 0 {
            let n = buf.len();
            let mut ok = true;
            let mut acc: Vec<f64> = buf.to_vec();
            for src in 1..self.size() {
                let bytes = self.recv_bytes(src, TAG_COLL);
                if bytes.len() != n * 8 {
                    ok = false;
                    continue;
                }
                for i in 0..n {
                    let v = f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
                    acc[i] = match op {
                        ReduceOp::Sum => acc[i] + v,
                        ReduceOp::Min => acc[i].min(v),
                        ReduceOp::Max => acc[i].max(v),
                    };
                }
            }
            let mut reply = Vec::with_capacity(1 + n * 8);
            reply.push(if ok { 1u8 } else { 0u8 });
            for v in &acc {
                reply.extend_from_slice(&v.to_le_bytes());
            }
            for dest in 1..self.size() {
                self.send_bytes(dest, TAG_COLL, reply.clone());
            }
            if !ok {
                return Err(Error::Collective(
                    "allreduce length mismatch across ranks".into(),
                ));
            }
            buf.copy_from_slice(&acc);
            Ok(())
        } else {
            let mut bytes = Vec::with_capacity(buf.len() * 8);
            for v in buf.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            self.send_bytes(0, TAG_COLL, bytes);
            let reply = self.recv_bytes(0, TAG_COLL);
            if reply[0] == 0 {
                return Err(Error::Collective(
                    "allreduce length mismatch across ranks".into(),
                ));
            }
            let body = &reply[1..];
            if body.len() != buf.len() * 8 {
                return Err(Error::Collective(
                    "allreduce length mismatch across ranks".into(),
                ));
            }
            for (i, v) in buf.iter_mut().enumerate() {
                *v = f64::from_le_bytes(body[i * 8..i * 8 + 8].try_into().unwrap());
            }
            Ok(())
        }
    }

    pub fn allreduce_scalar(&self, v: f64, op: ReduceOp) -> Result<f64> {
        let mut buf = [v];
        self.allreduce(&mut buf, op)?;
        Ok(buf[0])
    }

    pub fn allreduce_u64(&self, v: u64, op: ReduceOp) -> Result<u64> {
        // exact for the element/dof counts this is used for
        let r = self.allreduce_scalar(v as f64, op)?;
        Ok(r as u64)
    }

    /// Gather each rank's bytes and return the full per-rank list everywhere.
    pub fn allgather_bytes(&self, data: &[u8]) -> Result<Vec<Vec<u8>>> {
        if self.size() == 1 {
            return Ok(vec![data.to_vec()]);
        }
        if self.rank == 0 {
            let mut all: Vec<Vec<u8>> = Vec::with_capacity(self.size());
            all.push(data.to_vec());
            for src in 1..self.size() {
                all.push(self.recv_bytes(src, TAG_COLL));
            }
            let mut packed = Vec::new();
            packed.extend_from_slice(&(all.len() as u32).to_le_bytes());
            for part in &all {
                packed.extend_from_slice(&(part.len() as u64).to_le_bytes());
                packed.extend_from_slice(part);
            }
            for dest in 1..self.size() {
                self.send_bytes(dest, TAG_COLL, packed.clone());
            }
            Ok(all)
        } else {
            self.send_bytes(0, TAG_COLL, data.to_vec());
            let packed = self.recv_bytes(0, TAG_COLL);
            let mut off = 0;
            let count = u32::from_le_bytes(packed[off..off + 4].try_into().unwrap()) as usize;
            off += 4;
            let mut all = Vec::with_capacity(count);
            for _ in 0..count {
                let len = u64::from_le_bytes(packed[off..off + 8].try_into().unwrap()) as usize;
                off += 8;
                all.push(packed[off..off + len].to_vec());
                off += len;
            }
            Ok(all)
        }
    }

    /// Broadcast bytes from group rank `root`.
    pub fn broadcast_bytes(&self, root: usize, data: Option<Vec<u8>>) -> Vec<u8> {
        if self.size() == 1 {
            return data.expect("root must supply data");
        }
        if self.rank == root {
            let data = data.expect("root must supply data");
            for dest in 0..self.size() {
                if dest != root {
                    self.send_bytes(dest, TAG_COLL, data.clone());
                }
            }
            data
        } else {
            self.recv_bytes(root, TAG_COLL)
        }
    }

    /// Split into sub-communicators by color; ranks of equal color form a
    /// group ordered by (key, parent rank). Collective.
    pub fn split(&self, color: usize, key: usize) -> Result<Comm> {
        let mut payload = Vec::with_capacity(24);
        payload.extend_from_slice(&(color as u64).to_le_bytes());
        payload.extend_from_slice(&(key as u64).to_le_bytes());
        let gathered = self.allgather_bytes(&payload)?;
        let mut entries: Vec<(usize, usize, usize)> = Vec::new(); // (color, key, parent rank)
        for (r, bytes) in gathered.iter().enumerate() {
            let c = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
            let k = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
            entries.push((c, k, r));
        }
        // unique colors in sorted order determine comm-id offsets
        let mut colors: Vec<usize> = entries.iter().map(|e| e.0).collect();
        colors.sort_unstable();
        colors.dedup();
        // rank 0 allocates a contiguous id block and broadcasts the base
        let base = if self.rank == 0 {
            let base = self
                .world
                .next_comm_id
                .fetch_add(colors.len() as u32, Ordering::SeqCst);
            self.broadcast_bytes(0, Some(base.to_le_bytes().to_vec()));
            base
        } else {
            let b = self.broadcast_bytes(0, None);
            u32::from_le_bytes(b[..4].try_into().unwrap())
        };
        let offset = colors.iter().position(|&c| c == color).unwrap() as u32;
        let mut group: Vec<(usize, usize)> = entries
            .iter()
            .filter(|e| e.0 == color)
            .map(|e| (e.1, e.2))
            .collect();
        group.sort_unstable();
        let members: Vec<usize> = group.iter().map(|&(_, r)| self.members[r]).collect();
        let my_world = self.members[self.rank];
        let rank = members.iter().position(|&w| w == my_world).unwrap();
        Ok(Comm {
            world: self.world.clone(),
            id: base + offset,
            members: Arc::new(members),
            rank,
        })
    }

    /// Generalized all-to-all: deliver arbitrarily addressed messages in
    /// ceil(log2 P) recursive-bisection rounds. See [`crystal`].
    pub fn crystal_route(
        &self,
        outbox: Vec<RoutedMessage>,
    ) -> Result<(Vec<RoutedMessage>, RouterStats)> {
        crystal::crystal_route(self, outbox)
    }

    pub(crate) fn sendrecv_raw(&self, partner: usize, tag: u64, data: Vec<u8>) -> Vec<u8> {
        self.send_bytes(partner, tag, data);
        self.recv_bytes(partner, tag)
    }
}

/// Run P rank instances of `program` to completion and collect their
/// results in rank order. Any rank panic aborts the others; the harness
/// reports the first failing rank.
pub fn spawn<T, F>(p: usize, scheduler: Scheduler, program: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Comm) -> T + Sync,
{
    if p == 0 {
        return Err(Error::Harness {
            rank: 0,
            msg: "spawn requires P >= 1".into(),
        });
    }
    let world = Arc::new(World::new(p, scheduler));
    let results: Vec<std::thread::Result<T>> = std::thread::scope(|s| {
        let mut handles = Vec::with_capacity(p);
        for r in 0..p {
            let world = world.clone();
            let program = &program;
            let h = std::thread::Builder::new()
                .name(format!("rank{r}"))
                .stack_size(16 * 1024 * 1024)
                .spawn_scoped(s, move || {
                    if world.scheduler == Scheduler::Serial {
                        world.wait_for_turn(r);
                    }
                    let comm = Comm::world_comm(world.clone(), r);
                    let out = panic::catch_unwind(AssertUnwindSafe(|| program(&comm)));
                    if let Err(payload) = &out {
                        if !payload.is::<AbortSignal>() {
                            world.abort(r);
                        }
                    }
                    world.leave(r);
                    match out {
                        Ok(v) => Ok(v),
                        Err(e) => Err(e),
                    }
                })
                .expect("failed to spawn rank thread");
            handles.push(h);
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut out = Vec::with_capacity(p);
    let mut failure: Option<(usize, String)> = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => out.push(v),
            Err(payload) => {
                if payload.is::<AbortSignal>() {
                    continue;
                }
                let msg = if let Some(s) = payload.downcast_ref::<&str>() {
                    s.to_string()
                } else if let Some(s) = payload.downcast_ref::<String>() {
                    s.clone()
                } else {
                    "panicked".to_string()
                };
                if failure.is_none() {
                    failure = Some((r, msg));
                }
            }
        }
    }
    if let Some((rank, msg)) = failure {
        return Err(Error::Harness {
            rank,
            msg: format!("failed: {msg}"),
        });
    }
    if out.len() != p {
        let rank = world.abort_rank.load(Ordering::SeqCst);
        return Err(Error::Harness {
            rank: if rank == usize::MAX { 0 } else { rank },
            msg: "aborted".into(),
        });
    }
    Ok(out)
}

/// Deterministic gather of (rank -> values) maps for tests and reporting.
pub fn gather_map(comm: &Comm, value: f64) -> Result<BTreeMap<usize, f64>> {
    let gathered = comm.allgather_bytes(&value.to_le_bytes())?;
    Ok(gathered
        .iter()
        .enumerate()
        .map(|(r, b)| (r, f64::from_le_bytes(b[..8].try_into().unwrap())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_returns_rank() {
        let out = spawn(1, Scheduler::Concurrent, |c| c.rank()).unwrap();
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn four_ranks_square() {
        let out = spawn(4, Scheduler::Concurrent, |c| c.rank() * c.rank()).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9]);
    }

    #[test]
    fn barrier_then_allreduce() {
        let out = spawn(3, Scheduler::Concurrent, |c| {
            c.barrier();
            c.allreduce_scalar(c.rank() as f64, ReduceOp::Sum).unwrap()
        })
        .unwrap();
        assert_eq!(out, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn allreduce_min_max() {
        let vals = [3.0, 1.0, 4.0, 1.0];
        let out = spawn(4, Scheduler::Concurrent, |c| {
            let mn = c.allreduce_scalar(vals[c.rank()], ReduceOp::Min).unwrap();
            let mx = c.allreduce_scalar(vals[c.rank()], ReduceOp::Max).unwrap();
            (mn, mx)
        })
        .unwrap();
        for (mn, mx) in out {
            assert_eq!(mn, 1.0);
            assert_eq!(mx, 4.0);
        }
    }

    #[test]
    fn allreduce_matches_serial_fold_bitwise() {
        // fixed-order oracle: fold in ascending rank order
        let vals: Vec<f64> = (0..5).map(|r| 0.1 * (r as f64) + 1e-13).collect();
        let expect: f64 = vals.iter().fold(0.0f64, |a, &b| a + b);
        let out = spawn(5, Scheduler::Concurrent, |c| {
            c.allreduce_scalar(vals[c.rank()], ReduceOp::Sum).unwrap()
        })
        .unwrap();
        for v in out {
            assert_eq!(v.to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn serial_scheduler_matches_concurrent() {
        let run = |s| {
            spawn(4, s, |c| {
                let mut acc = 0.0;
                for i in 0..10 {
                    acc += c
                        .allreduce_scalar((c.rank() * i) as f64, ReduceOp::Sum)
                        .unwrap();
                }
                acc
            })
            .unwrap()
        };
        assert_eq!(run(Scheduler::Concurrent), run(Scheduler::Serial));
    }

    #[test]
    fn split_partitions_ranks() {
        let out = spawn(4, Scheduler::Concurrent, |c| {
            let color = if c.rank() < 3 { 0 } else { 1 };
            let sub = c.split(color, c.rank()).unwrap();
            let sum = sub
                .allreduce_scalar(c.rank() as f64, ReduceOp::Sum)
                .unwrap();
            (sub.size(), sum, sub.group_id())
        })
        .unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].0, 3);
        assert_eq!(out[0].1, 3.0); // 0+1+2
        assert_eq!(out[3].0, 1);
        assert_eq!(out[3].1, 3.0);
        assert_ne!(out[0].2, out[3].2);
    }

    #[test]
    fn failing_rank_reported() {
        let err = spawn(3, Scheduler::Concurrent, |c| {
            if c.rank() == 1 {
                panic!("deliberate failure");
            }
            // rank 0 and 2 would block here forever without the abort
            c.barrier();
            0
        })
        .unwrap_err();
        match err {
            Error::Harness { rank, msg } => {
                assert_eq!(rank, 1);
                assert!(msg.contains("deliberate"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn p2p_fifo_per_channel() {
        let out = spawn(2, Scheduler::Concurrent, |c| {
            if c.rank() == 0 {
                c.send_bytes(1, 7, vec![1]);
                c.send_bytes(1, 7, vec![2]);
                c.send_bytes(1, 9, vec![3]);
                vec![]
            } else {
                let a = c.recv_bytes(0, 7);
                let b = c.recv_bytes(0, 9);
                let d = c.recv_bytes(0, 7);
                vec![a[0], b[0], d[0]]
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![1, 3, 2]);
    }
}
