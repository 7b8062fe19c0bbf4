//! Episode-tagged replay storage.
//!
//! Eligibility for the delayed and windowed schemes is decided by episode id
//! alone. Because ids never decrease in insertion order, every eligible set
//! is a contiguous prefix or suffix of the ring and is found by bisection.

use alloc::collections::VecDeque;
#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("{field} has {got} components, expected {expected}")]
    Dim {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("episode id {got} is older than the current episode {current}")]
    EpisodeOrder { current: u64, got: u64 },
    #[error("no eligible transitions for {0:?}")]
    NoEligible(SamplingScheme),
    #[error("invalid sampling scheme: {0}")]
    InvalidScheme(&'static str),
    #[error("malformed batch file: {0}")]
    Decode(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal flag used to cut bootstrapping (time-limit ends are not terminal).
    pub done: bool,
    pub episode_id: u64,
    pub step_id: u32,
}

/// Which stored transitions a minibatch may be drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    Uniform,
    /// Transitions made at least `d` episodes before the current one.
    Delayed(u64),
    /// Transitions from the latest `W` episodes.
    Windowed(u64),
}

impl SamplingScheme {
    pub fn windowed(w: u64) -> Result<Self, ReplayError> {
        if w == 0 {
            return Err(ReplayError::InvalidScheme(
                "window must be at least 1 episode",
            ));
        }
        Ok(SamplingScheme::Windowed(w))
    }

    /// Episode predicate relative to `current` episode.
    pub fn admits(self, episode_id: u64, current: u64) -> bool {
        match self {
            SamplingScheme::Uniform => true,
            SamplingScheme::Delayed(d) => episode_id.saturating_add(d) <= current,
            SamplingScheme::Windowed(w) => episode_id.saturating_add(w) > current,
        }
    }
}

/// A sampled minibatch, flattened row-major.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    /// 1.0 for terminal transitions, 0.0 otherwise.
    pub dones: Vec<f64>,
    pub episode_ids: Vec<u64>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I, state_dim: usize, action_dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut r = Vec::new();
        let mut ns = Vec::new();
        let mut d = Vec::new();
        let mut ep = Vec::new();
        for t in items {
            s.extend_from_slice(&t.state);
            a.extend_from_slice(&t.action);
            r.push(t.reward);
            ns.extend_from_slice(&t.next_state);
            d.push(if t.done { 1.0 } else { 0.0 });
            ep.push(t.episode_id);
        }
        let n = r.len();
        Self {
            states: Tensor::matrix(n, state_dim, s).expect("dims checked on push"),
            actions: Tensor::matrix(n, action_dim, a).expect("dims checked on push"),
            rewards: r,
            next_states: Tensor::matrix(n, state_dim, ns).expect("dims checked on push"),
            dones: d,
            episode_ids: ep,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Anything states can be drawn from.
pub trait StateSource {
    fn state_dim(&self) -> usize;
    fn len(&self) -> usize;
    fn state(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` states drawn uniformly with replacement, as an `[n, state_dim]` matrix.
pub fn snapshot_states<S, R>(source: &S, n: usize, rng: &mut R) -> Tensor
where
    S: StateSource + ?Sized,
    R: Rng + ?Sized,
{
    let dim = source.state_dim();
    let mut data = Vec::with_capacity(n * dim);
    if source.is_empty() {
        return Tensor::zeros(0, dim);
    }
    for _ in 0..n {
        let i = rng.random_range(0..source.len());
        data.extend_from_slice(source.state(i));
    }
    Tensor::matrix(n, dim, data).expect("rows have state_dim columns")
}

fn check_dims(t: &Transition, sd: usize, ad: usize) -> Result<(), ReplayError> {
    for (field, got, expected) in [
        ("state", t.state.len(), sd),
        ("action", t.action.len(), ad),
        ("next_state", t.next_state.len(), sd),
    ] {
        if got != expected {
            return Err(ReplayError::Dim {
                field,
                expected,
                got,
            });
        }
    }
    Ok(())
}

/// FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: VecDeque<Transition>,
    current_episode: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            current_episode: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Episode id of the most recent transition.
    pub fn current_episode(&self) -> u64 {
        self.current_episode
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        check_dims(&t, self.state_dim, self.action_dim)?;
        if !self.storage.is_empty() && t.episode_id < self.current_episode {
            return Err(ReplayError::EpisodeOrder {
                current: self.current_episode,
                got: t.episode_id,
            });
        }
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.current_episode = t.episode_id;
        self.storage.push_back(t);
        Ok(())
    }

    /// Index range of transitions admitted by `scheme`.
    pub fn eligible_range(&self, scheme: SamplingScheme) -> Range<usize> {
        let cur = self.current_episode;
        let n = self.storage.len();
        match scheme {
            SamplingScheme::Uniform => 0..n,
            SamplingScheme::Delayed(_) => {
                0..self
                    .storage
                    .partition_point(|t| scheme.admits(t.episode_id, cur))
            }
            SamplingScheme::Windowed(_) => {
                self.storage
                    .partition_point(|t| !scheme.admits(t.episode_id, cur))..n
            }
        }
    }

    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        scheme: SamplingScheme,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        let range = self.eligible_range(scheme);
        if range.is_empty() {
            return Err(ReplayError::NoEligible(scheme));
        }
        Ok((0..batch_size)
            .map(|_| rng.random_range(range.clone()))
            .collect())
    }

    /// Uniform draw with replacement from the scheme's eligible set.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        scheme: SamplingScheme,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Batch, ReplayError> {
        let idx = self.sample_indices(scheme, batch_size, rng)?;
        Ok(Batch::from_transitions(
            idx.iter().map(|&i| &self.storage[i]),
            self.state_dim,
            self.action_dim,
        ))
    }
}

impl StateSource for ReplayBuffer {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn len(&self) -> usize {
        self.storage.len()
    }

    fn state(&self, i: usize) -> &[f64] {
        &self.storage[i].state
    }
}

/// Transitions of the last `rollouts` completed episodes.
///
/// Transitions of the episode in progress are staged and only become
/// visible after [`OnlineBuffer::finish_rollout`].
#[derive(Debug, Clone)]
pub struct OnlineBuffer {
    rollouts: usize,
    state_dim: usize,
    completed: VecDeque<(u64, Vec<Transition>)>,
    pending: Vec<Transition>,
    len: usize,
}

impl OnlineBuffer {
    pub fn new(rollouts: usize, state_dim: usize) -> Self {
        assert!(rollouts >= 1, "online buffer keeps at least one rollout");
        Self {
            rollouts,
            state_dim,
            completed: VecDeque::new(),
            pending: Vec::new(),
            len: 0,
        }
    }

    pub fn rollouts(&self) -> usize {
        self.rollouts
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if t.state.len() != self.state_dim {
            return Err(ReplayError::Dim {
                field: "state",
                expected: self.state_dim,
                got: t.state.len(),
            });
        }
        self.pending.push(t);
        Ok(())
    }

    /// Commits the staged rollout and evicts rollouts older than the window.
    pub fn finish_rollout(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let rollout = core::mem::take(&mut self.pending);
        let id = rollout[rollout.len() - 1].episode_id;
        self.len += rollout.len();
        self.completed.push_back((id, rollout));
        while let Some((front, _)) = self.completed.front() {
            if front.saturating_add(self.rollouts as u64) > id {
                break;
            }
            let (_, old) = self.completed.pop_front().expect("front exists");
            self.len -= old.len();
        }
    }

    /// Episode id of the most recently completed rollout.
    pub fn last_completed(&self) -> Option<u64> {
        self.completed.back().map(|(id, _)| *id)
    }

    pub fn episode_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.completed.iter().map(|(id, _)| *id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.completed.iter().flat_map(|(_, r)| r.iter())
    }
}

impl StateSource for OnlineBuffer {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn len(&self) -> usize {
        self.len
    }

    fn state(&self, mut i: usize) -> &[f64] {
        for (_, r) in &self.completed {
            if i < r.len() {
                return &r[i].state;
            }
            i -= r.len();
        }
        panic!("online buffer index out of range")
    }
}

impl StateSource for [Transition] {
    fn state_dim(&self) -> usize {
        self.first().map_or(0, |t| t.state.len())
    }

    fn len(&self) -> usize {
        <[Transition]>::len(self)
    }

    fn state(&self, i: usize) -> &[f64] {
        &self[i].state
    }
}

// ---- binary batch format ------------------------------------------------------

pub const BATCH_MAGIC: [u8; 4] = *b"SKLB";
pub const BATCH_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8;

/// Where a serialized batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Replay = 0,
    Expert = 1,
    Transient = 2,
}

impl Provenance {
    fn from_byte(b: u8) -> Result<Self, ReplayError> {
        match b {
            0 => Ok(Provenance::Replay),
            1 => Ok(Provenance::Expert),
            2 => Ok(Provenance::Transient),
            _ => Err(ReplayError::Decode("unknown provenance")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Replay => "replay",
            Provenance::Expert => "expert",
            Provenance::Transient => "transient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchHeader {
    pub state_dim: usize,
    pub action_dim: usize,
    pub provenance: Provenance,
    pub source_checksum: u64,
    pub count: usize,
}

/// Little-endian layout:
///
/// ```text
/// "SKLB" | version u32 | state_dim u32 | action_dim u32
/// | provenance u8 + 3 zero bytes | source_checksum u64 | count u64
/// then per record:
/// state f64*S | action f64*A | reward f64 | next_state f64*S
/// | done u8 | episode_id u64 | step_id u32
/// ```
pub fn encode_transitions<'a, I>(
    state_dim: usize,
    action_dim: usize,
    provenance: Provenance,
    source_checksum: u64,
    items: I,
) -> Vec<u8>
where
    I: IntoIterator<Item = &'a Transition>,
    I::IntoIter: ExactSizeIterator,
{
    let items = items.into_iter();
    let rec = record_len(state_dim, action_dim);
    let mut out = Vec::with_capacity(HEADER_LEN + rec * items.len());
    out.extend_from_slice(&BATCH_MAGIC);
    out.extend_from_slice(&BATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(state_dim as u32).to_le_bytes());
    out.extend_from_slice(&(action_dim as u32).to_le_bytes());
    out.extend_from_slice(&[provenance as u8, 0, 0, 0]);
    out.extend_from_slice(&source_checksum.to_le_bytes());
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    for t in items {
        for x in t.state.iter().chain(&t.action) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&t.reward.to_le_bytes());
        for x in &t.next_state {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(u8::from(t.done));
        out.extend_from_slice(&t.episode_id.to_le_bytes());
        out.extend_from_slice(&t.step_id.to_le_bytes());
    }
    out
}

fn record_len(sd: usize, ad: usize) -> usize {
    8 * (2 * sd + ad + 1) + 1 + 8 + 4
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ReplayError> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or(ReplayError::Decode("truncated"))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, ReplayError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, ReplayError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, ReplayError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ReplayError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<BatchHeader, ReplayError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take::<4>()? != BATCH_MAGIC {
        return Err(ReplayError::Decode("bad magic"));
    }
    if r.u32()? != BATCH_VERSION {
        return Err(ReplayError::Decode("unsupported version"));
    }
    let state_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let prov = r.take::<4>()?;
    let provenance = Provenance::from_byte(prov[0])?;
    let source_checksum = r.u64()?;
    let count = r.u64()? as usize;
    Ok(BatchHeader {
        state_dim,
        action_dim,
        provenance,
        source_checksum,
        count,
    })
}

pub fn decode_transitions(bytes: &[u8]) -> Result<(BatchHeader, Vec<Transition>), ReplayError> {
    let header = decode_header(bytes)?;
    let (sd, ad) = (header.state_dim, header.action_dim);
    let expected = HEADER_LEN + header.count * record_len(sd, ad);
    if bytes.len() != expected {
        return Err(ReplayError::Decode("length does not match header count"));
    }
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let mut out = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let state = r.f64s(sd)?;
        let action = r.f64s(ad)?;
        let reward = r.f64()?;
        let next_state = r.f64s(sd)?;
        let done = match r.take::<1>()?[0] {
            0 => false,
            1 => true,
            _ => return Err(ReplayError::Decode("done flag is not 0/1")),
        };
        let episode_id = r.u64()?;
        let step_id = r.u32()?;
        out.push(Transition {
            state,
            action,
            reward,
            next_state,
            done,
            episode_id,
            step_id,
        });
    }
    Ok((header, out))
}

#[cfg(test)]
pub(crate) fn transition(sd: usize, ad: usize, episode: u64, step: u32) -> Transition {
    let v = episode as f64 + f64::from(step) * 1e-3;
    Transition {
        state: vec![v; sd],
        action: vec![0.5; ad],
        reward: -v,
        next_state: vec![v + 1e-3; sd],
        done: false,
        episode_id: episode,
        step_id: step,
    }
}
