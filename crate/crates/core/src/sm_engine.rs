//! Per-pair tag state machines.
//!
//! A state machine (SM) is a directed, keyed tag generator shared by exactly
//! two endpoints. Both holders start from the same seed and epoch origin and
//! derive every epoch key locally as `SHA-256(seed || k)`, so rotation needs no
//! messages. A tag is the first 64 bits of `HMAC-SHA-256(epoch key,
//! sequence || packet digest)`; each tag is single use and the verifier keeps a
//! sliding replay window per epoch.
//!
//! Around every epoch boundary a shared time slice of `grace` ticks accepts
//! both the expiring and the freshly activated epoch, absorbing clock skew.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{Address, Endpoint};

/// Simulated time in ticks.
pub type SimTime = u64;

pub type Seed = [u8; 32];
pub type EpochKey = [u8; 32];

/// Width of the shim carried in front of the payload: 16-bit epoch, 32-bit
/// sequence, 64-bit tag, big-endian.
pub const SHIM_LEN: usize = 14;

pub const DEFAULT_WINDOW: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SmScope {
    /// Member to member inside one lowest-level TA.
    Pairwise,
    /// Member to its enclosing TA (or the reverse).
    Msm,
    /// Between sibling TAs.
    Gsm,
}

impl SmScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            SmScope::Pairwise => "pairwise",
            SmScope::Msm => "msm",
            SmScope::Gsm => "gsm",
        }
    }
}

/// Identity of one directed SM, `from` tags and `to` verifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SmId {
    pub scope: SmScope,
    /// Level of the TA whose scope the SM lives in.
    pub level: u32,
    pub from: Endpoint,
    pub to: Endpoint,
}

impl SmId {
    pub fn reverse(&self) -> SmId {
        SmId { from: self.to, to: self.from, ..*self }
    }

    pub fn involves(&self, e: Endpoint) -> bool {
        self.from == e || self.to == e
    }
}

impl fmt::Display for SmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ep = |e: &Endpoint| match e {
            Endpoint::As(a) => format!("{a}"),
            Endpoint::Ta(t) => format!("TA{}", t.0),
        };
        write!(f, "{}@{}:{}->{}", self.scope.as_str(), self.level, ep(&self.from), ep(&self.to))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmParams {
    pub epoch_length: u64,
    /// Length of the shared time slice on each side of an epoch boundary.
    pub grace: u64,
    pub window: u32,
}

impl SmParams {
    /// Grace defaults to twice the maximum modelled drift.
    pub fn for_drift(epoch_length: u64, max_drift: u64) -> Self {
        SmParams { epoch_length, grace: 2 * max_drift, window: DEFAULT_WINDOW }
    }
}

impl Default for SmParams {
    fn default() -> Self {
        SmParams { epoch_length: 1000, grace: 20, window: DEFAULT_WINDOW }
    }
}

/// Per-packet authentication string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub value: u64,
    /// Low 16 bits of the epoch index.
    pub epoch_index: u16,
    pub sequence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShimError {
    #[error("shim needs {SHIM_LEN} bytes, got {0}")]
    Truncated(usize),
}

impl Tag {
    pub fn to_shim(&self) -> [u8; SHIM_LEN] {
        let mut out = [0u8; SHIM_LEN];
        out[0..2].copy_from_slice(&self.epoch_index.to_be_bytes());
        out[2..6].copy_from_slice(&self.sequence.to_be_bytes());
        out[6..14].copy_from_slice(&self.value.to_be_bytes());
        out
    }

    pub fn from_shim(bytes: &[u8]) -> Result<Tag, ShimError> {
        if bytes.len() < SHIM_LEN {
            return Err(ShimError::Truncated(bytes.len()));
        }
        Ok(Tag {
            epoch_index: u16::from_be_bytes([bytes[0], bytes[1]]),
            sequence: u32::from_be_bytes(bytes[2..6].try_into().unwrap()),
            value: u64::from_be_bytes(bytes[6..14].try_into().unwrap()),
        })
    }
}

/// Binds a tag to its packet: hash of source, destination and payload length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketDigest(pub [u8; 16]);

impl PacketDigest {
    pub fn of(src: Address, dst: Address, payload_len: u32) -> Self {
        let mut h = Sha256::new();
        h.update(src.to_be_bytes());
        h.update(dst.to_be_bytes());
        h.update(payload_len.to_be_bytes());
        let full = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&full[..16]);
        PacketDigest(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmError {
    #[error("SM {sm} expired at {expiration} and the grace slice ended before {now}")]
    ExpiredBeyondGrace { sm: SmId, expiration: SimTime, now: SimTime },
    #[error("SM {sm} activates at {activation}, too far ahead of {now}")]
    NotYetActive { sm: SmId, activation: SimTime, now: SimTime },
    #[error("SM {0} ran out of sequence numbers in this epoch")]
    SequenceExhausted(SmId),
}

/// Key of epoch `k`, a pure function of the seed and the index.
pub fn derive_epoch_key(seed: &Seed, k: u64) -> EpochKey {
    let mut h = Sha256::new();
    h.update(seed);
    h.update(k.to_be_bytes());
    h.finalize().into()
}

fn tag_value(key: &EpochKey, sequence: u32, digest: &PacketDigest) -> u64 {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&sequence.to_be_bytes());
    mac.update(&digest.0);
    let out = mac.finalize().into_bytes();
    u64::from_be_bytes(out[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WindowCheck {
    Fresh,
    Duplicate,
    TooOld,
}

/// Sliding bitmap over recently accepted sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ReplayWindow {
    highest: Option<u32>,
    bits: Vec<u64>,
}

impl ReplayWindow {
    fn new(window: u32) -> Self {
        ReplayWindow { highest: None, bits: vec![0; (window as usize).div_ceil(64).max(1)] }
    }

    fn capacity(&self) -> u64 {
        self.bits.len() as u64 * 64
    }

    fn bit(&self, seq: u32) -> (usize, u64) {
        let idx = seq as u64 % self.capacity();
        ((idx / 64) as usize, 1u64 << (idx % 64))
    }

    fn check(&mut self, seq: u32, window: u32) -> WindowCheck {
        let window = u64::from(window).min(self.capacity());
        match self.highest {
            Some(high) if seq <= high => {
                if u64::from(high - seq) >= window {
                    return WindowCheck::TooOld;
                }
                let (w, mask) = self.bit(seq);
                if self.bits[w] & mask != 0 {
                    return WindowCheck::Duplicate;
                }
                self.bits[w] |= mask;
                WindowCheck::Fresh
            }
            _ => {
                let start = self.highest.map_or(0, |h| u64::from(h) + 1);
                if u64::from(seq) + 1 - start >= self.capacity() {
                    self.bits.iter_mut().for_each(|b| *b = 0);
                } else {
                    for s in start..=u64::from(seq) {
                        let (w, mask) = self.bit(s as u32);
                        self.bits[w] &= !mask;
                    }
                }
                let (w, mask) = self.bit(seq);
                self.bits[w] |= mask;
                self.highest = Some(seq);
                WindowCheck::Fresh
            }
        }
    }
}

/// One holder's copy of a directed SM. Sender and verifier start from equal
/// copies; the sender advances `next_sequence`, the verifier fills its replay
/// windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmState {
    pub sm_id: SmId,
    seed: Seed,
    pub epoch_index: u64,
    pub activation_time: SimTime,
    pub expiration_time: SimTime,
    pub epoch_length: u64,
    pub grace: u64,
    origin: SimTime,
    next_sequence: u32,
    window: u32,
    replay: BTreeMap<u64, ReplayWindow>,
}

impl SmState {
    /// Fresh state at epoch 0, active from `origin`.
    pub fn new(sm_id: SmId, seed: Seed, params: SmParams, origin: SimTime) -> Self {
        assert!(params.epoch_length > 0, "epoch length must be positive");
        SmState {
            sm_id,
            seed,
            epoch_index: 0,
            activation_time: origin,
            expiration_time: origin + params.epoch_length,
            epoch_length: params.epoch_length,
            grace: params.grace,
            origin,
            next_sequence: 0,
            window: params.window.max(1),
            replay: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn next_sequence(&self) -> u32 {
        self.next_sequence
    }

    pub fn derive_epoch_key(&self, k: u64) -> EpochKey {
        derive_epoch_key(&self.seed, k)
    }

    /// Wall-aligned epoch containing `now`.
    pub fn epoch_at(&self, now: SimTime) -> u64 {
        now.saturating_sub(self.origin) / self.epoch_length
    }

    fn epoch_start(&self, k: u64) -> SimTime {
        self.origin + k * self.epoch_length
    }

    /// Epochs whose tags verify at local time `now`: the current one, plus its
    /// predecessor during the first `grace` ticks and its successor during the
    /// last `grace` ticks.
    pub fn accepted_epochs(&self, now: SimTime) -> impl Iterator<Item = u64> {
        let e = self.epoch_at(now);
        let prev = (e > 0 && now < self.epoch_start(e) + self.grace).then(|| e - 1);
        let next = (now + self.grace >= self.epoch_start(e + 1)).then_some(e + 1);
        prev.into_iter().chain(std::iter::once(e)).chain(next)
    }

    /// Moves to the epoch containing `now`. Returns the number of epochs
    /// skipped; zero when `now` is still before expiration.
    pub fn rotate(&mut self, now: SimTime) -> u64 {
        if now < self.expiration_time {
            return 0;
        }
        let steps = (now - self.activation_time) / self.epoch_length;
        self.epoch_index += steps;
        self.activation_time += steps * self.epoch_length;
        self.expiration_time = self.activation_time + self.epoch_length;
        self.next_sequence = 0;
        let keep_from = self.epoch_index.saturating_sub(1);
        self.replay.retain(|&k, _| k >= keep_from);
        steps
    }

    /// Produces the tag for the next packet under the current epoch.
    pub fn next_tag(&mut self, now: SimTime, digest: &PacketDigest) -> Result<Tag, SmError> {
        if now >= self.expiration_time + self.grace {
            return Err(SmError::ExpiredBeyondGrace {
                sm: self.sm_id,
                expiration: self.expiration_time,
                now,
            });
        }
        if now + self.grace < self.activation_time {
            return Err(SmError::NotYetActive { sm: self.sm_id, activation: self.activation_time, now });
        }
        let sequence = self.next_sequence;
        self.next_sequence = sequence.checked_add(1).ok_or(SmError::SequenceExhausted(self.sm_id))?;
        let key = self.derive_epoch_key(self.epoch_index);
        Ok(Tag { value: tag_value(&key, sequence, digest), epoch_index: self.epoch_index as u16, sequence })
    }

    /// Rotates if due, then tags.
    pub fn tag_at(&mut self, now: SimTime, digest: &PacketDigest) -> Result<Tag, SmError> {
        self.rotate(now);
        self.next_tag(now, digest)
    }

    fn resolve_epoch(&self, tag: &Tag, now: SimTime) -> Option<u64> {
        self.accepted_epochs(now).find(|&k| k as u16 == tag.epoch_index)
    }

    /// Tag value this SM would have produced for `tag`'s epoch and sequence,
    /// or `None` if that epoch is not acceptable at `now`. No replay state is
    /// touched.
    pub fn expected_value(&self, tag: &Tag, now: SimTime, digest: &PacketDigest) -> Option<u64> {
        let k = self.resolve_epoch(tag, now)?;
        Some(tag_value(&self.derive_epoch_key(k), tag.sequence, digest))
    }

    pub fn verify_tag(&mut self, tag: &Tag, now: SimTime, digest: &PacketDigest, window: u32) -> Verdict {
        assert!(window >= 1, "acceptance window must be at least 1");
        self.rotate(now);
        let Some(k) = self.resolve_epoch(tag, now) else {
            return Verdict::Invalid;
        };
        if tag_value(&self.derive_epoch_key(k), tag.sequence, digest) != tag.value {
            return Verdict::Invalid;
        }
        let capacity = self.window.max(window);
        let slot = self.replay.entry(k).or_insert_with(|| ReplayWindow::new(capacity));
        let verdict = match slot.check(tag.sequence, window) {
            WindowCheck::Fresh => Verdict::Valid,
            WindowCheck::Duplicate => Verdict::Replay,
            WindowCheck::TooOld => Verdict::Invalid,
        };
        let floor = k.saturating_sub(2);
        self.replay.retain(|&e, _| e >= floor);
        verdict
    }

    /// Verifies with the window configured at construction.
    pub fn verify(&mut self, tag: &Tag, now: SimTime, digest: &PacketDigest) -> Verdict {
        self.verify_tag(tag, now, digest, self.window)
    }
}
