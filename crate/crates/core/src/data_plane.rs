//! Router packet processing.
//!
//! * Source ABR: origin check on the source address, then tags the packet with
//!   the pairwise SM (same lowest TA) or the member's MSM (cross TA).
//! * TABR: verifies (or, in direct mode, folds) the incoming tag and replaces
//!   it with a tag for the next hop up or down the hierarchy.
//! * Destination ABR: verifies and strips the tag.
//! * Anything else forwards untouched.
//!
//! A packet carries at most one shim; TABRs replace it, never stack.

use std::collections::BTreeMap;
use std::fmt;

use crate::sm_engine::{PacketDigest, SimTime, SmId, SmScope, SmState, Tag, Verdict, SHIM_LEN};
use crate::topology::{Address, AsId, Endpoint, Prefix, RouterId, Scenario, TaId, TaTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum TabrMode {
    /// Replace without a verification decision. A bad incoming tag is folded
    /// into the outgoing one, so it still fails further along.
    DirectReplace,
    #[default]
    ReplaceAndValidate,
}

impl TabrMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TabrMode::DirectReplace => "direct-replace",
            TabrMode::ReplaceAndValidate => "replace-and-validate",
        }
    }
}

/// What a destination ABR does with packets that carry no tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DestPolicy {
    /// Drop untagged packets whose source address belongs to a member AS.
    pub require_member_tags: bool,
    /// Deliver packets from non-member sources.
    pub deliver_non_member: bool,
}

impl DestPolicy {
    pub const STRICT: DestPolicy = DestPolicy { require_member_tags: true, deliver_non_member: true };
    pub const PERMISSIVE: DestPolicy = DestPolicy { require_member_tags: false, deliver_non_member: true };
}

impl Default for DestPolicy {
    fn default() -> Self {
        DestPolicy::STRICT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    SpoofedSource,
    NoSm,
    InvalidTag,
    MissingTag,
    /// The router is not on the hierarchical path this packet needs.
    Misrouted,
    /// An SM could not produce a tag at this local time.
    StaleSm,
    NonMemberRefused,
}

impl DropReason {
    pub const ALL: [DropReason; 7] = [
        DropReason::SpoofedSource,
        DropReason::NoSm,
        DropReason::InvalidTag,
        DropReason::MissingTag,
        DropReason::Misrouted,
        DropReason::StaleSm,
        DropReason::NonMemberRefused,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::SpoofedSource => "spoofed-source",
            DropReason::NoSm => "no-sm",
            DropReason::InvalidTag => "invalid-tag",
            DropReason::MissingTag => "missing-tag",
            DropReason::Misrouted => "misrouted",
            DropReason::StaleSm => "stale-sm",
            DropReason::NonMemberRefused => "non-member-refused",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Any node a packet can visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Router(RouterId),
    /// Plain border router of a non-member AS.
    Plain(AsId),
    Transit(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub src_addr: Address,
    pub dst_addr: Address,
    pub payload_len: u32,
    pub shim: Option<[u8; SHIM_LEN]>,
    pub hop_trace: Vec<NodeId>,
    /// Number of tag replacements performed so far.
    pub replacements: u32,
    /// Which SM each validating router checked, in order.
    pub verifications: Vec<(RouterId, SmId)>,
}

impl Packet {
    pub fn new(src_addr: Address, dst_addr: Address, payload_len: u32) -> Self {
        Packet {
            src_addr,
            dst_addr,
            payload_len,
            shim: None,
            hop_trace: Vec::new(),
            replacements: 0,
            verifications: Vec::new(),
        }
    }

    pub fn digest(&self) -> PacketDigest {
        PacketDigest::of(self.src_addr, self.dst_addr, self.payload_len)
    }

    pub fn tag(&self) -> Option<Tag> {
        self.shim.map(|s| Tag::from_shim(&s).expect("fixed-size shim"))
    }

    /// Wire bytes: shim (if any) followed by a zero payload.
    pub fn wire_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SHIM_LEN + self.payload_len as usize + 16);
        out.extend_from_slice(&self.src_addr.to_be_bytes());
        out.extend_from_slice(&self.dst_addr.to_be_bytes());
        if let Some(s) = &self.shim {
            out.extend_from_slice(s);
        }
        out.resize(out.len() + self.payload_len as usize, 0);
        out
    }
}

/// Installed state of one ABR or TABR role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterState {
    pub id: RouterId,
    /// AS that physically hosts the router.
    pub owner: AsId,
    pub sm_table: BTreeMap<SmId, SmState>,
    /// Address intervals known to this router, keyed by `lo`.
    pub prefix_map: BTreeMap<Address, (Address, AsId)>,
    pub mode: TabrMode,
    pub dest_policy: DestPolicy,
    /// Local clock minus true time.
    pub clock_offset: i64,
}

impl RouterState {
    pub fn new(id: RouterId, owner: AsId) -> Self {
        RouterState {
            id,
            owner,
            sm_table: BTreeMap::new(),
            prefix_map: BTreeMap::new(),
            mode: TabrMode::default(),
            dest_policy: DestPolicy::default(),
            clock_offset: 0,
        }
    }

    pub fn add_prefix(&mut self, p: Prefix, owner: AsId) {
        self.prefix_map.insert(p.lo, (p.hi, owner));
    }

    pub fn lookup(&self, addr: Address) -> Option<AsId> {
        let (_, &(hi, owner)) = self.prefix_map.range(..=addr).next_back()?;
        (addr <= hi).then_some(owner)
    }

    pub fn local_time(&self, now: SimTime) -> SimTime {
        (now as i64).saturating_add(self.clock_offset).max(0) as SimTime
    }

    fn emit(&mut self, sm: SmId, p: &mut Packet, now: SimTime, residual: u64) -> Result<(), DropReason> {
        let local = self.local_time(now);
        let digest = p.digest();
        let state = self.sm_table.get_mut(&sm).ok_or(DropReason::NoSm)?;
        let mut tag = state.tag_at(local, &digest).map_err(|_| DropReason::StaleSm)?;
        tag.value ^= residual;
        p.shim = Some(tag.to_shim());
        Ok(())
    }

    fn check(&mut self, sm: SmId, p: &mut Packet, now: SimTime) -> Result<(), DropReason> {
        let local = self.local_time(now);
        let tag = p.tag().ok_or(DropReason::MissingTag)?;
        let state = self.sm_table.get_mut(&sm).ok_or(DropReason::NoSm)?;
        p.verifications.push((self.id, sm));
        match state.verify(&tag, local, &p.digest()) {
            Verdict::Valid => Ok(()),
            Verdict::Invalid | Verdict::Replay => Err(DropReason::InvalidTag),
        }
    }
}

fn msm(level: u32, from: Endpoint, to: Endpoint) -> SmId {
    SmId { scope: SmScope::Msm, level, from, to }
}

/// Tags an outgoing packet at the ABR of its source AS.
pub fn process_at_source_abr(
    mut p: Packet,
    r: &mut RouterState,
    tree: &TaTree,
    now: SimTime,
) -> Result<Packet, DropReason> {
    p.hop_trace.push(NodeId::Router(r.id));
    if tree.resolve(p.src_addr) != Some(r.owner) {
        return Err(DropReason::SpoofedSource);
    }
    let Some(dst) = tree.resolve(p.dst_addr) else {
        return Ok(p);
    };
    let scenario = tree.classify(r.owner, dst).map_err(|_| DropReason::Misrouted)?;
    let lowest = tree.lowest_ta(r.owner).ok_or(DropReason::Misrouted)?;
    let level = tree.ta(lowest).level;
    let sm = match scenario {
        Scenario::NonMember => return Ok(p),
        Scenario::SingleTa => SmId {
            scope: SmScope::Pairwise,
            level,
            from: Endpoint::As(r.owner),
            to: Endpoint::As(dst),
        },
        Scenario::CrossTa => msm(level, Endpoint::As(r.owner), Endpoint::Ta(lowest)),
    };
    r.emit(sm, &mut p, now, 0)?;
    Ok(p)
}

/// Incoming and outgoing SM at the TABR of `ta` for a packet from `src` to
/// `dst` travelling in `direction`.
pub fn tabr_sms(tree: &TaTree, ta: TaId, src: AsId, dst: AsId, direction: Direction) -> Option<(SmId, SmId)> {
    let node = tree.ta(ta);
    let parent = node.parent?;
    let parent_node = tree.ta(parent);
    let me = Endpoint::Ta(ta);
    let below = |asn: AsId| -> Option<Endpoint> {
        if node.is_lowest() {
            node.member_ases.contains(&asn).then_some(Endpoint::As(asn))
        } else {
            tree.child_toward(ta, asn).map(Endpoint::Ta)
        }
    };
    // Counterpart on the parent side: the sibling TA on the far branch if
    // the packet turns at the parent, otherwise the parent itself.
    let across = |asn: AsId| -> Option<SmId> {
        if tree.is_under(asn, parent) {
            let s = tree.child_toward(parent, asn)?;
            Some(SmId { scope: SmScope::Gsm, level: node.level, from: me, to: Endpoint::Ta(s) })
        } else if parent_node.parent.is_some() {
            Some(msm(parent_node.level, me, Endpoint::Ta(parent)))
        } else {
            None
        }
    };
    match direction {
        Direction::Up => {
            if !tree.is_under(src, ta) || tree.is_under(dst, ta) {
                return None;
            }
            let incoming = msm(node.level, below(src)?, me);
            Some((incoming, across(dst)?))
        }
        Direction::Down => {
            if !tree.is_under(dst, ta) || tree.is_under(src, ta) {
                return None;
            }
            let incoming = across(src)?.reverse();
            let outgoing = msm(node.level, me, below(dst)?);
            Some((incoming, outgoing))
        }
    }
}

/// Replaces the tag at a TABR.
pub fn process_at_tabr(
    mut p: Packet,
    r: &mut RouterState,
    tree: &TaTree,
    direction: Direction,
    now: SimTime,
) -> Result<Packet, DropReason> {
    p.hop_trace.push(NodeId::Router(r.id));
    let RouterId::Tabr(ta) = r.id else {
        return Err(DropReason::Misrouted);
    };
    let src = tree.resolve(p.src_addr).ok_or(DropReason::Misrouted)?;
    let dst = tree.resolve(p.dst_addr).ok_or(DropReason::Misrouted)?;
    let (incoming, outgoing) = tabr_sms(tree, ta, src, dst, direction).ok_or(DropReason::Misrouted)?;
    let residual = match r.mode {
        TabrMode::ReplaceAndValidate => {
            r.check(incoming, &mut p, now)?;
            0
        }
        TabrMode::DirectReplace => {
            let tag = p.tag().ok_or(DropReason::MissingTag)?;
            let local = r.local_time(now);
            let state = r.sm_table.get(&incoming).ok_or(DropReason::NoSm)?;
            match state.expected_value(&tag, local, &p.digest()) {
                Some(v) => tag.value ^ v,
                None => u64::MAX,
            }
        }
    };
    r.emit(outgoing, &mut p, now, residual)?;
    p.replacements += 1;
    Ok(p)
}

/// SM the destination ABR checks for a packet from `src`.
pub fn dest_sm(tree: &TaTree, src: AsId, dst: AsId) -> Option<SmId> {
    let lowest = tree.lowest_ta(dst)?;
    let level = tree.ta(lowest).level;
    match tree.classify(src, dst).ok()? {
        Scenario::SingleTa => Some(SmId {
            scope: SmScope::Pairwise,
            level,
            from: Endpoint::As(src),
            to: Endpoint::As(dst),
        }),
        Scenario::CrossTa => Some(msm(level, Endpoint::Ta(lowest), Endpoint::As(dst))),
        Scenario::NonMember => None,
    }
}

/// Verifies and strips the tag at the destination ABR.
pub fn process_at_dest_abr(
    mut p: Packet,
    r: &mut RouterState,
    tree: &TaTree,
    now: SimTime,
) -> Result<Packet, DropReason> {
    p.hop_trace.push(NodeId::Router(r.id));
    if tree.resolve(p.dst_addr) != Some(r.owner) {
        return Err(DropReason::Misrouted);
    }
    let src_member = tree
        .resolve(p.src_addr)
        .filter(|&s| tree.as_node(s).is_ok_and(|n| n.is_member));
    let Some(src) = src_member else {
        if !r.dest_policy.deliver_non_member {
            return Err(DropReason::NonMemberRefused);
        }
        p.shim = None;
        return Ok(p);
    };
    if p.shim.is_none() {
        if r.dest_policy.require_member_tags {
            return Err(DropReason::MissingTag);
        }
        return Ok(p);
    }
    let sm = dest_sm(tree, src, r.owner).ok_or(DropReason::NoSm)?;
    r.check(sm, &mut p, now)?;
    p.shim = None;
    Ok(p)
}

/// Transit hop: only the trace changes.
pub fn forward(mut p: Packet, at: NodeId) -> Packet {
    p.hop_trace.push(at);
    p
}
