//! Control plane: RES registries, ACS knowledge, SM negotiation and router
//! configuration.
//!
//! Every member AS runs an ACS. Registering with the RES of its lowest TA
//! advertises its prefixes to the TA's other members. A TA whose RES holds at
//! least one member appears as a member of its parent's RES, represented by
//! the ACS of its TAB. Negotiation installs the two directed SM states of a
//! pair on the routers at either end.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data_plane::{RouterState, TabrMode};
use crate::sm_engine::{Seed, SimTime, SmId, SmParams, SmScope, SmState};
use crate::topology::{AsId, Endpoint, Prefix, RouterId, TaId, TaTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("AS {0:?} is not a member of the given TA")]
    NotAMember(AsId),
    #[error("AS {0:?} is already registered")]
    DuplicateRegistration(AsId),
    #[error("endpoint {0:?} is not registered")]
    NotRegistered(Endpoint),
    #[error("{scope:?} between {a:?} and {b:?} is not a legal SM")]
    IllegalEndpointPair { a: Endpoint, b: Endpoint, scope: SmScope },
    #[error("router {router:?} is missing {missing} negotiated SMs")]
    IncompleteNegotiation { router: RouterId, missing: usize },
    #[error("no ACS for AS {0:?}")]
    UnknownAcs(AsId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberInfo {
    pub prefixes: Vec<Prefix>,
    /// ACS speaking for the member: the AS itself, or the TAB of a sub-TA.
    pub acs: AsId,
}

/// Registration server of one TA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Res {
    pub ta: TaId,
    pub parent: Option<TaId>,
    pub registry: BTreeMap<Endpoint, MemberInfo>,
}

/// Address-and-control server of one member AS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acs {
    pub as_id: AsId,
    /// Prefixes of the other registered members of the lowest TA.
    pub known_peers: BTreeMap<AsId, Vec<Prefix>>,
    /// ABR plus any hosted TABR roles.
    pub routers: Vec<RouterId>,
    pub clock_offset: i64,
    negotiated: BTreeMap<RouterId, BTreeMap<SmId, SmState>>,
}

impl Acs {
    pub fn negotiated(&self, router: RouterId) -> impl Iterator<Item = &SmId> {
        self.negotiated.get(&router).into_iter().flat_map(|m| m.keys())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlEvent {
    Register { asn: AsId, ta: TaId },
    Unregister { asn: AsId, ta: TaId },
    Advertise { to: AsId, about: AsId },
    Upward { from: TaId, to: TaId },
    Negotiate { sm: SmId },
    Configure { router: RouterId, sms: usize },
    ClockSync { asn: AsId, correction: i64, at: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NegotiationSummary {
    pub negotiated: usize,
    /// Pairs skipped because the far side is not registered yet.
    pub deferred: usize,
}

#[derive(Debug, Clone)]
pub struct ControlPlane {
    tree: Arc<TaTree>,
    master_seed: u64,
    params: SmParams,
    origin: SimTime,
    res: BTreeMap<TaId, Res>,
    acs: BTreeMap<AsId, Acs>,
    routers: BTreeMap<RouterId, RouterState>,
    tabr_mode: TabrMode,
    log: Vec<ControlEvent>,
}

/// Per-pair seed. Depends only on the master seed and the SM identity, so
/// the result does not depend on the order of negotiation.
pub fn pair_seed(master: u64, sm: &SmId) -> Seed {
    let mut h = Sha256::new();
    h.update(master.to_be_bytes());
    h.update(sm.to_string().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    seed
}

impl ControlPlane {
    pub fn new(tree: Arc<TaTree>, master_seed: u64, params: SmParams) -> Self {
        let res = tree
            .tas()
            .iter()
            .map(|t| (t.id, Res { ta: t.id, parent: t.parent, registry: BTreeMap::new() }))
            .collect();
        ControlPlane {
            tree,
            master_seed,
            params,
            origin: 0,
            res,
            acs: BTreeMap::new(),
            routers: BTreeMap::new(),
            tabr_mode: TabrMode::default(),
            log: Vec::new(),
        }
    }

    /// Registers every member, negotiates everything and configures every
    /// router.
    pub fn converged(tree: Arc<TaTree>, master_seed: u64, params: SmParams) -> Result<Self, ControlError> {
        let order: Vec<AsId> = tree.members().map(|a| a.id).collect();
        Self::converged_in_order(tree, master_seed, params, &order)
    }

    pub fn converged_in_order(
        tree: Arc<TaTree>,
        master_seed: u64,
        params: SmParams,
        order: &[AsId],
    ) -> Result<Self, ControlError> {
        let mut cp = ControlPlane::new(tree, master_seed, params);
        for &a in order {
            cp.register_member(a)?;
        }
        cp.negotiate_all();
        for &a in order {
            cp.configure_routers(a)?;
        }
        Ok(cp)
    }

    pub fn tree(&self) -> &Arc<TaTree> {
        &self.tree
    }

    pub fn params(&self) -> SmParams {
        self.params
    }

    /// Activation time given to newly negotiated SMs.
    pub fn set_origin(&mut self, origin: SimTime) {
        self.origin = origin;
    }

    pub fn set_tabr_mode(&mut self, mode: TabrMode) {
        self.tabr_mode = mode;
        for r in self.routers.values_mut() {
            if matches!(r.id, RouterId::Tabr(_)) {
                r.mode = mode;
            }
        }
    }

    pub fn res(&self, ta: TaId) -> &Res {
        &self.res[&ta]
    }

    pub fn acs(&self, asn: AsId) -> Option<&Acs> {
        self.acs.get(&asn)
    }

    pub fn log(&self) -> &[ControlEvent] {
        &self.log
    }

    pub fn router(&self, id: RouterId) -> Option<&RouterState> {
        self.routers.get(&id)
    }

    pub fn router_mut(&mut self, id: RouterId) -> Option<&mut RouterState> {
        self.routers.get_mut(&id)
    }

    pub fn routers(&self) -> &BTreeMap<RouterId, RouterState> {
        &self.routers
    }

    /// SM identities installed on each configured router.
    pub fn installed_sms(&self) -> BTreeMap<RouterId, BTreeSet<SmId>> {
        self.routers.iter().map(|(&id, r)| (id, r.sm_table.keys().copied().collect())).collect()
    }

    /// Registers `asn` with the RES of `ta`. Returns the number of
    /// advertisements sent to already-registered members.
    pub fn register(&mut self, asn: AsId, ta: TaId) -> Result<usize, ControlError> {
        let node = self.tree.as_node(asn).map_err(|_| ControlError::NotAMember(asn))?;
        if !node.is_member || node.ta != Some(ta) {
            return Err(ControlError::NotAMember(asn));
        }
        let prefixes = node.prefixes.clone();
        let res = self.res.get_mut(&ta).expect("every TA has a RES");
        if res.registry.contains_key(&Endpoint::As(asn)) {
            return Err(ControlError::DuplicateRegistration(asn));
        }
        self.log.push(ControlEvent::Register { asn, ta });

        let mut snapshot = BTreeMap::new();
        let mut adverts = 0;
        for (ep, info) in &res.registry {
            let Endpoint::As(peer) = *ep else { continue };
            snapshot.insert(peer, info.prefixes.clone());
            if let Some(acs) = self.acs.get_mut(&peer) {
                acs.known_peers.insert(asn, prefixes.clone());
            }
            self.log.push(ControlEvent::Advertise { to: peer, about: asn });
            adverts += 1;
        }
        res.registry.insert(Endpoint::As(asn), MemberInfo { prefixes, acs: asn });

        let mut routers = vec![RouterId::Abr(asn)];
        routers.extend(self.tree.hosted_tabs(asn).into_iter().map(RouterId::Tabr));
        self.acs.insert(
            asn,
            Acs { as_id: asn, known_peers: snapshot, routers, clock_offset: 0, negotiated: BTreeMap::new() },
        );
        self.propagate_up(ta);
        Ok(adverts)
    }

    /// Registers a member with the RES of its own lowest TA.
    pub fn register_member(&mut self, asn: AsId) -> Result<usize, ControlError> {
        let ta = self.tree.lowest_ta(asn).ok_or(ControlError::NotAMember(asn))?;
        self.register(asn, ta)
    }

    /// Refreshes the entry of `ta` (and its ancestors) in the parent RES.
    fn propagate_up(&mut self, mut ta: TaId) {
        while let Some(parent) = self.tree.ta(ta).parent {
            let prefixes: Vec<Prefix> =
                self.res[&ta].registry.values().flat_map(|m| m.prefixes.iter().copied()).collect();
            let tab = self.tree.ta(ta).tab.expect("non-root TA has a TAB");
            let entry = &mut self.res.get_mut(&parent).expect("RES").registry;
            if prefixes.is_empty() {
                entry.remove(&Endpoint::Ta(ta));
            } else {
                entry.insert(Endpoint::Ta(ta), MemberInfo { prefixes, acs: tab });
            }
            self.log.push(ControlEvent::Upward { from: ta, to: parent });
            ta = parent;
        }
    }

    /// Withdraws `asn`: its registration, its prefixes from peers and every
    /// SM involving its ABR.
    pub fn unregister(&mut self, asn: AsId) -> Result<(), ControlError> {
        let ta = self.tree.lowest_ta(asn).ok_or(ControlError::NotAMember(asn))?;
        let res = self.res.get_mut(&ta).expect("RES");
        if res.registry.remove(&Endpoint::As(asn)).is_none() {
            return Err(ControlError::NotRegistered(Endpoint::As(asn)));
        }
        self.log.push(ControlEvent::Unregister { asn, ta });
        self.acs.remove(&asn);
        let me = Endpoint::As(asn);
        for acs in self.acs.values_mut() {
            acs.known_peers.remove(&asn);
            for table in acs.negotiated.values_mut() {
                table.retain(|sm, _| !sm.involves(me));
            }
        }
        for r in self.routers.values_mut() {
            r.sm_table.retain(|sm, _| !sm.involves(me));
            r.prefix_map.retain(|_, &mut (_, owner)| owner != asn);
        }
        self.routers.remove(&RouterId::Abr(asn));
        self.propagate_up(ta);
        Ok(())
    }

    /// ACS responsible for an endpoint, if that endpoint is registered where
    /// `scope_ta` can see it.
    fn registered_acs(&self, e: Endpoint) -> Result<AsId, ControlError> {
        let acs = match e {
            Endpoint::As(a) => a,
            Endpoint::Ta(t) => {
                let parent = self.tree.ta(t).parent.ok_or(ControlError::NotRegistered(e))?;
                if !self.res[&parent].registry.contains_key(&e) {
                    return Err(ControlError::NotRegistered(e));
                }
                self.tree.ta(t).tab.ok_or(ControlError::NotRegistered(e))?
            }
        };
        if self.acs.contains_key(&acs) {
            Ok(acs)
        } else {
            Err(ControlError::NotRegistered(e))
        }
    }

    fn level_of(&self, a: Endpoint, b: Endpoint, scope: SmScope) -> Result<u32, ControlError> {
        let illegal = ControlError::IllegalEndpointPair { a, b, scope };
        if a == b {
            return Err(illegal);
        }
        let in_res = |ta: TaId, e: Endpoint| self.res[&ta].registry.contains_key(&e);
        match (scope, a, b) {
            (SmScope::Pairwise, Endpoint::As(x), Endpoint::As(y)) => {
                let t = self.tree.lowest_ta(x).ok_or(illegal.clone())?;
                if self.tree.lowest_ta(y) != Some(t) {
                    return Err(illegal);
                }
                for e in [a, b] {
                    if !in_res(t, e) {
                        return Err(ControlError::NotRegistered(e));
                    }
                }
                Ok(self.tree.ta(t).level)
            }
            (SmScope::Msm, m, Endpoint::Ta(t)) | (SmScope::Msm, Endpoint::Ta(t), m)
                if self.is_member_of(m, t) =>
            {
                if self.tree.ta(t).parent.is_none() {
                    return Err(illegal);
                }
                if !in_res(t, m) {
                    return Err(ControlError::NotRegistered(m));
                }
                Ok(self.tree.ta(t).level)
            }
            (SmScope::Gsm, Endpoint::Ta(x), Endpoint::Ta(y)) => {
                let p = self.tree.ta(x).parent.ok_or(illegal.clone())?;
                if self.tree.ta(y).parent != Some(p) {
                    return Err(illegal);
                }
                Ok(self.tree.ta(x).level)
            }
            _ => Err(illegal),
        }
    }

    fn is_member_of(&self, m: Endpoint, t: TaId) -> bool {
        match m {
            Endpoint::As(a) => self.tree.ta(t).member_ases.contains(&a),
            Endpoint::Ta(c) => self.tree.ta(c).parent == Some(t),
        }
    }

    /// Negotiates the SM pair between `a` and `b`, installing both directed
    /// states at both ends. Re-negotiating an existing pair keeps the
    /// installed state.
    pub fn negotiate(&mut self, a: Endpoint, b: Endpoint, scope: SmScope) -> Result<[SmId; 2], ControlError> {
        let level = self.level_of(a, b, scope)?;
        let acs_a = self.registered_acs(a)?;
        let acs_b = self.registered_acs(b)?;
        let forward = SmId { scope, level, from: a, to: b };
        let ids = [forward, forward.reverse()];
        for sm in ids {
            let fresh = SmState::new(sm, pair_seed(self.master_seed, &sm), self.params, self.origin);
            let mut added = false;
            for (acs, ep) in [(acs_a, a), (acs_b, b)] {
                let router = router_of(ep);
                let table = self.acs.get_mut(&acs).expect("registered").negotiated.entry(router).or_default();
                if let Entry::Vacant(slot) = table.entry(sm) {
                    slot.insert(fresh.clone());
                    added = true;
                }
            }
            if added {
                self.log.push(ControlEvent::Negotiate { sm });
            }
        }
        Ok(ids)
    }

    /// SM pairs each router of `asn` should hold, from the ACS's own view of
    /// the registries: (local endpoint, remote endpoint, scope).
    fn wanted_pairs(&self, asn: AsId) -> Vec<(Endpoint, Endpoint, SmScope)> {
        let Some(acs) = self.acs.get(&asn) else { return Vec::new() };
        let mut out = Vec::new();
        let me = Endpoint::As(asn);
        for &peer in acs.known_peers.keys() {
            out.push((me, Endpoint::As(peer), SmScope::Pairwise));
        }
        if let Some(t) = self.tree.lowest_ta(asn) {
            if self.tree.ta(t).parent.is_some() {
                out.push((me, Endpoint::Ta(t), SmScope::Msm));
            }
        }
        for t in self.tree.hosted_tabs(asn) {
            let Some(parent) = self.tree.ta(t).parent else { continue };
            let here = Endpoint::Ta(t);
            for &m in self.res[&t].registry.keys() {
                out.push((here, m, SmScope::Msm));
            }
            let parent_res = &self.res[&parent].registry;
            if self.tree.ta(parent).parent.is_some() {
                out.push((here, Endpoint::Ta(parent), SmScope::Msm));
            }
            for &s in parent_res.keys() {
                if s != here && matches!(s, Endpoint::Ta(_)) {
                    out.push((here, s, SmScope::Gsm));
                }
            }
        }
        out
    }

    /// Every ACS negotiates every pair it knows about. Pairs whose far side
    /// has not registered yet are deferred.
    pub fn negotiate_all(&mut self) -> NegotiationSummary {
        let mut summary = NegotiationSummary::default();
        let acses: Vec<AsId> = self.acs.keys().copied().collect();
        for asn in acses {
            for (a, b, scope) in self.wanted_pairs(asn) {
                match self.negotiate(a, b, scope) {
                    Ok(_) => summary.negotiated += 1,
                    Err(_) => summary.deferred += 1,
                }
            }
        }
        summary
    }

    /// Installs router state for the ABR and hosted TABRs of `asn`. Running
    /// it again only adds what is new; existing SM state is kept.
    pub fn configure_routers(&mut self, asn: AsId) -> Result<Vec<RouterId>, ControlError> {
        let acs = self.acs.get(&asn).ok_or(ControlError::UnknownAcs(asn))?;
        let mut wanted: BTreeMap<RouterId, BTreeSet<SmId>> = BTreeMap::new();
        for (a, b, scope) in self.wanted_pairs(asn) {
            let level = self.level_of(a, b, scope).unwrap_or(0);
            let sm = SmId { scope, level, from: a, to: b };
            wanted.entry(router_of(a)).or_default().extend([sm, sm.reverse()]);
        }
        for (router, sms) in &wanted {
            let have = acs.negotiated.get(router);
            let missing = sms.iter().filter(|sm| !have.is_some_and(|h| h.contains_key(sm))).count();
            if missing > 0 {
                return Err(ControlError::IncompleteNegotiation { router: *router, missing });
            }
        }

        let mut prefixes: Vec<(Prefix, AsId)> = Vec::new();
        let own = &self.tree.as_node(asn).expect("registered AS").prefixes;
        prefixes.extend(own.iter().map(|&p| (p, asn)));
        for (&peer, ps) in &acs.known_peers {
            prefixes.extend(ps.iter().map(|&p| (p, peer)));
        }
        let routers = acs.routers.clone();
        let offset = acs.clock_offset;
        let negotiated = acs.negotiated.clone();
        for &id in &routers {
            let mode = self.tabr_mode;
            let state = self.routers.entry(id).or_insert_with(|| {
                let mut r = RouterState::new(id, asn);
                r.mode = mode;
                r
            });
            state.clock_offset = offset;
            if let Some(table) = negotiated.get(&id) {
                for (sm, s) in table {
                    state.sm_table.entry(*sm).or_insert_with(|| s.clone());
                }
            }
            for &(p, owner) in &prefixes {
                state.add_prefix(p, owner);
            }
            let sms = state.sm_table.len();
            self.log.push(ControlEvent::Configure { router: id, sms });
        }
        Ok(routers)
    }

    /// Injects a clock offset for `asn` and every router it runs.
    pub fn set_clock_offset(&mut self, asn: AsId, offset: i64) -> Result<(), ControlError> {
        let acs = self.acs.get_mut(&asn).ok_or(ControlError::UnknownAcs(asn))?;
        acs.clock_offset = offset;
        for id in acs.routers.clone() {
            if let Some(r) = self.routers.get_mut(&id) {
                r.clock_offset = offset;
            }
        }
        Ok(())
    }

    /// The RES of `ta` resets the clocks of the ACSes registered with it.
    /// Returns the corrections applied.
    pub fn sync_clock(&mut self, ta: TaId, at: SimTime) -> Vec<(AsId, i64)> {
        let acses: BTreeSet<AsId> = self.res[&ta].registry.values().map(|m| m.acs).collect();
        let mut out = Vec::new();
        for asn in acses {
            let Some(acs) = self.acs.get(&asn) else { continue };
            let correction = -acs.clock_offset;
            let _ = self.set_clock_offset(asn, 0);
            self.log.push(ControlEvent::ClockSync { asn, correction, at });
            out.push((asn, correction));
        }
        out
    }

    pub fn sync_all(&mut self, at: SimTime) {
        let tas: Vec<TaId> = self.res.keys().copied().collect();
        for t in tas {
            self.sync_clock(t, at);
        }
    }
}

fn router_of(e: Endpoint) -> RouterId {
    match e {
        Endpoint::As(a) => RouterId::Abr(a),
        Endpoint::Ta(t) => RouterId::Tabr(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::required_sms;
    use crate::par::Exec;
    use crate::topology::{Bounds, TopologySpec, NGI_TOPOLOGY, THREE_LEVEL_30};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn tree(text: &str) -> Arc<TaTree> {
        Arc::new(TaTree::from_spec_text(text).unwrap())
    }

    fn id(t: &TaTree, name: &str) -> AsId {
        t.as_by_name(name).unwrap()
    }

    #[test]
    fn registration_advertises_to_existing_members() {
        let t = tree(THREE_LEVEL_30);
        let la = t.ta_by_name("La").unwrap();
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        for (k, name) in ["a1", "a2", "a3", "a4", "a5"].iter().enumerate() {
            assert_eq!(cp.register(id(&t, name), la).unwrap(), k);
        }
        let a5 = cp.acs(id(&t, "a5")).unwrap();
        assert_eq!(a5.known_peers.len(), 4);
        assert_eq!(cp.acs(id(&t, "a1")).unwrap().known_peers.len(), 4);
    }

    #[test]
    fn registration_errors() {
        let t = tree(THREE_LEVEL_30);
        let la = t.ta_by_name("La").unwrap();
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        cp.register(id(&t, "a1"), la).unwrap();
        assert_eq!(cp.register(id(&t, "a1"), la), Err(ControlError::DuplicateRegistration(id(&t, "a1"))));
        assert_eq!(cp.register(id(&t, "b1"), la), Err(ControlError::NotAMember(id(&t, "b1"))));
        assert_eq!(cp.register(id(&t, "out1"), la), Err(ControlError::NotAMember(id(&t, "out1"))));
    }

    #[test]
    fn upward_registration_reaches_parent() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        cp.register_member(id(&t, "c2")).unwrap();
        let m2 = t.ta_by_name("M2").unwrap();
        let lc = t.ta_by_name("Lc").unwrap();
        let entry = &cp.res(m2).registry[&Endpoint::Ta(lc)];
        assert_eq!(entry.acs, id(&t, "c1"));
        assert!(cp.res(t.root()).registry.contains_key(&Endpoint::Ta(m2)));
    }

    #[test]
    fn negotiate_errors() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        let (a1, a2, b1) = (id(&t, "a1"), id(&t, "a2"), id(&t, "b1"));
        cp.register_member(a1).unwrap();
        assert_eq!(
            cp.negotiate(Endpoint::As(a1), Endpoint::As(a2), SmScope::Pairwise),
            Err(ControlError::NotRegistered(Endpoint::As(a2)))
        );
        cp.register_member(b1).unwrap();
        assert!(matches!(
            cp.negotiate(Endpoint::As(a1), Endpoint::As(b1), SmScope::Pairwise),
            Err(ControlError::IllegalEndpointPair { .. })
        ));
        let root = Endpoint::Ta(t.root());
        let m1 = Endpoint::Ta(t.ta_by_name("M1").unwrap());
        assert!(matches!(cp.negotiate(m1, root, SmScope::Msm), Err(ControlError::IllegalEndpointPair { .. })));
        assert!(matches!(
            cp.negotiate(Endpoint::As(a1), m1, SmScope::Msm),
            Err(ControlError::IllegalEndpointPair { .. })
        ));
    }

    #[test]
    fn negotiation_installs_mirrored_states() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        let (a1, a2) = (id(&t, "a1"), id(&t, "a2"));
        cp.register_member(a1).unwrap();
        cp.register_member(a2).unwrap();
        let [fwd, rev] = cp.negotiate(Endpoint::As(a1), Endpoint::As(a2), SmScope::Pairwise).unwrap();
        for sm in [fwd, rev] {
            let x: Vec<_> = cp.acs(a1).unwrap().negotiated(RouterId::Abr(a1)).copied().collect();
            let y: Vec<_> = cp.acs(a2).unwrap().negotiated(RouterId::Abr(a2)).copied().collect();
            assert!(x.contains(&sm) && y.contains(&sm));
        }
        assert_eq!(cp.acs(a1).unwrap().negotiated[&RouterId::Abr(a1)][&fwd], cp.acs(a2).unwrap().negotiated[&RouterId::Abr(a2)][&fwd]);
    }

    #[test]
    fn configure_requires_negotiation() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::new(t.clone(), 1, SmParams::default());
        let a1 = id(&t, "a1");
        cp.register_member(a1).unwrap();
        cp.register_member(id(&t, "a2")).unwrap();
        assert!(matches!(cp.configure_routers(a1), Err(ControlError::IncompleteNegotiation { .. })));
    }

    fn assert_converged(t: &Arc<TaTree>, cp: &ControlPlane) {
        let want = required_sms(t, Exec::Sequential);
        assert_eq!(cp.installed_sms(), want);
    }

    #[test]
    fn convergence_matches_oracle_on_fixtures() {
        for text in [THREE_LEVEL_30, NGI_TOPOLOGY] {
            let t = tree(text);
            let cp = ControlPlane::converged(t.clone(), 3, SmParams::default()).unwrap();
            assert_converged(&t, &cp);
        }
    }

    #[test]
    fn convergence_matches_oracle_on_all_small_uniform_trees() {
        for n in 4..=50 {
            for l in crate::analysis::legal_levels(n as u64) {
                for m in 2..=n {
                    let Ok(t) = TaTree::uniform(n, m, l) else { continue };
                    let t = Arc::new(t);
                    let cp = ControlPlane::converged(t.clone(), n as u64, SmParams::default()).unwrap();
                    assert_converged(&t, &cp);
                }
            }
        }
    }

    #[test]
    fn configure_is_idempotent() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::converged(t.clone(), 3, SmParams::default()).unwrap();
        let before = cp.routers().clone();
        for a in t.members().map(|a| a.id).collect::<Vec<_>>() {
            cp.configure_routers(a).unwrap();
        }
        assert_eq!(cp.negotiate_all().negotiated, cp.negotiate_all().negotiated);
        assert_eq!(cp.routers(), &before);
    }

    #[test]
    fn unregister_removes_sms() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::converged(t.clone(), 3, SmParams::default()).unwrap();
        let a2 = id(&t, "a2");
        cp.unregister(a2).unwrap();
        assert!(cp.router(RouterId::Abr(a2)).is_none());
        for r in cp.routers().values() {
            assert!(r.sm_table.keys().all(|sm| !sm.involves(Endpoint::As(a2))));
        }
        assert_eq!(cp.unregister(a2), Err(ControlError::NotRegistered(Endpoint::As(a2))));
    }

    #[test]
    fn clock_sync_resets_offsets() {
        let t = tree(THREE_LEVEL_30);
        let mut cp = ControlPlane::converged(t.clone(), 3, SmParams::default()).unwrap();
        let a2 = id(&t, "a2");
        cp.set_clock_offset(a2, -7).unwrap();
        assert_eq!(cp.router(RouterId::Abr(a2)).unwrap().clock_offset, -7);
        let la = t.ta_by_name("La").unwrap();
        let fixes = cp.sync_clock(la, 10);
        assert!(fixes.contains(&(a2, 7)));
        assert_eq!(cp.router(RouterId::Abr(a2)).unwrap().clock_offset, 0);
    }

    #[test]
    fn structural_tree_with_host_of_two_tabs() {
        let mut s = TopologySpec::new();
        s.ta("R", 1, None, None).ta("A", 2, Some("R"), Some("a1")).ta("B", 2, Some("R"), Some("b1"));
        s.as_node("a1", 1, vec![Prefix::new(0, 9)], true, Some("A"));
        s.as_node("a2", 2, vec![Prefix::new(10, 19)], true, Some("A"));
        s.as_node("b1", 3, vec![Prefix::new(20, 29)], true, Some("B"));
        s.as_node("b2", 4, vec![Prefix::new(30, 39)], true, Some("B"));
        let t = Arc::new(TaTree::build(&s, Bounds::Strict).unwrap());
        let cp = ControlPlane::converged(t.clone(), 1, SmParams::default()).unwrap();
        assert_converged(&t, &cp);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn registration_order_does_not_matter(shuffle_seed in any::<u64>()) {
            let t = tree(THREE_LEVEL_30);
            let mut order: Vec<AsId> = t.members().map(|a| a.id).collect();
            let base = ControlPlane::converged_in_order(t.clone(), 5, SmParams::default(), &order).unwrap();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let cp = ControlPlane::converged_in_order(t.clone(), 5, SmParams::default(), &order).unwrap();
            prop_assert_eq!(base.installed_sms(), cp.installed_sms());
            prop_assert_eq!(base.routers(), cp.routers());
        }
    }
}
