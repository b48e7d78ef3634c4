//! Deterministic discrete-event driver.
//!
//! A run converges the control plane, expands the traffic lines into
//! individual packets, spreads their injections evenly over the configured
//! duration and walks each packet hop by hop through a single priority queue
//! keyed by `(time, sequence)`. Every hop costs one tick.
//!
//! `replay-tag` lines inject a legitimate carrier packet (counted as legit)
//! and, once the carrier has been tagged, a copy of it that re-enters the
//! network after the carrier has been delivered.

pub mod config;
pub mod experiments;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control_plane::{ControlEvent, ControlPlane};
use crate::data_plane::{
    forward, process_at_dest_abr, process_at_source_abr, process_at_tabr, Direction, DropReason, NodeId, Packet,
};
use crate::sm_engine::{SimTime, SmId, Tag};
use crate::topology::{Address, AsId, RouterId, Scenario, TaId, TaTree};

pub use config::{ConfigError, ScenarioConfig, Selector, TopologySource, TrafficKind, TrafficSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KindCounts {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
}

impl KindCounts {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScenarioCounts {
    pub accepted: u64,
    pub dropped: u64,
    /// Tag replacements performed.
    pub replaced: u64,
    /// Hops through plain routers.
    pub passthrough: u64,
}

/// Breaches of the data-plane laws observed during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LawViolations {
    /// A router checked an SM it is not the receiving endpoint of, or one at
    /// a level its role does not cover.
    pub invisibility: u64,
    /// A delivered cross-TA packet whose replacement count differs from its
    /// TAB chain length.
    pub replacement: u64,
    /// A plain router changed the packet.
    pub transparency: u64,
}

impl LawViolations {
    pub fn total(&self) -> u64 {
        self.invisibility + self.replacement + self.transparency
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMetrics {
    pub injected: u64,
    pub delivered: u64,
    pub dropped_by_reason: BTreeMap<DropReason, u64>,
    pub per_kind: BTreeMap<TrafficKind, KindCounts>,
    pub per_scenario: BTreeMap<Scenario, ScenarioCounts>,
    /// Replacement count of each delivered packet.
    pub replacements_per_packet: BTreeMap<u32, u64>,
    pub sm_table_sizes: BTreeMap<String, usize>,
    pub law_violations: LawViolations,
    /// Epoch boundaries crossed between the first and last injection.
    pub epochs_spanned: u64,
    pub control_events: usize,
    /// Event trace as CSV, when enabled.
    pub trace: Option<String>,
}

impl RunMetrics {
    pub fn dropped(&self) -> u64 {
        self.dropped_by_reason.values().sum()
    }

    pub fn conserved(&self) -> bool {
        self.injected == self.delivered + self.dropped()
    }

    pub fn kind(&self, k: TrafficKind) -> KindCounts {
        self.per_kind.get(&k).cloned().unwrap_or_default()
    }

    /// `metric,value` rows.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        let mut row = |k: String, v: String| w.write_record([k, v]);
        row("injected".into(), self.injected.to_string())?;
        row("delivered".into(), self.delivered.to_string())?;
        row("dropped".into(), self.dropped().to_string())?;
        for r in DropReason::ALL {
            row(format!("dropped.{r}"), self.dropped_by_reason.get(&r).copied().unwrap_or(0).to_string())?;
        }
        for (k, c) in &self.per_kind {
            row(format!("kind.{k}.injected"), c.injected.to_string())?;
            row(format!("kind.{k}.delivered"), c.delivered.to_string())?;
            row(format!("kind.{k}.dropped"), c.dropped_total().to_string())?;
        }
        for (s, c) in &self.per_scenario {
            let s = s.as_str();
            row(format!("scenario.{s}.accepted"), c.accepted.to_string())?;
            row(format!("scenario.{s}.dropped"), c.dropped.to_string())?;
            row(format!("scenario.{s}.replaced"), c.replaced.to_string())?;
            row(format!("scenario.{s}.passthrough"), c.passthrough.to_string())?;
        }
        for (r, c) in &self.replacements_per_packet {
            row(format!("replacements.{r}"), c.to_string())?;
        }
        row("law.invisibility".into(), self.law_violations.invisibility.to_string())?;
        row("law.replacement".into(), self.law_violations.replacement.to_string())?;
        row("law.transparency".into(), self.law_violations.transparency.to_string())?;
        row("epochs_spanned".into(), self.epochs_spanned.to_string())?;
        row("control_events".into(), self.control_events.to_string())?;
        for (r, n) in &self.sm_table_sizes {
            row(format!("sm_table.{r}"), n.to_string())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub const TRACE_HEADER: [&str; 5] = ["time", "router", "action", "scenario", "result"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hop {
    SourceAbr(AsId),
    Tabr(TaId, Direction),
    DestAbr(AsId),
    Plain(AsId),
    Transit(u32),
}

/// Hop sequence for a packet between two ASes.
fn route(tree: &TaTree, src: AsId, dst: AsId, transit: u32) -> Vec<Hop> {
    let is_member = |a: AsId| tree.as_node(a).is_ok_and(|n| n.is_member);
    let mut hops = Vec::new();
    let mut next_transit = 0u32;
    let mut push = |hops: &mut Vec<Hop>, h: Hop| {
        if !hops.is_empty() {
            for _ in 0..transit {
                hops.push(Hop::Transit(next_transit));
                next_transit += 1;
            }
        }
        hops.push(h);
    };
    push(&mut hops, if is_member(src) { Hop::SourceAbr(src) } else { Hop::Plain(src) });
    if is_member(src) && is_member(dst) {
        for t in tree.tab_chain(src, dst).unwrap_or_default() {
            let dir = if tree.is_under(src, t) { Direction::Up } else { Direction::Down };
            push(&mut hops, Hop::Tabr(t, dir));
        }
    }
    push(&mut hops, if is_member(dst) { Hop::DestAbr(dst) } else { Hop::Plain(dst) });
    hops
}

#[derive(Debug, Clone)]
struct InFlight {
    packet: Packet,
    path: Vec<Hop>,
    hop: usize,
    kind: TrafficKind,
    scenario: Scenario,
    chain_len: u32,
    /// Carrier of a replay: schedule a copy once tagged.
    spawn_replay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Inject(usize),
    Hop(usize),
    Sync,
}

struct Flow {
    src: AsId,
    dst: AsId,
    kind: TrafficKind,
}

fn pick(tree: &TaTree, members: &[AsId], sel: &Selector, rng: &mut ChaCha8Rng, line: usize) -> Result<Vec<AsId>, ConfigError> {
    match sel {
        Selector::Named(name) => tree
            .as_by_name(name)
            .map(|a| vec![a])
            .ok_or_else(|| ConfigError::Line { line, message: format!("unknown AS `{name}`") }),
        Selector::All => Ok(members.to_vec()),
        Selector::Random => Ok(vec![*members.choose(rng).ok_or_else(|| ConfigError::Invalid("no members".into()))?]),
    }
}

fn expand(tree: &TaTree, traffic: &[TrafficSpec], rng: &mut ChaCha8Rng) -> Result<Vec<Flow>, ConfigError> {
    let members: Vec<AsId> = tree.members().map(|a| a.id).collect();
    let mut flows = Vec::new();
    for spec in traffic {
        let per_packet = spec.src == Selector::Random || spec.dst == Selector::Random;
        let rounds = if per_packet { spec.count } else { 1 };
        let each = if per_packet { 1 } else { spec.count };
        for _ in 0..rounds {
            let srcs = pick(tree, &members, &spec.src, rng, spec.line)?;
            for &s in &srcs {
                // A drawn destination is never the source itself.
                let dsts = match spec.dst {
                    Selector::Random => {
                        let others: Vec<AsId> = members.iter().copied().filter(|&d| d != s).collect();
                        others.choose(rng).map(|&d| vec![d]).unwrap_or_default()
                    }
                    _ => pick(tree, &members, &spec.dst, rng, spec.line)?,
                };
                for &d in &dsts {
                    if s == d && spec.dst == Selector::All {
                        continue;
                    }
                    for _ in 0..each {
                        flows.push(Flow { src: s, dst: d, kind: spec.kind });
                    }
                }
            }
        }
    }
    Ok(flows)
}

fn address_in(tree: &TaTree, asn: AsId, rng: &mut ChaCha8Rng) -> Address {
    let node = tree.as_node(asn).expect("known AS");
    let p = node.prefixes[0];
    rng.random_range(p.lo..=p.hi)
}

struct Sim<'a> {
    tree: &'a TaTree,
    cp: ControlPlane,
    cfg: &'a ScenarioConfig,
    queue: BinaryHeap<Reverse<(SimTime, u64, Event)>>,
    seq: u64,
    slots: Vec<Option<InFlight>>,
    free: Vec<usize>,
    metrics: RunMetrics,
    trace: Option<csv::Writer<Vec<u8>>>,
    traffic_rng: ChaCha8Rng,
    clock_rng: ChaCha8Rng,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: SimTime, ev: Event) {
        self.queue.push(Reverse((time, self.seq, ev)));
        self.seq += 1;
    }

    fn log(&mut self, time: SimTime, who: &str, action: &str, scenario: &str, result: &str) {
        if let Some(w) = self.trace.as_mut() {
            w.write_record([time.to_string().as_str(), who, action, scenario, result]).expect("in-memory trace");
        }
    }

    fn store(&mut self, f: InFlight) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(f);
                i
            }
            None => {
                self.slots.push(Some(f));
                self.slots.len() - 1
            }
        }
    }

    fn count_injection(&mut self, f: &InFlight) {
        self.metrics.injected += 1;
        self.metrics.per_kind.entry(f.kind).or_default().injected += 1;
    }

    fn inject(&mut self, time: SimTime, flow: &Flow) {
        let tree = self.tree;
        let rng = &mut self.traffic_rng;
        let payload = rng.random_range(64..=1500u32);
        let dst_addr = address_in(tree, flow.dst, rng);
        let mut src_addr = address_in(tree, flow.src, rng);
        if flow.kind == TrafficKind::SpoofSrc {
            let victims: Vec<AsId> = tree.members().map(|a| a.id).filter(|&a| a != flow.src).collect();
            src_addr = match victims.choose(rng) {
                Some(&v) => address_in(tree, v, rng),
                None => Address::MAX,
            };
        }
        let mut packet = Packet::new(src_addr, dst_addr, payload);
        let path = route(tree, flow.src, flow.dst, self.cfg.transit_hops);
        let scenario = tree.classify(flow.src, flow.dst).unwrap_or(Scenario::NonMember);
        let chain_len = tree.tab_chain(flow.src, flow.dst).map(|c| c.len() as u32).unwrap_or(0);
        // Off-path injections skip the source ABR.
        let mut hop = 0;
        let is_member_src = matches!(path[0], Hop::SourceAbr(_));
        match flow.kind {
            TrafficKind::ForgedTag => {
                let tag = Tag {
                    value: rng.random(),
                    epoch_index: rng.random_range(0..4),
                    sequence: rng.random(),
                };
                packet.shim = Some(tag.to_shim());
                hop = usize::from(is_member_src);
            }
            TrafficKind::NoTag => hop = usize::from(is_member_src),
            _ => {}
        }
        let kind = if flow.kind == TrafficKind::ReplayTag { TrafficKind::Legit } else { flow.kind };
        let f = InFlight {
            packet,
            path,
            hop,
            kind,
            scenario,
            chain_len,
            spawn_replay: flow.kind == TrafficKind::ReplayTag,
        };
        self.count_injection(&f);
        let who = format!("as:{}", tree.as_node(flow.src).expect("known").name);
        self.log(time, &who, "inject", scenario.as_str(), kind.as_str());
        let slot = self.store(f);
        self.schedule(time, Event::Hop(slot));
    }

    fn hop_name(&self, hop: Hop) -> String {
        match hop {
            Hop::SourceAbr(a) | Hop::DestAbr(a) => self.tree.router_name(RouterId::Abr(a)),
            Hop::Tabr(t, _) => self.tree.router_name(RouterId::Tabr(t)),
            Hop::Plain(a) => format!("plain:{}", self.tree.as_node(a).expect("known").name),
            Hop::Transit(i) => format!("transit:{i}"),
        }
    }

    fn finish(&mut self, slot: usize, f: InFlight, time: SimTime, who: &str, outcome: Result<(), DropReason>) {
        let scenario = f.scenario.as_str();
        let counts = self.metrics.per_scenario.entry(f.scenario).or_default();
        let kind = self.metrics.per_kind.entry(f.kind).or_default();
        match outcome {
            Ok(()) => {
                counts.accepted += 1;
                kind.delivered += 1;
                self.metrics.delivered += 1;
                *self.metrics.replacements_per_packet.entry(f.packet.replacements).or_default() += 1;
                if f.scenario == Scenario::CrossTa && f.packet.replacements != f.chain_len && f.kind == TrafficKind::Legit
                {
                    self.metrics.law_violations.replacement += 1;
                }
                self.log(time, who, "deliver", scenario, "delivered");
            }
            Err(reason) => {
                counts.dropped += 1;
                *kind.dropped.entry(reason).or_default() += 1;
                *self.metrics.dropped_by_reason.entry(reason).or_default() += 1;
                self.log(time, who, "drop", scenario, reason.as_str());
            }
        }
        self.slots[slot] = None;
        self.free.push(slot);
    }

    fn check_invisibility(&mut self, packet: &Packet) {
        for (router, sm) in &packet.verifications {
            if !self.sm_visible(*router, sm) {
                self.metrics.law_violations.invisibility += 1;
            }
        }
    }

    fn sm_visible(&self, router: RouterId, sm: &SmId) -> bool {
        if sm.to != router.endpoint() {
            return false;
        }
        match router {
            RouterId::Abr(a) => self.tree.lowest_ta(a).is_some_and(|t| self.tree.ta(t).level == sm.level),
            RouterId::Tabr(t) => {
                let node = self.tree.ta(t);
                sm.level == node.level || node.parent.is_some_and(|p| self.tree.ta(p).level == sm.level)
            }
        }
    }

    fn step(&mut self, time: SimTime, slot: usize) {
        let mut f = self.slots[slot].take().expect("live packet");
        let hop = f.path[f.hop];
        let last = f.hop + 1 == f.path.len();
        let who = self.hop_name(hop);
        let scenario = f.scenario.as_str();
        let tree = self.tree;
        let before_shim = f.packet.shim;
        let result = match hop {
            Hop::SourceAbr(a) => router(&mut self.cp, RouterId::Abr(a))
                .and_then(|r| process_at_source_abr(f.packet.clone(), r, tree, time)),
            Hop::Tabr(t, dir) => router(&mut self.cp, RouterId::Tabr(t))
                .and_then(|r| process_at_tabr(f.packet.clone(), r, tree, dir, time)),
            Hop::DestAbr(a) => router(&mut self.cp, RouterId::Abr(a))
                .and_then(|r| process_at_dest_abr(f.packet.clone(), r, tree, time)),
            Hop::Plain(a) => Ok(forward(f.packet.clone(), NodeId::Plain(a))),
            Hop::Transit(i) => Ok(forward(f.packet.clone(), NodeId::Transit(i))),
        };
        let packet = match result {
            Ok(p) => p,
            Err(reason) => {
                let action = action_of(hop, &f.packet);
                self.log(time, &who, action, scenario, &format!("drop:{reason}"));
                self.check_invisibility(&f.packet);
                self.finish(slot, f, time, &who, Err(reason));
                return;
            }
        };
        match hop {
            Hop::Plain(_) | Hop::Transit(_) => {
                self.metrics.per_scenario.entry(f.scenario).or_default().passthrough += 1;
                if packet.shim != before_shim
                    || packet.src_addr != f.packet.src_addr
                    || packet.dst_addr != f.packet.dst_addr
                    || packet.payload_len != f.packet.payload_len
                {
                    self.metrics.law_violations.transparency += 1;
                }
            }
            Hop::Tabr(..) => self.metrics.per_scenario.entry(f.scenario).or_default().replaced += 1,
            _ => {}
        }
        self.log(time, &who, action_of(hop, &f.packet), scenario, "ok");
        let spawn = f.spawn_replay && matches!(hop, Hop::SourceAbr(_)) && packet.shim.is_some();
        f.packet = packet;
        if spawn {
            let mut copy = f.clone();
            copy.kind = TrafficKind::ReplayTag;
            copy.spawn_replay = false;
            copy.hop = 1;
            copy.packet.hop_trace.clear();
            copy.packet.verifications.clear();
            let delay = f.path.len() as SimTime + 1 + self.traffic_rng.random_range(0..50);
            self.count_injection(&copy);
            self.log(time, "attacker", "capture", scenario, "ok");
            let s = self.store(copy);
            self.schedule(time + delay, Event::Hop(s));
        }
        if last {
            self.check_invisibility(&f.packet);
            self.finish(slot, f, time, &who, Ok(()));
            return;
        }
        f.hop += 1;
        self.slots[slot] = Some(f);
        self.schedule(time + 1, Event::Hop(slot));
    }

    fn redraw_drift(&mut self) {
        let d = self.cfg.max_drift as i64;
        if d == 0 {
            return;
        }
        let members: Vec<AsId> = self.tree.members().map(|a| a.id).collect();
        for a in members {
            let offset = self.clock_rng.random_range(-d..=d);
            let _ = self.cp.set_clock_offset(a, offset);
        }
    }

    fn sync(&mut self, time: SimTime) {
        self.cp.sync_all(time);
        self.redraw_drift();
        self.log(time, "res:all", "sync", "control", "ok");
    }
}

fn router(cp: &mut ControlPlane, id: RouterId) -> Result<&mut crate::data_plane::RouterState, DropReason> {
    cp.router_mut(id).ok_or(DropReason::NoSm)
}

fn action_of(hop: Hop, incoming: &Packet) -> &'static str {
    match hop {
        Hop::SourceAbr(_) => "tag",
        Hop::Tabr(..) => "replace",
        Hop::DestAbr(_) if incoming.shim.is_some() => "verify",
        Hop::DestAbr(_) => "receive",
        Hop::Plain(_) | Hop::Transit(_) => "forward",
    }
}

fn control_row(tree: &TaTree, ev: &ControlEvent) -> (String, &'static str) {
    let as_name = |a: AsId| tree.as_node(a).map(|n| n.name.clone()).unwrap_or_default();
    match ev {
        ControlEvent::Register { asn, .. } => (format!("acs:{}", as_name(*asn)), "register"),
        ControlEvent::Unregister { asn, .. } => (format!("acs:{}", as_name(*asn)), "unregister"),
        ControlEvent::Advertise { to, .. } => (format!("acs:{}", as_name(*to)), "advertise"),
        ControlEvent::Upward { to, .. } => (format!("res:{}", tree.ta(*to).name), "upward"),
        ControlEvent::Negotiate { sm } => (sm.to_string(), "negotiate"),
        ControlEvent::Configure { router, .. } => (tree.router_name(*router), "configure"),
        ControlEvent::ClockSync { asn, .. } => (format!("acs:{}", as_name(*asn)), "clock-sync"),
    }
}

/// Runs a scenario against an already validated tree.
pub fn run_on(tree: Arc<TaTree>, cfg: &ScenarioConfig) -> Result<RunMetrics, ConfigError> {
    cfg.validate()?;
    let mut cp = ControlPlane::new(tree.clone(), cfg.seed, cfg.sm_params());
    cp.set_tabr_mode(cfg.tabr_mode);
    let order: Vec<AsId> = tree.members().map(|a| a.id).collect();
    for &a in &order {
        cp.register_member(a).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    cp.negotiate_all();
    for &a in &order {
        cp.configure_routers(a).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    let ids: Vec<RouterId> = cp.routers().keys().copied().collect();
    for id in ids {
        cp.router_mut(id).expect("configured").dest_policy = cfg.dest_policy;
    }

    let mut traffic_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clock_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c10c_0000_0001);
    let mut flows = expand(&tree, &cfg.traffic, &mut traffic_rng)?;
    flows.shuffle(&mut traffic_rng);

    let mut sim = Sim {
        tree: &tree,
        cp,
        cfg,
        queue: BinaryHeap::new(),
        seq: 0,
        slots: Vec::new(),
        free: Vec::new(),
        metrics: RunMetrics::default(),
        trace: cfg.trace.then(|| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TRACE_HEADER).expect("in-memory trace");
            w
        }),
        traffic_rng,
        clock_rng,
    };
    sim.metrics.control_events = sim.cp.log().len();
    if sim.trace.is_some() {
        let rows: Vec<(String, &str)> = sim.cp.log().iter().map(|e| control_row(&tree, e)).collect();
        for (who, action) in rows {
            sim.log(0, &who, action, "control", "ok");
        }
    }
    sim.redraw_drift();

    let total = flows.len() as u64;
    let end = cfg.start + cfg.duration;
    for i in 0..flows.len() {
        let t = cfg.start + (i as u64 * cfg.duration) / total.max(1);
        sim.schedule(t, Event::Inject(i));
    }
    if let Some(every) = cfg.sync_interval {
        let mut t = cfg.start + every;
        while t < end {
            sim.schedule(t, Event::Sync);
            t += every;
        }
    }
    let mut last_inject = cfg.start;
    while let Some(Reverse((time, _, ev))) = sim.queue.pop() {
        match ev {
            Event::Inject(i) => {
                last_inject = time;
                sim.inject(time, &flows[i]);
            }
            Event::Hop(slot) => sim.step(time, slot),
            Event::Sync => sim.sync(time),
        }
    }

    let mut m = sim.metrics;
    m.epochs_spanned = last_inject / cfg.epoch_length - cfg.start / cfg.epoch_length;
    m.sm_table_sizes = sim.cp.routers().iter().map(|(&id, r)| (tree.router_name(id), r.sm_table.len())).collect();
    if let Some(w) = sim.trace {
        let bytes = w.into_inner().expect("in-memory trace");
        m.trace = Some(String::from_utf8(bytes).expect("csv is utf-8"));
    }
    Ok(m)
}

/// Loads the topology and runs the scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunMetrics, ConfigError> {
    let tree = Arc::new(cfg.build_tree()?);
    run_on(tree, cfg)
}
