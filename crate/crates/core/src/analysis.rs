//! Closed-form SM table sizes and the enumeration oracle that checks them.
//!
//! A flat alliance of `N` members needs `2(N-1)` directed SMs on every border
//! router. In a hierarchy an ABR only keeps SMs inside its lowest-level TA,
//! and a TABR adds the SMs that tie its TA to its members, its parent and its
//! siblings. The closed forms here follow the reference counts; the
//! enumeration in [`required_sms`] derives every directed SM from the endpoint
//! rules directly and is the reference the formulas are compared against.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use thiserror::Error;

use crate::par::{self, Exec};
use crate::sm_engine::{SmId, SmScope};
use crate::topology::{AsId, Endpoint, MembershipVector, RouterId, TaTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("(n={n}, m={m}, L={l}) violates {reason}")]
    ConstraintViolation { n: u64, m: u64, l: u32, reason: &'static str },
}

/// `2(n-1)`: SMs on every ABR of a flat alliance.
pub fn flat_abr_count(n: u64) -> u64 {
    2 * n.saturating_sub(1)
}

/// Legal heights for `n` members: `1 < l < floor(log2 n) + 1`.
pub fn legal_levels(n: u64) -> std::ops::Range<u32> {
    if n < 2 {
        return 2..2;
    }
    2..n.ilog2() + 1
}

/// Checks the uniform-structure preconditions: legal height, `m >= 2`, and
/// enough members that every lowest TA holds at least two ASes.
pub fn check_uniform(n: u64, m: u64, l: u32) -> Result<(), AnalysisError> {
    let violation = |reason| Err(AnalysisError::ConstraintViolation { n, m, l, reason });
    if !legal_levels(n).contains(&l) {
        return violation("1 < L < floor(log2 N) + 1");
    }
    if m < 2 {
        return violation("m >= 2");
    }
    match m.checked_pow(l - 1).and_then(|leaves| leaves.checked_mul(2)) {
        Some(need) if need <= n => Ok(()),
        _ => violation("2 * m^(L-1) <= N"),
    }
}

fn leaf_size(n: u64, m: u64, l: u32) -> u64 {
    n.div_ceil(m.pow(l - 1))
}

/// `2(ceil(n / m^(l-1)) - 1)`, plus the member's own MSM pair when
/// `include_upward` is set.
pub fn uniform_abr_count(n: u64, m: u64, l: u32, include_upward: bool) -> Result<u64, AnalysisError> {
    check_uniform(n, m, l)?;
    Ok(nonuniform_abr_count(leaf_size(n, m, l), include_upward))
}

/// `2 ceil(n / m^(l-1)) + 2(l-1)m - 4l`.
pub fn uniform_tabr_max_count(n: u64, m: u64, l: u32) -> Result<u64, AnalysisError> {
    check_uniform(n, m, l)?;
    let l = u64::from(l);
    let value = 2 * leaf_size(n, m, l as u32) + 2 * (l - 1) * m;
    Ok(value.saturating_sub(4 * l))
}

/// Continuous minimiser `n^(1/l)` of the uniform TABR count.
pub fn optimal_m(n: u64, l: u32) -> f64 {
    (n as f64).powf(1.0 / f64::from(l))
}

/// Best legal integer next to [`optimal_m`], returned with its TABR count.
/// Ties go to the smaller `m`.
pub fn optimal_integer_m(n: u64, l: u32) -> Result<(u64, u64), AnalysisError> {
    let x = optimal_m(n, l);
    let lo = x.floor().max(2.0) as u64;
    let hi = x.ceil().max(2.0) as u64;
    let mut best: Option<(u64, u64)> = None;
    for m in [lo, hi] {
        if let Ok(c) = uniform_tabr_max_count(n, m, l) {
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((m, c));
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(AnalysisError::ConstraintViolation { n, m: lo, l, reason: "no legal integer near N^(1/L)" }),
    }
}

/// `2(p - 1)` for a lowest TA of `p` members, `+2` with `include_upward`.
pub fn nonuniform_abr_count(p: u64, include_upward: bool) -> u64 {
    2 * p.saturating_sub(1) + if include_upward { 2 } else { 0 }
}

/// `4 * sum(p_i - 1)` along one root-to-leaf chain of member counts.
pub fn nonuniform_tabr_max_count(chain: &[u64]) -> u64 {
    4 * chain.iter().map(|p| p.saturating_sub(1)).sum::<u64>()
}

/// Per-direction reading of the chain formula, `2 * sum(p_i - 1)`.
pub fn nonuniform_tabr_max_count_per_direction(chain: &[u64]) -> u64 {
    nonuniform_tabr_max_count(chain) / 2
}

/// `100 (1 - hier/flat)`.
pub fn reduction_pct(hier: u64, flat: u64) -> f64 {
    assert!(flat > 0, "flat count must be positive");
    100.0 * (1.0 - hier as f64 / flat as f64)
}

/// Nearest integer percent, halves rounded up.
pub fn rounded_pct(pct: f64) -> i64 {
    (pct + 0.5).floor() as i64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Structure {
    Flat,
    Uniform { l: u32, m: u64 },
    NonUniform(MembershipVector),
    /// One root-to-leaf chain of member counts, root first.
    Chain(Vec<u64>),
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
        match self {
            Structure::Flat => write!(f, "flat"),
            Structure::Uniform { l, m } => write!(f, "uniform(L={l};m={m})"),
            Structure::NonUniform(mv) => {
                let levels = mv.levels.iter().map(|lv| join(&mut lv.iter().map(|p| p.to_string())));
                write!(f, "nonuniform({})", levels.collect::<Vec<_>>().join("|"))
            }
            Structure::Chain(c) => write!(f, "chain({})", join(&mut c.iter().map(|p| p.to_string()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmCountReport {
    pub n: u64,
    pub structure: Structure,
    pub abr_count: u64,
    pub tabr_max_count: Option<u64>,
    /// Reduction of the ABR count against the flat baseline, in percent.
    pub reduction_pct: f64,
}

impl SmCountReport {
    pub fn flat(n: u64) -> Self {
        SmCountReport {
            n,
            structure: Structure::Flat,
            abr_count: flat_abr_count(n),
            tabr_max_count: None,
            reduction_pct: 0.0,
        }
    }

    pub fn uniform(n: u64, m: u64, l: u32, include_upward: bool) -> Result<Self, AnalysisError> {
        let abr = uniform_abr_count(n, m, l, include_upward)?;
        Ok(SmCountReport {
            n,
            structure: Structure::Uniform { l, m },
            abr_count: abr,
            tabr_max_count: Some(uniform_tabr_max_count(n, m, l)?),
            reduction_pct: reduction_vs_flat(abr, n),
        })
    }

    /// Report for one chain of member counts (root first, lowest TA last).
    pub fn chain(n: u64, chain: &[u64], include_upward: bool) -> Self {
        let abr = nonuniform_abr_count(chain.last().copied().unwrap_or(0), include_upward);
        SmCountReport {
            n,
            structure: Structure::Chain(chain.to_vec()),
            abr_count: abr,
            tabr_max_count: Some(nonuniform_tabr_max_count(chain)),
            reduction_pct: reduction_vs_flat(abr, n),
        }
    }

    pub fn csv_record(&self) -> [String; 5] {
        [
            self.n.to_string(),
            self.structure.to_string(),
            self.abr_count.to_string(),
            self.tabr_max_count.map(|c| c.to_string()).unwrap_or_default(),
            format!("{:.2}", self.reduction_pct),
        ]
    }
}

impl fmt::Display for SmCountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} structure={} abr={}", self.n, self.structure, self.abr_count)?;
        if let Some(t) = self.tabr_max_count {
            write!(f, " tabr_max={t}")?;
        }
        write!(f, " reduction={:.2}%", self.reduction_pct)
    }
}

fn reduction_vs_flat(hier: u64, n: u64) -> f64 {
    match flat_abr_count(n) {
        0 => 0.0,
        flat => reduction_pct(hier, flat),
    }
}

pub const REPORT_HEADER: [&str; 5] = ["n", "structure", "abr", "tabr_max", "reduction"];

pub fn write_reports_csv<W: io::Write>(out: W, reports: &[SmCountReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

fn pair(scope: SmScope, level: u32, a: Endpoint, b: Endpoint) -> [SmId; 2] {
    let id = SmId { scope, level, from: a, to: b };
    [id, id.reverse()]
}

/// Directed SMs one router role must hold, straight from the endpoint rules.
///
/// * ABR of `a` in lowest TA `T`: a pairwise SM pair with every other member
///   of `T`, plus the MSM pair `a <-> T`.
/// * TABR of `T`: the MSM pair with each direct member of `T`, the MSM pair
///   `T <-> parent` unless the parent is the root, and a GSM pair with every
///   sibling.
pub fn router_sms(tree: &TaTree, router: RouterId) -> BTreeSet<SmId> {
    let mut out = BTreeSet::new();
    match router {
        RouterId::Abr(a) => {
            let Some(t) = tree.lowest_ta(a) else { return out };
            let ta = tree.ta(t);
            for &b in ta.member_ases.iter().filter(|&&b| b != a) {
                out.extend(pair(SmScope::Pairwise, ta.level, Endpoint::As(a), Endpoint::As(b)));
            }
            out.extend(pair(SmScope::Msm, ta.level, Endpoint::As(a), Endpoint::Ta(t)));
        }
        RouterId::Tabr(t) => {
            let ta = tree.ta(t);
            let Some(parent) = ta.parent else { return out };
            for member in ta.members() {
                out.extend(pair(SmScope::Msm, ta.level, member, Endpoint::Ta(t)));
            }
            let p = tree.ta(parent);
            if p.parent.is_some() {
                out.extend(pair(SmScope::Msm, p.level, Endpoint::Ta(t), Endpoint::Ta(parent)));
            }
            for s in tree.siblings(t) {
                out.extend(pair(SmScope::Gsm, ta.level, Endpoint::Ta(t), Endpoint::Ta(s)));
            }
        }
    }
    out
}

/// [`router_sms`] for every router role in the deployment.
pub fn required_sms(tree: &TaTree, exec: Exec) -> BTreeMap<RouterId, BTreeSet<SmId>> {
    let routers = tree.routers();
    let sets = par::map(exec, &routers, |&r| router_sms(tree, r));
    routers.into_iter().zip(sets).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbrCount {
    pub pairwise: u64,
    pub msm: u64,
}

impl AbrCount {
    pub fn total(&self, include_upward: bool) -> u64 {
        self.pairwise + if include_upward { self.msm } else { 0 }
    }
}

/// Exact per-router SM counts obtained by enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BruteForceCounts {
    pub abr: BTreeMap<AsId, AbrCount>,
    /// Per TABR role, its own table only.
    pub tabr_roles: BTreeMap<RouterId, u64>,
    /// Per AS hosting at least one TABR role: size of the union of its ABR
    /// table and all hosted TABR tables.
    pub tabr_hosts: BTreeMap<AsId, u64>,
}

impl BruteForceCounts {
    pub fn abr_max(&self, include_upward: bool) -> u64 {
        self.abr.values().map(|c| c.total(include_upward)).max().unwrap_or(0)
    }

    pub fn tabr_max(&self) -> u64 {
        self.tabr_hosts.values().copied().max().unwrap_or(0)
    }
}

pub fn brute_force_counts(tree: &TaTree, exec: Exec) -> BruteForceCounts {
    let tables = required_sms(tree, exec);
    let mut out = BruteForceCounts::default();
    for (router, set) in &tables {
        match *router {
            RouterId::Abr(a) => {
                let msm = set.iter().filter(|s| s.scope == SmScope::Msm).count() as u64;
                out.abr.insert(a, AbrCount { pairwise: set.len() as u64 - msm, msm });
            }
            RouterId::Tabr(_) => {
                out.tabr_roles.insert(*router, set.len() as u64);
            }
        }
    }
    let hosts: BTreeSet<AsId> = tables
        .keys()
        .filter(|r| matches!(r, RouterId::Tabr(_)))
        .filter_map(|&r| tree.host(r))
        .collect();
    let hosts: Vec<AsId> = hosts.into_iter().collect();
    let sizes = par::map(exec, &hosts, |&h| {
        let mut union: BTreeSet<SmId> = tables.get(&RouterId::Abr(h)).cloned().unwrap_or_default();
        for t in tree.hosted_tabs(h) {
            if let Some(set) = tables.get(&RouterId::Tabr(t)) {
                union.extend(set.iter().copied());
            }
        }
        union.len() as u64
    });
    out.tabr_hosts = hosts.into_iter().zip(sizes).collect();
    out
}

/// One uniform configuration checked against the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossCheckRow {
    pub n: u64,
    pub m: u64,
    pub l: u32,
    pub oracle_abr: u64,
    pub formula_abr: u64,
    pub oracle_tabr_max: u64,
    /// `2 ceil(N/m^(L-1)) + 2(L-1)m - 4L`.
    pub uniform_tabr_formula: u64,
    /// `4 sum(p_i - 1)` along the heaviest chain.
    pub chain_factor4: u64,
    /// `2 sum(p_i - 1)`.
    pub chain_factor2: u64,
}

impl CrossCheckRow {
    pub fn abr_matches(&self) -> bool {
        self.oracle_abr == self.formula_abr
    }
}

pub const CROSS_CHECK_HEADER: [&str; 9] = [
    "n",
    "m",
    "l",
    "oracle_abr",
    "formula_abr",
    "oracle_tabr_max",
    "uniform_tabr_formula",
    "chain_factor4",
    "chain_factor2",
];

impl CrossCheckRow {
    pub fn csv_record(&self) -> [String; 9] {
        [
            self.n.to_string(),
            self.m.to_string(),
            self.l.to_string(),
            self.oracle_abr.to_string(),
            self.formula_abr.to_string(),
            self.oracle_tabr_max.to_string(),
            self.uniform_tabr_formula.to_string(),
            self.chain_factor4.to_string(),
            self.chain_factor2.to_string(),
        ]
    }
}

/// All legal uniform configurations with `4 <= n <= n_max` and `m` in
/// `m_range`.
pub fn uniform_configs(n_max: u64, m_range: std::ops::RangeInclusive<u64>) -> Vec<(u64, u64, u32)> {
    let mut out = Vec::new();
    for n in 4..=n_max {
        for m in m_range.clone() {
            for l in legal_levels(n) {
                if check_uniform(n, m, l).is_ok() {
                    out.push((n, m, l));
                }
            }
        }
    }
    out
}

/// Builds each uniform tree, enumerates it and compares against the closed
/// forms. ABR counts use the formula variant selected by `include_upward`.
pub fn uniform_cross_check(configs: &[(u64, u64, u32)], include_upward: bool, exec: Exec) -> Vec<CrossCheckRow> {
    par::map(exec, configs, |&(n, m, l)| {
        let tree = TaTree::uniform(n as usize, m as usize, l).expect("legal uniform configuration");
        let counts = brute_force_counts(&tree, Exec::Sequential);
        let mut chain = vec![m; l as usize - 1];
        chain.push(leaf_size(n, m, l));
        CrossCheckRow {
            n,
            m,
            l,
            oracle_abr: counts.abr_max(include_upward),
            formula_abr: uniform_abr_count(n, m, l, include_upward).expect("checked"),
            oracle_tabr_max: counts.tabr_max(),
            uniform_tabr_formula: uniform_tabr_max_count(n, m, l).expect("checked"),
            chain_factor4: nonuniform_tabr_max_count(&chain),
            chain_factor2: nonuniform_tabr_max_count_per_direction(&chain),
        }
    })
}
