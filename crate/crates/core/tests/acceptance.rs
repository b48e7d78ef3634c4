//! Acceptance gate. Runs every criterion at its stated tolerance and runtime
//! budget, prints one PASS/FAIL line each, and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use safezone::analysis::{
    check_uniform, flat_abr_count, optimal_integer_m, uniform_configs, uniform_cross_check, uniform_tabr_max_count,
    CROSS_CHECK_HEADER,
};
use safezone::harness::experiments::{experiment2, experiment2_checks};
use safezone::harness::{run_on, ScenarioConfig, Selector, TopologySource, TrafficKind, TrafficSpec};
use safezone::par::Exec;
use safezone::topology::{AsId, TaTree, TopologySpec, NGI_TOPOLOGY, THREE_LEVEL_30};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("create acceptance output dir");
    dir
}

fn tree(text: &str) -> Arc<TaTree> {
    Arc::new(TaTree::from_spec_text(text).expect("bundled topology"))
}

fn scenario(text: &str) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(TopologySource::Inline(TopologySpec::parse(text).expect("bundled topology")));
    cfg.transit_hops = 1;
    cfg
}

fn flat_baseline() -> Outcome {
    let got = flat_abr_count(225);
    outcome(got == 448, format!("flat_abr_count(225) = {got}"))
}

fn table_reproduction() -> Outcome {
    let rows = experiment2(Exec::default());
    let checks = experiment2_checks(&rows);
    let abr: Vec<u64> = rows.iter().map(|r| r.abr).collect();
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.to_string()).collect();
    outcome(failed.is_empty(), format!("ABR {abr:?}; {}", checks.last().map(|c| c.detail.clone()).unwrap_or_default()))
        .with_failures(failed)
}

trait WithFailures {
    fn with_failures(self, failed: Vec<String>) -> Self;
}

impl WithFailures for Outcome {
    fn with_failures(mut self, failed: Vec<String>) -> Self {
        if !failed.is_empty() {
            self.detail = format!("{} [{}]", self.detail, failed.join("; "));
        }
        self
    }
}

fn oracle_equivalence() -> Outcome {
    let configs = uniform_configs(200, 2..=8);
    let mut mismatches = 0;
    let mut report = csv::Writer::from_path(out_dir().join("tabr_cross_check.csv")).expect("report file");
    let mut header = CROSS_CHECK_HEADER.to_vec();
    header.push("include_upward");
    report.write_record(&header).expect("write");
    let mut tabr = BTreeMap::from([("uniform", 0usize), ("factor4", 0), ("factor2", 0)]);
    for upward in [false, true] {
        for row in uniform_cross_check(&configs, upward, Exec::default()) {
            if !row.abr_matches() {
                mismatches += 1;
            }
            if !upward {
                *tabr.get_mut("uniform").unwrap() += usize::from(row.oracle_tabr_max == row.uniform_tabr_formula);
                *tabr.get_mut("factor4").unwrap() += usize::from(row.oracle_tabr_max == row.chain_factor4);
                *tabr.get_mut("factor2").unwrap() += usize::from(row.oracle_tabr_max == row.chain_factor2);
            }
            let mut rec = row.csv_record().to_vec();
            rec.push(upward.to_string());
            report.write_record(&rec).expect("write");
        }
    }
    report.flush().expect("flush");
    outcome(
        mismatches == 0,
        format!(
            "{} configurations x 2 variants, {mismatches} ABR mismatches; TABR max agrees with uniform formula {}, factor-4 {}, factor-2 {} times (report only)",
            configs.len(),
            tabr["uniform"],
            tabr["factor4"],
            tabr["factor2"]
        ),
    )
}

/// Continuous relaxation of the uniform TABR count (without the `-4L`).
fn relaxed(n: f64, m: f64, l: u32) -> f64 {
    2.0 * n / m.powi(l as i32 - 1) + 2.0 * f64::from(l - 1) * m
}

fn optimum() -> Outcome {
    let mut bad = Vec::new();
    let mut worst_gap = 0.0f64;
    for n in [1_000u64, 10_000, 40_000] {
        for l in 2..=5u32 {
            let root = (n as f64).powf(1.0 / f64::from(l));
            let mut best: Option<(u64, u64)> = None;
            let mut minimisers = Vec::new();
            let mut m = 2;
            while check_uniform(n, m, l).is_ok() {
                let c = uniform_tabr_max_count(n, m, l).expect("legal");
                match best {
                    Some((_, b)) if c > b => {}
                    Some((_, b)) if c == b => minimisers.push(m),
                    _ => {
                        best = Some((m, c));
                        minimisers = vec![m];
                    }
                }
                m += 1;
            }
            let Some((_, min)) = best else {
                bad.push(format!("n={n},L={l}: no legal m"));
                continue;
            };
            if !minimisers.iter().any(|&m| (m as f64 - root).abs() <= 1.0) {
                bad.push(format!("n={n},L={l}: minimisers {minimisers:?} vs root {root:.3}"));
            }
            let closed = 2.0 * f64::from(l) * root - 4.0 * f64::from(l);
            let slack = 2.0
                + [root.floor(), root.ceil()]
                    .into_iter()
                    .filter(|&m| m >= 2.0)
                    .map(|m| relaxed(n as f64, m, l) - relaxed(n as f64, root, l))
                    .fold(f64::INFINITY, f64::min);
            let gap = min as f64 - closed;
            worst_gap = worst_gap.max(gap);
            if !(-1e-9..=slack + 1e-9).contains(&gap) {
                bad.push(format!("n={n},L={l}: min {min} vs 2L n^(1/L) - 4L = {closed:.3}, slack {slack:.3}"));
            }
            if optimal_integer_m(n, l).map(|(_, c)| c) != Ok(min) {
                bad.push(format!("n={n},L={l}: optimal_integer_m disagrees with sweep"));
            }
        }
    }
    outcome(bad.is_empty(), format!("12 (n, L) sweeps; largest gap to closed form {worst_gap:.3}")).with_failures(bad)
}

fn growth_law() -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for n in [10_000u64, 20_000, 40_000, 100_000, 1_000_000] {
        for l in 2..=5u32 {
            let a = optimal_integer_m(n, l).map(|x| x.1);
            let b = optimal_integer_m(2 * n, l).map(|x| x.1);
            let (Ok(a), Ok(b)) = (a, b) else {
                bad.push(format!("n={n},L={l}: no optimum"));
                continue;
            };
            let want = 2f64.powf(1.0 / f64::from(l));
            let dev = (b as f64 / a as f64 / want - 1.0).abs();
            worst = worst.max(dev);
            if dev > 0.10 {
                bad.push(format!("n={n},L={l}: ratio {:.3} vs {want:.3}", b as f64 / a as f64));
            }
        }
    }
    outcome(bad.is_empty(), format!("20 (n, L) pairs; worst deviation {:.1}%", worst * 100.0)).with_failures(bad)
}

const ADVERSARIAL: [TrafficKind; 4] =
    [TrafficKind::SpoofSrc, TrafficKind::ForgedTag, TrafficKind::ReplayTag, TrafficKind::NoTag];

fn soundness() -> Outcome {
    let t = tree(THREE_LEVEL_30);
    let mut cfg = scenario(THREE_LEVEL_30);
    cfg.seed = 2024;
    cfg.epoch_length = 500;
    cfg.duration = 2000;
    cfg.grace = 40;
    cfg.max_drift = 10;
    cfg.sync_interval = Some(300);
    let per_kind = 100_000;
    cfg.traffic.push(TrafficSpec::new(Selector::Random, Selector::Random, per_kind, TrafficKind::Legit));
    for kind in ADVERSARIAL {
        let count = if kind == TrafficKind::SpoofSrc { per_kind - 10_000 } else { per_kind };
        cfg.traffic.push(TrafficSpec::new(Selector::Random, Selector::Random, count, kind));
    }
    // Off-path spoofers outside the alliance.
    for out in ["out1", "out2"] {
        cfg.traffic.push(TrafficSpec::new(Selector::Named(out.into()), Selector::Random, 5_000, TrafficKind::SpoofSrc));
    }
    let m = run_on(t, &cfg).expect("scenario runs");
    let mut bad = Vec::new();
    for kind in ADVERSARIAL {
        let k = m.kind(kind);
        if k.injected < per_kind || k.delivered > 0 {
            bad.push(format!("{kind}: {} of {} delivered", k.delivered, k.injected));
        }
    }
    let legit = m.kind(TrafficKind::Legit);
    if legit.injected < per_kind || legit.dropped_total() > 0 {
        bad.push(format!("legit: {:?} dropped of {}", legit.dropped, legit.injected));
    }
    if m.epochs_spanned < 3 {
        bad.push(format!("only {} rotations", m.epochs_spanned));
    }
    if !m.conserved() || m.law_violations.total() > 0 {
        bad.push(format!("conservation {} / laws {:?}", m.conserved(), m.law_violations));
    }
    let adv: Vec<String> = ADVERSARIAL.iter().map(|k| format!("{k}={}", m.kind(*k).injected)).collect();
    outcome(
        bad.is_empty(),
        format!(
            "legit {} delivered of {}, adversarial {} delivered 0, {} rotations, drift 10 / grace 40",
            legit.delivered,
            legit.injected,
            adv.join(" "),
            m.epochs_spanned
        ),
    )
    .with_failures(bad)
}

fn replacement_law() -> Outcome {
    let mut bad = Vec::new();
    let mut pairs = 0u64;
    for text in [THREE_LEVEL_30, NGI_TOPOLOGY] {
        let t = tree(text);
        let members: Vec<AsId> = t.members().map(|a| a.id).collect();
        let mut want: BTreeMap<u32, u64> = BTreeMap::new();
        for &s in &members {
            for &d in &members {
                if s != d {
                    *want.entry(t.tab_chain(s, d).expect("members").len() as u32).or_default() += 1;
                }
            }
        }
        let mut cfg = scenario(text);
        cfg.duration = 50_000;
        cfg.transit_hops = 0;
        cfg.traffic.push(TrafficSpec::new(Selector::All, Selector::All, 1, TrafficKind::Legit));
        let m = run_on(t.clone(), &cfg).expect("scenario runs");
        pairs += m.injected;
        if m.delivered != m.injected {
            bad.push(format!("{} of {} delivered", m.delivered, m.injected));
        }
        if m.law_violations.replacement > 0 {
            bad.push(format!("{} replacement-law violations", m.law_violations.replacement));
        }
        if m.replacements_per_packet != want {
            bad.push(format!("histogram {:?} vs chain lengths {want:?}", m.replacements_per_packet));
        }
    }
    outcome(bad.is_empty(), format!("{pairs} ordered member pairs, replacement counts equal chain lengths"))
        .with_failures(bad)
}

fn determinism() -> Outcome {
    let mut cfg = scenario(THREE_LEVEL_30);
    cfg.seed = 77;
    cfg.trace = true;
    cfg.max_drift = 10;
    cfg.grace = 40;
    cfg.sync_interval = Some(250);
    cfg.epoch_length = 400;
    cfg.duration = 2000;
    cfg.traffic.push(TrafficSpec::new(Selector::All, Selector::All, 1, TrafficKind::Legit));
    for kind in ADVERSARIAL {
        cfg.traffic.push(TrafficSpec::new(Selector::Random, Selector::Random, 300, kind));
    }
    let runs: Vec<(String, String)> = (0..2)
        .map(|_| {
            let m = run_on(tree(THREE_LEVEL_30), &cfg).expect("scenario runs");
            (m.to_csv_string(), m.trace.expect("trace enabled"))
        })
        .collect();
    let dir = out_dir();
    fs::write(dir.join("determinism_metrics.csv"), &runs[0].0).expect("write");
    fs::write(dir.join("determinism_trace.csv"), &runs[0].1).expect("write");
    let same = runs[0] == runs[1];
    outcome(
        same,
        format!("metrics {} bytes, trace {} bytes, identical: {same}", runs[0].0.len(), runs[0].1.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("flat baseline", flat_baseline, Duration::from_secs(1)),
        ("reference table ABR column", table_reproduction, Duration::from_secs(1)),
        ("oracle equivalence", oracle_equivalence, Duration::from_secs(30)),
        ("optimum", optimum, Duration::from_secs(5)),
        ("growth law", growth_law, Duration::from_secs(1)),
        ("protocol soundness", soundness, Duration::from_secs(60)),
        ("replacement-count law", replacement_law, Duration::from_secs(10)),
        ("determinism", determinism, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {} {name}: {} ({}; {:.2}s of {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
