//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use cellforest::geometry::{overlap_table, touching_pairs};
use cellforest::io::{encode_frame, events_tsv, forest_dot, forest_tsv};
use cellforest::simulator::{Founder, ScriptedDeath};
use cellforest::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const CLEAN_F1: f64 = 1.0;
const CLEAN_RUNTIME: Duration = Duration::from_secs(60);
const SWEEP_SEEDS: u64 = 10;
const MEDIAN_FRACTION_GAIN: f64 = 0.20;
const MEDIAN_RELATIVE_COUNT_GAIN: f64 = 0.10;
const UNREACHABLE: f64 = 1.01;
const DEATH_FRAME: usize = 30;
const ORACLE_PAIRS: usize = 100;
const ORACLE_MAX_CELLS: usize = 6;
const CLONE_AGREEMENT: f64 = 0.99;
const CONTACT_BY_FRAME: usize = 40;

fn sweep_errors(seed: u64) -> ErrorConfig {
    ErrorConfig {
        p_over_transient: 0.03,
        // One persistent event per 25 true cell segments.
        p_over_persistent: 1.0 / 25.0,
        persist_len: 4,
        p_under: 0.02,
        seed,
    }
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn clean_fidelity() -> Outcome {
    let start = Instant::now();
    let sim = simulate(&SimConfig {
        n_clones: 5,
        frames: 60,
        seed: 1,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let a = analyze(&sim.movie, &AnalysisParams::default(), true).map_err(|e| e.to_string())?;
    let c = compare_to_truth(&a.forest, &a.movie, &sim.truth, &sim.movie).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        c.f1 == CLEAN_F1 && a.events.is_empty() && took < CLEAN_RUNTIME,
        format!("F1={:.4} events={} runtime={:.2?}", c.f1, a.events.len(), took),
    )
}

struct SweepRun {
    seed: u64,
    before: ValidityReport,
    after: ValidityReport,
    crowded_unlogged: Vec<NodeId>,
}

fn sweep() -> Result<Vec<SweepRun>, String> {
    let params = AnalysisParams::default();
    let runs: Vec<Result<SweepRun, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=SWEEP_SEEDS)
            .map(|seed| {
                let params = &params;
                s.spawn(move || -> Result<SweepRun, String> {
                    let sim = simulate(&SimConfig {
                        seed,
                        ..SimConfig::default()
                    })
                    .map_err(|e| e.to_string())?;
                    let (bad, _) =
                        inject_errors(&sim.movie, &sim.truth, &sweep_errors(1000 + seed)).map_err(|e| e.to_string())?;
                    let a = analyze(&bad, params, true).map_err(|e| e.to_string())?;
                    let logged: BTreeSet<NodeId> = a
                        .events
                        .iter()
                        .filter(|e| e.kind == CorrectionKind::Unresolved)
                        .flat_map(|e| e.labels_before.iter().copied())
                        .collect();
                    let crowded_unlogged = a
                        .forest
                        .nodes()
                        .iter()
                        .filter(|n| n.children.len() > 2 && !logged.contains(&n.id))
                        .map(|n| n.id)
                        .collect();
                    Ok(SweepRun {
                        seed,
                        before: a.before,
                        after: a.after,
                        crowded_unlogged,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread")).collect()
    });
    runs.into_iter().collect()
}

fn correction_efficacy(runs: &[SweepRun]) -> Outcome {
    let gains: Vec<f64> = runs
        .iter()
        .map(|r| r.after.valid_fraction - r.before.valid_fraction)
        .collect();
    let all_up = gains.iter().all(|&g| g > 0.0);
    let med = median(gains.clone());
    let worst = runs
        .iter()
        .zip(&gains)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(r, g)| format!("seed {} {:+.1} pts", r.seed, 100.0 * g))
        .unwrap_or_default();
    check(
        all_up && med >= MEDIAN_FRACTION_GAIN,
        format!(
            "median gain {:+.1} pts (need >= +{:.0}); worst {worst}",
            100.0 * med,
            100.0 * MEDIAN_FRACTION_GAIN
        ),
    )
}

fn valid_count_gain(runs: &[SweepRun]) -> Outcome {
    let rel: Vec<f64> = runs
        .iter()
        .map(|r| (r.after.valid_segments as f64 - r.before.valid_segments as f64) / r.before.valid_segments as f64)
        .collect();
    let med = median(rel);
    check(
        med >= MEDIAN_RELATIVE_COUNT_GAIN,
        format!(
            "median relative valid-count change {:+.1}% (need >= +{:.0}%)",
            100.0 * med,
            100.0 * MEDIAN_RELATIVE_COUNT_GAIN
        ),
    )
}

fn binary_invariant(runs: &[SweepRun]) -> Outcome {
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| !r.crowded_unlogged.is_empty())
        .map(|r| format!("seed {}: {:?}", r.seed, r.crowded_unlogged))
        .collect();
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} runs, no unexplained node with more than two children", runs.len())
        } else {
            bad.join("; ")
        },
    )
}

fn corrupted(seed: u64) -> Result<(Simulation, Movie), String> {
    let sim = simulate(&SimConfig {
        n_clones: 8,
        frames: 60,
        seed,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (bad, _) = inject_errors(&sim.movie, &sim.truth, &sweep_errors(seed + 77)).map_err(|e| e.to_string())?;
    Ok((sim, bad))
}

fn count(events: &[CorrectionEvent], kind: CorrectionKind) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

fn threshold_gates() -> Outcome {
    let (_, bad) = corrupted(5)?;
    let base = analyze(&bad, &AnalysisParams::default(), true).map_err(|e| e.to_string())?;
    let no_t = AnalysisParams {
        underseg_threshold: UNREACHABLE,
        ..AnalysisParams::default()
    };
    let no_m = AnalysisParams {
        merge_threshold: UNREACHABLE,
        ..AnalysisParams::default()
    };
    let a = analyze(&bad, &no_t, true).map_err(|e| e.to_string())?;
    let b = analyze(&bad, &no_m, true).map_err(|e| e.to_string())?;
    let (split0, merge0) = (
        count(&base.events, CorrectionKind::UndersegSplit),
        count(&base.events, CorrectionKind::RetroMerge),
    );
    let (split_t, merge_m) = (
        count(&a.events, CorrectionKind::UndersegSplit),
        count(&b.events, CorrectionKind::RetroMerge),
    );
    check(
        split0 > 0 && merge0 > 0 && split_t == 0 && merge_m == 0,
        format!("defaults split={split0} merge={merge0}; T=1.01 split={split_t}; M=1.01 merge={merge_m}"),
    )
}

fn death_preservation() -> Outcome {
    let sim = simulate(&SimConfig {
        n_clones: 5,
        frames: 60,
        seed: 2,
        deaths: vec![ScriptedDeath {
            frame: DEATH_FRAME,
            clone: 1,
        }],
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let dead: Vec<&CellNode> = sim
        .truth
        .nodes()
        .iter()
        .filter(|n| n.status == NodeStatus::TerminatedEarly)
        .collect();
    let [victim] = dead.as_slice() else {
        return Err(format!(
            "expected one early-terminated truth branch, found {}",
            dead.len()
        ));
    };
    let start = sim.truth.segment_start(sim.truth.index_of(victim.id).expect("victim"));
    let branch: Vec<NodeId> = sim
        .truth
        .chain_from(start)
        .into_iter()
        .map(|i| sim.truth.get(i).id)
        .collect();

    let a = analyze(&sim.movie, &AnalysisParams::default(), true).map_err(|e| e.to_string())?;
    let touching: Vec<&CorrectionEvent> = a
        .events
        .iter()
        .filter(|e| e.is_commit())
        .filter(|e| {
            e.labels_before
                .iter()
                .chain(&e.labels_after)
                .any(|id| branch.contains(id))
        })
        .collect();
    let intact = branch.windows(2).all(|w| a.forest.parent_id(w[1]) == Some(w[0]));
    let status = a.forest.node(victim.id).map(|n| n.status);
    check(
        touching.is_empty() && intact && status == Some(NodeStatus::TerminatedEarly),
        format!(
            "branch {}..{} ({} nodes) intact={intact} status={status:?} split/merge events on it={}",
            branch[0],
            victim.id,
            branch.len(),
            touching.len()
        ),
    )
}

fn exports(a: &Analysis) -> (String, String) {
    (forest_tsv(&a.forest), forest_dot(&a.forest))
}

fn idempotence() -> Outcome {
    let (_, bad) = corrupted(11)?;
    let params = AnalysisParams::default();
    let first = analyze(&bad, &params, true).map_err(|e| e.to_string())?;
    let second = analyze(&first.movie, &params, true).map_err(|e| e.to_string())?;
    let commits = second.events.iter().filter(|e| e.is_commit()).count();
    let same = exports(&first) == exports(&second) && first.movie == second.movie;
    check(
        commits == 0 && same,
        format!(
            "first pass {} commits; second pass {commits} commits; exports identical={same}",
            first.events.iter().filter(|e| e.is_commit()).count()
        ),
    )
}

fn run_bytes(seed: u64) -> Result<Vec<Vec<u8>>, String> {
    let (_, bad) = corrupted(seed)?;
    let a = analyze(&bad, &AnalysisParams::default(), true).map_err(|e| e.to_string())?;
    let mut out: Vec<Vec<u8>> = Vec::new();
    for f in bad.frames.iter().chain(&a.movie.frames) {
        out.push(encode_frame(f).map_err(|e| e.to_string())?);
    }
    let (tsv, dot) = exports(&a);
    out.push(tsv.into_bytes());
    out.push(dot.into_bytes());
    out.push(events_tsv(&a.events).into_bytes());
    Ok(out)
}

fn determinism() -> Outcome {
    let a = run_bytes(21)?;
    let b = run_bytes(21)?;
    let c = run_bytes(22)?;
    let bytes: usize = a.iter().map(Vec::len).sum();
    check(
        a == b && a != c,
        format!(
            "{} artifacts, {bytes} bytes; repeat identical={}; other seed differs={}",
            a.len(),
            a == b,
            a != c
        ),
    )
}

fn random_frame(rng: &mut ChaCha8Rng, index: usize, w: usize, h: usize) -> LabeledFrame {
    let mut labels = vec![0u32; w * h];
    let cells = rng.random_range(0..=ORACLE_MAX_CELLS);
    let mut ids: Vec<u32> = (1..=12).collect();
    for _ in 0..cells {
        let id = ids.swap_remove(rng.random_range(0..ids.len()));
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w), rng.random_range(y0..h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                labels[y * w + x] = id;
            }
        }
    }
    LabeledFrame::new(index, w, h, labels).expect("sized")
}

/// Independent oracle: for every current cell, enumerate every previous
/// label and keep the largest overlap, ties to the smaller label.
fn brute_force(prev: &LabeledFrame, curr: &LabeledFrame) -> BTreeSet<(u32, u32, usize)> {
    let mut out = BTreeSet::new();
    for c in curr.label_set() {
        let mut best: Option<(usize, u32)> = None;
        for p in prev.label_set() {
            let n = prev
                .labels()
                .iter()
                .zip(curr.labels())
                .filter(|(&a, &b)| a == p && b == c)
                .count();
            if n > 0 && best.is_none_or(|(bn, _)| n > bn) {
                best = Some((n, p));
            }
        }
        if let Some((n, p)) = best {
            out.insert((p, c, n));
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    let mut links = 0;
    for _ in 0..ORACLE_PAIRS {
        let (w, h) = (rng.random_range(3..14), rng.random_range(3..14));
        let prev = random_frame(&mut rng, 0, w, h);
        let curr = random_frame(&mut rng, 1, w, h);
        let got: BTreeSet<(u32, u32, usize)> = match_frame_pair(&prev, &curr)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|l| (l.prev.label, l.curr.label, l.overlap_px))
            .collect();
        links += got.len();
        if got != brute_force(&prev, &curr) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{ORACLE_PAIRS} pairs, {links} links, {mismatches} mismatches"),
    )
}

fn clone_persistence() -> Outcome {
    let sim = simulate(&SimConfig {
        n_clones: 2,
        frames: 60,
        width: 200,
        height: 200,
        founders: vec![
            Founder {
                x: 88.0,
                y: 100.0,
                angle_deg: 0.0,
            },
            Founder {
                x: 106.0,
                y: 100.0,
                angle_deg: 90.0,
            },
        ],
        seed: 4,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let truth_clone: BTreeMap<NodeId, u32> = sim.truth.clone_map();
    let contact = (0..=CONTACT_BY_FRAME).find(|&f| {
        touching_pairs(&sim.movie.frames[f])
            .iter()
            .any(|&(a, b)| truth_clone[&NodeId::new(f, a)] != truth_clone[&NodeId::new(f, b)])
    });
    let Some(contact) = contact else {
        return Err(format!("colonies never touch by frame {CONTACT_BY_FRAME}"));
    };

    let (bad, _) = inject_errors(&sim.movie, &sim.truth, &sweep_errors(404)).map_err(|e| e.to_string())?;
    let a = analyze(&bad, &AnalysisParams::default(), true).map_err(|e| e.to_string())?;
    let pred_clone = a.forest.clone_map();

    // Predicted clone -> founder, via the frame-0 masks.
    let first = overlap_table(&a.movie.frames[0], &sim.movie.frames[0]).map_err(|e| e.to_string())?;
    let mut founder_of: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
    for (&(p, t), &n) in &first {
        let pc = pred_clone[&NodeId::new(0, p)];
        let tc = truth_clone[&NodeId::new(0, t)];
        let e = founder_of.entry(pc).or_insert((0, 0));
        if n > e.0 {
            *e = (n, tc);
        }
    }
    let last = sim.movie.len() - 1;
    let shared = overlap_table(&a.movie.frames[last], &sim.movie.frames[last]).map_err(|e| e.to_string())?;
    let mut best: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
    for (&(p, t), &n) in &shared {
        let e = best.entry(t).or_insert((0, 0));
        if n > e.0 || (n == e.0 && p < e.1) {
            *e = (n, p);
        }
    }
    let cells = sim.movie.frames[last].label_set();
    let agree = cells
        .iter()
        .filter(|&&t| {
            best.get(&t).is_some_and(|&(_, p)| {
                let pc = pred_clone[&NodeId::new(last, p)];
                founder_of.get(&pc).map(|x| x.1) == Some(truth_clone[&NodeId::new(last, t)])
            })
        })
        .count();
    let frac = agree as f64 / cells.len() as f64;
    check(
        frac >= CLONE_AGREEMENT,
        format!(
            "colonies touch at frame {contact}; {agree}/{} final cells carry their founder's clone ({:.1}%)",
            cells.len(),
            100.0 * frac
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
    };

    report(1, "clean-movie fidelity", clean_fidelity());
    match sweep() {
        Ok(runs) => {
            report(2, "correction efficacy", correction_efficacy(&runs));
            report(3, "valid-segment count", valid_count_gain(&runs));
            report(4, "binary-tree invariant", binary_invariant(&runs));
        }
        Err(e) => {
            for (n, name) in [
                (2, "correction efficacy"),
                (3, "valid-segment count"),
                (4, "binary-tree invariant"),
            ] {
                report(n, name, Err(e.clone()));
            }
        }
    }
    report(5, "threshold gates", threshold_gates());
    report(6, "death preservation", death_preservation());
    report(7, "idempotence", idempotence());
    report(8, "determinism", determinism());
    report(9, "oracle equivalence", oracle_equivalence());
    report(10, "clone persistence through colony merging", clone_persistence());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
