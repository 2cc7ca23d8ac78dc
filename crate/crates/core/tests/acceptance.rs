//! Acceptance suite: one check per criterion, one pass/fail line each.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute
//! sequentially and report even when earlier ones fail:
//!
//! ```text
//! cargo test -p discovery-core --test acceptance
//! ```

use discovery_core::baselines::{
    badge_select, entropy, entropy_select, least_confidence_select, margin, margin_select,
    max_confidence, random_select, ProbabilityTable,
};
use discovery_core::dataset::{
    build_discovery_split, ConceptKey, DatasetSplit, EmbeddingStore, ImbalanceSpec,
};
use discovery_core::discovery::{
    phase_switch, phase_switch_literal, run_ablation, run_experiment, BaselineKind,
    PartitionMode, Phase, RoundRecord, Strategy, StrategySpec,
};
use discovery_core::kernels::{
    detection_similarity, BoxKind, DetectionMode, Kernel, ObjectFeatureSet, RectifyPolicy,
};
use discovery_core::maximizer::{
    greedy, partitioned_greedy, GreedyMode, GreedyOptions, MergePolicy,
};
use discovery_core::metrics::{accumulate, export_report, import_report, ReportFormat};
use discovery_core::submodular::{
    definition_check, AcquisitionFunction, FunctionFamily, FunctionKind, KernelSet, Params,
};
use discovery_core::PointId;
use discovery_core::synthetic::{gaussian_clusters, ClusterSpec};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

type CheckResult = Result<String, String>;

fn main() {
    let criteria: Vec<(&str, fn() -> CheckResult)> = vec![
        ("definition equivalence", c01_definition_equivalence),
        ("submodularity / monotonicity", c02_submodularity),
        ("greedy approximation and lazy equality", c03_greedy_approximation),
        ("incremental-gain oracle", c04_incremental_gains),
        ("synthetic discovery experiment", c05_synthetic_discovery),
        ("phase-switch semantics", c06_phase_switch),
        ("detection similarity", c07_detection_similarity),
        ("partitioned greedy", c08_partitioned_greedy),
        ("baselines", c09_baselines),
        ("ablation harness", c10_ablation),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check)
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                println!("[PASS] criterion {:2}: {name} ({detail}) [{secs:.1}s]", k + 1);
            }
            Err(why) => {
                failures += 1;
                println!("[FAIL] criterion {:2}: {name}: {why} [{secs:.1}s]", k + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

fn ids(range: std::ops::Range<u32>) -> Vec<PointId> {
    range.map(PointId).collect()
}

/// Random symmetric kernel with unit diagonal, entries in [0, 1].
fn random_symmetric_kernel(n: usize, rng: &mut ChaCha8Rng) -> Arc<Kernel> {
    let mut v = Array2::zeros((n, n));
    for i in 0..n {
        v[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let s: f64 = rng.gen_range(0.0..1.0);
            v[[i, j]] = s;
            v[[j, i]] = s;
        }
    }
    Arc::new(Kernel::new(ids(0..n as u32), ids(0..n as u32), v).unwrap())
}

/// Well-conditioned PD kernel from random nonnegative unit vectors.
fn random_pd_kernel(n: usize, rng: &mut ChaCha8Rng) -> Arc<Kernel> {
    let dim = n + 4;
    let mut rows = Array2::zeros((n, dim));
    for mut row in rows.rows_mut() {
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(0.05..1.0);
            norm += *v * *v;
        }
        let norm = f64::sqrt(norm);
        row.mapv_inplace(|v| v / norm);
    }
    let mut v = rows.dot(&rows.t());
    for i in 0..n {
        for j in 0..n {
            v[[i, j]] = v[[i, j]].clamp(0.0, 1.0);
            v[[j, i]] = v[[i, j]];
        }
        v[[i, i]] = 1.0;
    }
    Arc::new(Kernel::new(ids(0..n as u32), ids(0..n as u32), v).unwrap())
}

/// Draws disjoint index sets (a, q, p) over 0..n, n >= 4; a may be empty,
/// q and p hold at least one element each.
fn random_sets(
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<PointId>, Vec<PointId>, Vec<PointId>) {
    let mut pool: Vec<u32> = (0..n as u32).collect();
    use rand::seq::SliceRandom;
    pool.shuffle(rng);
    let n_a = rng.gen_range(0..=3.min(n - 2));
    let n_q = rng.gen_range(1..=2.min(n - n_a - 1));
    let n_p = rng.gen_range(1..=2.min(n - n_a - n_q));
    let a = pool[..n_a].iter().copied().map(PointId).collect();
    let q = pool[n_a..n_a + n_q].iter().copied().map(PointId).collect();
    let p = pool[n_a + n_q..n_a + n_q + n_p]
        .iter()
        .copied()
        .map(PointId)
        .collect();
    (a, q, p)
}

const ALL_KINDS: [FunctionKind; 9] = [
    FunctionKind::FlMi,
    FunctionKind::GcMi,
    FunctionKind::LogDetMi,
    FunctionKind::FlCg,
    FunctionKind::GcCg,
    FunctionKind::LogDetCg,
    FunctionKind::FlCmi,
    FunctionKind::GcCmi,
    FunctionKind::LogDetCmi,
];

// Criterion 1 — Table closed forms equal the set-theoretic definitions at
// eta = nu = 1, lambda = 1: FL/GC within 1e-9 absolute, log-det within 1e-6,
// 200 random instances per base family.
fn c01_definition_equivalence() -> CheckResult {
    let params = Params {
        eta: 1.0,
        nu: 1.0,
        lambda: 1.0,
        epsilon_reg: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for family in [FunctionFamily::Fl, FunctionFamily::Gc, FunctionFamily::LogDet] {
        let tol = if family == FunctionFamily::LogDet {
            1e-6
        } else {
            1e-9
        };
        let kinds: Vec<FunctionKind> = ALL_KINDS
            .iter()
            .copied()
            .filter(|k| k.family() == family)
            .collect();
        for trial in 0..200 {
            let n = rng.gen_range(4..=10usize);
            let kernel = if family == FunctionFamily::LogDet {
                random_pd_kernel(n, &mut rng)
            } else {
                random_symmetric_kernel(n, &mut rng)
            };
            let (a, q, p) = random_sets(n, &mut rng);
            for kind in &kinds {
                let check = definition_check(*kind, &kernel, &a, &q, &p, params)
                    .map_err(|e| format!("{family:?} trial {trial} {kind:?}: {e}"))?;
                let err = (check.closed_form - check.set_theoretic).abs();
                worst = worst.max(err);
                if err > tol {
                    return Err(format!(
                        "{kind:?} trial {trial}: closed {} vs definition {} (|err| {err:.2e} > {tol:.0e})",
                        check.closed_form, check.set_theoretic
                    ));
                }
            }
        }
    }
    Ok(format!(
        "3 families x 200 instances x MI/CG/CMI, worst |err| {worst:.2e}"
    ))
}

// Criterion 2 — FLMI/FLCG/FLCMI pass diminishing-returns and monotone-gain
// checks on 500 random (A ⊆ B, x) triples at tolerance 1e-6.
fn c02_submodularity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0usize;
    while checked < 500 {
        let n = rng.gen_range(4..=10usize);
        let full = random_symmetric_kernel(n + 3, &mut rng);
        let all = full.col_ids().to_vec();
        let q_ids = vec![all[n], all[n + 1]];
        let p_ids = vec![all[n + 2]];
        let candidates = &all[..n];
        let ks = KernelSet {
            ground: Some(full.clone()),
            query_cross: Some(Arc::new(full.submatrix(&q_ids, &all).unwrap())),
            cond_cross: Some(Arc::new(full.submatrix(&p_ids, &all).unwrap())),
            ..Default::default()
        };
        let x = candidates[rng.gen_range(0..n)];
        let b_set: Vec<PointId> = candidates
            .iter()
            .copied()
            .filter(|id| *id != x && rng.gen_bool(0.6))
            .collect();
        let a_set: Vec<PointId> = b_set
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        for kind in [FunctionKind::FlMi, FunctionKind::FlCg, FunctionKind::FlCmi] {
            let f = AcquisitionFunction::build(kind, ks.clone(), Params::default())
                .map_err(|e| e.to_string())?;
            let gain = |set: &[PointId]| -> Result<f64, String> {
                let with: f64 = f
                    .evaluate(&[set.to_vec(), vec![x]].concat())
                    .map_err(|e| e.to_string())?;
                let without = f.evaluate(set).map_err(|e| e.to_string())?;
                Ok(with - without)
            };
            let g_a = gain(&a_set)?;
            let g_b = gain(&b_set)?;
            if g_a < g_b - 1e-6 {
                return Err(format!(
                    "{kind:?}: diminishing returns violated: gain(A) {g_a} < gain(B) {g_b}"
                ));
            }
            if g_a < -1e-6 || g_b < -1e-6 {
                return Err(format!("{kind:?}: negative gain ({g_a}, {g_b})"));
            }
        }
        checked += 1;
    }
    Ok("500 nested triples x 3 facility-location kinds".into())
}

fn brute_force_optimum(f: &AcquisitionFunction, n: usize, b: usize) -> Result<f64, String> {
    let candidates = ids(0..n as u32);
    let mut best = f64::NEG_INFINITY;
    let mut subset = Vec::with_capacity(b);
    fn recurse(
        f: &AcquisitionFunction,
        candidates: &[PointId],
        start: usize,
        b: usize,
        subset: &mut Vec<PointId>,
        best: &mut f64,
    ) -> Result<(), String> {
        if subset.len() == b {
            let v = f.evaluate(subset).map_err(|e| e.to_string())?;
            if v > *best {
                *best = v;
            }
            return Ok(());
        }
        for i in start..candidates.len() {
            subset.push(candidates[i]);
            recurse(f, candidates, i + 1, b, subset, best)?;
            subset.pop();
        }
        Ok(())
    }
    recurse(f, &candidates, 0, b, &mut subset, &mut best)?;
    Ok(best)
}

// Criterion 3 — naive greedy reaches (1 - 1/e) of the brute-force optimum
// for FLMI and FLCG on 100 random instances (|U| = 12, B = 3); lazy output
// is identical to naive on every instance.
fn c03_greedy_approximation() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let guarantee = 1.0 - (-1.0f64).exp();
    let n = 12usize;
    let mut worst_ratio = f64::INFINITY;
    for trial in 0..100 {
        let full = random_symmetric_kernel(n + 3, &mut rng);
        let all = full.col_ids().to_vec();
        let q_ids = vec![all[n], all[n + 1]];
        let p_ids = vec![all[n + 2]];
        let sub_ids = &all[..n];
        let ground = Arc::new(full.submatrix(sub_ids, sub_ids).unwrap());
        for kind in [FunctionKind::FlMi, FunctionKind::FlCg] {
            let ks = KernelSet {
                ground: Some(ground.clone()),
                query_cross: Some(Arc::new(full.submatrix(&q_ids, sub_ids).unwrap())),
                cond_cross: Some(Arc::new(full.submatrix(&p_ids, sub_ids).unwrap())),
                ..Default::default()
            };
            let f = AcquisitionFunction::build(kind, ks, Params::default())
                .map_err(|e| e.to_string())?;
            let naive = greedy(
                &f,
                &ids(0..n as u32),
                3,
                &GreedyOptions {
                    mode: GreedyMode::Naive,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            let lazy = greedy(
                &f,
                &ids(0..n as u32),
                3,
                &GreedyOptions {
                    mode: GreedyMode::Lazy,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            if naive.chosen != lazy.chosen || naive.gains != lazy.gains {
                return Err(format!("trial {trial} {kind:?}: lazy differs from naive"));
            }
            let opt = brute_force_optimum(&f, n, 3)?;
            if opt > 0.0 {
                let ratio = naive.objective / opt;
                worst_ratio = worst_ratio.min(ratio);
                if naive.objective < guarantee * opt - 1e-9 {
                    return Err(format!(
                        "trial {trial} {kind:?}: greedy {} < (1 - 1/e) * {opt}",
                        naive.objective
                    ));
                }
            }
        }
    }
    Ok(format!(
        "100 instances x 2 kinds, worst greedy/optimum ratio {worst_ratio:.4}"
    ))
}

// Criterion 4 — memoized marginal gains equal the from-scratch difference
// within 1e-6 relative for every function kind, 100 random (A, x) pairs.
fn c04_incremental_gains() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for kind in ALL_KINDS {
        for trial in 0..100 {
            let n = rng.gen_range(5..=9usize);
            let full = random_pd_kernel(n + 4, &mut rng);
            let all = full.col_ids().to_vec();
            let q_ids = vec![all[n], all[n + 1]];
            let p_ids = vec![all[n + 2], all[n + 3]];
            let sub_ids = &all[..n];
            let ground = Arc::new(full.submatrix(sub_ids, sub_ids).unwrap());
            let full_ground = full.clone();
            let ks = if kind == FunctionKind::GcCmi {
                // four-term form needs the candidates ∪ Q ∪ P kernel
                KernelSet {
                    ground: Some(full_ground.clone()),
                    query_cross: Some(Arc::new(full.submatrix(&q_ids, &all).unwrap())),
                    cond_cross: Some(Arc::new(full.submatrix(&p_ids, &all).unwrap())),
                    ..Default::default()
                }
            } else {
                KernelSet {
                    ground: Some(ground.clone()),
                    query_cross: Some(Arc::new(full.submatrix(&q_ids, sub_ids).unwrap())),
                    cond_cross: Some(Arc::new(full.submatrix(&p_ids, sub_ids).unwrap())),
                    query_self: Some(Arc::new(full.submatrix(&q_ids, &q_ids).unwrap())),
                    cond_self: Some(Arc::new(full.submatrix(&p_ids, &p_ids).unwrap())),
                    cond_query: Some(Arc::new(full.submatrix(&p_ids, &q_ids).unwrap())),
                }
            };
            let f = AcquisitionFunction::build(kind, ks, Params::default())
                .map_err(|e| format!("{kind:?}: {e}"))?;
            // grow a random selection, then compare one more element
            let mut state = f.new_state();
            let grow = rng.gen_range(0..n.min(4));
            let mut pool: Vec<PointId> = sub_ids.to_vec();
            use rand::seq::SliceRandom;
            pool.shuffle(&mut rng);
            for id in pool.iter().take(grow) {
                f.commit(&mut state, *id).map_err(|e| format!("{kind:?}: {e}"))?;
            }
            let x = pool[grow];
            let memo_gain = f
                .marginal_gain(&state, x)
                .map_err(|e| format!("{kind:?}: {e}"))?;
            let mut with: Vec<PointId> = state.selected().to_vec();
            with.push(x);
            let scratch = f.evaluate(&with).map_err(|e| e.to_string())?
                - f.evaluate(state.selected()).map_err(|e| e.to_string())?;
            let scale = memo_gain.abs().max(scratch.abs()).max(1.0);
            if (memo_gain - scratch).abs() > 1e-6 * scale {
                return Err(format!(
                    "{kind:?} trial {trial}: memo {memo_gain} vs from-scratch {scratch}"
                ));
            }
        }
    }
    Ok("9 kinds x 100 (A, x) pairs, rtol 1e-6".into())
}

/// The desk-scale planted-cluster world: 10 unit-normalized Gaussian
/// clusters in 16 dims; 7 known / 3 unknown concepts with rho = 20.
fn planted_world(seed: u64) -> (EmbeddingStore, DatasetSplit) {
    let mut sizes = vec![2000usize; 7];
    sizes.extend([50, 50, 50]);
    let spec = ClusterSpec {
        clusters: 10,
        dim: 16,
        points_per_cluster: sizes,
        noise: 0.07,
        max_center_cosine: 0.5,
        seed,
    };
    let (store, labels) = gaussian_clusters(&spec).expect("generator");
    let key = ConceptKey::of_class;
    let split = build_discovery_split(
        &labels,
        &ImbalanceSpec {
            known_concepts: (0..7).map(key).collect(),
            unknown_concepts: (7..10).map(key).collect(),
            rho: 20.0,
            labeled_per_known: 1000,
            per_known_count: 1000,
            per_unknown_count: 50,
            seed,
        },
    )
    .expect("split");
    assert_eq!(split.labeled().len(), 7000);
    assert_eq!(split.unlabeled().len(), 7150);
    assert_eq!(split.unknown_pool_size(), 150);
    (store, split)
}

fn discovery_spec(name: &str, seed: u64) -> StrategySpec {
    let mut s = StrategySpec::new(name, Strategy::ScgThenSmi, FunctionFamily::Fl);
    s.eta = 1.0;
    s.nu = 1.5;
    s.budget = 50;
    s.rounds = 10;
    s.seed = seed;
    s
}

fn cumulative_at(records: &[RoundRecord], round: usize) -> usize {
    records
        .iter()
        .filter(|r| r.round <= round)
        .map(|r| r.round)
        .max()
        .and_then(|last| records.iter().find(|r| r.round == last))
        .map(|r| r.cumulative_unknown)
        .unwrap_or(0)
}

/// Exact expectation and standard deviation of the number of unknowns in
/// `n` draws without replacement from a pool of `total` with `marked`
/// unknowns (hypergeometric).
fn hypergeometric(n: usize, marked: usize, total: usize) -> (f64, f64) {
    let n = n as f64;
    let k = marked as f64;
    let t = total as f64;
    let mean = n * k / t;
    let var = n * (k / t) * (1.0 - k / t) * (t - n) / (t - 1.0);
    (mean, var.sqrt())
}

const SEEDS: [u64; 3] = [1, 2, 3];

// Criterion 5 — planted-cluster discovery at desk scale: conditioning +
// targeting reaches >= 90% of the unknown pool by round 5 (3-seed mean), is
// >= 3x the exact random expectation at round 3, and the random baseline
// stays within 3 sigma of the hypergeometric expectation at round 10.
fn c05_synthetic_discovery() -> CheckResult {
    let mut cum5 = Vec::new();
    let mut cum3 = Vec::new();
    let mut random10 = Vec::new();
    for seed in SEEDS {
        let (store, split) = planted_world(seed);
        let records = run_experiment(
            discovery_spec("flcg_mi", seed),
            &split,
            store.clone(),
            None,
            None,
        )
        .map_err(|e| e.to_string())?;
        cum5.push(cumulative_at(&records, 5) as f64);
        cum3.push(cumulative_at(&records, 3) as f64);

        let mut rspec = StrategySpec::new(
            "random",
            Strategy::Baseline(BaselineKind::Random),
            FunctionFamily::Fl,
        );
        rspec.budget = 50;
        rspec.rounds = 10;
        rspec.seed = seed;
        let rrec = run_experiment(rspec, &split, store, None, None).map_err(|e| e.to_string())?;
        random10.push(cumulative_at(&rrec, 10) as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean5 = mean(&cum5);
    if mean5 < 135.0 {
        return Err(format!(
            "(a) mean cumulative unknowns at round 5 = {mean5:.1} < 135 (per-seed {cum5:?})"
        ));
    }
    let (rand3, _) = hypergeometric(150, 150, 7150);
    let mean3 = mean(&cum3);
    if mean3 < 3.0 * rand3 {
        return Err(format!(
            "(b) mean cumulative at round 3 = {mean3:.1} < 3x random expectation {rand3:.2}"
        ));
    }
    let (rand10, sigma10) = hypergeometric(500, 150, 7150);
    let mean_r = mean(&random10);
    if (mean_r - rand10).abs() > 3.0 * sigma10 {
        return Err(format!(
            "(c) random baseline mean {mean_r:.2} outside {rand10:.2} ± {:.2}",
            3.0 * sigma10
        ));
    }
    Ok(format!(
        "round-5 mean {mean5:.1}/150, round-3 mean {mean3:.1} >= {:.1}, random {mean_r:.1} vs {rand10:.1} ± {:.1}",
        3.0 * rand3,
        3.0 * sigma10
    ))
}

// Criterion 6 — phase-switch semantics: the full subset-relation table for
// the prose rule and the literal-condition variant, plus no phase reversion
// across 10-round runs under either flag.
fn c06_phase_switch() -> CheckResult {
    let key = ConceptKey::of_class;
    let coverage: BTreeSet<ConceptKey> = [key(0), key(1), key(2)].into();
    // (selected, prose switches, literal switches)
    let cases: Vec<(BTreeSet<ConceptKey>, bool, bool)> = vec![
        (BTreeSet::new(), true, true),                        // empty
        ([key(0)].into(), true, false),                       // strict subset
        ([key(0), key(1), key(2)].into(), true, false),       // equal to K
        ([key(0), key(9)].into(), false, false),              // partial overlap
        ([key(9)].into(), false, true),                       // disjoint
        ([key(8), key(9)].into(), false, true),               // disjoint, larger
        ([key(0), key(1), key(2), key(9)].into(), false, false), // superset
    ];
    for (selected, want_prose, want_literal) in &cases {
        if phase_switch(&coverage, selected) != *want_prose {
            return Err(format!("prose rule wrong on {selected:?}"));
        }
        if phase_switch_literal(&coverage, selected) != *want_literal {
            return Err(format!("literal rule wrong on {selected:?}"));
        }
    }

    // no reversion across a 10-round run, under both semantics
    let sizes = vec![60, 60, 60, 60, 60, 60, 60, 15, 15, 15];
    let spec = ClusterSpec {
        clusters: 10,
        dim: 16,
        points_per_cluster: sizes,
        noise: 0.07,
        max_center_cosine: 0.5,
        seed: 606,
    };
    let (store, labels) = gaussian_clusters(&spec).expect("generator");
    let split = build_discovery_split(
        &labels,
        &ImbalanceSpec {
            known_concepts: (0..7).map(key).collect(),
            unknown_concepts: (7..10).map(key).collect(),
            rho: 2.0,
            labeled_per_known: 30,
            per_known_count: 30,
            per_unknown_count: 15,
            seed: 606,
        },
    )
    .expect("split");
    for literal in [false, true] {
        let mut s = StrategySpec::new("switch", Strategy::ScgThenSmi, FunctionFamily::Fl);
        s.budget = 20;
        s.rounds = 10;
        s.nu = 1.5;
        s.literal_phase_switch = literal;
        let records =
            run_experiment(s, &split, store.clone(), None, None).map_err(|e| e.to_string())?;
        let mut targeting_seen = false;
        for r in &records {
            match r.phase {
                Phase::Targeting => targeting_seen = true,
                Phase::Conditioning => {
                    if targeting_seen {
                        return Err(format!(
                            "literal={literal}: phase reverted at round {}",
                            r.round
                        ));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(format!("{} relation cases + 2 x 10-round runs", cases.len()))
}

// Criterion 7 — detection similarity: the hand-evaluated 2x3 score map gives
// query 0.9 / conditioning 0.8 exactly; conditioning <= query on 1000 random
// box sets.
fn c07_detection_similarity() -> CheckResult {
    let gt = ObjectFeatureSet::new(
        PointId(0),
        array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        BoxKind::GroundTruth,
    )
    .expect("gt boxes");
    let mk = |a: f64, b: f64| {
        let rest = (1.0 - a * a - b * b).max(0.0).sqrt();
        [a, b, rest]
    };
    let prop = ObjectFeatureSet::new(
        PointId(1),
        array![mk(0.9, 0.2), mk(0.1, 0.8), mk(0.3, 0.4)],
        BoxKind::Proposal,
    )
    .expect("proposal boxes");
    let q = detection_similarity(&gt, &prop, DetectionMode::Query, RectifyPolicy::Clamp)
        .map_err(|e| e.to_string())?;
    let c = detection_similarity(&gt, &prop, DetectionMode::Conditioning, RectifyPolicy::Clamp)
        .map_err(|e| e.to_string())?;
    if (q - 0.9).abs() > 1e-12 || (c - 0.8).abs() > 1e-12 {
        return Err(format!("hand example: query {q}, conditioning {c}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for trial in 0..1000 {
        let dim = rng.gen_range(2..8usize);
        let t = rng.gen_range(1..5usize);
        let r = rng.gen_range(1..6usize);
        let rand_boxes = |rows: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((rows, dim), |_| rng.gen_range(-1.0..1.0f64))
        };
        let gt = ObjectFeatureSet::new(PointId(0), rand_boxes(t, &mut rng), BoxKind::GroundTruth)
            .map_err(|e| e.to_string())?;
        let prop = ObjectFeatureSet::new(PointId(1), rand_boxes(r, &mut rng), BoxKind::Proposal)
            .map_err(|e| e.to_string())?;
        for policy in [RectifyPolicy::Clamp, RectifyPolicy::Shift] {
            let q = detection_similarity(&gt, &prop, DetectionMode::Query, policy)
                .map_err(|e| e.to_string())?;
            let c = detection_similarity(&gt, &prop, DetectionMode::Conditioning, policy)
                .map_err(|e| e.to_string())?;
            if c > q + 1e-12 {
                return Err(format!(
                    "trial {trial}: conditioning {c} > query {q} under {policy:?}"
                ));
            }
        }
    }
    Ok("hand-evaluated map exact; min-of-max <= max on 1000 random box sets".into())
}

// Criterion 8 — partitioned greedy: parts = 1 equals plain greedy
// bit-for-bit; 4-way partitioned discovery keeps >= 90% of the unpartitioned
// unknowns at round 5 (3-seed mean).
fn c08_partitioned_greedy() -> CheckResult {
    // bit-for-bit equality on a mid-size conditional-gain instance
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let full = random_symmetric_kernel(40, &mut rng);
    let p_rows = Array2::from_shape_fn((3, 40), |_| rng.gen_range(0.0..0.5));
    let p_kernel =
        Arc::new(Kernel::new(ids(100..103), full.col_ids().to_vec(), p_rows).unwrap());
    let build = |ground_ids: &[PointId]| {
        let ks = KernelSet {
            ground: Some(Arc::new(full.submatrix(ground_ids, ground_ids)?)),
            cond_cross: Some(Arc::new(p_kernel.submatrix(p_kernel.row_ids(), ground_ids)?)),
            ..Default::default()
        };
        AcquisitionFunction::build(FunctionKind::FlCg, ks, Params::default())
    };
    let opts = GreedyOptions::default();
    let candidates = full.col_ids().to_vec();
    let plain = greedy(&build(&candidates).map_err(|e| e.to_string())?, &candidates, 8, &opts)
        .map_err(|e| e.to_string())?;
    let single = partitioned_greedy(build, &candidates, 8, 1, MergePolicy::ReGreedy, &opts)
        .map_err(|e| e.to_string())?;
    if single.selection != plain {
        return Err("parts=1 differs from plain greedy".into());
    }

    // planted-cluster recovery under 4 partitions
    let mut plain5 = Vec::new();
    let mut part5 = Vec::new();
    for seed in SEEDS {
        let (store, split) = planted_world(seed);
        let mut spec = discovery_spec("flcg_mi", seed);
        spec.rounds = 5;
        let unpart = run_experiment(spec.clone(), &split, store.clone(), None, None)
            .map_err(|e| e.to_string())?;
        plain5.push(cumulative_at(&unpart, 5) as f64);

        spec.partition.mode = PartitionMode::Fixed(4);
        let part =
            run_experiment(spec, &split, store, None, None).map_err(|e| e.to_string())?;
        part5.push(cumulative_at(&part, 5) as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_plain = mean(&plain5);
    let mean_part = mean(&part5);
    if mean_part < 0.9 * mean_plain {
        return Err(format!(
            "partitioned mean {mean_part:.1} < 90% of unpartitioned {mean_plain:.1}"
        ));
    }
    Ok(format!(
        "parts=1 bit-identical; partitioned {mean_part:.1} vs unpartitioned {mean_plain:.1} at round 5"
    ))
}

// Criterion 9 — baselines: rank order matches a full-sort oracle on 100
// random tables; two-cluster gradient seeding is cross-cluster in >= 95% of
// 1000 seeded trials; random selection matches the exact expectation.
fn c09_baselines() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    // rank-order oracle
    for trial in 0..100 {
        let n = rng.gen_range(5..30usize);
        let classes = rng.gen_range(2..6usize);
        let mut probs = Array2::zeros((n, classes));
        for mut row in probs.rows_mut() {
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen_range(0.01..1.0);
                total += *v;
            }
            row.mapv_inplace(|v| v / total);
        }
        let table = ProbabilityTable::new(ids(0..n as u32), probs).map_err(|e| e.to_string())?;
        let cands = ids(0..n as u32);
        type Scorer = (
            fn(&ProbabilityTable, &[PointId], usize) -> discovery_core::Result<
                discovery_core::maximizer::SelectionResult,
            >,
            fn(ndarray::ArrayView1<'_, f64>) -> f64,
            bool,
        );
        let scorers: [Scorer; 3] = [
            (entropy_select, entropy, true),
            (margin_select, margin, false),
            (least_confidence_select, max_confidence, false),
        ];
        for (select, score, descending) in scorers {
            let got = select(&table, &cands, n).map_err(|e| e.to_string())?;
            // independent full sort with the same tie rule
            let mut expected: Vec<(PointId, f64)> = cands
                .iter()
                .map(|id| (*id, score(table.row(*id).unwrap())))
                .collect();
            expected.sort_by(|a, b| {
                let ord = a.1.total_cmp(&b.1);
                let ord = if descending { ord.reverse() } else { ord };
                ord.then_with(|| a.0.cmp(&b.0))
            });
            let expected_ids: Vec<PointId> = expected.into_iter().map(|(id, _)| id).collect();
            if got.chosen != expected_ids {
                return Err(format!("trial {trial}: rank order mismatch"));
            }
        }
    }

    // two-cluster gradient seeding: budget 2 must straddle the clusters
    let feats = EmbeddingStore::new(
        ids(0..6),
        array![
            [1.0, 0.02],
            [1.0, -0.02],
            [0.98, 0.0],
            [0.02, 1.0],
            [-0.02, 1.0],
            [0.0, 0.98]
        ],
        false,
    )
    .unwrap()
    .normalize()
    .unwrap();
    let probs = Array2::from_elem((6, 2), 0.5);
    let table = ProbabilityTable::new(ids(0..6), probs).unwrap();
    let cands = ids(0..6);
    let mut cross = 0usize;
    for seed in 0..1000u64 {
        let r = badge_select(&feats, &table, &cands, 2, seed).map_err(|e| e.to_string())?;
        let cluster = |id: PointId| usize::from(id.value() >= 3);
        if cluster(r.chosen[0]) != cluster(r.chosen[1]) {
            cross += 1;
        }
    }
    if cross < 950 {
        return Err(format!("cross-cluster seeding in only {cross}/1000 trials"));
    }

    // random matches the exact hypergeometric expectation
    let pool = ids(0..40);
    let marked: BTreeSet<PointId> = ids(32..40).into_iter().collect();
    let trials = 10_000usize;
    let mut hits = 0usize;
    for seed in 0..trials as u64 {
        let r = random_select(&pool, 5, seed);
        hits += r.chosen.iter().filter(|id| marked.contains(id)).count();
    }
    let (mean, sigma) = hypergeometric(5, 8, 40);
    let got = hits as f64 / trials as f64;
    let bound = 3.0 * sigma / (trials as f64).sqrt();
    if (got - mean).abs() > bound {
        return Err(format!(
            "random mean {got:.4} outside {mean:.4} ± {bound:.4} over {trials} trials"
        ));
    }
    Ok(format!(
        "rank oracle x 100 tables; cross-cluster {cross}/1000; random mean {got:.3} vs {mean:.3}"
    ))
}

// Criterion 10 — ablation harness: the 3 x 3 (eta, nu) grid completes and
// emits 9 reports; stronger conditioning (nu 1.5 / 1.7) matches or beats the
// nu = 1.0 cell on cumulative unknowns at round 3 in >= 2 of 3 seeds.
fn c10_ablation() -> CheckResult {
    let eta_grid = [0.5, 1.0, 2.0];
    let nu_grid = [1.0, 1.5, 1.7];
    let out_dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    // full grid on the first seed, emitting one report per cell
    let (store, split) = planted_world(SEEDS[0]);
    let mut base = discovery_spec("flcg_mi", SEEDS[0]);
    base.rounds = 4;
    let cells = run_ablation(&base, &eta_grid, &nu_grid, &split, &store, None, None)
        .map_err(|e| e.to_string())?;
    if cells.len() != 9 {
        return Err(format!("expected 9 grid cells, got {}", cells.len()));
    }
    for cell in &cells {
        let report = accumulate(&cell.spec, &cell.records, &split).map_err(|e| e.to_string())?;
        let path = out_dir.path().join(format!("{}.json", cell.spec.name));
        export_report(&report, &path, ReportFormat::Json).map_err(|e| e.to_string())?;
        let back = import_report(&path).map_err(|e| e.to_string())?;
        if back != report {
            return Err(format!("report round-trip mismatch for {}", cell.spec.name));
        }
    }
    let emitted = std::fs::read_dir(out_dir.path())
        .map_err(|e| e.to_string())?
        .count();
    if emitted != 9 {
        return Err(format!("emitted {emitted} report files, expected 9"));
    }

    // directional check along the nu column at eta = 1
    let mut seeds_ok = 0usize;
    let mut summary = Vec::new();
    for seed in SEEDS {
        let (store, split) = planted_world(seed);
        let mut base = discovery_spec("flcg_mi", seed);
        base.rounds = 4;
        let col = run_ablation(&base, &[1.0], &nu_grid, &split, &store, None, None)
            .map_err(|e| e.to_string())?;
        let at3 = |nu: f64| -> usize {
            col.iter()
                .find(|c| c.nu == nu)
                .map(|c| cumulative_at(&c.records, 3))
                .unwrap_or(0)
        };
        let low = at3(1.0);
        let mid = at3(1.5);
        let high = at3(1.7);
        summary.push(format!("seed {seed}: nu 1.0/1.5/1.7 -> {low}/{mid}/{high}"));
        if mid >= low && high >= low {
            seeds_ok += 1;
        }
    }
    if seeds_ok < 2 {
        return Err(format!(
            "stronger conditioning beat nu=1.0 in only {seeds_ok}/3 seeds ({})",
            summary.join("; ")
        ));
    }
    Ok(format!(
        "9 reports emitted; nu direction held in {seeds_ok}/3 seeds ({})",
        summary.join("; ")
    ))
}
