//! Property tests for the spec-level invariants that hold on arbitrary
//! inputs: kernel ranges and symmetry, detection-mode dominance, partition
//! covers, greedy budget law, facility-location structure, and split
//! determinism.

use discovery_core::dataset::{
    build_discovery_split, ConceptKey, ConceptLabel, EmbeddingStore, ImbalanceSpec,
};
use discovery_core::kernels::{
    cosine_kernel, detection_similarity, partition_ground_set, BoxKind, DetectionMode, Kernel,
    ObjectFeatureSet, RectifyPolicy,
};
use discovery_core::maximizer::{greedy, GreedyMode, GreedyOptions};
use discovery_core::submodular::{AcquisitionFunction, FunctionKind, KernelSet, Params};
use discovery_core::PointId;
use ndarray::Array2;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

fn ids(n: usize) -> Vec<PointId> {
    (0..n as u32).map(PointId).collect()
}

fn vec_store(rows: Vec<Vec<f64>>) -> EmbeddingStore {
    let n = rows.len();
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    EmbeddingStore::new(ids(n), Array2::from_shape_vec((n, d), flat).unwrap(), false)
        .unwrap()
        .normalize()
        .unwrap()
}

prop_compose! {
    fn raw_vectors(max_n: usize, dim: usize)
        (n in 2..max_n)
        (rows in prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, dim..=dim).prop_filter(
                "nonzero row",
                |r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6,
            ),
            n..=n,
        )) -> Vec<Vec<f64>> {
        rows
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_kernel_entries_in_range_and_symmetric(rows in raw_vectors(12, 4)) {
        let store = vec_store(rows);
        let all = store.ids().to_vec();
        for policy in [RectifyPolicy::Clamp, RectifyPolicy::Shift] {
            let k = cosine_kernel(&store, &all, &store, &all, policy).unwrap();
            prop_assert!(k.is_symmetric());
            for i in 0..k.rows() {
                prop_assert!((k.at(i, i) - 1.0).abs() < 1e-9);
                for j in 0..k.cols() {
                    let v = k.at(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert!((v - k.at(j, i)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn detection_conditioning_never_exceeds_query(
        gt in raw_vectors(5, 3),
        prop_boxes in raw_vectors(6, 3),
    ) {
        let gt = ObjectFeatureSet::new(
            PointId(0),
            Array2::from_shape_vec((gt.len(), 3), gt.into_iter().flatten().collect()).unwrap(),
            BoxKind::GroundTruth,
        ).unwrap();
        let pr = ObjectFeatureSet::new(
            PointId(1),
            Array2::from_shape_vec((prop_boxes.len(), 3), prop_boxes.into_iter().flatten().collect()).unwrap(),
            BoxKind::Proposal,
        ).unwrap();
        for policy in [RectifyPolicy::Clamp, RectifyPolicy::Shift] {
            let q = detection_similarity(&gt, &pr, DetectionMode::Query, policy).unwrap();
            let c = detection_similarity(&gt, &pr, DetectionMode::Conditioning, policy).unwrap();
            prop_assert!(c <= q + 1e-12);
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn partitions_cover_disjointly_with_balanced_sizes(
        n in 2usize..60,
        parts_raw in 1usize..10,
        seed in any::<u64>(),
    ) {
        let parts = parts_raw.min(n);
        let pool = ids(n);
        let out = partition_ground_set(&pool, parts, seed).unwrap();
        prop_assert_eq!(out.len(), parts);
        let mut seen = BTreeSet::new();
        let mut sizes = Vec::new();
        for part in &out {
            sizes.push(part.len());
            for id in part {
                prop_assert!(seen.insert(*id), "duplicate across partitions");
            }
        }
        prop_assert_eq!(seen.len(), n);
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        prop_assert!(max - min <= 1);
    }

    #[test]
    fn greedy_budget_law_for_facility_location(
        rows in raw_vectors(10, 4),
        budget in 1usize..14,
        mode_pick in 0usize..3,
    ) {
        let store = vec_store(rows);
        let all = store.ids().to_vec();
        let n = all.len();
        let ground = Arc::new(cosine_kernel(&store, &all, &store, &all, RectifyPolicy::Clamp).unwrap());
        let cond = Arc::new(Kernel::new(vec![], all.clone(), Array2::zeros((0, n))).unwrap());
        let ks = KernelSet {
            ground: Some(ground),
            cond_cross: Some(cond),
            ..Default::default()
        };
        let f = AcquisitionFunction::build(FunctionKind::FlCg, ks, Params::default()).unwrap();
        let mode = [GreedyMode::Naive, GreedyMode::Lazy, GreedyMode::Stochastic][mode_pick];
        let r = greedy(&f, &all, budget, &GreedyOptions { mode, seed: 9, epsilon: 0.1 }).unwrap();
        // facility location never stops early: the budget law is exact
        prop_assert!(!r.stopped_early);
        prop_assert_eq!(r.chosen.len(), budget.min(n));
        prop_assert_eq!(r.gains.len(), r.chosen.len());
        let total: f64 = r.gains.iter().sum();
        prop_assert!((total - r.objective).abs() <= 1e-6 * r.objective.abs().max(1.0));
        // empty-set law via the gains: value grows from zero
        prop_assert!(r.objective >= -1e-12);
    }

    #[test]
    fn split_is_deterministic_and_respects_counts(
        seed in any::<u64>(),
        per_unknown in 1usize..5,
        rho_int in 1usize..4,
    ) {
        let per_known = per_unknown * rho_int;
        let mut labels = BTreeMap::new();
        let mut next = 0u32;
        for class in 0..3u32 {
            for _ in 0..(2 * per_known + 4) {
                labels.insert(PointId(next), ConceptLabel::of_class(class));
                next += 1;
            }
        }
        for _ in 0..(per_unknown + 2) {
            labels.insert(PointId(next), ConceptLabel::of_class(9));
            next += 1;
        }
        let spec = ImbalanceSpec {
            known_concepts: (0..3).map(ConceptKey::of_class).collect(),
            unknown_concepts: [ConceptKey::of_class(9)].into(),
            rho: rho_int as f64,
            labeled_per_known: per_known,
            per_known_count: per_known,
            per_unknown_count: per_unknown,
            seed,
        };
        let a = build_discovery_split(&labels, &spec).unwrap();
        let b = build_discovery_split(&labels, &spec).unwrap();
        prop_assert_eq!(a.labeled(), b.labeled());
        prop_assert_eq!(a.unlabeled(), b.unlabeled());
        // count law: unlabeled known count = rho * unlabeled unknown count
        let mut by_class: BTreeMap<u32, usize> = BTreeMap::new();
        for id in a.unlabeled() {
            *by_class.entry(a.oracle_label(*id).unwrap().class_id).or_insert(0) += 1;
        }
        for class in 0..3u32 {
            prop_assert_eq!(by_class[&class], rho_int * by_class[&9]);
        }
        // label purity
        for id in a.labeled() {
            prop_assert!(a.oracle_label(*id).unwrap().class_id != 9);
        }
    }

    #[test]
    fn gc_mi_gains_are_modular(rows in raw_vectors(10, 4), picks in prop::collection::vec(0usize..8, 2)) {
        let store = vec_store(rows);
        let all = store.ids().to_vec();
        let n = all.len();
        let q_ids: Vec<PointId> = vec![all[0]];
        let q = Arc::new(cosine_kernel(&store, &q_ids, &store, &all, RectifyPolicy::Clamp).unwrap());
        let f = AcquisitionFunction::build(
            FunctionKind::GcMi,
            KernelSet { query_cross: Some(q), ..Default::default() },
            Params::default(),
        ).unwrap();
        let mut st = f.new_state();
        let before: Vec<f64> = all.iter().map(|id| f.marginal_gain(&st, *id).unwrap()).collect();
        for p in picks {
            let id = all[p % n];
            if !st.contains(id) {
                f.commit(&mut st, id).unwrap();
            }
        }
        for (k, id) in all.iter().enumerate() {
            if !st.contains(*id) {
                let g = f.marginal_gain(&st, *id).unwrap();
                prop_assert!((g - before[k]).abs() <= 1e-9);
            }
        }
    }
}
