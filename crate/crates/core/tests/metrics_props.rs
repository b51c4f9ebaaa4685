mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::oracle::{self, OracleConfig};
use common::{perturbed, random_scene, rng};
use psg4d_core::io::AnnotationDocument;
use psg4d_core::metrics::{match_scene, recall_at_k, EvalSample, MatchConfig};
use psg4d_core::model::SceneGraph4D;

fn dataset(seed: u64, videos: usize, extra: usize) -> Vec<(SceneGraph4D, SceneGraph4D)> {
    let mut r = rng(seed);
    (0..videos)
        .map(|_| {
            let dims = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
            let objects = r.gen_range(0..=5);
            let rels = r.gen_range(0..=6);
            let gold = random_scene(&mut r, dims, objects, rels);
            let n = r.gen_range(0..=extra);
            let pred = perturbed(&mut r, &gold, n);
            (pred, gold)
        })
        .collect()
}

fn samples(data: &[(SceneGraph4D, SceneGraph4D)]) -> Vec<EvalSample> {
    data.iter()
        .enumerate()
        .map(|(i, (p, g))| EvalSample { video_id: format!("v{i:03}"), pred: p.clone(), gold: g.clone() })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn library_equals_brute_force(seed in any::<u64>(), viou in 0usize..4, temporal in 0usize..3, grounded in any::<bool>()) {
        let data = dataset(seed, 3, 6);
        let cfg = MatchConfig {
            viou_threshold: [0.0, 0.3, 0.5, 0.7][viou],
            temporal_iou_threshold: [0.0, 0.3, 0.5][temporal],
            ks: vec![1, 3, 20],
            grounded,
        };
        let lib = recall_at_k(&samples(&data), &cfg).unwrap();
        let ocfg = OracleConfig { viou: cfg.viou_threshold, temporal_iou: cfg.temporal_iou_threshold, grounded };
        let want = oracle::evaluate(&data, &ocfg, &cfg.ks);
        prop_assert_eq!(&lib.recall, &want.recall);
        prop_assert_eq!(&lib.mean_recall, &want.mean_recall);
    }

    #[test]
    fn matching_is_injective(seed in any::<u64>()) {
        let data = dataset(seed, 1, 10);
        let (pred, gold) = &data[0];
        let set = match_scene(pred, gold, &MatchConfig::ungrounded(), 100);
        let left: BTreeSet<usize> = set.pairs.iter().map(|p| p.0).collect();
        let right: BTreeSet<usize> = set.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(left.len(), set.pairs.len());
        prop_assert_eq!(right.len(), set.pairs.len());
    }

    #[test]
    fn document_order_irrelevant_with_distinct_confidences(seed in any::<u64>()) {
        let data = dataset(seed, 2, 8);
        let mut r = rng(seed ^ 1);
        let mut shuffled = Vec::new();
        let mut ranked = Vec::new();
        for (i, (p, g)) in data.iter().enumerate() {
            let mut doc = AnnotationDocument::from_scene(format!("v{i}"), 1.0, dims_of(g), p);
            let n = doc.relations.len();
            for (k, rel) in doc.relations.iter_mut().enumerate() {
                rel.confidence = Some((n - k) as f64);
            }
            ranked.push(EvalSample { video_id: format!("v{i}"), pred: doc.to_ranked_scene().unwrap(), gold: g.clone() });
            doc.relations.shuffle(&mut r);
            shuffled.push(EvalSample { video_id: format!("v{i}"), pred: doc.to_ranked_scene().unwrap(), gold: g.clone() });
        }
        let cfg = MatchConfig { ks: vec![1, 2, 5], ..MatchConfig::default() };
        let a = recall_at_k(&ranked, &cfg).unwrap();
        let b = recall_at_k(&shuffled, &cfg).unwrap();
        prop_assert_eq!(a.recall, b.recall);
        prop_assert_eq!(a.mean_recall, b.mean_recall);
    }
}

fn dims_of(s: &SceneGraph4D) -> (usize, usize, usize) {
    s.masks.values().next().map(|m| m.dims()).unwrap_or((1, 1, 1))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn recall_monotone_in_k_and_antitone_in_viou(seed in any::<u64>()) {
        // enough spurious predictions that the cutoffs bite
        let data = dataset(seed, 2, 120);
        let s = samples(&data);
        let mut by_viou = Vec::new();
        for viou in [0.3, 0.5, 0.7] {
            let cfg = MatchConfig { viou_threshold: viou, ..MatchConfig::default() };
            let r = recall_at_k(&s, &cfg).unwrap();
            for m in [&r.recall, &r.mean_recall] {
                prop_assert!(m[&20] <= m[&50] && m[&50] <= m[&100], "{:?}", m);
                prop_assert!(m.values().all(|v| (0.0..=100.0).contains(v)));
            }
            by_viou.push(r);
        }
        for w in by_viou.windows(2) {
            for k in [20, 50, 100] {
                prop_assert!(w[1].recall[&k] <= w[0].recall[&k]);
                prop_assert!(w[1].mean_recall[&k] <= w[0].mean_recall[&k]);
            }
        }
    }
}
