use proptest::prelude::*;

use hago::analysis::{angle_bin, cross_domain_neighbors, resultant_length};
use hago::coordinator::adaptive_weight;
use hago::dataset::{
    build_dataset, read_dataset_dir, split_interactions, write_dataset_dir, DomainGraph, EntityRegistry, SplitRatios,
};
use hago::eval::{compute_metrics, rank_items};
use hago::linalg::Mat;
use hago::rng::substream;
use hago::store::{checkpoint_bytes, init_embeddings, parse_checkpoint, TableCounts};

fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-10.0..10.0f64, d),
            prop::collection::vec(-10.0..10.0f64, d),
        )
    })
}

fn edges_strategy() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((0u32..12, 0u32..10), 1..80)
}

proptest! {
    #[test]
    fn adaptive_weight_in_unit_interval((a, b) in vec_pair(12)) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let w = adaptive_weight(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
        let d: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        if d <= 0.0 {
            prop_assert_eq!(w, 0.0);
        }
        prop_assert_eq!(w, adaptive_weight(&b, &a).unwrap());
    }

    #[test]
    fn adaptive_weight_power_of_two_invariance((a, b) in vec_pair(12), k in -20i32..20) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let s = 2f64.powi(k);
        let sa: Vec<f64> = a.iter().map(|v| v * s).collect();
        prop_assert_eq!(adaptive_weight(&sa, &b).unwrap().to_bits(), adaptive_weight(&a, &b).unwrap().to_bits());
    }

    #[test]
    fn split_partitions_each_user(edges in edges_strategy(), seed in any::<u64>()) {
        let g = DomainGraph::from_edges(0, "t", edges);
        let s = split_interactions(&g, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(&s, &split_interactions(&g, SplitRatios::default(), seed).unwrap());
        for (k, items) in g.user_items().into_iter().enumerate() {
            let mut all: Vec<u32> = s.train[k].iter().chain(&s.valid[k]).chain(&s.test[k]).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all, &items);
            prop_assert!(!s.train[k].is_empty());
            if items.len() >= 3 {
                prop_assert!(!s.valid[k].is_empty() && !s.test[k].is_empty());
            } else {
                prop_assert!(s.valid[k].is_empty() && s.test[k].is_empty());
            }
        }
    }

    #[test]
    fn metrics_bounded_and_recall_at_most_hr(
        scores in prop::collection::vec(0u8..6, 1..40),
        rel_mask in prop::collection::vec(any::<bool>(), 40),
        k in 1usize..12,
    ) {
        let n = scores.len();
        let relevant: Vec<usize> = (0..n).filter(|&i| rel_mask[i]).collect();
        prop_assume!(!relevant.is_empty());
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let ranked = rank_items(&s, &vec![false; n]);
        let (recall, hr, ndcg, rr) = compute_metrics(&ranked, &relevant, k).unwrap();
        for m in [recall, hr, ndcg, rr] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
        }
        prop_assert!(recall <= hr);
        prop_assert!(rr > 0.0);
    }

    #[test]
    fn ranking_invariant_under_increasing_transform(
        scores in prop::collection::vec(0u16..50, 1..60),
        excl in prop::collection::vec(any::<bool>(), 60),
    ) {
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let t: Vec<f64> = s.iter().map(|v| 3.0 * v + 7.0).collect();
        let mask = &excl[..s.len()];
        prop_assert_eq!(rank_items(&s, mask), rank_items(&t, mask));
    }

    #[test]
    fn ranking_matches_stable_sort(scores in prop::collection::vec(0u8..10, 1..60)) {
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let mut want: Vec<usize> = (0..s.len()).collect();
        want.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        prop_assert_eq!(rank_items(&s, &vec![false; s.len()]), want);
    }

    #[test]
    fn checkpoint_round_trip(users in 0usize..6, items in 0usize..6, coords in 0usize..4, prompts in 0usize..6, dim in 1usize..8, seed in any::<u64>()) {
        let counts = TableCounts { users, items, coordinators: coords, prompts };
        let store = init_embeddings::<f32>(counts, dim, &mut substream(seed, "init")).unwrap();
        let back = parse_checkpoint(&checkpoint_bytes(&store)).unwrap();
        prop_assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&store));
        prop_assert_eq!(back.counts(), store.counts());
    }

    #[test]
    fn truncated_checkpoint_rejected(cut in 1usize..40, seed in any::<u64>()) {
        let counts = TableCounts { users: 2, items: 2, coordinators: 1, prompts: 0 };
        let store = init_embeddings::<f32>(counts, 3, &mut substream(seed, "init")).unwrap();
        let bytes = checkpoint_bytes(&store);
        prop_assert!(parse_checkpoint(&bytes[..bytes.len() - cut.min(bytes.len())]).is_err());
    }

    #[test]
    fn neighbors_scale_invariant(
        q in prop::collection::vec(-1.0..1.0f64, 4),
        rows in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 1..12),
        scale in 0.01..100.0f64,
        k in 1usize..6,
    ) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let cands = Mat::from_rows(&rows).unwrap();
        let a = cross_domain_neighbors(&q, &cands, k).unwrap();
        let sq: Vec<f64> = q.iter().map(|v| v * scale).collect();
        let b = cross_domain_neighbors(&sq, &cands, k).unwrap();
        prop_assert_eq!(a.len(), k.min(rows.len()));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.cosine - y.cosine).abs() < 1e-12);
        }
        for w in a.windows(2) {
            prop_assert!(w[0].cosine >= w[1].cosine);
        }
    }

    #[test]
    fn angle_bins_in_range(theta in -10.0..10.0f64, bins in 1usize..64) {
        prop_assert!(angle_bin(theta, bins) < bins);
    }

    #[test]
    fn resultant_length_bounded(angles in prop::collection::vec(-3.2..3.2f64, 1..50)) {
        let r = resultant_length(&angles);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
    }
}

#[test]
fn dataset_directory_round_trip() {
    let mut reg = EntityRegistry::new();
    let a = reg.domain("movies");
    let b = reg.domain("books");
    let ea: Vec<(u32, u32)> = (0..20)
        .map(|k| {
            (
                reg.register_user(&format!("u{}", k % 7)),
                reg.register_item(a, &format!("m{}", k % 5)),
            )
        })
        .collect();
    let eb: Vec<(u32, u32)> = (0..15)
        .map(|k| {
            (
                reg.register_user(&format!("u{}", k % 9)),
                reg.register_item(b, &format!("b{}", k % 4)),
            )
        })
        .collect();
    let ds = build_dataset(
        vec![DomainGraph::from_edges(a, "movies", ea)],
        DomainGraph::from_edges(b, "books", eb),
        reg,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m1 = write_dataset_dir(&ds, 3, dir.path()).unwrap();
    let (back, m2) = read_dataset_dir(dir.path()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(back, ds);
    assert_eq!(m1.target, "books");
}

#[test]
fn missing_dataset_directory_is_an_artifact_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset_dir(dir.path()), Err(hago::Error::Artifact(_))));
}
