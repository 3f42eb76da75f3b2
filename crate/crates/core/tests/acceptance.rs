//! Acceptance criteria 1-9, run one after another (no test harness) so the
//! timing checks see an otherwise idle process and every criterion prints
//! its PASS/FAIL line. Exits nonzero if any of them fails.
//!
//! Criterion 10 (full-scale Douban run) is non-gating and only runs when
//! `HAGO_DOUBAN_DIR` is set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use hago::config::RunConfig;
use hago::coordinator::{adaptive_weight, assemble_unified, create_coordinators, CoordinatorMode, UnifiedGraph};
use hago::dataset::{build_dataset, split_interactions, DomainGraph, EntityRegistry, MultiDomainDataset, SplitRatios};
use hago::eval::{compute_metrics, rank_items};
use hago::linalg::{dot, norm, Mat};
use hago::pipeline::{run_experiment, Variant};
use hago::pretrain::{
    contrastive_batch, run_pretraining, run_pretraining_with, scatter_node_grads, unified_counts, ContrastiveStrategy,
    GraceStrategy, PretrainConfig,
};
use hago::propagation::{forward, normalize_with_weights, propagate, ModelConfig, ViewSpec};
use hago::rng::substream;
use hago::store::{init_embeddings, EmbeddingStore, Gradients, Table};
use hago::synth::generate;
use hago::transfer::{run_transfer, TransferConfig, TransferModel, TransferScope, Triple};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1. Sparse propagation against a dense oracle.
fn propagation_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = substream(1, "acceptance/propagation");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (nu, ni) = (rng.random_range(1..=16u32), rng.random_range(1..=16u32));
        let mut edges = Vec::new();
        for u in 0..nu {
            for i in 0..ni {
                if rng.random::<f64>() < 0.3 {
                    edges.push((u, i));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 0));
        }
        let g = UnifiedGraph::domain_only(&DomainGraph::from_edges(0, "g", edges));
        let weights: Vec<f64> = (0..g.edges.len()).map(|_| 1.0 - rng.random::<f64>()).collect();
        let n = g.node_count();
        let d = 4;
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let adj = normalize_with_weights(&g, weights.clone()).unwrap();
        let sparse = propagate(&adj, &x, 2).unwrap().layers.pop().unwrap();

        let mut w = vec![vec![0.0f64; n]; n];
        for (e, edge) in g.edges.iter().enumerate() {
            let (a, b) = (edge.a as usize, edge.b as usize);
            w[a][b] += weights[e];
            w[b][a] += weights[e];
        }
        let deg: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
        let a_hat: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if deg[i] > 0.0 && deg[j] > 0.0 {
                            w[i][j] / (deg[i].sqrt() * deg[j].sqrt())
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        for i in 0..n {
            for c in 0..d {
                let mut v = 0.0;
                for k in 0..n {
                    let a2: f64 = (0..n).map(|m| a_hat[i][m] * a_hat[m][k]).sum();
                    v += a2 * x.get(k, c);
                }
                worst = worst.max((v - sparse.get(i, c)).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 1.0,
        format!("100 graphs, max |sparse - dense| = {worst:.2e} (<= 1e-6), {secs:.3} s (< 1 s)"),
    )
}

fn raw_cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Every adaptive slot's cosine stays clear of the clipping kink.
fn clear_of_kink(graph: &UnifiedGraph, x: &Mat<f64>, margin: f64) -> bool {
    graph.adaptive_slots.iter().all(|&s| {
        let e = graph.edges[s as usize];
        raw_cos(x.row(e.a as usize), x.row(e.b as usize)).abs() > margin
    })
}

fn fd_errors(
    base: &EmbeddingStore<f64>,
    grads: &Gradients<f64>,
    tables: &[Table],
    h: f64,
    eval: &dyn Fn(&EmbeddingStore<f64>) -> f64,
) -> Vec<f64> {
    let mut errs = Vec::new();
    for &t in tables {
        let g = grads.get(t).expect("gradient for every trainable table");
        for k in 0..base.table(t).as_slice().len() {
            let mut plus = base.clone();
            plus.table_mut(t).as_mut_slice()[k] += h;
            let mut minus = base.clone();
            minus.table_mut(t).as_mut_slice()[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            errs.push(common::rel_err(g.as_slice()[k], fd));
        }
    }
    errs
}

fn summarize_errs(errs: &[f64]) -> (f64, f64) {
    let within = errs.iter().filter(|&&e| e <= 1e-4).count() as f64 / errs.len() as f64;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    (within, worst)
}

// 2. Finite differences through HAGO assembly for both objectives.
fn gradient_check() -> Outcome {
    let started = Instant::now();
    let ds = common::tiny_dataset();
    let coords = create_coordinators(&ds, 1).unwrap();
    let model = ModelConfig {
        dim: 4,
        layers: 2,
        alpha: vec![0.0, 0.0, 1.0],
    };
    let split = split_interactions(&ds.target, SplitRatios::default(), 1).unwrap();
    let tcfg = TransferConfig {
        scope: TransferScope::Unified,
        freeze: false,
        l2: 1e-2,
        ..TransferConfig::default()
    };

    // A seed whose adaptive cosines (with and without prompts) are clear of
    // zero, with both soft and hard slots present.
    let (store, graph, tm) = (0u64..)
        .find_map(|seed| {
            let mut store: EmbeddingStore<f64> =
                init_embeddings(unified_counts(&ds, Some(&coords)), 4, &mut substream(seed, "init")).unwrap();
            for t in [Table::User, Table::Item, Table::Coordinator] {
                store.table_mut(t).scale(5.0);
            }
            let graph = assemble_unified(&ds, Some(&coords), CoordinatorMode::Hago, Some(&store)).unwrap();
            let mut tm =
                TransferModel::new(&ds, &split, &store, Some(&coords), CoordinatorMode::Hago, &model, &tcfg).unwrap();
            let mut prng = substream(seed, "prompts");
            for v in tm.store.table_mut(Table::Prompt).as_mut_slice() {
                *v = prng.random_range(-0.5..0.5);
            }
            let x = graph.gather_features(&store);
            let soft = graph
                .adaptive_slots
                .iter()
                .filter(|&&s| graph.weights[s as usize] > 0.0)
                .count();
            let ok = clear_of_kink(&graph, &x, 0.1)
                && clear_of_kink(&tm.graph, &tm.input_features(), 0.1)
                && soft >= 2
                && soft + 2 <= graph.adaptive_slots.len();
            ok.then_some((store, graph, tm))
        })
        .unwrap();
    let nodes = graph.node_count();

    let strategy = GraceStrategy {
        tau: 0.5,
        edge_drop: [0.2, 0.2],
        feature_mask: [0.25, 0.25],
    };
    let views = strategy.draw_views(&graph, 4, &mut substream(7, "views"));
    let batch: Vec<usize> = (0..nodes).filter(|&n| !graph.kinds[n].is_coordinator()).collect();
    let x = graph.gather_features(&store);
    let (_, dx) = contrastive_batch(&graph, &x, &views, &batch, &model, &strategy).unwrap();
    let trainable = [Table::User, Table::Item, Table::Coordinator];
    let grads = scatter_node_grads(&graph, &dx, store.counts(), &trainable);
    let infonce = |s: &EmbeddingStore<f64>| {
        let x = graph.gather_features(s);
        contrastive_batch(&graph, &x, &views, &batch, &model, &strategy)
            .unwrap()
            .0
    };
    let e1 = fd_errors(&store, &grads, &trainable, 1e-3, &infonce);

    let triples: Vec<Triple> = (0..ds.target.users.len())
        .filter_map(|u| {
            let train: Vec<usize> = split.train[u]
                .iter()
                .map(|&i| ds.target.local_item(i).unwrap())
                .collect();
            let neg = (0..ds.target.items.len()).find(|i| !train.contains(i))?;
            Some(Triple {
                user: u,
                pos: train[0],
                neg,
            })
        })
        .collect();
    let (_, bgrads) = tm.batch_objective(&triples).unwrap();
    let bpr = |s: &EmbeddingStore<f64>| {
        let mut m = tm.clone();
        m.store = s.clone();
        m.batch_objective(&triples).unwrap().0.total()
    };
    let e2 = fd_errors(&tm.store, &bgrads, &Table::ALL, 1e-3, &bpr);

    let (w1, m1) = summarize_errs(&e1);
    let (w2, m2) = summarize_errs(&e2);
    let secs = started.elapsed().as_secs_f64();
    outcome(
        w1 >= 0.95 && w2 >= 0.95 && m1 <= 1e-3 && m2 <= 1e-3 && secs < 30.0 && nodes <= 20,
        format!(
            "{nodes} nodes; InfoNCE {} coords: {:.1}% <= 1e-4, max {m1:.2e}; BPR {} coords: {:.1}% <= 1e-4, max {m2:.2e}; {secs:.2} s",
            e1.len(),
            100.0 * w1,
            e2.len(),
            100.0 * w2
        ),
    )
}

// 3. Adaptive weight properties.
fn adaptive_weight_properties() -> Outcome {
    let mut rng = substream(3, "acceptance/adaptive");
    let mut failures = Vec::new();
    let mut worst_parallel = 0.0f64;
    let mut worst_scaled = 0.0f64;
    for k in 0..1000 {
        let d = rng.random_range(2..=16);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = adaptive_weight(&a, &b).unwrap();
        if !(0.0..=1.0).contains(&w) {
            failures.push(format!("pair {k}: w = {w} outside [0, 1]"));
        }
        if dot(&a, &b) <= 0.0 && w != 0.0 {
            failures.push(format!("pair {k}: w = {w} with non-positive dot"));
        }
        let c = rng.random_range(0.01..100.0);
        let par: Vec<f64> = a.iter().map(|v| v * c).collect();
        worst_parallel = worst_parallel.max((adaptive_weight(&a, &par).unwrap() - 1.0).abs());
        let p2 = 2f64.powi(rng.random_range(-8..=8));
        let sa: Vec<f64> = a.iter().map(|v| v * p2).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * p2).collect();
        if adaptive_weight(&sa, &b).unwrap().to_bits() != w.to_bits()
            || adaptive_weight(&a, &sb).unwrap().to_bits() != w.to_bits()
        {
            failures.push(format!("pair {k}: power-of-two rescaling changed w"));
        }
        let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
        worst_scaled = worst_scaled.max((adaptive_weight(&ca, &b).unwrap() - w).abs());
    }
    let pass = failures.is_empty() && worst_parallel <= 1e-9 && worst_scaled <= 1e-12;
    outcome(
        pass,
        format!(
            "1000 pairs; range/clip/2^k bit-exact violations: {}; parallel |w-1| max {worst_parallel:.1e}; arbitrary rescale max {worst_scaled:.1e}{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn random_dataset(seed: u64) -> MultiDomainDataset {
    let mut rng = substream(seed, "acceptance/random-dataset");
    let mut reg = EntityRegistry::new();
    let domains = rng.random_range(1..=3);
    let mut graphs = Vec::new();
    for k in 0..domains {
        let label = format!("d{k}");
        let id = reg.domain(&label);
        let mut edges = Vec::new();
        for u in 0..rng.random_range(2..8) {
            for i in 0..rng.random_range(2..6) {
                if rng.random::<f64>() < 0.5 || i == 0 {
                    edges.push((
                        reg.register_user(&format!("u{u}")),
                        reg.register_item(id, &format!("i{i}")),
                    ));
                }
            }
        }
        graphs.push(DomainGraph::from_edges(id, &label, edges));
    }
    let target = graphs.pop().unwrap();
    build_dataset(graphs, target, reg).unwrap()
}

// 4. Bipartite coloring and HAGO within HeterGO.
fn coordinator_structure() -> Outcome {
    let mut cases: Vec<(String, MultiDomainDataset, usize)> = Vec::new();
    for n in [1, 2, 3] {
        cases.push((format!("tiny/n={n}"), common::tiny_dataset(), n));
    }
    for s in 0..10 {
        cases.push((format!("random{s}/n=2"), random_dataset(s), 2));
    }
    let fixture = generate(&common::fixture_params(0)).unwrap().to_dataset().unwrap();
    for n in [1, 5] {
        cases.push((format!("fixture/n={n}"), fixture.clone(), n));
    }
    let mut graphs = 0;
    let mut bad = Vec::new();
    for (name, ds, n) in &cases {
        let coords = create_coordinators(ds, *n).unwrap();
        let het = assemble_unified::<f32>(ds, Some(&coords), CoordinatorMode::HeterGo, None).unwrap();
        let store: EmbeddingStore<f32> =
            init_embeddings(unified_counts(ds, Some(&coords)), 16, &mut substream(*n as u64, "init")).unwrap();
        let hago = assemble_unified(ds, Some(&coords), CoordinatorMode::Hago, Some(&store)).unwrap();
        let het_edges = het.positive_edges();
        for (kind, g) in [("hetergo", &het), ("hago", &hago)] {
            graphs += 1;
            if !g.is_properly_two_colored() {
                bad.push(format!("{name}/{kind}: improper coloring"));
            }
        }
        if !hago.positive_edges().iter().all(|e| het_edges.binary_search(e).is_ok()) {
            bad.push(format!("{name}: hago edge outside hetergo"));
        }
    }
    // after pre-training, with refreshed adaptive weights
    let ds = common::tiny_dataset();
    let coords = create_coordinators(&ds, 2).unwrap();
    let cfg = PretrainConfig {
        epochs: 3,
        ..PretrainConfig::default()
    };
    let model = ModelConfig {
        dim: 8,
        ..ModelConfig::default()
    };
    let out = run_pretraining::<f64>(&ds, Some(&coords), &model, &cfg).unwrap();
    let trained = out.graph.unwrap();
    let het = assemble_unified::<f64>(&ds, Some(&coords), CoordinatorMode::HeterGo, None).unwrap();
    graphs += 1;
    if !trained.is_properly_two_colored() {
        bad.push("pre-trained hago: improper coloring".into());
    }
    let het_edges = het.positive_edges();
    if !trained
        .positive_edges()
        .iter()
        .all(|e| het_edges.binary_search(e).is_ok())
    {
        bad.push("pre-trained hago: edge outside hetergo".into());
    }
    outcome(
        bad.is_empty(),
        format!(
            "{graphs} graphs, coloring {{users, item coordinators}} vs {{items, user coordinators}}; violations: {}{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

/// Independent metric computation: each relevant item's rank is the count
/// of candidates that beat it.
fn oracle_metrics(scores: &[f64], excluded: &[bool], relevant: &[usize], k: usize) -> (f64, f64, f64, f64) {
    let beats = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let ranks: Vec<usize> = relevant
        .iter()
        .filter(|&&i| !excluded[i])
        .map(|&i| {
            (0..scores.len())
                .filter(|&j| !excluded[j] && j != i && beats(j, i))
                .count()
        })
        .collect();
    let hits = ranks.iter().filter(|&&r| r < k).count();
    let dcg: f64 = ranks
        .iter()
        .filter(|&&r| r < k)
        .map(|&r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    let rr = ranks.iter().min().map_or(0.0, |&r| 1.0 / (r + 1) as f64);
    (hits as f64 / relevant.len() as f64, f64::from(hits > 0), dcg / idcg, rr)
}

// 5. Metrics against a brute-force oracle.
fn metric_oracles() -> Outcome {
    let mut rng = substream(5, "acceptance/metrics");
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..12))).collect();
        let excluded: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.2).collect();
        let candidates: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
        if candidates.is_empty() {
            continue;
        }
        let mut relevant: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < 0.25)
            .collect();
        if relevant.is_empty() {
            relevant.push(candidates[rng.random_range(0..candidates.len())]);
        }
        let k = rng.random_range(1..=15);
        let ranked = rank_items(&scores, &excluded);
        let got = compute_metrics(&ranked, &relevant, k).unwrap();
        let want = oracle_metrics(&scores, &excluded, &relevant, k);
        for (a, b) in [(got.0, want.0), (got.1, want.1), (got.2, want.2), (got.3, want.3)] {
            worst = worst.max((a - b).abs());
        }
    }
    let ndcg3 = compute_metrics(&[0, 1, 2, 3], &[2], 10).unwrap().2;
    let rr4 = compute_metrics(&[0, 1, 2, 3], &[3], 10).unwrap().3;
    outcome(
        worst <= 1e-12 && ndcg3 == 0.5 && rr4 == 0.25,
        format!("500 instances, max |diff| {worst:.1e}; ndcg(rank 3) = {ndcg3}, rr(rank 4) = {rr4}"),
    )
}

// 6. Zero prompts reproduce frozen-embedding rankings.
fn zero_prompt_identity() -> Outcome {
    let ds = generate(&common::fixture_params(0)).unwrap().to_dataset().unwrap();
    let cfg = RunConfig {
        seed: 0,
        ..common::fixture_config(0)
    };
    let split = split_interactions(&ds.target, cfg.split, cfg.seed).unwrap();
    let view = hago::pipeline::pretraining_view(&ds, &split);
    let coords = create_coordinators(&view, cfg.coordinators).unwrap();
    let pcfg = PretrainConfig {
        epochs: 5,
        ..cfg.pretrain_config()
    };
    let pre = run_pretraining::<f32>(&view, Some(&coords), &cfg.model, &pcfg).unwrap();
    let tcfg = TransferConfig {
        epochs: 0,
        ..cfg.transfer_config()
    };
    let out = run_transfer(
        &ds,
        &split,
        &pre.store,
        Some(&coords),
        CoordinatorMode::Hago,
        &cfg.model,
        &tcfg,
        &mut |_| {},
    )
    .unwrap();
    let emb = out.model.target_embeddings().unwrap();

    let train_graph = split.train_graph(&ds.target);
    let g = UnifiedGraph::domain_only(&train_graph);
    let frozen = forward(&g, &g.gather_features(&pre.store), &ViewSpec::identity(), &cfg.model)
        .unwrap()
        .output;
    let n_users = ds.target.users.len();
    let mut differing = 0;
    for (u, items) in split.train.iter().enumerate() {
        let mut mask = vec![false; ds.target.items.len()];
        for &i in items {
            mask[ds.target.local_item(i).unwrap()] = true;
        }
        let s_model: Vec<f64> = (0..ds.target.items.len()).map(|i| f64::from(emb.score(u, i))).collect();
        let s_frozen: Vec<f64> = (0..ds.target.items.len())
            .map(|i| f64::from(dot(frozen.row(u), frozen.row(n_users + i))))
            .collect();
        if rank_items(&s_model, &mask) != rank_items(&s_frozen, &mask) {
            differing += 1;
        }
    }
    outcome(
        differing == 0,
        format!(
            "{} users, rankings differing from frozen E*: {differing}",
            split.users.len()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// 7. Epoch time scales near-linearly with edge count.
fn complexity_contract() -> Outcome {
    let model = ModelConfig::default();
    let mut rows = Vec::new();
    for f in [1.0, 2.0] {
        let params = hago::synth::SynthParams {
            source_density: 0.35 * f,
            target_density: 0.15 * f,
            ..common::fixture_params(0)
        };
        let ds = generate(&params).unwrap().to_dataset().unwrap();
        let coords = create_coordinators(&ds, 5).unwrap();
        let cfg = PretrainConfig {
            epochs: 6,
            batch_size: 64,
            ..PretrainConfig::default()
        };
        let mut times = Vec::new();
        let out = run_pretraining_with::<f32, _>(
            &ds,
            Some(&coords),
            &model,
            &cfg,
            &GraceStrategy::from_config(&cfg),
            &mut |e| times.push(e.wall_ms),
        )
        .unwrap();
        times.remove(0);
        let interactions: usize = ds.domains().map(|d| d.edge_count()).sum();
        rows.push((interactions, out.graph.unwrap().positive_edge_count(), median(times)));
    }
    let factor = rows[1].2 / rows[0].2;
    outcome(
        (1.6..=2.6).contains(&factor),
        format!(
            "interactions {} -> {}, unified edges {} -> {}, median epoch {:.0} ms -> {:.0} ms, factor {factor:.2} (in [1.6, 2.6])",
            rows[0].0, rows[1].0, rows[0].1, rows[1].1, rows[0].2, rows[1].2
        ),
    )
}

// 8. HAGO >= w/o GO, both well above random.
fn directional_ablation() -> Outcome {
    let started = Instant::now();
    let (mut hago, mut none, mut random) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        let ds = generate(&common::fixture_params(seed)).unwrap().to_dataset().unwrap();
        let cfg = common::fixture_config(seed);
        let h = run_experiment(&ds, &cfg, Variant::Mode(CoordinatorMode::Hago)).unwrap();
        let n = run_experiment(&ds, &cfg, Variant::Mode(CoordinatorMode::None)).unwrap();
        hago.push(h.test.recall);
        none.push(n.test.recall);
        random.push(h.random_recall);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mh, mn, mr) = (mean(&hago), mean(&none), mean(&random));
    let secs = started.elapsed().as_secs_f64();
    outcome(
        mh >= mn && mn >= 5.0 * mr && mh >= 5.0 * mr && secs < 300.0,
        format!(
            "5 seeds Recall@10: hago {mh:.4}, none {mn:.4}, random {mr:.4} (5x = {:.4}); {secs:.0} s (< 300 s)",
            5.0 * mr
        ),
    )
}

fn prefixed_dataset(parts: &[(&str, &[(usize, usize)])], target: &str) -> MultiDomainDataset {
    let mut reg = EntityRegistry::new();
    let mut graphs = Vec::new();
    for (label, pairs) in parts {
        let id = reg.domain(label);
        let edges = pairs
            .iter()
            .map(|&(u, i)| {
                (
                    reg.register_user(&format!("{label}-u{u}")),
                    reg.register_item(id, &format!("i{i}")),
                )
            })
            .collect();
        graphs.push(DomainGraph::from_edges(id, label, edges));
    }
    let pos = graphs.iter().position(|g| g.label == target).unwrap();
    let t = graphs.remove(pos);
    build_dataset(graphs, t, reg).unwrap()
}

// 9. Mode None equals independent per-domain pre-training.
fn mode_none_separability() -> Outcome {
    let data = generate(&hago::synth::SynthParams {
        users: 120,
        items: 80,
        sources: 1,
        target_density: 0.05,
        ..common::fixture_params(9)
    })
    .unwrap();
    let (a, b) = (&data.domains[0].pairs, &data.domains[1].pairs);
    let joint = prefixed_dataset(&[("a", a), ("b", b)], "b");
    let only_a = prefixed_dataset(&[("a", a)], "a");
    let only_b = prefixed_dataset(&[("b", b)], "b");
    let model = ModelConfig {
        dim: 16,
        ..ModelConfig::default()
    };
    let cfg = PretrainConfig {
        epochs: 5,
        batch_size: 128,
        mode: CoordinatorMode::None,
        seed: 11,
        ..PretrainConfig::default()
    };
    let j = run_pretraining::<f32>(&joint, None, &model, &cfg).unwrap().store;
    let mut worst = 0.0f32;
    let mut rows = 0;
    for single in [&only_a, &only_b] {
        let s = run_pretraining::<f32>(single, None, &model, &cfg).unwrap().store;
        let label = &single.target.label;
        let jd = joint.registry.domain_id(label).unwrap();
        let sd = single.registry.domain_id(label).unwrap();
        for u in 0..single.registry.user_count() as u32 {
            let raw = single.registry.user_raw(u).unwrap();
            let ju = joint.registry.user(raw).unwrap();
            let (x, y) = (
                s.table(Table::User).row(u as usize),
                j.table(Table::User).row(ju as usize),
            );
            worst = x.iter().zip(y).fold(worst, |m, (p, q)| m.max((p - q).abs()));
            rows += 1;
        }
        for (i, raw) in single.registry.domain_items(sd) {
            let ji = joint.registry.item(jd, raw).unwrap();
            let (x, y) = (
                s.table(Table::Item).row(i as usize),
                j.table(Table::Item).row(ji as usize),
            );
            worst = x.iter().zip(y).fold(worst, |m, (p, q)| m.max((p - q).abs()));
            rows += 1;
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{rows} rows compared, max |joint - independent| = {worst:.1e} (<= 1e-6)"),
    )
}

fn main() -> std::process::ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "propagation oracle", propagation_oracle),
        (2, "gradient check", gradient_check),
        (3, "adaptive weight properties", adaptive_weight_properties),
        (4, "coordinator structure", coordinator_structure),
        (5, "metric oracles", metric_oracles),
        (6, "zero-prompt identity", zero_prompt_identity),
        (7, "complexity contract", complexity_contract),
        (8, "directional ablation", directional_ablation),
        (9, "mode-none separability", mode_none_separability),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id} [{name}]: {} - {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
        if !result.pass {
            failed.push(id);
        }
    }
    douban_full_scale();
    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}

/// Full-scale stretch run on Douban (book as target, movie and music as
/// sources). Hours of CPU time; set `HAGO_DOUBAN_DIR` to a directory with
/// `book.tsv`, `movie.tsv` and `music.tsv`. Never affects the exit code.
fn douban_full_scale() {
    let Ok(dir) = std::env::var("HAGO_DOUBAN_DIR") else {
        println!("criterion 10 [douban full scale]: SKIPPED - non-gating, set HAGO_DOUBAN_DIR to run");
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let mut reg = EntityRegistry::new();
    let mut load = |name: &str| {
        let path = dir.join(format!("{name}.tsv"));
        hago::dataset::ingest_interactions(&path, hago::dataset::InputFormat::from_path(&path), name, &mut reg).unwrap()
    };
    let movie = load("movie");
    let music = load("music");
    let book = load("book");
    let ds = build_dataset(vec![movie, music], book, reg).unwrap();
    let cfg = RunConfig::default();
    let r = run_experiment(&ds, &cfg, Variant::Mode(CoordinatorMode::Hago)).unwrap();
    let reference = [
        ("recall", r.test.recall, 0.1689),
        ("hr", r.test.hr, 0.3168),
        ("ndcg", r.test.ndcg, 0.1227),
        ("mrr", r.test.mrr, 0.1535),
    ];
    let mut pass = true;
    for (name, got, want) in reference {
        let ok = (got - want).abs() <= 0.15 * want;
        pass &= ok;
        println!(
            "  {name}: {got:.4} vs {want:.4} ({})",
            if ok { "within 15%" } else { "outside 15%" }
        );
    }
    println!(
        "criterion 10 [douban full scale]: {} (non-gating)",
        if pass { "PASS" } else { "FAIL" }
    );
}
