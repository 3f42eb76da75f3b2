//! Contrastive multi-domain pre-training.
//!
//! Each epoch draws two augmented views of the graph (edge removal on
//! user–item edges, a shared column mask over user and item features),
//! then walks shuffled node batches. Every step recomputes adaptive
//! weights, propagates both views, and applies InfoNCE between the two
//! views' combined outputs.
//!
//! Draw order per epoch on the training stream: view 1 edge drops, view 1
//! column mask, view 2 edge drops, view 2 column mask, batch permutation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{
    assemble_unified, refresh_from_features, CoordinatorMode, CoordinatorSet, EdgeClass, NodeRef, UnifiedGraph,
};
use crate::dataset::{DomainGraph, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat, Real};
use crate::propagation::{backward, forward, ModelConfig, ViewSpec};
use crate::rng::{substream, StreamRng};
use crate::store::{adam_step, init_embeddings, AdamConfig, EmbeddingStore, Gradients, Table, TableCounts};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub edge_drop: [f64; 2],
    pub feature_mask: [f64; 2],
    pub mode: CoordinatorMode,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            batch_size: 1024,
            lr: 0.005,
            tau: 0.5,
            edge_drop: [0.2, 0.2],
            feature_mask: [0.1, 0.1],
            mode: CoordinatorMode::Hago,
            seed: 2024,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = self.edge_drop.iter().chain(&self.feature_mask);
        if rates.into_iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("augmentation rates must lie in [0, 1)".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("node batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// One augmented view: the view used in forward passes plus the masked
/// layer-0 features it produced at creation time.
#[derive(Clone, Debug)]
pub struct AugmentedView<F> {
    pub spec: ViewSpec,
    pub features: Mat<F>,
    pub dropped: Vec<u32>,
}

/// Drop each user–item edge with probability `edge_drop` and mask each
/// feature column with probability `feature_mask`. Coordinator edges and
/// coordinator rows are never touched.
pub fn augment_view<F: Real>(
    graph: &UnifiedGraph,
    features: &Mat<F>,
    edge_drop: f64,
    feature_mask: f64,
    rng: &mut StreamRng,
) -> AugmentedView<F> {
    let spec = draw_view(graph, features.cols(), edge_drop, feature_mask, rng);
    let dropped = spec
        .keep
        .as_ref()
        .map(|k| {
            k.iter()
                .enumerate()
                .filter(|(_, &keep)| !keep)
                .map(|(e, _)| e as u32)
                .collect()
        })
        .unwrap_or_default();
    AugmentedView {
        features: spec.masked_features(graph, features),
        spec,
        dropped,
    }
}

fn draw_view(graph: &UnifiedGraph, dim: usize, edge_drop: f64, feature_mask: f64, rng: &mut StreamRng) -> ViewSpec {
    let keep: Vec<bool> = graph
        .edges
        .iter()
        .map(|e| match e.class {
            EdgeClass::Interaction { .. } => rng.random::<f64>() >= edge_drop,
            _ => true,
        })
        .collect();
    let mask: Vec<bool> = (0..dim).map(|_| rng.random::<f64>() >= feature_mask).collect();
    ViewSpec {
        keep: Some(keep),
        col_mask: Some(mask),
    }
}

/// Loss value and its gradients with respect to both views' rows.
#[derive(Clone, Debug)]
pub struct ContrastiveLoss<F> {
    pub loss: F,
    pub d_first: Mat<F>,
    pub d_second: Mat<F>,
}

/// Unit rows. A zero row (an isolated node in a view) stays zero and
/// receives no gradient.
fn normalize_rows<F: Real>(z: &Mat<F>) -> Result<(Mat<F>, Vec<F>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let n = norm(z.row(r));
        if !n.is_finite() {
            return Err(Error::Numeric(format!("row {r} has a non-finite norm")));
        }
        if !n.is_zero() {
            out.row_mut(r).iter_mut().for_each(|v| *v = *v / n);
        }
        norms.push(n);
    }
    Ok((out, norms))
}

/// `a b^T`, scaled.
fn gram<F: Real>(a: &Mat<F>, b: &Mat<F>, scale: F) -> Mat<F> {
    let mut out = Mat::zeros(a.rows(), b.rows());
    out.par_rows_mut().enumerate().for_each(|(i, row)| {
        let ai = a.row(i);
        for (k, v) in row.iter_mut().enumerate() {
            *v = dot(ai, b.row(k)) * scale;
        }
    });
    out
}

/// `a b` for square `a`.
fn mul<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    let mut out = Mat::zeros(a.rows(), b.cols());
    out.par_rows_mut().enumerate().for_each(|(i, row)| {
        for (k, &w) in a.row(i).iter().enumerate() {
            if !w.is_zero() {
                crate::linalg::axpy(row, w, b.row(k));
            }
        }
    });
    out
}

fn transpose<F: Real>(a: &Mat<F>) -> Mat<F> {
    let mut out = Mat::zeros(a.cols(), a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

/// Per-anchor softmax over `cross[i, *]` and `intra[i, k != i]`.
/// Returns the summed loss and writes `softmax - target` into the two
/// gradient matrices (unscaled).
fn anchor_terms<F: Real>(cross: &Mat<F>, intra: &Mat<F>, d_cross: &mut Mat<F>, d_intra: &mut Mat<F>) -> F {
    let n = cross.rows();
    let losses: Vec<F> = d_cross
        .par_rows_mut()
        .zip(d_intra.par_rows_mut())
        .enumerate()
        .map(|(i, (dc, di))| {
            let c = cross.row(i);
            let s = intra.row(i);
            let mut m = c.iter().copied().fold(F::neg_infinity(), F::max);
            for (k, &v) in s.iter().enumerate() {
                if k != i {
                    m = m.max(v);
                }
            }
            let mut z = F::zero();
            for &v in c {
                z = z + (v - m).exp();
            }
            for (k, &v) in s.iter().enumerate() {
                if k != i {
                    z = z + (v - m).exp();
                }
            }
            let lse = m + z.ln();
            for k in 0..n {
                dc[k] = (c[k] - lse).exp();
                di[k] = if k == i { F::zero() } else { (s[k] - lse).exp() };
            }
            dc[i] = dc[i] - F::one();
            lse - c[i]
        })
        .collect();
    losses.into_iter().sum()
}

/// Symmetric InfoNCE with inter-view and intra-view negatives and its
/// gradient with respect to both inputs.
pub fn infonce_with_grad<F: Real>(z1: &Mat<F>, z2: &Mat<F>, tau: f64) -> Result<ContrastiveLoss<F>> {
    z1.check_same_shape(z2)?;
    let n = z1.rows();
    if n < 2 {
        return Err(Error::Config("InfoNCE needs a batch of at least 2 rows".into()));
    }
    let inv_tau = F::of(1.0 / tau);
    let (u, nu) = normalize_rows(z1)?;
    let (v, nv) = normalize_rows(z2)?;
    let s_uv = gram(&u, &v, inv_tau);
    let s_uu = gram(&u, &u, inv_tau);
    let s_vv = gram(&v, &v, inv_tau);
    let s_vu = transpose(&s_uv);

    let mut d_uv = Mat::zeros(n, n);
    let mut d_uu = Mat::zeros(n, n);
    let mut d_vu = Mat::zeros(n, n);
    let mut d_vv = Mat::zeros(n, n);
    let lu = anchor_terms(&s_uv, &s_uu, &mut d_uv, &mut d_uu);
    let lv = anchor_terms(&s_vu, &s_vv, &mut d_vu, &mut d_vv);
    let c = F::one() / F::of(2.0 * n as f64);
    let loss = (lu + lv) * c;

    // Total gradient w.r.t. S_uv combines both anchor directions.
    let mut g_uv = d_uv;
    g_uv.add_scaled(&transpose(&d_vu), F::one())?;
    let mut g_uu = d_uu.clone();
    g_uu.add_scaled(&transpose(&d_uu), F::one())?;
    let mut g_vv = d_vv.clone();
    g_vv.add_scaled(&transpose(&d_vv), F::one())?;

    let scale = c * inv_tau;
    let mut du = mul(&g_uv, &v);
    du.add_scaled(&mul(&g_uu, &u), F::one())?;
    du.scale(scale);
    let mut dv = mul(&transpose(&g_uv), &u);
    dv.add_scaled(&mul(&g_vv, &v), F::one())?;
    dv.scale(scale);

    let back = |dhat: Mat<F>, hat: &Mat<F>, norms: &[F]| -> Mat<F> {
        let mut out = dhat;
        for r in 0..out.rows() {
            if norms[r].is_zero() {
                out.row_mut(r).iter_mut().for_each(|o| *o = F::zero());
                continue;
            }
            let h = hat.row(r);
            let proj = dot(h, out.row(r));
            let inv = F::one() / norms[r];
            for (o, &hv) in out.row_mut(r).iter_mut().zip(h) {
                *o = (*o - hv * proj) * inv;
            }
        }
        out
    };
    Ok(ContrastiveLoss {
        loss,
        d_first: back(du, &u, &nu),
        d_second: back(dv, &v, &nv),
    })
}

pub fn infonce_loss<F: Real>(z1: &Mat<F>, z2: &Mat<F>, tau: f64) -> Result<F> {
    Ok(infonce_with_grad(z1, z2, tau)?.loss)
}

/// Pluggable augmentation and objective.
pub trait ContrastiveStrategy {
    fn draw_views(&self, graph: &UnifiedGraph, dim: usize, rng: &mut StreamRng) -> [ViewSpec; 2];
    fn objective<F: Real>(&self, z1: &Mat<F>, z2: &Mat<F>) -> Result<ContrastiveLoss<F>>;
}

/// Edge removal plus feature masking with symmetric InfoNCE.
#[derive(Clone, Debug, PartialEq)]
pub struct GraceStrategy {
    pub tau: f64,
    pub edge_drop: [f64; 2],
    pub feature_mask: [f64; 2],
}

impl GraceStrategy {
    pub fn from_config(cfg: &PretrainConfig) -> Self {
        GraceStrategy {
            tau: cfg.tau,
            edge_drop: cfg.edge_drop,
            feature_mask: cfg.feature_mask,
        }
    }
}

impl ContrastiveStrategy for GraceStrategy {
    fn draw_views(&self, graph: &UnifiedGraph, dim: usize, rng: &mut StreamRng) -> [ViewSpec; 2] {
        let a = draw_view(graph, dim, self.edge_drop[0], self.feature_mask[0], rng);
        let b = draw_view(graph, dim, self.edge_drop[1], self.feature_mask[1], rng);
        [a, b]
    }

    fn objective<F: Real>(&self, z1: &Mat<F>, z2: &Mat<F>) -> Result<ContrastiveLoss<F>> {
        infonce_with_grad(z1, z2, self.tau)
    }
}

/// Loss of one batch and its gradient w.r.t. layer-0 node features.
pub fn contrastive_batch<F: Real, S: ContrastiveStrategy>(
    graph: &UnifiedGraph,
    x: &Mat<F>,
    views: &[ViewSpec; 2],
    batch: &[usize],
    model: &ModelConfig,
    strategy: &S,
) -> Result<(F, Mat<F>)> {
    let (f1, f2) = rayon::join(
        || forward(graph, x, &views[0], model),
        || forward(graph, x, &views[1], model),
    );
    let (f1, f2) = (f1?, f2?);
    let z1 = f1.output.gather_rows(batch);
    let z2 = f2.output.gather_rows(batch);
    let out = strategy.objective(&z1, &z2)?;
    let scatter = |d: &Mat<F>| {
        let mut full = Mat::zeros(x.rows(), x.cols());
        for (k, &node) in batch.iter().enumerate() {
            full.row_mut(node).copy_from_slice(d.row(k));
        }
        full
    };
    let (d1, d2) = (scatter(&out.d_first), scatter(&out.d_second));
    let (g1, g2) = rayon::join(
        || backward(graph, x, &views[0], &f1, &d1),
        || backward(graph, x, &views[1], &f2, &d2),
    );
    let mut dx = g1?;
    dx.add_scaled(&g2?, F::one())?;
    Ok((out.loss, dx))
}

/// Accumulate node-feature gradients into per-table gradients.
pub fn scatter_node_grads<F: Real>(
    graph: &UnifiedGraph,
    dx: &Mat<F>,
    counts: TableCounts,
    trainable: &[Table],
) -> Gradients<F> {
    let mut grads = Gradients::default();
    let dim = dx.cols();
    for (node, r) in graph.nodes.iter().enumerate() {
        let (t, row) = r.table();
        if !trainable.contains(&t) {
            continue;
        }
        let rows = match t {
            Table::User => counts.users,
            Table::Item => counts.items,
            Table::Coordinator => counts.coordinators,
            Table::Prompt => counts.prompts,
        };
        let g = grads.entry(t, rows, dim);
        crate::linalg::axpy(g.row_mut(row), F::one(), dx.row(node));
    }
    grads
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpochLog {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub domain: Option<String>,
    pub epoch: usize,
    pub loss: f64,
    pub adaptive_edges: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutput<F> {
    pub store: EmbeddingStore<F>,
    /// The unified graph with weights from the final embeddings
    /// (coordinator modes only).
    pub graph: Option<UnifiedGraph>,
    pub log: Vec<PretrainEpochLog>,
}

fn loss_nodes(graph: &UnifiedGraph) -> Vec<usize> {
    graph
        .kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| !k.is_coordinator())
        .map(|(i, _)| i)
        .collect()
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // A trailing batch of one has no in-batch negatives; fold it into the previous one.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train_graph<F: Real, S: ContrastiveStrategy>(
    graph: &mut UnifiedGraph,
    store: &mut EmbeddingStore<F>,
    model: &ModelConfig,
    cfg: &PretrainConfig,
    strategy: &S,
    rng: &mut StreamRng,
    domain: Option<&str>,
    log: &mut Vec<PretrainEpochLog>,
    on_epoch: &mut dyn FnMut(&PretrainEpochLog),
) -> Result<()> {
    let nodes = loss_nodes(graph);
    let trainable = [Table::User, Table::Item, Table::Coordinator];
    let adam = AdamConfig::with_lr(cfg.lr);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let views = strategy.draw_views(graph, store.dim(), rng);
        let mut order = nodes.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let x = graph.gather_features(store);
            let (loss, dx) = contrastive_batch(graph, &x, &views, batch, model, strategy)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite pre-training loss at epoch {epoch}, batch {b}"
                )));
            }
            let grads = scatter_node_grads(graph, &dx, store.counts(), &trainable);
            adam_step(store, &grads, &adam)?;
            total += loss.as_f64();
            count += 1;
        }
        let x = graph.gather_features(store);
        let adaptive_edges = refresh_from_features(graph, &x)?;
        let entry = PretrainEpochLog {
            domain: domain.map(str::to_string),
            epoch,
            loss: if count > 0 { total / count as f64 } else { 0.0 },
            adaptive_edges,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(())
}

/// Graph of one domain whose nodes refer to domain-local table rows.
fn local_domain_graph(domain: &DomainGraph) -> UnifiedGraph {
    let mut g = UnifiedGraph::domain_only(domain);
    let n_users = domain.users.len();
    for (k, r) in g.nodes.iter_mut().enumerate() {
        *r = if k < n_users {
            NodeRef::User(k as u32)
        } else {
            NodeRef::Item((k - n_users) as u32)
        };
    }
    g
}

/// Table counts for the unified modes.
pub fn unified_counts(dataset: &MultiDomainDataset, coords: Option<&CoordinatorSet>) -> TableCounts {
    TableCounts {
        users: dataset.user_count(),
        items: dataset.item_count(),
        coordinators: coords.map_or(0, CoordinatorSet::len),
        prompts: 0,
    }
}

pub fn run_pretraining<F: Real>(
    dataset: &MultiDomainDataset,
    coords: Option<&CoordinatorSet>,
    model: &ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput<F>> {
    run_pretraining_with(
        dataset,
        coords,
        model,
        cfg,
        &GraceStrategy::from_config(cfg),
        &mut |_| {},
    )
}

/// Pre-train with an explicit strategy and a per-epoch callback.
///
/// Mode `None` trains every domain in isolation, each with its own
/// initialization and training streams (`init/<label>`, `pretrain/<label>`),
/// and merges the results. Users present in several domains take the
/// target domain's row if they are in the target, otherwise the row of the
/// first source domain containing them.
pub fn run_pretraining_with<F: Real, S: ContrastiveStrategy>(
    dataset: &MultiDomainDataset,
    coords: Option<&CoordinatorSet>,
    model: &ModelConfig,
    cfg: &PretrainConfig,
    strategy: &S,
    on_epoch: &mut dyn FnMut(&PretrainEpochLog),
) -> Result<PretrainOutput<F>> {
    cfg.validate()?;
    model.validate()?;
    let dim = model.dim;
    let mut log = Vec::new();

    if cfg.mode == CoordinatorMode::None {
        let mut users: Mat<F> = Mat::zeros(dataset.user_count(), dim);
        let mut items: Mat<F> = Mat::zeros(dataset.item_count(), dim);
        let mut filled = vec![false; dataset.user_count()];
        // Target first so its user rows take precedence.
        let order = std::iter::once(&dataset.target).chain(dataset.sources.iter());
        for domain in order {
            let label = &domain.label;
            let counts = TableCounts {
                users: domain.users.len(),
                items: domain.items.len(),
                coordinators: 0,
                prompts: 0,
            };
            let mut store: EmbeddingStore<F> =
                init_embeddings(counts, dim, &mut substream(cfg.seed, &format!("init/{label}")))?;
            let mut graph = local_domain_graph(domain);
            let mut rng = substream(cfg.seed, &format!("pretrain/{label}"));
            train_graph(
                &mut graph,
                &mut store,
                model,
                cfg,
                strategy,
                &mut rng,
                Some(label),
                &mut log,
                on_epoch,
            )?;
            for (k, &u) in domain.users.iter().enumerate() {
                if !filled[u as usize] {
                    users
                        .row_mut(u as usize)
                        .copy_from_slice(store.table(Table::User).row(k));
                    filled[u as usize] = true;
                }
            }
            for (k, &i) in domain.items.iter().enumerate() {
                items
                    .row_mut(i as usize)
                    .copy_from_slice(store.table(Table::Item).row(k));
            }
        }
        let store = EmbeddingStore::from_tables(dim, users, items, Mat::zeros(0, dim), Mat::zeros(0, dim))?;
        return Ok(PretrainOutput {
            store,
            graph: None,
            log,
        });
    }

    let counts = unified_counts(dataset, coords);
    let mut store: EmbeddingStore<F> = init_embeddings(counts, dim, &mut substream(cfg.seed, "init"))?;
    let mut graph = assemble_unified(dataset, coords, cfg.mode, Some(&store))?;
    let mut rng = substream(cfg.seed, "pretrain");
    train_graph(
        &mut graph, &mut store, model, cfg, strategy, &mut rng, None, &mut log, on_epoch,
    )?;
    store.reset_optimizer();
    Ok(PretrainOutput {
        store,
        graph: Some(graph),
        log,
    })
}
