//! Prompt-based transfer to the target domain.
//!
//! The pre-trained tables stay frozen by default; a zero-initialized prompt
//! row is added to every target user and item, and the prompts are trained
//! with BPR over the target's training interactions.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{assemble_unified, CoordinatorMode, CoordinatorSet, NodeRef, UnifiedGraph};
use crate::dataset::{InteractionSplit, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat, Real};
use crate::pretrain::scatter_node_grads;
use crate::propagation::{backward, forward, score, ModelConfig, ViewSpec};
use crate::rng::{substream, StreamRng};
use crate::store::{adam_step, AdamConfig, EmbeddingStore, Gradients, Table};

/// Which graph fine-tuning propagates over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferScope {
    /// The target domain's training interactions only.
    #[default]
    TargetOnly,
    /// The full coordinator graph, with the target's interactions
    /// restricted to the training split.
    Unified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub freeze: bool,
    #[serde(default)]
    pub scope: TransferScope,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            epochs: 50,
            batch_size: 4096,
            lr: 0.1,
            l2: 1e-4,
            freeze: true,
            scope: TransferScope::TargetOnly,
            seed: 2024,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 coefficient must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("triple batch size must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn init_prompts<F: Real>(users: usize, items: usize, dim: usize) -> Mat<F> {
    Mat::zeros(users + items, dim)
}

/// `e* + p`, row by row.
pub fn prompted_features<F: Real>(pretrained: &Mat<F>, prompts: &Mat<F>) -> Result<Mat<F>> {
    pretrained.check_same_shape(prompts)?;
    let mut out = pretrained.clone();
    out.add_scaled(prompts, F::one())?;
    Ok(out)
}

/// Uniform draw from `universe` outside the sorted `train` set.
pub fn sample_negative(train: &[u32], universe: &[u32], rng: &mut StreamRng) -> Result<u32> {
    let available = universe.iter().filter(|i| train.binary_search(i).is_err()).count();
    if available == 0 {
        return Err(Error::Sampling("user interacted with every item".into()));
    }
    loop {
        let j = universe[rng.random_range(0..universe.len())];
        if train.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-(1/|B|) sum ln sigma(pos - neg) + l2 * sum ||theta||^2`, with
/// `ln sigma(x) = -softplus(-x)`.
pub fn bpr_loss<F: Real>(pos: &[F], neg: &[F], params: &[&Mat<F>], l2: f64) -> Result<F> {
    if pos.len() != neg.len() {
        return Err(Error::Shape(format!(
            "{} positive vs {} negative scores",
            pos.len(),
            neg.len()
        )));
    }
    let n = pos.len().max(1) as f64;
    let data: f64 = pos
        .iter()
        .zip(neg)
        .map(|(&p, &q)| softplus(-(p - q).as_f64()))
        .sum::<f64>()
        / n;
    let reg: f64 = params.iter().map(|m| m.frobenius_sq().as_f64()).sum::<f64>() * l2;
    Ok(F::of(data + reg))
}

/// A training triple in target-local positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BprTerms {
    pub bpr: f64,
    pub reg: f64,
}

impl BprTerms {
    pub fn total(&self) -> f64 {
        self.bpr + self.reg
    }
}

/// Target user and item representations after propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetEmbeddings<F> {
    pub users: Mat<F>,
    pub items: Mat<F>,
}

impl<F: Real> TargetEmbeddings<F> {
    pub fn score(&self, user: usize, item: usize) -> F {
        score(self.users.row(user), self.items.row(item))
    }
}

/// Pre-trained tables plus prompts, wired to a propagation graph.
#[derive(Clone, Debug)]
pub struct TransferModel<F> {
    pub graph: UnifiedGraph,
    pub store: EmbeddingStore<F>,
    pub model: ModelConfig,
    pub freeze: bool,
    pub l2: f64,
    /// Prompt row of each graph node, if any.
    pub prompt_rows: Vec<Option<u32>>,
    /// Graph node of each target user / item, in target order.
    pub user_nodes: Vec<usize>,
    pub item_nodes: Vec<usize>,
}

impl<F: Real> TransferModel<F> {
    /// Wire `pretrained` to the propagation graph chosen by `scope`.
    pub fn new(
        dataset: &MultiDomainDataset,
        split: &InteractionSplit,
        pretrained: &EmbeddingStore<F>,
        coords: Option<&CoordinatorSet>,
        mode: CoordinatorMode,
        model: &ModelConfig,
        cfg: &TransferConfig,
    ) -> Result<Self> {
        model.validate()?;
        let target = &dataset.target;
        let train = split.train_graph(target);
        let n_users = target.users.len();
        let n_items = target.items.len();
        let counts = pretrained.counts();
        let max_user = target.users.last().copied().unwrap_or(0) as usize;
        let max_item = target.items.last().copied().unwrap_or(0) as usize;
        if max_user >= counts.users || max_item >= counts.items {
            return Err(Error::Shape("pre-trained tables do not cover every target node".into()));
        }
        if pretrained.dim() != model.dim {
            return Err(Error::Shape(format!(
                "pre-trained dimension {} vs model dimension {}",
                pretrained.dim(),
                model.dim
            )));
        }

        let (graph, user_nodes, item_nodes) = match cfg.scope {
            TransferScope::TargetOnly => {
                let g = UnifiedGraph::domain_only(&train);
                (
                    g,
                    (0..n_users).collect::<Vec<_>>(),
                    (n_users..n_users + n_items).collect::<Vec<_>>(),
                )
            }
            TransferScope::Unified => {
                if mode == CoordinatorMode::None {
                    return Err(Error::Config("unified transfer scope needs a coordinator mode".into()));
                }
                let mut ds = dataset.clone();
                ds.target = train;
                let g = assemble_unified(&ds, coords, mode, Some(pretrained))?;
                let u = dataset.user_count();
                (
                    g,
                    target.users.iter().map(|&x| x as usize).collect(),
                    target.items.iter().map(|&x| u + x as usize).collect(),
                )
            }
        };
        let mut prompt_rows = vec![None; graph.node_count()];
        for (k, &node) in user_nodes.iter().chain(&item_nodes).enumerate() {
            prompt_rows[node] = Some(k as u32);
        }
        let mut store = pretrained.clone();
        store.replace_table(Table::Prompt, init_prompts(n_users, n_items, model.dim))?;
        store.reset_optimizer();
        Ok(TransferModel {
            graph,
            store,
            model: model.clone(),
            freeze: cfg.freeze,
            l2: cfg.l2,
            prompt_rows,
            user_nodes,
            item_nodes,
        })
    }

    /// Layer-0 features `e* + p` for every graph node (prompt-less nodes
    /// keep their pre-trained row).
    pub fn input_features(&self) -> Mat<F> {
        let mut x = self.graph.gather_features(&self.store);
        let prompts = self.store.table(Table::Prompt);
        for (node, p) in self.prompt_rows.iter().enumerate() {
            if let Some(p) = p {
                axpy(x.row_mut(node), F::one(), prompts.row(*p as usize));
            }
        }
        x
    }

    pub fn target_embeddings(&self) -> Result<TargetEmbeddings<F>> {
        let x = self.input_features();
        let out = forward(&self.graph, &x, &ViewSpec::identity(), &self.model)?.output;
        Ok(TargetEmbeddings {
            users: out.gather_rows(&self.user_nodes),
            items: out.gather_rows(&self.item_nodes),
        })
    }

    fn trainable(&self) -> Vec<Table> {
        if self.freeze {
            vec![Table::Prompt]
        } else {
            Table::ALL.to_vec()
        }
    }

    /// Loss terms and gradients of the trainable tables for one batch.
    pub fn batch_objective(&self, triples: &[Triple]) -> Result<(BprTerms, Gradients<F>)> {
        let x = self.input_features();
        let view = ViewSpec::identity();
        let fwd = forward(&self.graph, &x, &view, &self.model)?;
        let out = &fwd.output;
        let n = triples.len().max(1) as f64;
        let mut d_out = Mat::zeros(out.rows(), out.cols());
        let mut bpr = 0.0;
        for t in triples {
            let (u, i, j) = (self.user_nodes[t.user], self.item_nodes[t.pos], self.item_nodes[t.neg]);
            let diff = (score(out.row(u), out.row(i)) - score(out.row(u), out.row(j))).as_f64();
            bpr += softplus(-diff);
            // d softplus(-x) / dx = -sigmoid(-x)
            let g = F::of(-sigmoid(-diff) / n);
            let (ou, oi, oj) = (out.row(u).to_vec(), out.row(i).to_vec(), out.row(j).to_vec());
            let du: Vec<F> = oi.iter().zip(&oj).map(|(&a, &b)| g * (a - b)).collect();
            axpy(d_out.row_mut(u), F::one(), &du);
            axpy(d_out.row_mut(i), g, &ou);
            axpy(d_out.row_mut(j), -g, &ou);
        }
        bpr /= n;
        let dx = backward(&self.graph, &x, &view, &fwd, &d_out)?;

        let trainable = self.trainable();
        let counts = self.store.counts();
        let mut grads = scatter_node_grads(&self.graph, &dx, counts, &trainable);
        let prompts = self.store.table(Table::Prompt);
        let dp = grads.entry(Table::Prompt, prompts.rows(), self.store.dim());
        for (node, p) in self.prompt_rows.iter().enumerate() {
            if let Some(p) = p {
                axpy(dp.row_mut(*p as usize), F::one(), dx.row(node));
            }
        }
        let mut reg = 0.0;
        for t in trainable {
            let param = self.store.table(t);
            if param.rows() == 0 {
                continue;
            }
            reg += param.frobenius_sq().as_f64();
            let g = grads.entry(t, param.rows(), self.store.dim());
            g.add_scaled(param, F::of(2.0 * self.l2))?;
        }
        Ok((
            BprTerms {
                bpr,
                reg: reg * self.l2,
            },
            grads,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferEpochLog {
    pub epoch: usize,
    pub bpr_loss: f64,
    pub reg_term: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TransferOutput<F> {
    pub model: TransferModel<F>,
    pub log: Vec<TransferEpochLog>,
}

/// Target-local training pairs and per-user sorted training items.
fn training_pairs(dataset: &MultiDomainDataset, split: &InteractionSplit) -> (Vec<(usize, usize)>, Vec<Vec<u32>>) {
    let target = &dataset.target;
    let mut pairs = Vec::new();
    let mut per_user = Vec::with_capacity(split.users.len());
    for (u, items) in split.train.iter().enumerate() {
        let mut local: Vec<u32> = items
            .iter()
            .map(|i| target.local_item(*i).expect("target item") as u32)
            .collect();
        local.sort_unstable();
        pairs.extend(local.iter().map(|&i| (u, i as usize)));
        per_user.push(local);
    }
    (pairs, per_user)
}

#[allow(clippy::too_many_arguments)]
pub fn run_transfer<F: Real>(
    dataset: &MultiDomainDataset,
    split: &InteractionSplit,
    pretrained: &EmbeddingStore<F>,
    coords: Option<&CoordinatorSet>,
    mode: CoordinatorMode,
    model: &ModelConfig,
    cfg: &TransferConfig,
    on_epoch: &mut dyn FnMut(&TransferEpochLog),
) -> Result<TransferOutput<F>> {
    cfg.validate()?;
    let mut tm = TransferModel::new(dataset, split, pretrained, coords, mode, model, cfg)?;
    let (pairs, per_user) = training_pairs(dataset, split);
    let universe: Vec<u32> = (0..dataset.target.items.len() as u32).collect();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = substream(cfg.seed, "transfer");
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order = pairs.clone();
        order.shuffle(&mut rng);
        let (mut bpr, mut reg, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len());
            for &(u, i) in chunk {
                let j = sample_negative(&per_user[u], &universe, &mut rng)?;
                triples.push(Triple {
                    user: u,
                    pos: i,
                    neg: j as usize,
                });
            }
            let (terms, grads) = tm.batch_objective(&triples)?;
            if !terms.total().is_finite() {
                return Err(Error::Numeric(format!("non-finite transfer loss at epoch {epoch}")));
            }
            adam_step(&mut tm.store, &grads, &adam)?;
            bpr += terms.bpr;
            reg += terms.reg;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        let entry = TransferEpochLog {
            epoch,
            bpr_loss: bpr / b,
            reg_term: reg / b,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TransferOutput { model: tm, log })
}

/// Whether any validation or test interaction appears among the
/// graph's interaction edges.
pub fn graph_leaks_heldout(model: &TransferModel<impl Real>, split: &InteractionSplit) -> bool {
    use crate::coordinator::EdgeClass;
    let mut held: Vec<(u32, u32)> = Vec::new();
    for (k, &u) in split.users.iter().enumerate() {
        for &i in split.valid[k].iter().chain(&split.test[k]) {
            held.push((u, i));
        }
    }
    held.sort_unstable();
    let g = &model.graph;
    g.edges.iter().any(|e| {
        if !matches!(e.class, EdgeClass::Interaction { .. }) {
            return false;
        }
        match (g.nodes[e.a as usize], g.nodes[e.b as usize]) {
            (NodeRef::User(u), NodeRef::Item(i)) => held.binary_search(&(u, i)).is_ok(),
            _ => false,
        }
    })
}
