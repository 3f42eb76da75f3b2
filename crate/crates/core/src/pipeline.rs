//! End-to-end runs: split, pre-train, transfer, evaluate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::coordinator::{create_coordinators, CoordinatorMode, CoordinatorSet};
use crate::dataset::{split_interactions, InteractionSplit, MultiDomainDataset, Phase};
use crate::error::{Error, Result};
use crate::eval::{evaluate, random_recall, RankingReport};
use crate::pretrain::{run_pretraining_with, unified_counts, GraceStrategy, PretrainEpochLog};
use crate::rng::substream;
use crate::store::{init_embeddings, EmbeddingStore};
use crate::transfer::{run_transfer, TransferEpochLog, TransferModel};

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Target-only training from random initialization, no pre-training.
    Backbone,
    #[serde(untagged)]
    Mode(CoordinatorMode),
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Backbone => "backbone",
            Variant::Mode(m) => m.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("backbone") {
            Some(Variant::Backbone)
        } else {
            CoordinatorMode::parse(s).map(Variant::Mode)
        }
    }
}

/// The dataset as seen by pre-training: the target keeps its training
/// interactions only.
pub fn pretraining_view(dataset: &MultiDomainDataset, split: &InteractionSplit) -> MultiDomainDataset {
    let mut ds = dataset.clone();
    ds.target = split.train_graph(&dataset.target);
    ds
}

pub fn coordinators_for(dataset: &MultiDomainDataset, cfg: &RunConfig) -> Result<Option<CoordinatorSet>> {
    if cfg.mode == CoordinatorMode::None {
        Ok(None)
    } else {
        create_coordinators(dataset, cfg.coordinators).map(Some)
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub valid: RankingReport,
    pub test: RankingReport,
    pub random_recall: f64,
    pub pretrain_log: Vec<PretrainEpochLog>,
    pub transfer_log: Vec<TransferEpochLog>,
    pub wall_ms: f64,
}

/// Pre-train (unless `Backbone`) and transfer; returns the tables handed
/// to transfer and the trained model.
pub fn train_variant(
    dataset: &MultiDomainDataset,
    split: &InteractionSplit,
    cfg: &RunConfig,
    variant: Variant,
    pretrain_log: &mut dyn FnMut(&PretrainEpochLog),
    transfer_log: &mut dyn FnMut(&TransferEpochLog),
) -> Result<(EmbeddingStore<f32>, TransferOutputs)> {
    let mut cfg = cfg.clone();
    let mut plog = Vec::new();
    let (store, coords) = match variant {
        Variant::Backbone => {
            cfg.mode = CoordinatorMode::None;
            cfg.transfer.freeze = false;
            let counts = unified_counts(dataset, None);
            let store = init_embeddings(counts, cfg.model.dim, &mut substream(cfg.seed, "init"))?;
            (store, None)
        }
        Variant::Mode(mode) => {
            cfg.mode = mode;
            let view = pretraining_view(dataset, split);
            let coords = coordinators_for(&view, &cfg)?;
            let pcfg = cfg.pretrain_config();
            let out = run_pretraining_with::<f32, _>(
                &view,
                coords.as_ref(),
                &cfg.model,
                &pcfg,
                &GraceStrategy::from_config(&pcfg),
                &mut |e| {
                    pretrain_log(e);
                    plog.push(e.clone());
                },
            )?;
            (out.store, coords)
        }
    };
    let out = run_transfer(
        dataset,
        split,
        &store,
        coords.as_ref(),
        cfg.mode,
        &cfg.model,
        &cfg.transfer_config(),
        transfer_log,
    )?;
    Ok((
        store,
        TransferOutputs {
            model: out.model,
            pretrain_log: plog,
            transfer_log: out.log,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct TransferOutputs {
    pub model: TransferModel<f32>,
    pub pretrain_log: Vec<PretrainEpochLog>,
    pub transfer_log: Vec<TransferEpochLog>,
}

/// Full run of one variant with `cfg.seed`.
pub fn run_experiment(dataset: &MultiDomainDataset, cfg: &RunConfig, variant: Variant) -> Result<RunResult> {
    let started = Instant::now();
    cfg.validate()?;
    let split = split_interactions(&dataset.target, cfg.split, cfg.seed)?;
    let (_, out) = train_variant(dataset, &split, cfg, variant, &mut |_| {}, &mut |_| {})?;
    let emb = out.model.target_embeddings()?;
    if !(emb.users.is_finite() && emb.items.is_finite()) {
        return Err(Error::Numeric("non-finite target embeddings".into()));
    }
    let reg = &dataset.registry;
    let label = |u: u32| reg.user_raw(u).unwrap_or("?").to_string();
    let valid = evaluate(&emb, &split, &dataset.target, &label, cfg.k, Phase::Valid)?;
    let test = evaluate(&emb, &split, &dataset.target, &label, cfg.k, Phase::Test)?;
    let random_recall = random_recall(&split, &dataset.target, cfg.k, Phase::Test)?;
    Ok(RunResult {
        variant,
        seed: cfg.seed,
        valid,
        test,
        random_recall,
        pretrain_log: out.pretrain_log,
        transfer_log: out.transfer_log,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub recall: MeanStd,
    pub hr: MeanStd,
    pub ndcg: MeanStd,
    pub mrr: MeanStd,
}

/// Test-phase mean and sample std per variant, in first-seen order.
pub fn summarize(results: &[(Variant, Result<RunResult>)]) -> Vec<AblationRow> {
    let mut order: Vec<Variant> = Vec::new();
    for (v, _) in results {
        if !order.contains(v) {
            order.push(*v);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let ok: Vec<&RunResult> = results
                .iter()
                .filter(|(w, _)| *w == v)
                .filter_map(|(_, r)| r.as_ref().ok())
                .collect();
            let runs = results.iter().filter(|(w, _)| *w == v).count();
            let col = |f: fn(&RankingReport) -> f64| MeanStd::of(&ok.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
            AblationRow {
                variant: v.name().to_string(),
                runs,
                failed: runs - ok.len(),
                recall: col(|r| r.recall),
                hr: col(|r| r.hr),
                ndcg: col(|r| r.ndcg),
                mrr: col(|r| r.mrr),
            }
        })
        .collect()
}
