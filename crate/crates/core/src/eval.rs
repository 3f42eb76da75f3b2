//! Full-ranking evaluation over the target item catalog.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DomainGraph, InteractionSplit, Phase};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::transfer::TargetEmbeddings;

/// Scores every target item for a target-local user.
pub trait Scorer: Sync {
    fn item_count(&self) -> usize;
    fn scores(&self, user: usize) -> Vec<f64>;
}

impl<F: Real> Scorer for TargetEmbeddings<F> {
    fn item_count(&self) -> usize {
        self.items.rows()
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        (0..self.items.rows()).map(|i| self.score(user, i).as_f64()).collect()
    }
}

/// Items sorted by descending score, ties by ascending index, skipping
/// positions flagged in `exclude`.
pub fn rank_items(scores: &[f64], exclude: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| !exclude.get(i).copied().unwrap_or(false))
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
    pub rr: f64,
}

/// Recall@K, HR@K, NDCG@K and reciprocal rank for one ranking. `relevant`
/// must be non-empty.
pub fn compute_metrics(ranked: &[usize], relevant: &[usize], k: usize) -> Result<(f64, f64, f64, f64)> {
    if relevant.is_empty() {
        return Err(Error::Report("no relevant items".into()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let is_rel = |i: &usize| relevant.contains(i);
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, item) in ranked.iter().take(k).enumerate() {
        if is_rel(item) {
            hits += 1;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    let rr = ranked
        .iter()
        .position(is_rel)
        .map(|p| 1.0 / (p + 1) as f64)
        .unwrap_or(0.0);
    Ok((
        hits as f64 / relevant.len() as f64,
        if hits > 0 { 1.0 } else { 0.0 },
        dcg / idcg,
        rr,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub k: usize,
    pub users: usize,
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub phase: Phase,
    pub excluded: String,
    #[serde(skip)]
    pub per_user: Vec<UserMetrics>,
}

impl RankingReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_per_user_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut run = || -> std::io::Result<()> {
            writeln!(f, "user,recall,hr,ndcg,rr")?;
            for m in &self.per_user {
                writeln!(f, "{},{},{},{},{}", m.user, m.recall, m.hr, m.ndcg, m.rr)?;
            }
            f.flush()
        };
        run().map_err(|e| Error::io(path, e))
    }
}

struct PhaseView {
    users: Vec<usize>,
    relevant: Vec<Vec<usize>>,
    excluded: Vec<Vec<usize>>,
}

fn local_items(target: &DomainGraph, items: &[u32]) -> Vec<usize> {
    let mut v: Vec<usize> = items.iter().filter_map(|&i| target.local_item(i)).collect();
    v.sort_unstable();
    v
}

fn phase_view(split: &InteractionSplit, target: &DomainGraph, phase: Phase) -> PhaseView {
    let mut view = PhaseView {
        users: Vec::new(),
        relevant: Vec::new(),
        excluded: Vec::new(),
    };
    for (k, &u) in split.users.iter().enumerate() {
        let rel = split.phase_items(phase)[k].as_slice();
        if rel.is_empty() {
            continue;
        }
        let mut ex = local_items(target, &split.train[k]);
        if phase == Phase::Test {
            ex.extend(local_items(target, &split.valid[k]));
            ex.sort_unstable();
        }
        let Some(local) = target.local_user(u) else { continue };
        view.users.push(local);
        view.relevant.push(local_items(target, rel));
        view.excluded.push(ex);
    }
    view
}

/// Rank all target items for every user with held-out items in `phase`.
pub fn evaluate(
    scorer: &dyn Scorer,
    split: &InteractionSplit,
    target: &DomainGraph,
    user_label: &(dyn Fn(u32) -> String + Sync),
    k: usize,
    phase: Phase,
) -> Result<RankingReport> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if scorer.item_count() != target.items.len() {
        return Err(Error::Shape(format!(
            "scorer covers {} items, target has {}",
            scorer.item_count(),
            target.items.len()
        )));
    }
    let view = phase_view(split, target, phase);
    if view.users.is_empty() {
        return Err(Error::Report(format!("no users with {} items", phase.name())));
    }
    let per_user: Vec<UserMetrics> = (0..view.users.len())
        .into_par_iter()
        .map(|n| {
            let u = view.users[n];
            let scores = scorer.scores(u);
            let mut mask = vec![false; scores.len()];
            for &i in &view.excluded[n] {
                mask[i] = true;
            }
            let ranked = rank_items(&scores, &mask);
            let (recall, hr, ndcg, rr) = compute_metrics(&ranked, &view.relevant[n], k)?;
            Ok(UserMetrics {
                user: user_label(target.users[u]),
                recall,
                hr,
                ndcg,
                rr,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_user.len() as f64;
    let mean = |f: fn(&UserMetrics) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    Ok(RankingReport {
        k,
        users: per_user.len(),
        recall: mean(|m| m.recall),
        hr: mean(|m| m.hr),
        ndcg: mean(|m| m.ndcg),
        mrr: mean(|m| m.rr),
        phase,
        excluded: if phase == Phase::Test { "train+valid" } else { "train" }.into(),
        per_user,
    })
}

/// Expected Recall@K of a uniformly random ranking: the mean over
/// evaluable users of `min(K, C) / C`, with `C` the candidate count.
pub fn random_recall(split: &InteractionSplit, target: &DomainGraph, k: usize, phase: Phase) -> Result<f64> {
    let view = phase_view(split, target, phase);
    if view.users.is_empty() {
        return Err(Error::Report(format!("no users with {} items", phase.name())));
    }
    let total: f64 = view
        .excluded
        .iter()
        .map(|ex| {
            let c = (target.items.len() - ex.len()) as f64;
            (k as f64).min(c) / c
        })
        .sum();
    Ok(total / view.users.len() as f64)
}
