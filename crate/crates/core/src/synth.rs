//! Synthetic multi-domain interaction data with planted shared user
//! factors.
//!
//! Every domain scores user `u` and item `i` by `<f_u, g_i> / sqrt(r)`;
//! interactions are drawn without replacement with weight
//! `sigmoid(signal * (score - t) + noise * eps)`, where `t` is the score
//! quantile matching the requested density.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, DomainGraph, EntityRegistry, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};

pub const TARGET_DOMAIN: &str = "target";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub sources: usize,
    pub source_density: f64,
    pub target_density: f64,
    /// Scale of the factor signal in the interaction logit.
    pub signal: f64,
    /// Scale of the per-pair Gaussian noise; infinity makes interactions
    /// independent of the factors.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            users: 300,
            items: 200,
            rank: 8,
            sources: 2,
            source_density: 0.1,
            target_density: 0.03,
            signal: 5.0,
            noise: 0.0,
            seed: 2024,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("source", self.source_density), ("target", self.target_density)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("{name} density {d} outside (0, 1)")));
            }
        }
        if self.users == 0 || self.items == 0 || self.rank == 0 {
            return Err(Error::Config("users, items and rank must be positive".into()));
        }
        if !(self.noise >= 0.0) || !self.signal.is_finite() {
            return Err(Error::Config("noise must be non-negative and signal finite".into()));
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.sources).map(|k| format!("source{k}")).collect();
        v.push(TARGET_DOMAIN.to_string());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDomain {
    pub name: String,
    /// Sorted `(user, item)` index pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Generated domains, sources first and the target last.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub domains: Vec<SynthDomain>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn sample_domain(users: &[Vec<f64>], p: &SynthParams, density: f64, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let items = gaussian(p.items, p.rank, rng);
    let scale = (p.rank as f64).sqrt();
    let n = users.len() * items.len();
    let mut scores = Vec::with_capacity(n);
    for f in users {
        for g in &items {
            scores.push(f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / scale);
        }
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let t = sorted[(((1.0 - density) * n as f64) as usize).min(n - 1)];
    let m = ((n as f64 * density).round() as usize).clamp(1, n);

    // Efraimidis-Spirakis: keep the m largest ln(u) / w
    let mut keys: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            let w = if p.noise.is_infinite() {
                1.0
            } else {
                let logit = p.signal * (s - t) + p.noise * eps;
                1.0 / (1.0 + (-logit).exp())
            };
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, k)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut pairs: Vec<(usize, usize)> = keys[..m].iter().map(|&(_, k)| (k / p.items, k % p.items)).collect();
    pairs.sort_unstable();
    pairs
}

pub fn generate(p: &SynthParams) -> Result<SynthData> {
    p.validate()?;
    let users = gaussian(p.users, p.rank, &mut substream(p.seed, "synth/users"));
    let names = p.domain_names();
    let domains = names
        .iter()
        .map(|name| {
            let density = if name == TARGET_DOMAIN {
                p.target_density
            } else {
                p.source_density
            };
            let mut rng = substream(p.seed, &format!("synth/{name}"));
            SynthDomain {
                name: name.clone(),
                pairs: sample_domain(&users, p, density, &mut rng),
            }
        })
        .collect();
    Ok(SynthData { domains })
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn item_id(domain: &str, i: usize) -> String {
    format!("{domain}-i{i}")
}

impl SynthData {
    pub fn target(&self) -> &SynthDomain {
        self.domains.last().expect("at least the target domain")
    }

    pub fn interaction_count(&self) -> usize {
        self.domains.iter().map(|d| d.pairs.len()).sum()
    }

    /// Register everything in domain order and build the dataset.
    pub fn to_dataset(&self) -> Result<MultiDomainDataset> {
        let mut reg = EntityRegistry::new();
        let mut graphs: Vec<DomainGraph> = Vec::with_capacity(self.domains.len());
        for d in &self.domains {
            let id = reg.domain(&d.name);
            let edges = d
                .pairs
                .iter()
                .map(|&(u, i)| {
                    (
                        reg.register_user(&user_id(u)),
                        reg.register_item(id, &item_id(&d.name, i)),
                    )
                })
                .collect();
            graphs.push(DomainGraph::from_edges(id, &d.name, edges));
        }
        let target = graphs.pop().expect("target domain");
        build_dataset(graphs, target, reg)
    }

    /// One `<domain>.tsv` per domain with a `user_id\titem_id` header.
    pub fn write_tsv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for d in &self.domains {
            let path = dir.join(format!("{}.tsv", d.name));
            let mut text = String::from("user_id\titem_id\n");
            for &(u, i) in &d.pairs {
                text.push_str(&user_id(u));
                text.push('\t');
                text.push_str(&item_id(&d.name, i));
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}
