use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use hago::analysis::{angle_distribution, cross_domain_neighbors, DEFAULT_ANGLE_SAMPLE};
use hago::dataset::{EntityRegistry, MultiDomainDataset};
use hago::rng::substream;
use hago::store::{read_checkpoint, EmbeddingStore, Table};
use hago::Mat;

use crate::rundir::{as_artifact, write_json, write_text, CliError, CliResult, RunDir};

#[derive(Args, Debug)]
pub struct NeighborArgs {
    /// Run directory holding the dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding checkpoint; defaults to the pre-training checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Raw ID of the query item.
    #[arg(long)]
    pub item: String,
    /// Domain of the query item, when the ID is ambiguous.
    #[arg(long)]
    pub from: Option<String>,
    /// Domain to search.
    #[arg(long)]
    pub to: String,
    #[arg(short = 'k', default_value_t = 3)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct AngleArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// Items sampled per domain.
    #[arg(long, default_value_t = DEFAULT_ANGLE_SAMPLE)]
    pub sample: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn load(out: &PathBuf, checkpoint: &Option<PathBuf>) -> CliResult<(RunDir, MultiDomainDataset, EmbeddingStore<f32>)> {
    let rd = RunDir::new(out);
    let (ds, _) = rd.dataset()?;
    let path = checkpoint.clone().unwrap_or_else(|| rd.checkpoint("pretrain"));
    let store = read_checkpoint(&path).map_err(as_artifact)?;
    if store.table(Table::Item).rows() != ds.item_count() {
        return Err(CliError::artifact(format!(
            "{} has {} item rows, the dataset has {} items",
            path.display(),
            store.table(Table::Item).rows(),
            ds.item_count()
        )));
    }
    Ok((rd, ds, store))
}

/// Up to five closest candidates by edit distance.
fn near_misses<'a>(query: &str, candidates: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = candidates.map(|c| (strsim::levenshtein(query, c), c)).collect();
    scored.sort();
    scored.into_iter().take(5).map(|(_, c)| c).collect()
}

fn unknown(what: &str, query: &str, suggestions: Vec<&str>) -> CliError {
    let hint = if suggestions.is_empty() {
        String::new()
    } else {
        format!("; did you mean: {}?", suggestions.join(", "))
    };
    CliError::query(format!("unknown {what} `{query}`{hint}"))
}

fn domain_id(reg: &EntityRegistry, ds: &MultiDomainDataset, label: &str) -> CliResult<u16> {
    reg.domain_id(label).ok_or_else(|| {
        unknown(
            "domain",
            label,
            near_misses(label, ds.domains().map(|d| d.label.as_str())),
        )
    })
}

/// Global item index of the query and its domain.
fn find_item(ds: &MultiDomainDataset, raw: &str, from: Option<&str>) -> CliResult<(u32, u16)> {
    let reg = &ds.registry;
    if let Some(label) = from {
        let d = domain_id(reg, ds, label)?;
        return reg.item(d, raw).map(|i| (i, d)).ok_or_else(|| {
            let ids: Vec<&str> = reg.domain_items(d).map(|(_, r)| r).collect();
            unknown(
                &format!("item in domain `{label}`"),
                raw,
                near_misses(raw, ids.into_iter()),
            )
        });
    }
    let hits: Vec<(u32, u16)> = ds
        .domains()
        .filter_map(|g| reg.item(g.domain_id, raw).map(|i| (i, g.domain_id)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => {
            let all: Vec<&str> = (0..reg.item_count() as u32)
                .filter_map(|i| reg.item_raw(i).map(|(_, r)| r))
                .collect();
            Err(unknown("item", raw, near_misses(raw, all.into_iter())))
        }
        _ => Err(CliError::query(format!(
            "item `{raw}` exists in several domains; pass --from"
        ))),
    }
}

pub fn neighbors(a: &NeighborArgs) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::input("-k must be at least 1"));
    }
    let (rd, ds, store) = load(&a.out, &a.checkpoint)?;
    let reg = &ds.registry;
    let (item, from) = find_item(&ds, &a.item, a.from.as_deref())?;
    let to = domain_id(reg, &ds, &a.to)?;
    if to == from {
        return Err(CliError::query(format!(
            "`{}` is already in domain `{}`; neighbor queries are cross-domain",
            a.item, a.to
        )));
    }
    let candidates: Vec<(u32, &str)> = reg.domain_items(to).collect();
    let rows: Vec<usize> = candidates.iter().map(|&(i, _)| i as usize).collect();
    let table: Mat<f32> = store.table(Table::Item).gather_rows(&rows);
    let hits = cross_domain_neighbors(store.table(Table::Item).row(item as usize), &table, a.k)?;

    let mut csv = String::from("rank,item_id,domain,cosine\n");
    for (r, n) in hits.iter().enumerate() {
        let raw = candidates[n.index].1;
        let _ = writeln!(csv, "{},{raw},{},{}", r + 1, a.to, n.cosine);
        println!("{:>3}  {:<24} {:.4}", r + 1, raw, n.cosine);
    }
    rd.ensure(&rd.reports())?;
    write_text(&rd.reports().join("neighbors.csv"), &csv)
}

pub fn angles(a: &AngleArgs) -> CliResult<()> {
    let (rd, ds, store) = load(&a.out, &a.checkpoint)?;
    let reg = &ds.registry;
    let domains: Vec<(String, Mat<f32>)> = ds
        .domains()
        .map(|g| {
            let rows: Vec<usize> = reg.domain_items(g.domain_id).map(|(i, _)| i as usize).collect();
            (g.label.clone(), store.table(Table::Item).gather_rows(&rows))
        })
        .collect();
    let report = angle_distribution(&domains, a.sample, a.bins, &mut substream(a.seed, "angles"))?;
    rd.ensure(&rd.reports())?;
    report.write_csv(&rd.reports().join("angles.csv"))?;
    let summary: Vec<_> = report
        .domains
        .iter()
        .map(|d| json!({"domain": d.domain, "samples": d.samples, "resultant_length": d.resultant_length}))
        .collect();
    write_json(
        &rd.reports().join("angles.json"),
        &json!({"bins": report.bins, "sample": a.sample, "seed": a.seed, "domains": summary}),
    )?;
    for d in &report.domains {
        println!(
            "{:<12} samples {:>6}  resultant length {:.4}",
            d.domain, d.samples, d.resultant_length
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_misses_rank_by_edit_distance() {
        let ids = ["book-1", "book-12", "movie-1", "book-2"];
        assert_eq!(
            near_misses("book-1x", ids.into_iter()),
            vec!["book-1", "book-12", "book-2", "movie-1"]
        );
    }
}
