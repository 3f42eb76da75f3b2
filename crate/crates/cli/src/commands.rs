use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use hago::config::{DomainInput, RunConfig};
use hago::coordinator::{write_graph_dump, CoordinatorMode, CoordinatorSet};
use hago::dataset::{
    build_dataset, ingest_interactions, split_interactions, write_dataset_dir, EntityRegistry, InteractionSplit,
    Manifest, MultiDomainDataset, Phase,
};
use hago::eval::{evaluate as rank_eval, random_recall, RankingReport};
use hago::pipeline::{coordinators_for, pretraining_view, run_experiment, summarize, AblationRow, RunResult, Variant};
use hago::pretrain::{run_pretraining_with, GraceStrategy};
use hago::store::write_checkpoint;
use hago::synth::{generate, SynthParams};
use hago::transfer::{run_transfer, TransferModel};

use crate::rundir::{
    as_artifact, check_hash, exit_code, short, write_json, write_text, CliError, CliResult, RunDir, StageMeta,
};
use crate::Overrides;

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::input(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn ingest(domains: &[String], inputs: &[PathBuf], target: Option<String>, ov: &Overrides) -> CliResult<()> {
    let (mut cfg, rd) = ov.resolve()?;
    if domains.len() != inputs.len() {
        return Err(CliError::input(format!(
            "{} --domain names but {} --input files; pass them in pairs",
            domains.len(),
            inputs.len()
        )));
    }
    if !domains.is_empty() {
        cfg.domains = domains
            .iter()
            .zip(inputs)
            .map(|(name, path)| DomainInput {
                name: name.clone(),
                path: path.clone(),
                format: None,
            })
            .collect();
    }
    if cfg.domains.is_empty() {
        return Err(CliError::input(
            "no domains: pass --domain/--input pairs or list them in the config",
        ));
    }
    let target = match target.or(cfg.target.clone()) {
        Some(t) => t,
        None if cfg.domains.len() == 1 => cfg.domains[0].name.clone(),
        None => return Err(CliError::input("several domains given; mark one with --target")),
    };
    if !cfg.domains.iter().any(|d| d.name == target) {
        return Err(CliError::input(format!(
            "target `{target}` is not among the ingested domains"
        )));
    }
    cfg.target = Some(target.clone());

    let mut reg = EntityRegistry::new();
    let mut sources = Vec::new();
    let mut tgt = None;
    for d in &cfg.domains {
        let g = ingest_interactions(&d.path, d.input_format(), &d.name, &mut reg)?;
        if d.name == target {
            tgt = Some(g);
        } else {
            sources.push(g);
        }
    }
    let ds = build_dataset(sources, tgt.expect("target checked above"), reg)?;
    rd.ensure(&rd.root)?;
    let manifest = write_dataset_dir(&ds, cfg.seed, &rd.root)?;
    write_json(&rd.config(), &cfg)?;
    println!("dataset {} -> {}", short(&manifest.dataset_hash), rd.root.display());
    for d in &manifest.domains {
        let s = &d.summary;
        println!(
            "  {:<12} {:<6} users {:>8}  items {:>8}  interactions {:>10}  sparsity {:.4}",
            s.name,
            format!("{:?}", d.role).to_lowercase(),
            s.users,
            s.items,
            s.interactions,
            s.sparsity
        );
    }
    Ok(())
}

/// Split, pre-training view and coordinators, all derived from the config.
struct Prepared {
    dataset: MultiDomainDataset,
    manifest: Manifest,
    split: InteractionSplit,
    view: MultiDomainDataset,
    coords: Option<CoordinatorSet>,
}

fn prepare(cfg: &RunConfig, rd: &RunDir) -> CliResult<Prepared> {
    let (dataset, manifest) = rd.dataset()?;
    let split = split_interactions(&dataset.target, cfg.split, cfg.seed)?;
    let view = pretraining_view(&dataset, &split);
    let coords = coordinators_for(&view, cfg)?;
    Ok(Prepared {
        dataset,
        manifest,
        split,
        view,
        coords,
    })
}

pub fn pretrain(ov: &Overrides) -> CliResult<()> {
    let (cfg, rd) = ov.resolve()?;
    let p = prepare(&cfg, &rd)?;
    let hash = cfg.pretrain_hash(&p.manifest.dataset_hash)?;
    let pcfg = cfg.pretrain_config();
    let out = run_pretraining_with::<f32, _>(
        &p.view,
        p.coords.as_ref(),
        &cfg.model,
        &pcfg,
        &GraceStrategy::from_config(&pcfg),
        &mut |e| {
            let dom = e.domain.as_deref().map(|d| format!(" [{d}]")).unwrap_or_default();
            eprintln!(
                "pretrain{dom} epoch {:>3}/{} loss {:.5}",
                e.epoch + 1,
                pcfg.epochs,
                e.loss
            );
        },
    )?;
    if !out.store.is_finite() {
        return Err(hago::Error::Numeric("non-finite pre-trained embeddings".into()).into());
    }
    rd.ensure(&rd.checkpoints())?;
    rd.ensure(&rd.logs())?;
    write_checkpoint(&out.store, &rd.checkpoint("pretrain"))?;
    if let Some(g) = &out.graph {
        write_graph_dump(g, &rd.checkpoints(), "graph")?;
    }
    write_json(
        &rd.meta("pretrain"),
        &StageMeta {
            stage: "pretrain".into(),
            hash: hash.clone(),
            parent: p.manifest.dataset_hash.clone(),
            config: cfg.clone(),
        },
    )?;
    write_jsonl(&rd.logs().join("pretrain.jsonl"), &out.log)?;
    write_json(&rd.config(), &cfg)?;
    println!(
        "pretrain {} ({}, {} epochs) -> {}",
        short(&hash),
        cfg.mode.name(),
        pcfg.epochs,
        rd.checkpoint("pretrain").display()
    );
    Ok(())
}

fn load_pretrained(
    cfg: &RunConfig,
    rd: &RunDir,
    p: &Prepared,
) -> CliResult<(String, hago::store::EmbeddingStore<f32>)> {
    let expected = cfg.pretrain_hash(&p.manifest.dataset_hash)?;
    let meta = rd.read_meta("pretrain")?;
    check_hash("pretrain", &meta, &expected)?;
    Ok((expected, rd.read_checkpoint("pretrain")?))
}

pub fn transfer(ov: &Overrides) -> CliResult<()> {
    let (cfg, rd) = ov.resolve()?;
    let p = prepare(&cfg, &rd)?;
    let (phash, store) = load_pretrained(&cfg, &rd, &p)?;
    let tcfg = cfg.transfer_config();
    let out = run_transfer(
        &p.dataset,
        &p.split,
        &store,
        p.coords.as_ref(),
        cfg.mode,
        &cfg.model,
        &tcfg,
        &mut |e| {
            eprintln!(
                "transfer epoch {:>3}/{} bpr {:.5} reg {:.5}",
                e.epoch + 1,
                tcfg.epochs,
                e.bpr_loss,
                e.reg_term
            )
        },
    )
    .map_err(|e| match e {
        hago::Error::Shape(m) => CliError::artifact(format!("pre-trained checkpoint does not fit the dataset: {m}")),
        other => other.into(),
    })?;
    let hash = cfg.transfer_hash(&phash)?;
    rd.ensure(&rd.logs())?;
    write_checkpoint(&out.model.store, &rd.checkpoint("transfer"))?;
    write_json(
        &rd.meta("transfer"),
        &StageMeta {
            stage: "transfer".into(),
            hash: hash.clone(),
            parent: phash,
            config: cfg.clone(),
        },
    )?;
    write_jsonl(&rd.logs().join("transfer.jsonl"), &out.log)?;
    write_json(&rd.config(), &cfg)?;
    println!(
        "transfer {} ({} epochs, freeze {}) -> {}",
        short(&hash),
        tcfg.epochs,
        tcfg.freeze,
        rd.checkpoint("transfer").display()
    );
    Ok(())
}

fn report_json(report: &RankingReport, hash: &str, random: Option<f64>) -> CliResult<serde_json::Value> {
    let mut v = serde_json::to_value(report).map_err(|e| CliError::input(e.to_string()))?;
    let obj = v.as_object_mut().expect("report serializes to an object");
    obj.insert("config_hash".into(), json!(hash));
    if let Some(r) = random {
        obj.insert("random_recall".into(), json!(r));
    }
    Ok(v)
}

pub fn evaluate(ov: &Overrides) -> CliResult<()> {
    let (cfg, rd) = ov.resolve()?;
    let p = prepare(&cfg, &rd)?;
    let (phash, pre) = load_pretrained(&cfg, &rd, &p)?;
    let thash = cfg.transfer_hash(&phash)?;
    let meta = rd.read_meta("transfer")?;
    check_hash("transfer", &meta, &thash)?;
    let trained = rd.read_checkpoint("transfer")?;

    let mut tm = TransferModel::new(
        &p.dataset,
        &p.split,
        &pre,
        p.coords.as_ref(),
        cfg.mode,
        &cfg.model,
        &cfg.transfer_config(),
    )
    .map_err(as_artifact)?;
    if trained.counts() != tm.store.counts() || trained.dim() != tm.store.dim() {
        return Err(CliError::artifact(
            "transfer checkpoint does not match the dataset and config",
        ));
    }
    tm.store = trained;
    let emb = tm.target_embeddings()?;
    if !(emb.users.is_finite() && emb.items.is_finite()) {
        return Err(hago::Error::Numeric("non-finite target embeddings".into()).into());
    }
    let reg = &p.dataset.registry;
    let label = |u: u32| reg.user_raw(u).unwrap_or("?").to_string();
    rd.ensure(&rd.reports())?;
    for phase in [Phase::Valid, Phase::Test] {
        let report = rank_eval(&emb, &p.split, &p.dataset.target, &label, cfg.k, phase)?;
        let random = random_recall(&p.split, &p.dataset.target, cfg.k, phase)?;
        write_json(
            &rd.reports().join(format!("{}.json", phase.name())),
            &report_json(&report, &thash, Some(random))?,
        )?;
        report.write_per_user_csv(&rd.reports().join(format!("{}_users.csv", phase.name())))?;
        println!(
            "{:<5} users {:>6}  recall@{k} {:.4}  hr@{k} {:.4}  ndcg@{k} {:.4}  mrr {:.4}  (random recall@{k} {:.4})",
            phase.name(),
            report.users,
            report.recall,
            report.hr,
            report.ndcg,
            report.mrr,
            random,
            k = cfg.k
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct RunRow {
    variant: String,
    n: Option<usize>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ndcg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    random_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct TableRow {
    n: Option<usize>,
    #[serde(flatten)]
    row: AblationRow,
}

fn uses_coordinators(v: Variant) -> bool {
    !matches!(v, Variant::Backbone | Variant::Mode(CoordinatorMode::None))
}

fn fmt_cell(ms: &hago::pipeline::MeanStd, ok: usize) -> String {
    if ok == 0 {
        "failed".into()
    } else {
        format!("{:.4} ± {:.4}", ms.mean, ms.std)
    }
}

pub fn ablate(modes: &[Variant], seeds: &[u64], ns: &[usize], parallel: bool, ov: &Overrides) -> CliResult<()> {
    let (cfg, rd) = ov.resolve()?;
    if modes.is_empty() {
        return Err(CliError::input("no variants to run"));
    }
    let (dataset, manifest) = rd.dataset()?;
    let seeds = if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    };
    let ns = if ns.is_empty() {
        vec![cfg.coordinators]
    } else {
        ns.to_vec()
    };
    if ns.contains(&0) && modes.iter().any(|&v| uses_coordinators(v)) {
        return Err(CliError::input("coordinator counts must be at least 1"));
    }
    let mut jobs: Vec<(Variant, Option<usize>, u64)> = Vec::new();
    for &v in modes {
        let counts: Vec<Option<usize>> = if uses_coordinators(v) {
            ns.iter().map(|&n| Some(n)).collect()
        } else {
            vec![None]
        };
        for n in counts {
            for &s in &seeds {
                jobs.push((v, n, s));
            }
        }
    }
    let total = jobs.len();
    let run_one = |&(v, n, seed): &(Variant, Option<usize>, u64)| {
        let c = RunConfig {
            seed,
            coordinators: n.unwrap_or(cfg.coordinators),
            ..cfg.clone()
        };
        let r = run_experiment(&dataset, &c, v);
        let n_label = n.map(|n| format!(" n={n}")).unwrap_or_default();
        match &r {
            Ok(res) => eprintln!(
                "{}{n_label} seed {seed}: recall@{} {:.4}",
                v.name(),
                cfg.k,
                res.test.recall
            ),
            Err(e) => eprintln!("{}{n_label} seed {seed}: failed: {e}", v.name()),
        }
        r
    };
    let results: Vec<hago::Result<RunResult>> = if parallel {
        jobs.par_iter().map(run_one).collect()
    } else {
        jobs.iter().map(run_one).collect()
    };

    let mut runs = Vec::with_capacity(total);
    let mut groups: BTreeMap<usize, (Variant, Option<usize>, Vec<(Variant, hago::Result<RunResult>)>)> =
        BTreeMap::new();
    let mut order: Vec<(Variant, Option<usize>)> = Vec::new();
    let mut first_error: Option<CliError> = None;
    for (&(v, n, seed), r) in jobs.iter().zip(results) {
        let row = match &r {
            Ok(res) => RunRow {
                variant: v.name().into(),
                n,
                seed,
                recall: Some(res.test.recall),
                hr: Some(res.test.hr),
                ndcg: Some(res.test.ndcg),
                mrr: Some(res.test.mrr),
                random_recall: Some(res.random_recall),
                error: None,
            },
            Err(e) => RunRow {
                variant: v.name().into(),
                n,
                seed,
                recall: None,
                hr: None,
                ndcg: None,
                mrr: None,
                random_recall: None,
                error: Some(e.to_string()),
            },
        };
        runs.push(row);
        let key = match order.iter().position(|k| *k == (v, n)) {
            Some(k) => k,
            None => {
                order.push((v, n));
                order.len() - 1
            }
        };
        if let Err(e) = &r {
            if first_error.is_none() {
                first_error = Some(CliError::new(exit_code(e), e.to_string()));
            }
        }
        groups.entry(key).or_insert_with(|| (v, n, Vec::new())).2.push((v, r));
    }
    let table: Vec<TableRow> = groups
        .into_values()
        .map(|(_, n, rs)| TableRow {
            n,
            row: summarize(&rs).remove(0),
        })
        .collect();

    rd.ensure(&rd.reports())?;
    write_json(
        &rd.reports().join("ablation.json"),
        &json!({
            "dataset_hash": manifest.dataset_hash,
            "k": cfg.k,
            "seeds": seeds,
            "rows": table,
            "runs": runs,
        }),
    )?;
    let mut csv = String::from(
        "variant,n,runs,failed,recall_mean,recall_std,hr_mean,hr_std,ndcg_mean,ndcg_std,mrr_mean,mrr_std\n",
    );
    let mut pretty = format!(
        "{:<10} {:>3} {:>5}  {:<17} {:<17} {:<17} {:<17}\n",
        "variant",
        "n",
        "runs",
        format!("recall@{}", cfg.k),
        format!("hr@{}", cfg.k),
        format!("ndcg@{}", cfg.k),
        "mrr"
    );
    for t in &table {
        let r = &t.row;
        let ok = r.runs - r.failed;
        let n = t.n.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        let cell = |m: &hago::pipeline::MeanStd| {
            if ok == 0 {
                "failed,failed".to_string()
            } else {
                format!("{},{}", m.mean, m.std)
            }
        };
        let _ = writeln!(
            csv,
            "{},{n},{},{},{},{},{},{}",
            r.variant,
            r.runs,
            r.failed,
            cell(&r.recall),
            cell(&r.hr),
            cell(&r.ndcg),
            cell(&r.mrr)
        );
        let _ = writeln!(
            pretty,
            "{:<10} {:>3} {:>5}  {:<17} {:<17} {:<17} {:<17}",
            r.variant,
            n,
            format!("{}/{}", ok, r.runs),
            fmt_cell(&r.recall, ok),
            fmt_cell(&r.hr, ok),
            fmt_cell(&r.ndcg, ok),
            fmt_cell(&r.mrr, ok)
        );
    }
    write_text(&rd.reports().join("ablation.csv"), &csv)?;
    print!("{pretty}");
    match first_error {
        Some(e) => {
            let failed = runs.iter().filter(|r| r.error.is_some()).count();
            Err(CliError::new(
                e.code,
                format!("{failed} of {total} runs failed; first: {}", e.message),
            ))
        }
        None => Ok(()),
    }
}

pub fn synth(params: &SynthParams, out: &Path) -> CliResult<()> {
    let data = generate(params)?;
    let files = data.write_tsv(out)?;
    write_json(&out.join("synth.json"), params)?;
    for (d, f) in data.domains.iter().zip(&files) {
        println!("{:<10} {:>8} interactions -> {}", d.name, d.pairs.len(), f.display());
    }
    let mut cmd = String::from("hago ingest");
    for (d, f) in data.domains.iter().zip(&files) {
        let _ = write!(cmd, " --domain {} --input {}", d.name, f.display());
    }
    println!("next: {cmd} --target {} --out <run-dir>", hago::synth::TARGET_DOMAIN);
    Ok(())
}
