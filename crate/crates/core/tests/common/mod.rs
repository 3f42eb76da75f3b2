#![allow(dead_code)]

use hago::config::RunConfig;
use hago::dataset::{build_dataset, DomainGraph, EntityRegistry, MultiDomainDataset};
use hago::store::EmbeddingStore;
use hago::synth::SynthParams;

/// Two small domains over four users: 10 nodes, 14 with one coordinator
/// per type per domain.
pub fn tiny_dataset() -> MultiDomainDataset {
    let mut reg = EntityRegistry::new();
    let s = reg.domain("s");
    let t = reg.domain("t");
    let mut edges = |dom: u16, pairs: &[(&str, &str)]| -> Vec<(u32, u32)> {
        pairs
            .iter()
            .map(|(u, i)| (reg.register_user(u), reg.register_item(dom, i)))
            .collect()
    };
    let se = edges(
        s,
        &[
            ("u0", "s0"),
            ("u0", "s1"),
            ("u1", "s1"),
            ("u2", "s0"),
            ("u2", "s2"),
            ("u1", "s2"),
        ],
    );
    let te = edges(
        t,
        &[
            ("u0", "t0"),
            ("u1", "t0"),
            ("u1", "t1"),
            ("u3", "t1"),
            ("u3", "t2"),
            ("u0", "t2"),
        ],
    );
    let src = DomainGraph::from_edges(s, "s", se);
    let tgt = DomainGraph::from_edges(t, "t", te);
    build_dataset(vec![src], tgt, reg).unwrap()
}

/// Synthetic fixture used by the directional ablation.
pub fn fixture_params(seed: u64) -> SynthParams {
    SynthParams {
        users: 300,
        items: 200,
        sources: 2,
        source_density: 0.1,
        target_density: 0.02,
        seed,
        ..SynthParams::default()
    }
}

pub fn fixture_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.pretrain.epochs = 50;
    cfg.pretrain.batch_size = 256;
    cfg.transfer.epochs = 15;
    cfg
}

/// `|a - b| / max(|a|, |b|)`, 0 when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn tables_bits(store: &EmbeddingStore<f32>) -> Vec<u32> {
    hago::store::Table::ALL
        .iter()
        .flat_map(|&t| {
            store
                .table(t)
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}
