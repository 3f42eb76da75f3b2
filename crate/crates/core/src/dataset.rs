//! Interaction ingestion, ID registries, domain graphs and target splits.
//!
//! Users share one namespace across domains (the same raw ID is the same
//! node everywhere). Items are namespaced per domain and receive disjoint
//! global index ranges.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn separator(self) -> char {
        match self {
            InputFormat::Tsv => '\t',
            InputFormat::Csv => ',',
        }
    }

    /// Guess from the file extension; anything other than `.csv` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Tsv,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct DomainItems {
    label: String,
    index: HashMap<String, u32>,
}

/// Raw ID to global index maps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityRegistry {
    user_index: HashMap<String, u32>,
    user_ids: Vec<String>,
    domains: Vec<DomainItems>,
    /// (domain id, raw id) per global item index.
    item_ids: Vec<(u16, String)>,
}

impl EntityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Domain id for `label`, allocating one on first use.
    pub fn domain(&mut self, label: &str) -> u16 {
        if let Some(pos) = self.domains.iter().position(|d| d.label == label) {
            return pos as u16;
        }
        self.domains.push(DomainItems {
            label: label.to_string(),
            index: HashMap::new(),
        });
        (self.domains.len() - 1) as u16
    }

    pub fn domain_id(&self, label: &str) -> Option<u16> {
        self.domains.iter().position(|d| d.label == label).map(|p| p as u16)
    }

    pub fn domain_label(&self, domain: u16) -> Option<&str> {
        self.domains.get(domain as usize).map(|d| d.label.as_str())
    }

    pub fn register_user(&mut self, raw: &str) -> u32 {
        if let Some(&idx) = self.user_index.get(raw) {
            return idx;
        }
        let idx = self.user_ids.len() as u32;
        self.user_index.insert(raw.to_string(), idx);
        self.user_ids.push(raw.to_string());
        idx
    }

    pub fn register_item(&mut self, domain: u16, raw: &str) -> u32 {
        let next = self.item_ids.len() as u32;
        let items = &mut self.domains[domain as usize];
        if let Some(&idx) = items.index.get(raw) {
            return idx;
        }
        items.index.insert(raw.to_string(), next);
        self.item_ids.push((domain, raw.to_string()));
        next
    }

    pub fn user(&self, raw: &str) -> Option<u32> {
        self.user_index.get(raw).copied()
    }

    pub fn item(&self, domain: u16, raw: &str) -> Option<u32> {
        self.domains
            .get(domain as usize)
            .and_then(|d| d.index.get(raw).copied())
    }

    pub fn user_raw(&self, idx: u32) -> Option<&str> {
        self.user_ids.get(idx as usize).map(String::as_str)
    }

    pub fn item_raw(&self, idx: u32) -> Option<(u16, &str)> {
        self.item_ids.get(idx as usize).map(|(d, s)| (*d, s.as_str()))
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    /// Raw item IDs of one domain, in global index order.
    pub fn domain_items(&self, domain: u16) -> impl Iterator<Item = (u32, &str)> {
        self.item_ids
            .iter()
            .enumerate()
            .filter(move |(_, (d, _))| *d == domain)
            .map(|(i, (_, raw))| (i as u32, raw.as_str()))
    }
}

/// Local CSR adjacency of a bipartite domain graph.
///
/// Local node order is the domain's users followed by its items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalCsr {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<u32>,
}

/// One domain's deduplicated user–item interaction graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainGraph {
    pub domain_id: u16,
    pub label: String,
    /// Sorted global user indices.
    pub users: Vec<u32>,
    /// Sorted global item indices.
    pub items: Vec<u32>,
    /// Sorted, deduplicated `(user, item)` pairs in global indices.
    pub edges: Vec<(u32, u32)>,
    pub adjacency: LocalCsr,
}

impl DomainGraph {
    pub fn from_edges(domain_id: u16, label: &str, mut edges: Vec<(u32, u32)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut users: Vec<u32> = edges.iter().map(|e| e.0).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<u32> = edges.iter().map(|e| e.1).collect();
        items.sort_unstable();
        items.dedup();

        let n_users = users.len();
        let n = n_users + items.len();
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, i) in &edges {
            let lu = users.binary_search(&u).expect("user present");
            let li = n_users + items.binary_search(&i).expect("item present");
            buckets[lu].push(li as u32);
            buckets[li].push(lu as u32);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(edges.len() * 2);
        offsets.push(0);
        for mut b in buckets {
            b.sort_unstable();
            neighbors.extend(b);
            offsets.push(neighbors.len());
        }
        DomainGraph {
            domain_id,
            label: label.to_string(),
            users,
            items,
            edges,
            adjacency: LocalCsr { offsets, neighbors },
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn local_user(&self, user: u32) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    pub fn local_item(&self, item: u32) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }

    /// Items each local user interacted with, in ascending global order.
    pub fn user_items(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for &(u, i) in &self.edges {
            out[self.local_user(u).expect("user present")].push(i);
        }
        out
    }

    pub fn summary(&self) -> DomainSummary {
        let cells = self.users.len() as f64 * self.items.len() as f64;
        let sparsity = if cells > 0.0 {
            1.0 - self.edges.len() as f64 / cells
        } else {
            0.0
        };
        DomainSummary {
            name: self.label.clone(),
            users: self.users.len(),
            items: self.items.len(),
            interactions: self.edges.len(),
            sparsity: (sparsity * 1e4).round() / 1e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// `1 - interactions / (users * items)`, rounded to 4 decimals.
    pub sparsity: f64,
}

fn is_header(fields: &[&str]) -> bool {
    let a = fields[0].to_ascii_lowercase();
    let b = fields[1].to_ascii_lowercase();
    a.starts_with("user") && b.starts_with("item")
}

/// Parse interactions from a reader. `origin` is only used in diagnostics.
pub fn ingest_reader<R: Read>(
    reader: R,
    origin: &Path,
    format: InputFormat,
    domain_label: &str,
    registry: &mut EntityRegistry,
) -> Result<DomainGraph> {
    let sep = format.separator();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut seen_data = false;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(sep).map(str::trim).collect();
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message: format!("expected at least 2 fields (user, item), got `{trimmed}`"),
            });
        }
        if !seen_data && is_header(&fields) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        pairs.push((fields[0].to_string(), fields[1].to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDomain(domain_label.to_string()));
    }
    let domain = registry.domain(domain_label);
    let edges = pairs
        .iter()
        .map(|(u, i)| (registry.register_user(u), registry.register_item(domain, i)))
        .collect();
    Ok(DomainGraph::from_edges(domain, domain_label, edges))
}

/// Read one domain's interaction file.
pub fn ingest_interactions(
    path: &Path,
    format: InputFormat,
    domain_label: &str,
    registry: &mut EntityRegistry,
) -> Result<DomainGraph> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path, format, domain_label, registry)
}

/// Source domains plus one target domain over a shared registry.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    pub sources: Vec<DomainGraph>,
    pub target: DomainGraph,
    pub registry: EntityRegistry,
}

pub fn build_dataset(
    sources: Vec<DomainGraph>,
    target: DomainGraph,
    registry: EntityRegistry,
) -> Result<MultiDomainDataset> {
    let mut ids = vec![target.domain_id];
    for s in &sources {
        if s.domain_id == target.domain_id {
            return Err(Error::Config(format!(
                "target domain `{}` is also listed as a source",
                target.label
            )));
        }
        if ids.contains(&s.domain_id) {
            return Err(Error::Config(format!("domain `{}` listed twice", s.label)));
        }
        ids.push(s.domain_id);
    }
    for g in sources.iter().chain(std::iter::once(&target)) {
        if registry.domain_label(g.domain_id) != Some(g.label.as_str()) {
            return Err(Error::Config(format!(
                "domain `{}` was not built against this registry",
                g.label
            )));
        }
        let max_user = g.users.last().copied().unwrap_or(0) as usize;
        let max_item = g.items.last().copied().unwrap_or(0) as usize;
        if max_user >= registry.user_count().max(1) || max_item >= registry.item_count().max(1) {
            return Err(Error::Config(format!(
                "domain `{}` references indices outside the registry",
                g.label
            )));
        }
    }
    Ok(MultiDomainDataset {
        sources,
        target,
        registry,
    })
}

impl MultiDomainDataset {
    /// Sources in order, then the target.
    pub fn domains(&self) -> impl Iterator<Item = &DomainGraph> {
        self.sources.iter().chain(std::iter::once(&self.target))
    }

    pub fn domain_count(&self) -> usize {
        self.sources.len() + 1
    }

    pub fn domain_by_label(&self, label: &str) -> Option<&DomainGraph> {
        self.domains().find(|d| d.label == label)
    }

    pub fn user_count(&self) -> usize {
        self.registry.user_count()
    }

    pub fn item_count(&self) -> usize {
        self.registry.item_count()
    }
}

pub fn dataset_summary(dataset: &MultiDomainDataset) -> Vec<DomainSummary> {
    dataset.domains().map(DomainGraph::summary).collect()
}

/// Per-user train / validation / test items of the target domain.
///
/// Lists are indexed by the target's local user position and hold global
/// item indices in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSplit {
    pub seed: u64,
    pub users: Vec<u32>,
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

/// Seeded per-user random partition.
///
/// Users with fewer than 3 interactions keep everything in train. Otherwise
/// validation and test each get `max(1, floor(n * ratio))` items and the
/// remainder goes to train.
pub fn split_interactions(target: &DomainGraph, ratios: SplitRatios, seed: u64) -> Result<InteractionSplit> {
    let SplitRatios { train, valid, test } = ratios;
    if !(train > 0.0 && valid > 0.0 && test > 0.0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    if ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios sum to {}, expected 1",
            train + valid + test
        )));
    }
    let mut rng = substream(seed, "split");
    let per_user = target.user_items();
    let mut out = InteractionSplit {
        seed,
        users: target.users.clone(),
        train: Vec::with_capacity(per_user.len()),
        valid: Vec::with_capacity(per_user.len()),
        test: Vec::with_capacity(per_user.len()),
    };
    for mut items in per_user {
        let n = items.len();
        if n < 3 {
            out.train.push(items);
            out.valid.push(Vec::new());
            out.test.push(Vec::new());
            continue;
        }
        items.shuffle(&mut rng);
        let mut n_valid = ((n as f64 * valid).floor() as usize).max(1);
        let n_test = ((n as f64 * test).floor() as usize).max(1);
        while n_valid + n_test >= n && n_valid > 1 {
            n_valid -= 1;
        }
        let mut v = items[..n_valid].to_vec();
        let mut t = items[n_valid..n_valid + n_test].to_vec();
        let mut tr = items[n_valid + n_test..].to_vec();
        v.sort_unstable();
        t.sort_unstable();
        tr.sort_unstable();
        out.train.push(tr);
        out.valid.push(v);
        out.test.push(t);
    }
    Ok(out)
}

impl InteractionSplit {
    pub fn train_edges(&self) -> Vec<(u32, u32)> {
        self.users
            .iter()
            .zip(&self.train)
            .flat_map(|(&u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    pub fn phase_items(&self, phase: Phase) -> &[Vec<u32>] {
        match phase {
            Phase::Valid => &self.valid,
            Phase::Test => &self.test,
        }
    }

    /// Target-only graph restricted to training interactions. Users and
    /// items keep the full target node sets so indices stay aligned.
    pub fn train_graph(&self, target: &DomainGraph) -> DomainGraph {
        let mut g = DomainGraph::from_edges(target.domain_id, &target.label, self.train_edges());
        g.users = target.users.clone();
        g.items = target.items.clone();
        let rebuilt = rebuild_adjacency(&g.users, &g.items, &g.edges);
        g.adjacency = rebuilt;
        g
    }
}

fn rebuild_adjacency(users: &[u32], items: &[u32], edges: &[(u32, u32)]) -> LocalCsr {
    let n_users = users.len();
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n_users + items.len()];
    for &(u, i) in edges {
        let lu = users.binary_search(&u).expect("user present");
        let li = n_users + items.binary_search(&i).expect("item present");
        buckets[lu].push(li as u32);
        buckets[li].push(lu as u32);
    }
    let mut offsets = vec![0];
    let mut neighbors = Vec::new();
    for mut b in buckets {
        b.sort_unstable();
        neighbors.extend(b);
        offsets.push(neighbors.len());
    }
    LocalCsr { offsets, neighbors }
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json, ids.json and edges/<domain>.bin

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IDS_FILE: &str = "ids.json";
const EDGES_DIR: &str = "edges";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDomain {
    #[serde(flatten)]
    pub summary: DomainSummary,
    pub role: DomainRole,
    pub edges_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset_hash: String,
    pub seed: u64,
    pub target: String,
    pub domains: Vec<ManifestDomain>,
}

#[derive(Serialize, Deserialize)]
struct IdsFile {
    users: Vec<String>,
    domains: Vec<String>,
    /// `[domain id, raw id]` per global item index.
    items: Vec<(u16, String)>,
}

fn edges_bytes(edges: &[(u32, u32)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(edges.len() * 8);
    for &(u, i) in edges {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&i.to_le_bytes());
    }
    out
}

fn parse_edges(bytes: &[u8], path: &Path) -> Result<Vec<(u32, u32)>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Artifact(format!(
            "{}: edge list length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the dataset directory and return its manifest.
pub fn write_dataset_dir(dataset: &MultiDomainDataset, seed: u64, dir: &Path) -> Result<Manifest> {
    let edge_dir = dir.join(EDGES_DIR);
    fs::create_dir_all(&edge_dir).map_err(|e| Error::io(&edge_dir, e))?;
    let reg = &dataset.registry;
    let ids = IdsFile {
        users: reg.user_ids.clone(),
        domains: reg.domains.iter().map(|d| d.label.clone()).collect(),
        items: reg.item_ids.clone(),
    };
    let ids_bytes = serde_json::to_vec(&ids)?;
    write_file(&dir.join(IDS_FILE), &ids_bytes)?;

    let mut hasher = Sha256::new();
    hasher.update(&ids_bytes);
    let mut domains = Vec::new();
    for g in dataset.domains() {
        let name = format!("{EDGES_DIR}/{}.bin", g.label);
        let bytes = edges_bytes(&g.edges);
        hasher.update(g.label.as_bytes());
        hasher.update(&bytes);
        write_file(&dir.join(&name), &bytes)?;
        domains.push(ManifestDomain {
            summary: g.summary(),
            role: if g.domain_id == dataset.target.domain_id {
                DomainRole::Target
            } else {
                DomainRole::Source
            },
            edges_file: name,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        dataset_hash: hex::encode(hasher.finalize()),
        seed,
        target: dataset.target.label.clone(),
        domains,
    };
    write_file(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Artifact(format!("missing {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_dataset_dir(dir: &Path) -> Result<(MultiDomainDataset, Manifest)> {
    let manifest: Manifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST_FILE))?)?;
    let ids: IdsFile = serde_json::from_slice(&read_file(&dir.join(IDS_FILE))?)?;
    let mut registry = EntityRegistry::new();
    for label in &ids.domains {
        registry.domain(label);
    }
    for u in &ids.users {
        registry.register_user(u);
    }
    for (d, raw) in &ids.items {
        registry.register_item(*d, raw);
    }
    let mut sources = Vec::new();
    let mut target = None;
    for d in &manifest.domains {
        let path: PathBuf = dir.join(&d.edges_file);
        let edges = parse_edges(&read_file(&path)?, &path)?;
        let id = registry
            .domain_id(&d.summary.name)
            .ok_or_else(|| Error::Artifact(format!("unknown domain `{}`", d.summary.name)))?;
        let g = DomainGraph::from_edges(id, &d.summary.name, edges);
        match d.role {
            DomainRole::Source => sources.push(g),
            DomainRole::Target => target = Some(g),
        }
    }
    let target = target.ok_or_else(|| Error::Artifact("manifest lists no target".into()))?;
    Ok((build_dataset(sources, target, registry)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(s: &str, label: &str, reg: &mut EntityRegistry) -> Result<DomainGraph> {
        ingest_reader(s.as_bytes(), Path::new("mem.tsv"), InputFormat::Tsv, label, reg)
    }

    #[test]
    fn singleton_file() {
        let mut reg = EntityRegistry::new();
        let g = ingest_str("u1\ti1\n", "book", &mut reg).unwrap();
        assert_eq!((g.users.len(), g.items.len(), g.edge_count()), (1, 1, 1));
    }

    #[test]
    fn duplicate_lines_collapse() {
        let mut reg = EntityRegistry::new();
        let g = ingest_str("u1\ti1\nu1\ti1\n", "book", &mut reg).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn comments_header_and_extra_fields() {
        let mut reg = EntityRegistry::new();
        let g = ingest_str(
            "user_id\titem_id\trating\n# note\nu1\ti1\t5\t1000\nu2\ti1\t3\t1001\n",
            "book",
            &mut reg,
        )
        .unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(reg.user_count(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut reg = EntityRegistry::new();
        let err = ingest_str("u1\ti1\nbroken\n", "book", &mut reg).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let mut reg = EntityRegistry::new();
        assert!(matches!(
            ingest_str("# only a comment\n", "book", &mut reg),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn csv_format() {
        let mut reg = EntityRegistry::new();
        let g = ingest_reader(
            "a,x\nb,y\n".as_bytes(),
            Path::new("m.csv"),
            InputFormat::Csv,
            "d",
            &mut reg,
        )
        .unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn users_shared_items_disjoint() {
        let mut reg = EntityRegistry::new();
        let a = ingest_str("u1\tx\nu2\ty\n", "a", &mut reg).unwrap();
        let b = ingest_str("u2\tx\nu3\ty\n", "b", &mut reg).unwrap();
        let shared: Vec<_> = a.users.iter().filter(|u| b.users.contains(u)).collect();
        assert_eq!(shared.len(), 1);
        assert!(a.items.iter().all(|i| !b.items.contains(i)));
        assert_eq!(reg.register_user("u2"), 1);
    }

    #[test]
    fn build_dataset_rejects_target_as_source() {
        let mut reg = EntityRegistry::new();
        let t = ingest_str("u1\ti1\n", "t", &mut reg).unwrap();
        assert!(matches!(build_dataset(vec![t.clone()], t, reg), Err(Error::Config(_))));
    }

    #[test]
    fn backbone_only_dataset() {
        let mut reg = EntityRegistry::new();
        let t = ingest_str("u1\ti1\n", "t", &mut reg).unwrap();
        let ds = build_dataset(vec![], t, reg).unwrap();
        assert_eq!(ds.domain_count(), 1);
    }

    #[test]
    fn sparsity_examples() {
        let g = DomainGraph::from_edges(0, "x", vec![(0, 0)]);
        assert_eq!(g.summary().sparsity, 0.0);
        let g = DomainGraph::from_edges(0, "x", vec![(0, 0), (1, 1), (0, 1)]);
        // 2 users, 2 items, 3 edges
        assert_eq!(g.summary().sparsity, 0.25);
        let g2 = DomainGraph {
            users: vec![0, 1],
            items: vec![0, 1],
            ..DomainGraph::from_edges(0, "x", vec![(0, 0)])
        };
        assert_eq!(g2.summary().sparsity, 0.75);
    }

    #[test]
    fn split_ratio_and_small_users() {
        let mut edges: Vec<(u32, u32)> = (0..10).map(|i| (0, i)).collect();
        edges.extend([(1, 0), (1, 1)]);
        let g = DomainGraph::from_edges(0, "t", edges);
        let s = split_interactions(&g, SplitRatios::default(), 3).unwrap();
        assert_eq!((s.train[0].len(), s.valid[0].len(), s.test[0].len()), (8, 1, 1));
        assert_eq!((s.train[1].len(), s.valid[1].len(), s.test[1].len()), (2, 0, 0));
        assert_eq!(s, split_interactions(&g, SplitRatios::default(), 3).unwrap());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let g = DomainGraph::from_edges(0, "t", vec![(0, 0)]);
        let r = SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.2,
        };
        assert!(matches!(split_interactions(&g, r, 0), Err(Error::Config(_))));
    }

    #[test]
    fn train_graph_keeps_node_sets() {
        let edges: Vec<(u32, u32)> = (0..10).map(|i| (0, i)).collect();
        let g = DomainGraph::from_edges(0, "t", edges);
        let s = split_interactions(&g, SplitRatios::default(), 1).unwrap();
        let tg = s.train_graph(&g);
        assert_eq!(tg.items, g.items);
        assert_eq!(tg.edge_count(), 8);
        assert_eq!(tg.adjacency.offsets.len(), 1 + 1 + 10);
    }

    #[test]
    fn dataset_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = EntityRegistry::new();
        let a = ingest_str("u1\tx\nu2\ty\n", "a", &mut reg).unwrap();
        let b = ingest_str("u2\tx\nu3\ty\nu3\tz\n", "b", &mut reg).unwrap();
        let ds = build_dataset(vec![a], b, reg).unwrap();
        let m = write_dataset_dir(&ds, 11, dir.path()).unwrap();
        let (back, m2) = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m, m2);
        assert_eq!(m.target, "b");
    }
}
