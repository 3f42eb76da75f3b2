//! Graph coordinators and the unified multi-domain graph.
//!
//! Every domain gets `n` user coordinators and `n` item coordinators. How
//! they attach to the domain graphs depends on the [`CoordinatorMode`]:
//!
//! * `None`: no coordinators, each domain is its own connected component
//!   with its own copy of every user.
//! * `HomoGo`: all `2n` coordinators connect with weight 1 to every user and
//!   item of their domain and to every coordinator of every other domain.
//! * `HeterGo`: user coordinators connect to the domain's users, item
//!   coordinators to its items, all with weight 1; coordinators of opposite
//!   type are fully connected across and within domains.
//! * `Hago`: as `HeterGo`, but coordinator–node weights are the clipped
//!   cosine similarity of their embeddings and are recomputed every step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DomainGraph, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat, Real};
use crate::store::{EmbeddingStore, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinatorMode {
    None,
    #[serde(rename = "homogo")]
    HomoGo,
    #[serde(rename = "hetergo")]
    HeterGo,
    Hago,
}

impl CoordinatorMode {
    pub fn name(self) -> &'static str {
        match self {
            CoordinatorMode::None => "none",
            CoordinatorMode::HomoGo => "homogo",
            CoordinatorMode::HeterGo => "hetergo",
            CoordinatorMode::Hago => "hago",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "wo_go" | "w/o_go" => Some(CoordinatorMode::None),
            "homogo" => Some(CoordinatorMode::HomoGo),
            "hetergo" => Some(CoordinatorMode::HeterGo),
            "hago" => Some(CoordinatorMode::Hago),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCoordinators {
    pub domain_id: u16,
    /// Rows of the coordinator table.
    pub user: Vec<u32>,
    pub item: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinatorSet {
    pub per_type: usize,
    pub domains: Vec<DomainCoordinators>,
}

impl CoordinatorSet {
    pub fn len(&self) -> usize {
        self.domains.len() * 2 * self.per_type
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn for_domain(&self, domain_id: u16) -> Option<&DomainCoordinators> {
        self.domains.iter().find(|d| d.domain_id == domain_id)
    }
}

/// Allocate `n` user and `n` item coordinators per domain, domains in
/// dataset order (sources, then target).
pub fn create_coordinators(dataset: &MultiDomainDataset, n: usize) -> Result<CoordinatorSet> {
    if n == 0 {
        return Err(Error::Config(
            "coordinator count must be at least 1 (use mode none for no coordinators)".into(),
        ));
    }
    let domains = dataset
        .domains()
        .enumerate()
        .map(|(k, g)| {
            let base = (k * 2 * n) as u32;
            DomainCoordinators {
                domain_id: g.domain_id,
                user: (base..base + n as u32).collect(),
                item: (base + n as u32..base + 2 * n as u32).collect(),
            }
        })
        .collect();
    Ok(CoordinatorSet { per_type: n, domains })
}

/// Clipped cosine similarity: the cosine when the inner product is
/// positive, otherwise 0. Rounding above 1 is clamped.
pub fn adaptive_weight<F: Real>(node: &[F], coordinator: &[F]) -> Result<F> {
    let d = dot(node, coordinator);
    let nn = norm(node);
    let nc = norm(coordinator);
    if nn.is_zero() || nc.is_zero() {
        return Err(Error::Numeric("zero-norm embedding in adaptive weight".into()));
    }
    if d > F::zero() {
        Ok((d / (nn * nc)).min(F::one()))
    } else {
        Ok(F::zero())
    }
}

/// Binary coordinator adjacency: zero user–user and item–item blocks and
/// all-ones blocks between the two types. Users come first.
pub fn coordinator_adjacency(n_user: usize, n_item: usize) -> Vec<Vec<u8>> {
    let n = n_user + n_item;
    (0..n)
        .map(|r| (0..n).map(|c| u8::from((r < n_user) != (c < n_user))).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    User,
    Item,
    UserCoordinator,
    ItemCoordinator,
}

impl NodeKind {
    pub fn is_coordinator(self) -> bool {
        matches!(self, NodeKind::UserCoordinator | NodeKind::ItemCoordinator)
    }

    /// Side of the bipartition. A coordinator sits opposite the nodes it
    /// serves: user coordinators join users and item coordinators, so they
    /// share the item side.
    pub fn user_side(self) -> bool {
        matches!(self, NodeKind::User | NodeKind::ItemCoordinator)
    }
}

/// Parameter row feeding a graph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRef {
    User(u32),
    Item(u32),
    Coordinator(u32),
}

impl NodeRef {
    pub fn table(self) -> (Table, usize) {
        match self {
            NodeRef::User(r) => (Table::User, r as usize),
            NodeRef::Item(r) => (Table::Item, r as usize),
            NodeRef::Coordinator(r) => (Table::Coordinator, r as usize),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeClass {
    Interaction { domain: u16 },
    CoordinatorNode,
    CoordinatorCoordinator,
}

/// An undirected edge. For adaptive edges `a` is the coordinator node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphEdge {
    pub a: u32,
    pub b: u32,
    pub class: EdgeClass,
    pub adaptive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedGraph {
    pub mode: CoordinatorMode,
    pub per_type: usize,
    pub nodes: Vec<NodeRef>,
    pub kinds: Vec<NodeKind>,
    pub edges: Vec<GraphEdge>,
    /// Current weight of every edge. Adaptive edges hold their last
    /// refreshed value; a zero weight means the edge is absent.
    pub weights: Vec<f64>,
    /// Edge ids whose weight is recomputed from embeddings.
    pub adaptive_slots: Vec<u32>,
    /// Directed CSR over all edges (both directions of each undirected edge).
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
    pub entry_edge: Vec<u32>,
    /// CSR entry positions of `(a, b)` and `(b, a)` for each edge.
    pub edge_entries: Vec<[u32; 2]>,
}

struct Builder {
    nodes: Vec<NodeRef>,
    kinds: Vec<NodeKind>,
    edges: Vec<GraphEdge>,
}

impl Builder {
    fn node(&mut self, r: NodeRef, k: NodeKind) -> u32 {
        self.nodes.push(r);
        self.kinds.push(k);
        (self.nodes.len() - 1) as u32
    }

    fn edge(&mut self, a: u32, b: u32, class: EdgeClass, adaptive: bool) {
        self.edges.push(GraphEdge { a, b, class, adaptive });
    }

    fn finish(self, mode: CoordinatorMode, per_type: usize) -> UnifiedGraph {
        let n = self.nodes.len();
        let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (e, edge) in self.edges.iter().enumerate() {
            rows[edge.a as usize].push((edge.b, e as u32));
            rows[edge.b as usize].push((edge.a, e as u32));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(self.edges.len() * 2);
        let mut entry_edge = Vec::with_capacity(self.edges.len() * 2);
        let mut edge_entries = vec![[0u32; 2]; self.edges.len()];
        offsets.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            for (c, e) in row {
                let pos = cols.len() as u32;
                let edge = &self.edges[e as usize];
                let side = usize::from(edge.a as usize != r);
                edge_entries[e as usize][side] = pos;
                cols.push(c);
                entry_edge.push(e);
            }
            offsets.push(cols.len());
        }
        let adaptive_slots = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.adaptive)
            .map(|(i, _)| i as u32)
            .collect();
        let weights = self.edges.iter().map(|_| 1.0).collect();
        UnifiedGraph {
            mode,
            per_type,
            nodes: self.nodes,
            kinds: self.kinds,
            edges: self.edges,
            weights,
            adaptive_slots,
            offsets,
            cols,
            entry_edge,
            edge_entries,
        }
    }
}

impl UnifiedGraph {
    /// A single domain as a stand-alone graph: its users, then its items.
    pub fn domain_only(domain: &DomainGraph) -> UnifiedGraph {
        let mut b = Builder {
            nodes: Vec::new(),
            kinds: Vec::new(),
            edges: Vec::new(),
        };
        add_domain_nodes(&mut b, domain);
        let n_users = domain.users.len();
        for &(u, i) in &domain.edges {
            let lu = domain.local_user(u).expect("user present") as u32;
            let li = (n_users + domain.local_item(i).expect("item present")) as u32;
            b.edge(
                lu,
                li,
                EdgeClass::Interaction {
                    domain: domain.domain_id,
                },
                false,
            );
        }
        b.finish(CoordinatorMode::None, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn coordinator_count(&self) -> usize {
        self.kinds.iter().filter(|k| k.is_coordinator()).count()
    }

    /// Undirected edges with positive weight, as `(min, max)` node pairs.
    pub fn positive_edges(&self) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = self
            .edges
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(e, _)| (e.a.min(e.b), e.a.max(e.b)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn positive_edge_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn interaction_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| matches!(e.class, EdgeClass::Interaction { .. }))
            .count()
    }

    /// Position of `r` among the graph nodes.
    pub fn node_of(&self, r: NodeRef) -> Option<usize> {
        self.nodes.iter().position(|&n| n == r)
    }

    /// Layer-0 node features gathered from the store.
    pub fn gather_features<F: Real>(&self, store: &EmbeddingStore<F>) -> Mat<F> {
        let mut x = Mat::zeros(self.nodes.len(), store.dim());
        for (i, r) in self.nodes.iter().enumerate() {
            let (t, row) = r.table();
            x.row_mut(i).copy_from_slice(store.table(t).row(row));
        }
        x
    }

    /// Edge weights implied by features `x`: 1 for fixed edges, the
    /// adaptive weight for adaptive slots.
    pub fn weights_from_features<F: Real>(&self, x: &Mat<F>) -> Result<Vec<F>> {
        let mut w = vec![F::one(); self.edges.len()];
        for &slot in &self.adaptive_slots {
            let e = &self.edges[slot as usize];
            w[slot as usize] = adaptive_weight(x.row(e.b as usize), x.row(e.a as usize))?;
        }
        Ok(w)
    }

    /// Check the 2-coloring `{users, item coordinators}` vs
    /// `{items, user coordinators}` against every positive-weight edge.
    pub fn is_properly_two_colored(&self) -> bool {
        self.edges
            .iter()
            .zip(&self.weights)
            .all(|(e, &w)| w <= 0.0 || self.kinds[e.a as usize].user_side() != self.kinds[e.b as usize].user_side())
    }
}

fn add_domain_nodes(b: &mut Builder, domain: &DomainGraph) {
    for &u in &domain.users {
        b.node(NodeRef::User(u), NodeKind::User);
    }
    for &i in &domain.items {
        b.node(NodeRef::Item(i), NodeKind::Item);
    }
}

/// Assemble the unified graph for `mode`.
///
/// In all coordinator modes, node order is all global users, all global
/// items, then coordinators in table order. Mode `None` yields the
/// disjoint union of the domain graphs, each with its own user copies.
pub fn assemble_unified<F: Real>(
    dataset: &MultiDomainDataset,
    coords: Option<&CoordinatorSet>,
    mode: CoordinatorMode,
    embeddings: Option<&EmbeddingStore<F>>,
) -> Result<UnifiedGraph> {
    let mut b = Builder {
        nodes: Vec::new(),
        kinds: Vec::new(),
        edges: Vec::new(),
    };
    if mode == CoordinatorMode::None {
        for g in dataset.domains() {
            let base = b.nodes.len() as u32;
            add_domain_nodes(&mut b, g);
            let n_users = g.users.len();
            for &(u, i) in &g.edges {
                let lu = base + g.local_user(u).expect("user present") as u32;
                let li = base + (n_users + g.local_item(i).expect("item present")) as u32;
                b.edge(lu, li, EdgeClass::Interaction { domain: g.domain_id }, false);
            }
        }
        return Ok(b.finish(mode, 0));
    }

    let coords = coords.ok_or_else(|| Error::Config(format!("mode {} requires a coordinator set", mode.name())))?;
    if mode == CoordinatorMode::Hago && embeddings.is_none() {
        return Err(Error::Config("mode hago requires embeddings".into()));
    }
    let n_users = dataset.user_count() as u32;
    let n_items = dataset.item_count() as u32;
    for u in 0..n_users {
        b.node(NodeRef::User(u), NodeKind::User);
    }
    for i in 0..n_items {
        b.node(NodeRef::Item(i), NodeKind::Item);
    }
    let coord_base = n_users + n_items;
    let n_coords = coords.len() as u32;
    let mut coord_kind = vec![NodeKind::UserCoordinator; n_coords as usize];
    for dc in &coords.domains {
        for &c in &dc.item {
            coord_kind[c as usize] = NodeKind::ItemCoordinator;
        }
    }
    for c in 0..n_coords {
        b.node(NodeRef::Coordinator(c), coord_kind[c as usize]);
    }
    let user_node = |u: u32| u;
    let item_node = |i: u32| n_users + i;
    let coord_node = |c: u32| coord_base + c;
    let adaptive = mode == CoordinatorMode::Hago;

    for g in dataset.domains() {
        for &(u, i) in &g.edges {
            b.edge(
                user_node(u),
                item_node(i),
                EdgeClass::Interaction { domain: g.domain_id },
                false,
            );
        }
        let dc = coords
            .for_domain(g.domain_id)
            .ok_or_else(|| Error::Config(format!("no coordinators allocated for domain `{}`", g.label)))?;
        match mode {
            CoordinatorMode::HomoGo => {
                for &c in dc.user.iter().chain(&dc.item) {
                    for &u in &g.users {
                        b.edge(coord_node(c), user_node(u), EdgeClass::CoordinatorNode, false);
                    }
                    for &i in &g.items {
                        b.edge(coord_node(c), item_node(i), EdgeClass::CoordinatorNode, false);
                    }
                }
            }
            CoordinatorMode::HeterGo | CoordinatorMode::Hago => {
                for &c in &dc.user {
                    for &u in &g.users {
                        b.edge(coord_node(c), user_node(u), EdgeClass::CoordinatorNode, adaptive);
                    }
                }
                for &c in &dc.item {
                    for &i in &g.items {
                        b.edge(coord_node(c), item_node(i), EdgeClass::CoordinatorNode, adaptive);
                    }
                }
            }
            CoordinatorMode::None => unreachable!(),
        }
    }

    match mode {
        CoordinatorMode::HomoGo => {
            for (k, dk) in coords.domains.iter().enumerate() {
                for dl in &coords.domains[k + 1..] {
                    for &a in dk.user.iter().chain(&dk.item) {
                        for &c in dl.user.iter().chain(&dl.item) {
                            b.edge(coord_node(a), coord_node(c), EdgeClass::CoordinatorCoordinator, false);
                        }
                    }
                }
            }
        }
        _ => {
            let users: Vec<u32> = coords.domains.iter().flat_map(|d| d.user.iter().copied()).collect();
            let items: Vec<u32> = coords.domains.iter().flat_map(|d| d.item.iter().copied()).collect();
            for &uc in &users {
                for &ic in &items {
                    b.edge(coord_node(uc), coord_node(ic), EdgeClass::CoordinatorCoordinator, false);
                }
            }
        }
    }

    let mut graph = b.finish(mode, coords.per_type);
    if let Some(store) = embeddings.filter(|_| adaptive) {
        refresh_adaptive_weights(&mut graph, store)?;
    }
    Ok(graph)
}

/// Recompute every adaptive slot from the current layer-0 embeddings.
/// Returns the number of adaptive edges with positive weight.
pub fn refresh_adaptive_weights<F: Real>(graph: &mut UnifiedGraph, store: &EmbeddingStore<F>) -> Result<usize> {
    let x = graph.gather_features(store);
    refresh_from_features(graph, &x)
}

pub fn refresh_from_features<F: Real>(graph: &mut UnifiedGraph, x: &Mat<F>) -> Result<usize> {
    let w = graph.weights_from_features(x)?;
    let mut positive = 0;
    for &slot in &graph.adaptive_slots {
        let v = w[slot as usize].as_f64();
        graph.weights[slot as usize] = v;
        positive += usize::from(v > 0.0);
    }
    Ok(positive)
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct GraphDumpHeader {
    pub mode: CoordinatorMode,
    pub n: usize,
    pub nodes: usize,
    pub users: usize,
    pub items: usize,
    pub coordinators: usize,
    pub nnz: usize,
}

/// Write `<stem>.json` (header) and `<stem>.bin` (u32 offsets, u32
/// indices, f32 weights; positive-weight entries only, little-endian).
pub fn write_graph_dump(graph: &UnifiedGraph, dir: &Path, stem: &str) -> Result<GraphDumpHeader> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offsets: Vec<u32> = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for r in 0..graph.node_count() {
        for k in graph.offsets[r]..graph.offsets[r + 1] {
            let w = graph.weights[graph.entry_edge[k] as usize];
            if w > 0.0 {
                indices.push(graph.cols[k]);
                values.push(w as f32);
            }
        }
        offsets.push(indices.len() as u32);
    }
    let mut bytes = Vec::with_capacity(4 * (offsets.len() + 2 * indices.len()));
    for v in &offsets {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in &indices {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let header = GraphDumpHeader {
        mode: graph.mode,
        n: graph.per_type,
        nodes: graph.node_count(),
        users: graph.kinds.iter().filter(|k| **k == NodeKind::User).count(),
        items: graph.kinds.iter().filter(|k| **k == NodeKind::Item).count(),
        coordinators: graph.coordinator_count(),
        nnz: indices.len(),
    };
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&json, e))?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, EntityRegistry};
    use crate::rng::substream;
    use crate::store::{init_embeddings, TableCounts};

    fn two_domains() -> MultiDomainDataset {
        let mut reg = EntityRegistry::new();
        let a = reg.domain("a");
        let b = reg.domain("b");
        let mut ea = Vec::new();
        let mut eb = Vec::new();
        for k in 0..5 {
            let u = reg.register_user(&format!("u{k}"));
            let i = reg.register_item(a, &format!("a{}", k % 3));
            ea.push((u, i));
        }
        for k in 0..5 {
            let u = reg.register_user(&format!("v{k}"));
            let i = reg.register_item(b, &format!("b{}", k % 4));
            eb.push((u, i));
        }
        let ga = DomainGraph::from_edges(a, "a", ea);
        let gb = DomainGraph::from_edges(b, "b", eb);
        build_dataset(vec![ga], gb, reg).unwrap()
    }

    #[test]
    fn coordinator_counts() {
        let ds = two_domains();
        let c = create_coordinators(&ds, 1).unwrap();
        assert_eq!(c.len(), 4);
        assert!(matches!(create_coordinators(&ds, 0), Err(Error::Config(_))));
    }

    #[test]
    fn adaptive_weight_examples() {
        assert!((adaptive_weight(&[0.3f64, -0.4], &[0.3, -0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(adaptive_weight(&[1.0f64, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        let w = adaptive_weight(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap();
        assert!((w - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            adaptive_weight(&[0.0f64, 0.0], &[1.0, 1.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn coordinator_adjacency_blocks() {
        assert_eq!(coordinator_adjacency(1, 1), vec![vec![0, 1], vec![1, 0]]);
        let m = coordinator_adjacency(2, 3);
        assert_eq!(m.len(), 5);
        let ones: usize = m.iter().flatten().map(|&v| v as usize).sum();
        assert_eq!(ones, 2 * 2 * 3);
        assert_eq!(m[0][2], 1);
        assert_eq!(m[0][1], 0);
        assert_eq!(m[3][4], 0);
    }

    #[test]
    fn mode_none_is_disjoint_union() {
        let ds = two_domains();
        let g = assemble_unified::<f32>(&ds, None, CoordinatorMode::None, None).unwrap();
        assert_eq!(g.edges.len(), 10);
        assert_eq!(g.coordinator_count(), 0);
        assert!(g.is_properly_two_colored());
    }

    #[test]
    fn hetergo_fan_out() {
        let mut reg = EntityRegistry::new();
        let d = reg.domain("t");
        let mut e = Vec::new();
        for u in 0..3 {
            let uu = reg.register_user(&format!("u{u}"));
            for i in 0..4 {
                let ii = reg.register_item(d, &format!("i{i}"));
                if (u + i) % 2 == 0 || i == 3 {
                    e.push((uu, ii));
                }
            }
        }
        let g = DomainGraph::from_edges(d, "t", e);
        let ne = g.edge_count();
        let ds = build_dataset(vec![], g, reg).unwrap();
        let c = create_coordinators(&ds, 1).unwrap();
        let u = assemble_unified::<f32>(&ds, Some(&c), CoordinatorMode::HeterGo, None).unwrap();
        let cn = u.edges.iter().filter(|e| e.class == EdgeClass::CoordinatorNode).count();
        assert_eq!(cn, 3 + 4);
        assert_eq!(u.edges.len(), ne + 7 + 1);
        assert!(u.is_properly_two_colored());
    }

    #[test]
    fn hago_requires_embeddings() {
        let ds = two_domains();
        let c = create_coordinators(&ds, 2).unwrap();
        assert!(matches!(
            assemble_unified::<f32>(&ds, Some(&c), CoordinatorMode::Hago, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hago_subset_of_hetergo_and_refresh_is_scale_invariant() {
        let ds = two_domains();
        let c = create_coordinators(&ds, 2).unwrap();
        let counts = TableCounts {
            users: ds.user_count(),
            items: ds.item_count(),
            coordinators: c.len(),
            prompts: 0,
        };
        let mut store: EmbeddingStore<f64> = init_embeddings(counts, 6, &mut substream(9, "init")).unwrap();
        let het = assemble_unified::<f64>(&ds, Some(&c), CoordinatorMode::HeterGo, None).unwrap();
        let mut hago = assemble_unified(&ds, Some(&c), CoordinatorMode::Hago, Some(&store)).unwrap();
        let he = het.positive_edges();
        assert!(hago.positive_edges().iter().all(|e| he.binary_search(e).is_ok()));
        assert!(hago.is_properly_two_colored());

        let before = hago.weights.clone();
        refresh_adaptive_weights(&mut hago, &store).unwrap();
        assert_eq!(before, hago.weights);

        store.table_mut(Table::Coordinator).scale(2.0);
        refresh_adaptive_weights(&mut hago, &store).unwrap();
        for (a, b) in before.iter().zip(&hago.weights) {
            assert!((a - b).abs() < 1e-12);
        }

        // flipping every coordinator zeroes previously positive slots
        store.table_mut(Table::Coordinator).scale(-1.0);
        refresh_adaptive_weights(&mut hago, &store).unwrap();
        for &s in &hago.adaptive_slots {
            if before[s as usize] > 0.0 {
                assert_eq!(hago.weights[s as usize], 0.0);
            }
        }
    }

    #[test]
    fn csr_entries_are_symmetric() {
        let ds = two_domains();
        let c = create_coordinators(&ds, 1).unwrap();
        let g = assemble_unified::<f32>(&ds, Some(&c), CoordinatorMode::HomoGo, None).unwrap();
        for (e, edge) in g.edges.iter().enumerate() {
            let [p, q] = g.edge_entries[e];
            assert_eq!(g.cols[p as usize], edge.b);
            assert_eq!(g.cols[q as usize], edge.a);
            assert_eq!(g.entry_edge[p as usize] as usize, e);
        }
    }

    #[test]
    fn graph_dump_layout() {
        let ds = two_domains();
        let g = assemble_unified::<f32>(&ds, None, CoordinatorMode::None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let h = write_graph_dump(&g, dir.path(), "graph").unwrap();
        assert_eq!(h.nnz, 20);
        let bytes = std::fs::read(dir.path().join("graph.bin")).unwrap();
        assert_eq!(bytes.len(), 4 * (g.node_count() + 1) + 8 * 20);
    }
}
