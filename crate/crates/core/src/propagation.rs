//! Weighted LightGCN-style propagation and its exact reverse pass.
//!
//! The operator is `D^{-1/2} W D^{-1/2}` with weighted degrees; with unit
//! weights this is the usual `1 / (sqrt|N_u| sqrt|N_i|)` normalization.
//! Layers are plain sparse products, combined with weights `alpha`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::UnifiedGraph;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Mat, Real};

/// Layer count and layer-combination weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub alpha: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            alpha: vec![0.0, 0.0, 1.0],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        check_alpha(&self.alpha, self.layers)
    }
}

fn check_alpha(alpha: &[f64], layers: usize) -> Result<()> {
    if alpha.len() != layers + 1 {
        return Err(Error::Config(format!(
            "alpha has {} entries, expected {}",
            alpha.len(),
            layers + 1
        )));
    }
    let s: f64 = alpha.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("alpha sums to {s}, expected 1")));
    }
    Ok(())
}

/// Normalized operator values over the graph's CSR pattern.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<'g, F> {
    pub graph: &'g UnifiedGraph,
    /// Effective undirected edge weights (0 for dropped or hard-pruned edges).
    pub weights: Vec<F>,
    /// `deg^{-1/2}`, 0 for isolated nodes.
    pub inv_sqrt_deg: Vec<F>,
    /// One value per directed CSR entry.
    pub values: Vec<F>,
}

/// Normalize with the graph's stored weights.
pub fn normalize_adjacency<F: Real>(graph: &UnifiedGraph) -> Result<NormalizedAdjacency<'_, F>> {
    let w = graph.weights.iter().map(|&v| F::of(v)).collect();
    normalize_with_weights(graph, w)
}

pub fn normalize_with_weights<F: Real>(graph: &UnifiedGraph, weights: Vec<F>) -> Result<NormalizedAdjacency<'_, F>> {
    if weights.len() != graph.edges.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} edges",
            weights.len(),
            graph.edges.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= F::zero())) {
        return Err(Error::Invariant(format!("edge weight {w} is negative or NaN")));
    }
    let n = graph.node_count();
    let inv_sqrt_deg: Vec<F> = (0..n)
        .into_par_iter()
        .map(|r| {
            let deg: F = (graph.offsets[r]..graph.offsets[r + 1])
                .map(|k| weights[graph.entry_edge[k] as usize])
                .sum();
            if deg > F::zero() {
                F::one() / deg.sqrt()
            } else {
                F::zero()
            }
        })
        .collect();
    let values = (0..n)
        .into_par_iter()
        .flat_map_iter(|r| {
            let s_r = inv_sqrt_deg[r];
            let w = &weights;
            let s = &inv_sqrt_deg;
            (graph.offsets[r]..graph.offsets[r + 1])
                .map(move |k| w[graph.entry_edge[k] as usize] * s_r * s[graph.cols[k] as usize])
        })
        .collect();
    Ok(NormalizedAdjacency {
        graph,
        weights,
        inv_sqrt_deg,
        values,
    })
}

impl<F: Real> NormalizedAdjacency<'_, F> {
    /// `out = A x`
    pub fn apply(&self, x: &Mat<F>) -> Result<Mat<F>> {
        let g = self.graph;
        if x.rows() != g.node_count() {
            return Err(Error::Shape(format!(
                "features have {} rows, graph has {} nodes",
                x.rows(),
                g.node_count()
            )));
        }
        let mut out = Mat::zeros(x.rows(), x.cols());
        out.par_rows_mut().enumerate().for_each(|(r, row)| {
            for k in g.offsets[r]..g.offsets[r + 1] {
                let v = self.values[k];
                if !v.is_zero() {
                    axpy(row, v, x.row(g.cols[k] as usize));
                }
            }
        });
        Ok(out)
    }

    /// Dense copy, for tests and diagnostics.
    pub fn to_dense(&self) -> Mat<F> {
        let g = self.graph;
        let n = g.node_count();
        let mut m = Mat::zeros(n, n);
        for r in 0..n {
            for k in g.offsets[r]..g.offsets[r + 1] {
                m.set(r, g.cols[k] as usize, self.values[k]);
            }
        }
        m
    }
}

/// Layer outputs `e^(0..=L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationTrace<F> {
    pub layers: Vec<Mat<F>>,
}

pub fn propagate<F: Real>(adj: &NormalizedAdjacency<'_, F>, x: &Mat<F>, layers: usize) -> Result<PropagationTrace<F>> {
    let mut out = Vec::with_capacity(layers + 1);
    out.push(x.clone());
    for l in 0..layers {
        let next = adj.apply(&out[l])?;
        out.push(next);
    }
    Ok(PropagationTrace { layers: out })
}

pub fn combine_layers<F: Real>(trace: &PropagationTrace<F>, alpha: &[f64]) -> Result<Mat<F>> {
    check_alpha(alpha, trace.layers.len() - 1)?;
    let first = &trace.layers[0];
    let mut out = Mat::zeros(first.rows(), first.cols());
    for (layer, &a) in trace.layers.iter().zip(alpha) {
        if a != 0.0 {
            out.add_scaled(layer, F::of(a))?;
        }
    }
    Ok(out)
}

#[inline]
pub fn score<F: Real>(user: &[F], item: &[F]) -> F {
    dot(user, item)
}

/// Augmentation applied to one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewSpec {
    /// Per-edge keep flags; `None` keeps every edge.
    pub keep: Option<Vec<bool>>,
    /// Per-dimension keep flags applied to user and item rows.
    pub col_mask: Option<Vec<bool>>,
}

impl ViewSpec {
    pub fn identity() -> Self {
        ViewSpec::default()
    }

    /// Layer-0 features with the column mask applied to non-coordinator rows.
    pub fn masked_features<F: Real>(&self, graph: &UnifiedGraph, x: &Mat<F>) -> Mat<F> {
        let mut out = x.clone();
        if let Some(mask) = &self.col_mask {
            for (r, kind) in graph.kinds.iter().enumerate() {
                if kind.is_coordinator() {
                    continue;
                }
                for (v, &keep) in out.row_mut(r).iter_mut().zip(mask) {
                    if !keep {
                        *v = F::zero();
                    }
                }
            }
        }
        out
    }
}

/// Everything the reverse pass needs from one forward pass.
pub struct ForwardPass<'g, F> {
    pub adjacency: NormalizedAdjacency<'g, F>,
    pub trace: PropagationTrace<F>,
    pub output: Mat<F>,
    alpha: Vec<f64>,
}

/// Differentiable forward pass from layer-0 node features `x`.
///
/// Adaptive edge weights are computed from the unmasked `x`; edge drops
/// and the column mask come from `view`.
pub fn forward<'g, F: Real>(
    graph: &'g UnifiedGraph,
    x: &Mat<F>,
    view: &ViewSpec,
    model: &ModelConfig,
) -> Result<ForwardPass<'g, F>> {
    check_alpha(&model.alpha, model.layers)?;
    let mut weights = graph.weights_from_features(x)?;
    if let Some(keep) = &view.keep {
        for (w, &k) in weights.iter_mut().zip(keep) {
            if !k {
                *w = F::zero();
            }
        }
    }
    let adjacency = normalize_with_weights(graph, weights)?;
    let x0 = view.masked_features(graph, x);
    let trace = propagate(&adjacency, &x0, model.layers)?;
    let output = combine_layers(&trace, &model.alpha)?;
    Ok(ForwardPass {
        adjacency,
        trace,
        output,
        alpha: model.alpha.clone(),
    })
}

/// Gradient of the loss with respect to layer-0 features `x`, given the
/// gradient `d_out` with respect to the combined output.
///
/// Includes the path through normalization and, for adaptive slots in the
/// soft case, through the cosine weights. Hard-case slots contribute zero.
pub fn backward<F: Real>(
    graph: &UnifiedGraph,
    x: &Mat<F>,
    view: &ViewSpec,
    fwd: &ForwardPass<'_, F>,
    d_out: &Mat<F>,
) -> Result<Mat<F>> {
    d_out.check_same_shape(&fwd.output)?;
    let layers = fwd.trace.layers.len() - 1;
    let adj = &fwd.adjacency;

    // d e^(l) for l = L..0, and per-entry gradient of the operator values.
    let mut d_entry = vec![F::zero(); graph.cols.len()];
    let mut g_next = Mat::zeros(d_out.rows(), d_out.cols());
    g_next.add_scaled(d_out, F::of(fwd.alpha[layers]))?;
    for l in (0..layers).rev() {
        // d A[r, c] += <g^(l+1)[r], e^(l)[c]>
        let e_l = &fwd.trace.layers[l];
        let contrib: Vec<F> = (0..graph.node_count())
            .into_par_iter()
            .flat_map_iter(|r| {
                let gr = g_next.row(r);
                (graph.offsets[r]..graph.offsets[r + 1]).map(move |k| dot(gr, e_l.row(graph.cols[k] as usize)))
            })
            .collect();
        for (d, c) in d_entry.iter_mut().zip(contrib) {
            *d = *d + c;
        }
        // A is symmetric, so A^T g = A g.
        let mut g = adj.apply(&g_next)?;
        if fwd.alpha[l] != 0.0 {
            g.add_scaled(d_out, F::of(fwd.alpha[l]))?;
        }
        g_next = g;
    }

    // Layer-0 gradient through the column mask.
    let mut dx = g_next;
    if let Some(mask) = &view.col_mask {
        for (r, kind) in graph.kinds.iter().enumerate() {
            if kind.is_coordinator() {
                continue;
            }
            for (v, &keep) in dx.row_mut(r).iter_mut().zip(mask) {
                if !keep {
                    *v = F::zero();
                }
            }
        }
    }

    // Operator values A_ab = w_e s_a s_b with s = deg^{-1/2}.
    let s = &adj.inv_sqrt_deg;
    let w = &adj.weights;
    let mut d_w = vec![F::zero(); graph.edges.len()];
    let mut d_s = vec![F::zero(); graph.node_count()];
    for (e, edge) in graph.edges.iter().enumerate() {
        let [p, q] = graph.edge_entries[e];
        let g = d_entry[p as usize] + d_entry[q as usize];
        let (a, b) = (edge.a as usize, edge.b as usize);
        d_w[e] = g * s[a] * s[b];
        d_s[a] = d_s[a] + g * w[e] * s[b];
        d_s[b] = d_s[b] + g * w[e] * s[a];
    }
    let half = F::of(0.5);
    let d_deg: Vec<F> = d_s.iter().zip(s).map(|(&ds, &si)| -half * ds * si * si * si).collect();
    for (e, edge) in graph.edges.iter().enumerate() {
        d_w[e] = d_w[e] + d_deg[edge.a as usize] + d_deg[edge.b as usize];
    }

    // Soft-case adaptive weights: w = cos(node, coordinator).
    for &slot in &graph.adaptive_slots {
        let e = slot as usize;
        if w[e] <= F::zero() {
            continue;
        }
        let edge = &graph.edges[e];
        let (c, n) = (edge.a as usize, edge.b as usize);
        let gw = d_w[e];
        if gw.is_zero() {
            continue;
        }
        let (xc, xn) = (x.row(c), x.row(n));
        let (nc, nn) = (norm(xc), norm(xn));
        let cos = w[e];
        // d cos / d xn = xc / (|xn||xc|) - cos xn / |xn|^2
        let inv = F::one() / (nc * nn);
        let gn: Vec<F> = xc
            .iter()
            .zip(xn)
            .map(|(&a, &b)| gw * (a * inv - cos * b / (nn * nn)))
            .collect();
        let gc: Vec<F> = xn
            .iter()
            .zip(xc)
            .map(|(&a, &b)| gw * (a * inv - cos * b / (nc * nc)))
            .collect();
        axpy(dx.row_mut(n), F::one(), &gn);
        axpy(dx.row_mut(c), F::one(), &gc);
    }

    if !dx.is_finite() {
        return Err(Error::Numeric("non-finite gradient in propagation".into()));
    }
    Ok(dx)
}
