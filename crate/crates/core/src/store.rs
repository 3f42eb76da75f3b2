//! Trainable embedding tables, Adam state and the binary checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Real};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    User,
    Item,
    Coordinator,
    Prompt,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::User, Table::Item, Table::Coordinator, Table::Prompt];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Table::User => "user",
            Table::Item => "item",
            Table::Coordinator => "coordinator",
            Table::Prompt => "prompt",
        }
    }

    fn from_name(name: &str) -> Option<Table> {
        Table::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Row counts of each table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub users: usize,
    pub items: usize,
    pub coordinators: usize,
    pub prompts: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Moments<F> {
    first: Mat<F>,
    second: Mat<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore<F> {
    dim: usize,
    tables: [Mat<F>; 4],
    moments: [Option<Moments<F>>; 4],
    step: u64,
}

/// Per-table gradients; `None` means the table received no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    tables: [Option<Mat<F>>; 4],
}

impl<F: Real> Default for Gradients<F> {
    fn default() -> Self {
        Gradients {
            tables: [None, None, None, None],
        }
    }
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, t: Table) -> Option<&Mat<F>> {
        self.tables[t.slot()].as_ref()
    }

    pub fn set(&mut self, t: Table, g: Mat<F>) {
        self.tables[t.slot()] = Some(g);
    }

    pub fn take(&mut self, t: Table) -> Option<Mat<F>> {
        self.tables[t.slot()].take()
    }

    /// Gradient table for `t`, allocated as zeros with `rows x dim` if absent.
    pub fn entry(&mut self, t: Table, rows: usize, dim: usize) -> &mut Mat<F> {
        self.tables[t.slot()].get_or_insert_with(|| Mat::zeros(rows, dim))
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().flatten().all(Mat::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Table, &Mat<F>)> {
        Table::ALL.into_iter().filter_map(move |t| self.get(t).map(|g| (t, g)))
    }
}

/// Draw the user, item and coordinator tables from `Normal(0, 0.1^2)`;
/// prompts start at zero. Rows are drawn table by table, row-major.
pub fn init_embeddings<F: Real>(counts: TableCounts, dim: usize, rng: &mut StreamRng) -> Result<EmbeddingStore<F>> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let normal = Normal::new(0.0f64, 0.1).expect("valid normal");
    let mut draw = |rows: usize| -> Mat<F> {
        let mut m = Mat::zeros(rows, dim);
        for v in m.as_mut_slice() {
            *v = F::of(normal.sample(rng));
        }
        // A row of exact zeros is a measure-zero event; redraw its first coordinate.
        for r in 0..rows {
            if m.row(r).iter().all(|v| v.is_zero()) {
                m.row_mut(r)[0] = F::of(0.1 * (rng.random::<f64>() + 0.5));
            }
        }
        m
    };
    let users = draw(counts.users);
    let items = draw(counts.items);
    let coordinators = draw(counts.coordinators);
    Ok(EmbeddingStore {
        dim,
        tables: [users, items, coordinators, Mat::zeros(counts.prompts, dim)],
        moments: [None, None, None, None],
        step: 0,
    })
}

impl<F: Real> EmbeddingStore<F> {
    pub fn from_tables(
        dim: usize,
        users: Mat<F>,
        items: Mat<F>,
        coordinators: Mat<F>,
        prompts: Mat<F>,
    ) -> Result<Self> {
        for m in [&users, &items, &coordinators, &prompts] {
            if m.rows() > 0 && m.cols() != dim {
                return Err(Error::Shape(format!("table has {} columns, expected {dim}", m.cols())));
            }
        }
        let fix = |m: Mat<F>| if m.rows() == 0 { Mat::zeros(0, dim) } else { m };
        Ok(EmbeddingStore {
            dim,
            tables: [fix(users), fix(items), fix(coordinators), fix(prompts)],
            moments: [None, None, None, None],
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self, t: Table) -> &Mat<F> {
        &self.tables[t.slot()]
    }

    pub fn table_mut(&mut self, t: Table) -> &mut Mat<F> {
        &mut self.tables[t.slot()]
    }

    pub fn replace_table(&mut self, t: Table, m: Mat<F>) -> Result<()> {
        if m.cols() != self.dim && m.rows() > 0 {
            return Err(Error::Shape(format!(
                "table has {} columns, expected {}",
                m.cols(),
                self.dim
            )));
        }
        self.tables[t.slot()] = if m.rows() == 0 { Mat::zeros(0, self.dim) } else { m };
        self.moments[t.slot()] = None;
        Ok(())
    }

    pub fn counts(&self) -> TableCounts {
        TableCounts {
            users: self.tables[0].rows(),
            items: self.tables[1].rows(),
            coordinators: self.tables[2].rows(),
            prompts: self.tables[3].rows(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Drop moment buffers and the step counter, e.g. between training phases.
    pub fn reset_optimizer(&mut self) {
        self.moments = [None, None, None, None];
        self.step = 0;
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().all(Mat::is_finite)
    }

    pub fn cast<G: Real>(&self) -> EmbeddingStore<G> {
        EmbeddingStore {
            dim: self.dim,
            tables: [
                self.tables[0].cast(),
                self.tables[1].cast(),
                self.tables[2].cast(),
                self.tables[3].cast(),
            ],
            moments: [None, None, None, None],
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every table that has a gradient.
pub fn adam_step<F: Real>(store: &mut EmbeddingStore<F>, grads: &Gradients<F>, cfg: &AdamConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient, step aborted".into()));
    }
    for (t, g) in grads.iter() {
        store.table(t).check_same_shape(g)?;
    }
    store.step += 1;
    let t = store.step as i32;
    let b1 = F::of(cfg.beta1);
    let b2 = F::of(cfg.beta2);
    let one = F::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = F::of(cfg.lr);
    let eps = F::of(cfg.eps);
    for (table, g) in grads.iter() {
        let slot = table.slot();
        let param = &mut store.tables[slot];
        let m = store.moments[slot].get_or_insert_with(|| Moments {
            first: Mat::zeros(param.rows(), param.cols()),
            second: Mat::zeros(param.rows(), param.cols()),
        });
        let p = param.as_mut_slice();
        let first = m.first.as_mut_slice();
        let second = m.second.as_mut_slice();
        for (k, &gk) in g.as_slice().iter().enumerate() {
            first[k] = b1 * first[k] + (one - b1) * gk;
            second[k] = b2 * second[k] + (one - b2) * gk * gk;
            let mh = first[k] / c1;
            let vh = second[k] / c2;
            p[k] = p[k] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints: "HAGO" | u32 version | u32 table count |
// per table (u32 name length, name, u32 rows, u32 cols) | f32 payloads.

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HAGO";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes<F: Real>(store: &EmbeddingStore<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(Table::ALL.len() as u32).to_le_bytes());
    for t in Table::ALL {
        let m = store.table(t);
        out.extend_from_slice(&(t.name().len() as u32).to_le_bytes());
        out.extend_from_slice(t.name().as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    }
    for t in Table::ALL {
        for v in store.table(t).as_slice() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Artifact("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<EmbeddingStore<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Artifact("bad checkpoint magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Artifact(format!("unsupported checkpoint version {version}")));
    }
    let n_tables = c.u32()? as usize;
    let mut descriptors = Vec::with_capacity(n_tables);
    for _ in 0..n_tables {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Artifact("table name is not UTF-8".into()))?
            .to_string();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        descriptors.push((name, rows, cols));
    }
    let dim = descriptors.first().map_or(0, |d| d.2);
    let mut tables: [Mat<f32>; 4] = std::array::from_fn(|_| Mat::zeros(0, dim));
    for (name, rows, cols) in descriptors {
        if cols != dim {
            return Err(Error::Artifact(format!(
                "table `{name}` has {cols} columns, expected {dim}"
            )));
        }
        let raw = c.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let table = Table::from_name(&name).ok_or_else(|| Error::Artifact(format!("unknown table `{name}`")))?;
        tables[table.slot()] = Mat::from_vec(rows, cols, data)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Artifact("trailing bytes after checkpoint payload".into()));
    }
    let [u, i, co, p] = tables;
    EmbeddingStore::from_tables(dim, u, i, co, p)
}

pub fn write_checkpoint<F: Real>(store: &EmbeddingStore<F>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&checkpoint_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<EmbeddingStore<f32>> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Artifact(format!("missing checkpoint {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    parse_checkpoint(&bytes)
}
