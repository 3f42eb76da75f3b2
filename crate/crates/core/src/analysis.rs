//! Embedding analyses: cross-domain neighbor queries and the angular
//! spread of item embeddings after a 2-D principal-component projection.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat, Real};
use crate::rng::StreamRng;

/// Default sample size per domain.
pub const DEFAULT_ANGLE_SAMPLE: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Row of the candidate in the table passed to the query.
    pub index: usize,
    pub cosine: f64,
}

/// The `k` candidate rows with the highest cosine to `query`, ties by
/// ascending row. Zero-norm rows score 0.
pub fn cross_domain_neighbors<F: Real>(query: &[F], candidates: &Mat<F>, k: usize) -> Result<Vec<Neighbor>> {
    if query.len() != candidates.cols() {
        return Err(Error::Shape(format!(
            "query dimension {} vs candidate dimension {}",
            query.len(),
            candidates.cols()
        )));
    }
    let qn = norm(query).as_f64();
    if qn == 0.0 {
        return Err(Error::Numeric("zero-norm query embedding".into()));
    }
    let mut out: Vec<Neighbor> = (0..candidates.rows())
        .map(|i| {
            let row = candidates.row(i);
            let rn = norm(row).as_f64();
            let cosine = if rn == 0.0 {
                0.0
            } else {
                dot(query, row).as_f64() / (qn * rn)
            };
            Neighbor { index: i, cosine }
        })
        .collect();
    out.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.index.cmp(&b.index)));
    out.truncate(k);
    Ok(out)
}

/// Length of the mean unit vector of `angles`: 1 when concentrated,
/// near 0 when spread evenly.
pub fn resultant_length(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return 0.0;
    }
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let n = angles.len() as f64;
    ((s / n).powi(2) + (c / n).powi(2)).sqrt().min(1.0)
}

/// Histogram bin of an angle in `[-pi, pi]` over `[-pi, pi)`; `pi` wraps.
pub fn angle_bin(theta: f64, bins: usize) -> usize {
    let b = ((theta + PI) / (2.0 * PI) * bins as f64).floor() as isize;
    b.rem_euclid(bins as isize) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAngles {
    pub domain: String,
    pub samples: usize,
    pub counts: Vec<usize>,
    pub resultant_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub bins: usize,
    pub bin_centers: Vec<f64>,
    pub domains: Vec<DomainAngles>,
}

impl AngleReport {
    /// `bin_center,count,domain` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut run = || -> std::io::Result<()> {
            writeln!(f, "bin_center,count,domain")?;
            for d in &self.domains {
                for (c, n) in self.bin_centers.iter().zip(&d.counts) {
                    writeln!(f, "{c},{n},{}", d.domain)?;
                }
            }
            f.flush()
        };
        run().map_err(|e| Error::io(path, e))
    }
}

/// Top-two principal axes of the rows (mean-centered).
fn principal_plane(rows: &[Vec<f64>]) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    if d < 2 || !(top > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * top {
        return Err(Error::Projection("embeddings span fewer than two dimensions".into()));
    }
    let axis = |k: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        // fix the sign so the largest-magnitude component is positive
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok((mean, [axis(0), axis(1)]))
}

/// Angle histograms of each domain's items on the unit circle of the
/// pooled 2-D principal projection.
pub fn angle_distribution<F: Real>(
    domains: &[(String, Mat<F>)],
    sample_size: usize,
    bins: usize,
    rng: &mut StreamRng,
) -> Result<AngleReport> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut sampled: Vec<Vec<Vec<f64>>> = Vec::with_capacity(domains.len());
    for (name, table) in domains {
        if table.rows() < 2 {
            return Err(Error::Projection(format!("domain {name} has fewer than two items")));
        }
        let mut idx: Vec<usize> = if table.rows() > sample_size {
            sample(rng, table.rows(), sample_size).into_vec()
        } else {
            (0..table.rows()).collect()
        };
        idx.sort_unstable();
        sampled.push(
            idx.iter()
                .map(|&i| table.row(i).iter().map(|x| x.as_f64()).collect())
                .collect(),
        );
    }
    let pooled: Vec<Vec<f64>> = sampled.iter().flatten().cloned().collect();
    let (mean, [a1, a2]) = principal_plane(&pooled)?;

    let bin_centers = (0..bins)
        .map(|b| -PI + (b as f64 + 0.5) * 2.0 * PI / bins as f64)
        .collect();
    let mut out = Vec::with_capacity(domains.len());
    for ((name, _), rows) in domains.iter().zip(&sampled) {
        let mut counts = vec![0usize; bins];
        let mut angles = Vec::with_capacity(rows.len());
        for r in rows {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let (p1, p2) = (dot(&c, &a1), dot(&c, &a2));
            if p1 == 0.0 && p2 == 0.0 {
                continue;
            }
            let theta = p2.atan2(p1);
            counts[angle_bin(theta, bins)] += 1;
            angles.push(theta);
        }
        out.push(DomainAngles {
            domain: name.clone(),
            samples: angles.len(),
            counts,
            resultant_length: resultant_length(&angles),
        });
    }
    Ok(AngleReport {
        bins,
        bin_centers,
        domains: out,
    })
}
