//! Set-level and per-cloud quality metrics.

mod kdtree;
mod uniformity;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kdtree::{KdTree, Nearest};
pub use uniformity::{farthest_point_sampling, uniformity, UniformityConfig, UniformityReport};

use crate::cloud::{Point, PointCloud};
use crate::data::normalize;
use crate::error::{Error, Result};

/// A cloud with its kd-tree, for repeated Chamfer queries.
pub struct IndexedCloud<'a> {
    pub points: &'a [Point],
    tree: KdTree,
}

impl<'a> IndexedCloud<'a> {
    pub fn new(points: &'a [Point]) -> Result<Self> {
        Ok(IndexedCloud {
            points,
            tree: KdTree::build(points)?,
        })
    }
}

fn one_way(from: &[Point], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest(p).dist2).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance on squared Euclidean distances.
pub fn chamfer(x: &[Point], y: &[Point]) -> Result<f64> {
    let (a, b) = (IndexedCloud::new(x)?, IndexedCloud::new(y)?);
    Ok(chamfer_indexed(&a, &b))
}

pub fn chamfer_indexed(x: &IndexedCloud<'_>, y: &IndexedCloud<'_>) -> f64 {
    one_way(x.points, &y.tree) + one_way(y.points, &x.tree)
}

/// `matrix[r][g]` = Chamfer distance between `reference[r]` and `generated[g]`.
pub fn chamfer_matrix(generated: &[PointCloud], reference: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Domain("shape sets must be non-empty".into()));
    }
    fn index(set: &[PointCloud]) -> Result<Vec<IndexedCloud<'_>>> {
        set.par_iter()
            .map(|c| IndexedCloud::new(&c.points))
            .collect()
    }
    let gen = index(generated)?;
    let refs = index(reference)?;
    Ok(refs
        .par_iter()
        .map(|r| gen.iter().map(|g| chamfer_indexed(r, g)).collect())
        .collect())
}

fn argmin(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    xs.enumerate()
        .fold((usize::MAX, f64::INFINITY), |best, (i, v)| {
            if v < best.1 {
                (i, v)
            } else {
                best
            }
        })
}

fn mmd_from(matrix: &[Vec<f64>]) -> f64 {
    matrix
        .iter()
        .map(|row| argmin(row.iter().copied()).1)
        .sum::<f64>()
        / matrix.len() as f64
}

fn coverage_from(matrix: &[Vec<f64>]) -> f64 {
    let gens = matrix[0].len();
    let mut hit = vec![false; matrix.len()];
    for g in 0..gens {
        hit[argmin(matrix.iter().map(|row| row[g])).0] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / matrix.len() as f64
}

/// Mean over reference shapes of the Chamfer distance to the closest generated shape.
pub fn mmd(generated: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    Ok(mmd_from(&chamfer_matrix(generated, reference)?))
}

/// Fraction of reference shapes that are the nearest reference of some generated shape.
pub fn coverage(generated: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    Ok(coverage_from(&chamfer_matrix(generated, reference)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mmd: f64,
    pub cov: f64,
    /// Mean uniformity over the generated clouds after normalisation.
    pub uniform: f64,
    /// `(p, loss)` averaged over the generated clouds.
    pub uniform_per_p: Vec<(f64, f64)>,
    pub generated: usize,
    pub reference: usize,
}

impl MetricReport {
    pub fn mmd_x1e3(&self) -> f64 {
        self.mmd * 1e3
    }

    pub fn cov_x1e2(&self) -> f64 {
        self.cov * 1e2
    }

    /// Flat key-value form written next to the text report.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mmd_x1e3": self.mmd_x1e3(),
            "cov_x1e2": self.cov_x1e2(),
            "uniform": self.uniform,
            "mmd": self.mmd,
            "cov": self.cov,
            "uniform_per_p": self.uniform_per_p,
            "generated": self.generated,
            "reference": self.reference,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "MMD (x1e3): {:.4}\nCOV (x1e2): {:.2}\nUniformity: {:.6}\n",
            self.mmd_x1e3(),
            self.cov_x1e2(),
            self.uniform
        );
        for (p, l) in &self.uniform_per_p {
            s.push_str(&format!("  p = {p}: {l:.6}\n"));
        }
        s.push_str(&format!(
            "generated {} / reference {}\n",
            self.generated, self.reference
        ));
        s
    }
}

/// Mean uniformity of a set of clouds, each normalised first.
pub fn set_uniformity(clouds: &[PointCloud], cfg: &UniformityConfig) -> Result<UniformityReport> {
    if clouds.is_empty() {
        return Err(Error::Domain("shape set must be non-empty".into()));
    }
    let reports: Vec<UniformityReport> = clouds
        .par_iter()
        .map(|c| uniformity(&normalize(c).cloud.points, cfg))
        .collect::<Result<_>>()?;
    let k = reports.len() as f64;
    let value = reports.iter().map(|r| r.value).sum::<f64>() / k;
    let per_p = cfg
        .percentages
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, reports.iter().map(|r| r.per_p[i].1).sum::<f64>() / k))
        .collect();
    Ok(UniformityReport { value, per_p })
}

pub fn evaluate(
    generated: &[PointCloud],
    reference: &[PointCloud],
    cfg: &UniformityConfig,
) -> Result<MetricReport> {
    let matrix = chamfer_matrix(generated, reference)?;
    let uni = set_uniformity(generated, cfg)?;
    Ok(MetricReport {
        mmd: mmd_from(&matrix),
        cov: coverage_from(&matrix),
        uniform: uni.value,
        uniform_per_p: uni.per_p,
        generated: generated.len(),
        reference: reference.len(),
    })
}
