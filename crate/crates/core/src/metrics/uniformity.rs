use serde::{Deserialize, Serialize};

use crate::cloud::{dist2, Point};
use crate::error::{Error, Result};

/// Greedy max-min selection of `m` indices starting from `start`.
/// Ties go to the smallest index.
pub fn farthest_point_sampling(points: &[Point], m: usize, start: usize) -> Result<Vec<usize>> {
    if m > points.len() {
        return Err(Error::Domain(format!(
            "cannot pick {m} of {} points",
            points.len()
        )));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::Domain(format!(
            "start index {start} is out of range"
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut gap: Vec<f64> = points.iter().map(|p| dist2(p, &points[start])).collect();
    chosen.push(start);
    gap[start] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (i, &g) in gap.iter().enumerate() {
            if g > best {
                best = g;
                next = i;
            }
        }
        chosen.push(next);
        gap[next] = f64::NEG_INFINITY;
        let p = points[next];
        for (g, q) in gap.iter_mut().zip(points) {
            if *g != f64::NEG_INFINITY {
                *g = g.min(dist2(q, &p));
            }
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityConfig {
    /// Ball sizes as fractions of the surface; each gives `round(1/p)` seeds of radius `sqrt(p)`.
    pub percentages: Vec<f64>,
    /// Allowed deviation of the centroid from 0 and the max radius from 1.
    pub normalization_tolerance: f64,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        UniformityConfig {
            percentages: vec![0.002, 0.004, 0.006, 0.008, 0.012, 0.015],
            normalization_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// Mean of the per-percentage losses.
    pub value: f64,
    /// `(p, loss)` pairs.
    pub per_p: Vec<(f64, f64)>,
}

fn check_normalized(points: &[Point], tol: f64) -> Result<()> {
    let n = points.len() as f64;
    let c = points
        .iter()
        .fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]])
        .map(|v| v / n);
    let offset = dist2(&c, &[0.0; 3]).sqrt();
    let radius = points
        .iter()
        .map(|p| dist2(p, &[0.0; 3]))
        .fold(0.0, f64::max)
        .sqrt();
    if offset > tol || (radius - 1.0).abs() > tol {
        return Err(Error::Contract(format!(
            "uniformity needs a normalised cloud (centroid offset {offset:.3e}, max radius {radius})"
        )));
    }
    Ok(())
}

fn loss_at(points: &[Point], p: f64) -> Result<f64> {
    let n = points.len();
    let seeds = ((1.0 / p).round() as usize).clamp(1, n);
    let expected = p * n as f64;
    let mut total = 0.0;
    for s in farthest_point_sampling(points, seeds, 0)? {
        let centre = points[s];
        let ball: Vec<Point> = points
            .iter()
            .copied()
            .filter(|q| dist2(q, &centre) <= p)
            .collect();
        let size = ball.len() as f64;
        let imbalance = (size - expected).powi(2) / expected;
        if ball.len() <= 1 {
            total += imbalance;
            continue;
        }
        let spacing = (2.0 * std::f64::consts::PI * p / (size * 3f64.sqrt())).sqrt();
        let clutter: f64 = ball
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let d = ball
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, b)| dist2(a, b))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt();
                (d - spacing).powi(2) / spacing
            })
            .sum();
        total += imbalance * clutter;
    }
    Ok(total)
}

/// Uniformity loss of a cloud centred at the origin with max radius 1.
///
/// Balls holding a single point add their imbalance term alone.
pub fn uniformity(points: &[Point], cfg: &UniformityConfig) -> Result<UniformityReport> {
    if points.is_empty() {
        return Err(Error::EmptyInput("uniformity"));
    }
    if cfg.percentages.is_empty() || cfg.percentages.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Config(
            "uniformity percentages must lie in (0, 1)".into(),
        ));
    }
    check_normalized(points, cfg.normalization_tolerance)?;
    let per_p = cfg
        .percentages
        .iter()
        .map(|&p| loss_at(points, p).map(|l| (p, l)))
        .collect::<Result<Vec<_>>>()?;
    let value = per_p.iter().map(|(_, l)| l).sum::<f64>() / per_p.len() as f64;
    Ok(UniformityReport { value, per_p })
}
