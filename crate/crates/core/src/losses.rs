//! Stitching loss and the WGAN-GP objectives.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cloud::{dist2, Point, PointCloud};
use crate::discriminator::{CriticalSet, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    /// Neighbours per critical point.
    pub k: usize,
    pub lambda_s: f64,
}

impl Default for StitchConfig {
    fn default() -> Self {
        StitchConfig {
            k: 40,
            lambda_s: 0.05,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "stitching K must be at least 2, got {}",
                self.k
            )));
        }
        if !self.lambda_s.is_finite() || self.lambda_s < 0.0 {
            return Err(Error::Config(format!(
                "lambda_s must be non-negative, got {}",
                self.lambda_s
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub lambda_gp: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { lambda_gp: 10.0 }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_gp.is_finite() || self.lambda_gp < 0.0 {
            return Err(Error::Config(format!(
                "lambda_gp must be non-negative, got {}",
                self.lambda_gp
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Euclidean distance to the query.
    pub distance: f64,
}

fn nearest(points: &[Point], query: &Point, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != skip)
        .map(|(i, p)| (dist2(p, query), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand.into_iter()
        .map(|(d2, index)| Neighbor {
            index,
            distance: d2.sqrt(),
        })
        .collect()
}

/// The `k` points closest to `query`, ascending by distance, ties by index.
/// A point coinciding with the query is returned like any other.
pub fn knn(points: &[Point], query: &Point, k: usize) -> Result<Vec<Neighbor>> {
    if k > points.len() {
        return Err(Error::Domain(format!(
            "K = {k} exceeds the {} available points",
            points.len()
        )));
    }
    Ok(nearest(points, query, k, None))
}

/// Neighbours of row `center` among the other rows of `points`.
pub fn knn_excluding(points: &[Point], center: usize, k: usize) -> Result<Vec<Neighbor>> {
    if k >= points.len() {
        return Err(Error::Domain(format!(
            "K = {k} needs more than {} points once the centre is excluded",
            points.len()
        )));
    }
    Ok(nearest(points, &points[center], k, Some(center)))
}

/// Population variance of neighbour distances.
pub fn local_variance(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyInput(
            "local variance needs at least one neighbour",
        ));
    }
    let k = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / k;
    Ok(distances
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / k)
}

/// Mean local variance over a cloud's critical points, neighbours taken
/// within the same cloud.
pub fn mean_local_variance(cloud: &[Point], critical: &CriticalSet, k: usize) -> Result<f64> {
    if critical.is_empty() {
        return Err(Error::Contract("critical set is empty".into()));
    }
    let mut total = 0.0;
    for &c in &critical.indices {
        let nb = knn_excluding(cloud, c, k)?;
        let d: Vec<f64> = nb.iter().map(|n| n.distance).collect();
        total += local_variance(&d)?;
    }
    Ok(total / critical.len() as f64)
}

/// Squared gap between the mean local variances of a generated and a real cloud.
pub fn stitching_loss(
    generated: &PointCloud,
    generated_critical: &CriticalSet,
    real: &PointCloud,
    real_critical: &CriticalSet,
    k: usize,
) -> Result<f64> {
    let g = mean_local_variance(&generated.points, generated_critical, k)?;
    let r = mean_local_variance(&real.points, real_critical, k)?;
    Ok((g - r) * (g - r))
}

/// [`mean_local_variance`] recorded on the tape for an `N x 3` node. The
/// neighbour selection is made on the current values and held fixed.
pub fn traced_mean_local_variance(
    tape: &mut Tape,
    points: Var,
    critical: &CriticalSet,
    k: usize,
) -> Result<Var> {
    if critical.is_empty() {
        return Err(Error::Contract("critical set is empty".into()));
    }
    let cloud = PointCloud::from_tensor(tape.value(points))?.points;
    let q = critical.len();
    let mut nbr_idx = Vec::with_capacity(q * k);
    let mut ctr_idx = Vec::with_capacity(q * k);
    for &c in &critical.indices {
        for n in knn_excluding(&cloud, c, k)? {
            nbr_idx.push(n.index);
            ctr_idx.push(c);
        }
    }
    let nbrs = tape.gather_rows(points, &nbr_idx)?;
    let ctrs = tape.gather_rows(points, &ctr_idx)?;
    let diff = tape.sub(nbrs, ctrs)?;
    let sq = tape.square(diff);
    let d2 = tape.sum_cols(sq);
    let d = tape.sqrt(d2)?;
    let d = tape.reshape(d, q, k)?;
    let row_sum = tape.sum_cols(d);
    let mean = tape.scale(row_sum, 1.0 / k as f64);
    let mean = tape.broadcast_cols(mean, k)?;
    let centred = tape.sub(d, mean)?;
    let sq = tape.square(centred);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (q * k) as f64))
}

/// Stitching loss against a fixed real-cloud mean variance, on the tape.
pub fn traced_stitching_loss(
    tape: &mut Tape,
    generated: Var,
    generated_critical: &CriticalSet,
    real_mean_variance: f64,
    k: usize,
) -> Result<Var> {
    let g = traced_mean_local_variance(tape, generated, generated_critical, k)?;
    let gap = tape.add_scalar(g, -real_mean_variance);
    Ok(tape.square(gap))
}

fn mean(xs: &[f64], what: &'static str) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `-mean(D(fake)) + lambda_s * L_s`.
pub fn generator_loss(scores_fake: &[f64], stitch: f64, lambda_s: f64) -> Result<f64> {
    Ok(-mean(scores_fake, "generator loss needs at least one score")? + lambda_s * stitch)
}

/// `mean(D(fake)) - mean(D(real)) + lambda_gp * gp`.
pub fn discriminator_loss(
    scores_fake: &[f64],
    scores_real: &[f64],
    gp: f64,
    lambda_gp: f64,
) -> Result<f64> {
    if scores_fake.len() != scores_real.len() {
        return Err(Error::dim(
            "discriminator_loss",
            format!(
                "{} fake scores vs {} real scores",
                scores_fake.len(),
                scores_real.len()
            ),
        ));
    }
    Ok(
        mean(scores_fake, "discriminator loss needs at least one score")? - mean(scores_real, "")?
            + lambda_gp * gp,
    )
}

/// `eps * real + (1 - eps) * fake`.
pub fn interpolate(fake: &Tensor, real: &Tensor, eps: f64) -> Result<Tensor> {
    if !fake.same_shape(real) {
        return Err(Error::dim(
            "gradient_penalty",
            format!(
                "fake cloud {:?} vs real cloud {:?}",
                fake.shape(),
                real.shape()
            ),
        ));
    }
    Ok(real.zip_map(fake, |r, f| eps * r + (1.0 - eps) * f))
}

/// `(||d critic / d input|| - 1)^2` recorded on the tape, the norm taken over
/// every coordinate of `input`. Gradients reach the critic's parameters.
pub fn traced_penalty<F>(tape: &mut Tape, input: Tensor, critic: F) -> Result<Var>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let x = tape.leaf(input, true);
    let score = critic(tape, x)?;
    let g = tape.grad_graph(score, &[x])?[0];
    let sq = tape.square(g);
    let s = tape.sum(sq);
    let norm = tape.sqrt(s)?;
    let gap = tape.add_scalar(norm, -1.0);
    Ok(tape.square(gap))
}

/// Batch-mean gradient penalty, one `eps ~ U(0,1)` per cloud pair.
pub fn gradient_penalty(
    fake: &[PointCloud],
    real: &[PointCloud],
    params: &DiscriminatorParams,
    seed: u64,
) -> Result<f64> {
    if fake.len() != real.len() {
        return Err(Error::dim(
            "gradient_penalty",
            format!("{} fake vs {} real clouds", fake.len(), real.len()),
        ));
    }
    if fake.is_empty() {
        return Err(Error::EmptyInput(
            "gradient penalty needs at least one pair",
        ));
    }
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for (f, r) in fake.iter().zip(real) {
        let eps: f64 = rng.random();
        let input = interpolate(&f.to_tensor(), &r.to_tensor(), eps)?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let p = traced_penalty(&mut tape, input, |t, x| vars.score(t, x).map(|(s, _)| s))?;
        total += tape.value(p).item()?;
    }
    Ok(total / fake.len() as f64)
}
