//! PointNet critic.
//!
//! Each point is lifted independently by a shared MLP, the features are
//! max-pooled over the cloud, and a single affine head produces an unbounded
//! score. The rows that win at least one pooled channel form the critical set.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::nn::{
    linear_names, linear_tensors_mut, linear_vars, BoundParameters, Linear, LinearVars, Parameters,
    LEAKY_SLOPE,
};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Output widths of the shared point-wise layers; the last is the pooled width.
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![64, 128, 256, 512, 512],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(
                "discriminator widths must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn pooled_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }
}

/// Rows of a cloud that attain at least one pooled channel maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalSet {
    /// Sorted, unique row indices.
    pub indices: Vec<usize>,
    pub points: Vec<Point>,
}

impl CriticalSet {
    pub(crate) fn from_argmax(argmax: &[usize], cloud: &[Point]) -> Self {
        let mut indices = argmax.to_vec();
        indices.sort_unstable();
        indices.dedup();
        let points = indices.iter().map(|&i| cloud[i]).collect();
        CriticalSet { indices, points }
    }

    /// `Q`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub config: DiscriminatorConfig,
    pub layers: Vec<Linear>,
    pub head: Linear,
}

impl DiscriminatorParams {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng: ChaCha8Rng = seeded(seed);
        let mut fan_in = 3;
        let layers = config
            .widths
            .iter()
            .map(|&w| {
                let l = Linear::init(fan_in, w, &mut rng);
                fan_in = w;
                l
            })
            .collect();
        let head = Linear::init(fan_in, 1, &mut rng);
        Ok(DiscriminatorParams {
            config,
            layers,
            head,
        })
    }

    pub fn zeros(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let mut fan_in = 3;
        let layers = config
            .widths
            .iter()
            .map(|&w| {
                let l = Linear::zeros(fan_in, w);
                fan_in = w;
                l
            })
            .collect();
        Ok(DiscriminatorParams {
            head: Linear::zeros(fan_in, 1),
            config,
            layers,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            layers: self
                .layers
                .iter()
                .map(|l| l.bind(tape, trainable))
                .collect(),
            head: self.head.bind(tape, trainable),
        }
    }
}

impl Parameters for DiscriminatorParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = linear_names("discriminator.shared", &self.layers);
        out.extend(linear_names(
            "discriminator.head",
            std::slice::from_ref(&self.head),
        ));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        linear_tensors_mut(&mut self.layers)
            .chain([&mut self.head.weight, &mut self.head.bias])
            .collect()
    }
}

pub struct DiscriminatorVars {
    pub layers: Vec<LinearVars>,
    pub head: LinearVars,
}

impl BoundParameters for DiscriminatorVars {
    fn vars(&self) -> Vec<Var> {
        linear_vars(&self.layers)
            .chain([self.head.weight, self.head.bias])
            .collect()
    }
}

impl DiscriminatorVars {
    /// Scores an `N x 3` node; returns the `1 x 1` score and the per-channel argmax.
    pub fn score(&self, tape: &mut Tape, points: Var) -> Result<(Var, Arc<[usize]>)> {
        let [n, c] = tape.shape(points);
        if n == 0 {
            return Err(Error::EmptyInput("discriminator input cloud"));
        }
        if c != 3 {
            return Err(Error::dim(
                "discriminate",
                format!("points have {c} columns"),
            ));
        }
        let mut h = points;
        for layer in &self.layers {
            h = layer.apply(tape, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let (pooled, argmax) = tape.max_pool(h)?;
        Ok((self.head.apply(tape, pooled)?, argmax))
    }
}

/// Score and critical set of one cloud.
pub fn discriminate(
    cloud: &PointCloud,
    params: &DiscriminatorParams,
) -> Result<(f64, CriticalSet)> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("discriminator input cloud"));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(cloud.to_tensor());
    let (score, argmax) = vars.score(&mut tape, x)?;
    Ok((
        tape.value(score).item()?,
        CriticalSet::from_argmax(&argmax, &cloud.points),
    ))
}

pub fn critical_points(cloud: &PointCloud, params: &DiscriminatorParams) -> Result<CriticalSet> {
    discriminate(cloud, params).map(|(_, c)| c)
}
