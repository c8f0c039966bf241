//! Alternating WGAN-GP training.

mod adam;
mod checkpoint;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Archive, Entry, FORMAT_VERSION, MAGIC};

use crate::autodiff::Tape;
use crate::cloud::PointCloud;
use crate::discriminator::{
    critical_points, CriticalSet, DiscriminatorConfig, DiscriminatorParams,
};
use crate::error::{CheckpointError, Error, Result};
use crate::generator::{generate, GeneratorConfig, GeneratorParams, LatentCode};
use crate::losses::{
    interpolate, mean_local_variance, traced_penalty, traced_stitching_loss, GpConfig, StitchConfig,
};
use crate::nn::{BoundParameters, Parameters};
use crate::prior::{PriorKind, PriorSet};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub adam: AdamConfig,
    pub stitch: StitchConfig,
    pub gp: GpConfig,
    pub prior: PriorKind,
    /// `n`; each cloud has `M * n` points.
    pub points_per_prior: usize,
    pub batch: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            adam: AdamConfig::default(),
            stitch: StitchConfig::default(),
            gp: GpConfig::default(),
            prior: PriorKind::Uniform3d,
            points_per_prior: 128,
            batch: 32,
            d_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn points_per_cloud(&self) -> usize {
        self.generator.num_priors * self.points_per_prior
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.adam.validate()?;
        self.stitch.validate()?;
        self.gp.validate()?;
        if self.batch == 0 || self.d_steps == 0 || self.points_per_prior == 0 {
            return Err(Error::Config(
                "batch, d_steps and points per prior must be positive".into(),
            ));
        }
        if self.stitch.k >= self.points_per_cloud() {
            return Err(Error::Config(format!(
                "stitching K = {} must be below the cloud size {}",
                self.stitch.k,
                self.points_per_cloud()
            )));
        }
        Ok(())
    }

    pub fn apply(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoStitch => self.stitch.lambda_s = 0.0,
            Ablation::NoCodeEnhancement => self.generator.code_enhancement = false,
            Ablation::NoGlobalCode => self.generator.global_code = false,
            Ablation::SinglePrior => {
                self.points_per_prior *= self.generator.num_priors;
                self.generator.num_priors = 1;
            }
        }
    }
}

/// Model variants obtained by switching off one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoStitch,
    NoCodeEnhancement,
    NoGlobalCode,
    /// One prior holding all `M * n` points.
    SinglePrior,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-stitch" => Ok(Ablation::NoStitch),
            "no-enhance" => Ok(Ablation::NoCodeEnhancement),
            "no-global-code" => Ok(Ablation::NoGlobalCode),
            "single-prior" => Ok(Ablation::SinglePrior),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected no-stitch, no-enhance, no-global-code or single-prior)"
            ))),
        }
    }
}

/// Standard-normal latent codes of length `dim`.
pub fn sample_latent<R: Rng>(batch: usize, dim: usize, rng: &mut R) -> Vec<LatentCode> {
    (0..batch)
        .map(|_| {
            let v = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            LatentCode::new(v).expect("finite normal samples")
        })
        .collect()
}

/// Scalars recorded for one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub stitch: f64,
    pub gp: f64,
    pub score_real: f64,
    pub score_fake: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "iter {} d_loss {} g_loss {} stitch {} gp {} score_real {} score_fake {}",
            self.iteration,
            self.d_loss,
            self.g_loss,
            self.stitch,
            self.gp,
            self.score_real,
            self.score_fake
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Cursor {
    iteration: u64,
    epoch: u64,
    position: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    priors: PriorSet,
    cursor: Cursor,
}

struct DStats {
    grads: Vec<Tensor>,
    fake: f64,
    real: f64,
    gp: f64,
}

struct GStats {
    grads: Vec<Tensor>,
    fake: f64,
    stitch: f64,
}

fn sum_in_order(parts: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let mut iter = parts.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for part in iter {
        for (t, p) in total.iter_mut().zip(&part) {
            t.add_assign(p);
        }
    }
    total
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = GeneratorParams::new(
            config.generator.clone(),
            derive_seed(config.seed, streams::GENERATOR_INIT),
        )?;
        let discriminator = DiscriminatorParams::new(
            config.discriminator.clone(),
            derive_seed(config.seed, streams::DISCRIMINATOR_INIT),
        )?;
        let g_adam = AdamState::new(generator.named_tensors().into_iter().map(|(_, t)| t));
        let d_adam = AdamState::new(discriminator.named_tensors().into_iter().map(|(_, t)| t));
        let priors = Self::priors_for(&config, config.points_per_prior)?;
        Ok(TrainState {
            cursor: Cursor {
                iteration: 0,
                epoch: 0,
                position: 0,
                order: Vec::new(),
                rng: stream_rng(config.seed, streams::TRAINING),
            },
            config,
            generator,
            discriminator,
            g_adam,
            d_adam,
            priors,
        })
    }

    /// The priors a generator trained under `config` uses at `n` points each.
    pub fn priors_for(config: &TrainConfig, n: usize) -> Result<PriorSet> {
        PriorSet::build(
            config.prior,
            n,
            config.generator.num_priors,
            derive_seed(config.seed, streams::PRIOR),
        )
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.cursor.iteration
    }

    fn next_batch(&mut self, len: usize) -> Vec<usize> {
        let b = self.config.batch;
        let c = &mut self.cursor;
        if c.order.len() != len || c.position + b > len {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut stream_rng(
                self.config.seed,
                streams::SHUFFLE_BASE + c.epoch,
            ));
            c.order = order;
            c.epoch += 1;
            c.position = 0;
        }
        let out = c.order[c.position..c.position + b].to_vec();
        c.position += b;
        out
    }

    fn check_data(&self, data: &[PointCloud]) -> Result<()> {
        if data.len() < self.config.batch {
            return Err(Error::Config(format!(
                "dataset has {} shapes, fewer than the batch size {}",
                data.len(),
                self.config.batch
            )));
        }
        let n = self.config.points_per_cloud();
        if let Some(bad) = data.iter().position(|c| c.len() != n) {
            return Err(Error::dim(
                "train_step",
                format!(
                    "shape {bad} has {} points, the generator emits {n}",
                    data[bad].len()
                ),
            ));
        }
        Ok(())
    }

    fn discriminator_step(&mut self, real: &[&PointCloud]) -> Result<(f64, f64, f64, f64)> {
        let cfg = &self.config;
        let b = real.len();
        let z = sample_latent(b, cfg.generator.latent_dim, &mut self.cursor.rng);
        let eps: Vec<f64> = (0..b).map(|_| self.cursor.rng.random()).collect();
        let (gen, disc, priors) = (&self.generator, &self.discriminator, &self.priors);
        let lambda_gp = cfg.gp.lambda_gp;
        let stats: Vec<DStats> = (0..b)
            .into_par_iter()
            .map(|i| -> Result<DStats> {
                let fake = generate(&z[i], priors, gen)?.to_tensor();
                let real = real[i].to_tensor();
                let mut tape = Tape::new();
                let vars = disc.bind(&mut tape, true);
                let xf = tape.constant(fake.clone());
                let (sf, _) = vars.score(&mut tape, xf)?;
                let xr = tape.constant(real.clone());
                let (sr, _) = vars.score(&mut tape, xr)?;
                let mixed = interpolate(&fake, &real, eps[i])?;
                let gp = traced_penalty(&mut tape, mixed, |t, x| vars.score(t, x).map(|(s, _)| s))?;
                let gap = tape.sub(sf, sr)?;
                let weighted = tape.scale(gp, lambda_gp);
                let loss = tape.add(gap, weighted)?;
                let loss = tape.scale(loss, 1.0 / b as f64);
                let grads = vars.collect_grads(&tape.backward(loss)?);
                Ok(DStats {
                    grads,
                    fake: tape.value(sf).item()?,
                    real: tape.value(sr).item()?,
                    gp: tape.value(gp).item()?,
                })
            })
            .collect::<Result<_>>()?;
        let mean = |f: fn(&DStats) -> f64| stats.iter().map(f).sum::<f64>() / b as f64;
        let (fake, real_score, gp) = (mean(|s| s.fake), mean(|s| s.real), mean(|s| s.gp));
        let grads = sum_in_order(stats.into_iter().map(|s| s.grads).collect());
        adam_step(
            &mut self.discriminator.tensors_mut(),
            &grads,
            &mut self.d_adam,
            &self.config.adam,
        )?;
        Ok((fake - real_score + lambda_gp * gp, gp, real_score, fake))
    }

    fn generator_step(&mut self, real: &[&PointCloud]) -> Result<(f64, f64, f64)> {
        let cfg = &self.config;
        let b = real.len();
        let z = sample_latent(b, cfg.generator.latent_dim, &mut self.cursor.rng);
        let (gen, disc, priors) = (&self.generator, &self.discriminator, &self.priors);
        let StitchConfig { k, lambda_s } = cfg.stitch;
        let stats: Vec<GStats> = (0..b)
            .into_par_iter()
            .map(|i| -> Result<GStats> {
                let mut tape = Tape::new();
                let gv = gen.bind(&mut tape, true);
                let dv = disc.bind(&mut tape, false);
                let fake = gv.generate(&mut tape, &z[i], priors)?;
                let (score, argmax) = dv.score(&mut tape, fake)?;
                let points = PointCloud::from_tensor(tape.value(fake))?.points;
                let critical = CriticalSet::from_argmax(&argmax, &points);
                let real_critical = critical_points(real[i], disc)?;
                let real_var = mean_local_variance(&real[i].points, &real_critical, k)?;
                let stitch = traced_stitching_loss(&mut tape, fake, &critical, real_var, k)?;
                let adv = tape.scale(score, -1.0);
                let weighted = tape.scale(stitch, lambda_s);
                let loss = tape.add(adv, weighted)?;
                let loss = tape.scale(loss, 1.0 / b as f64);
                let grads = gv.collect_grads(&tape.backward(loss)?);
                Ok(GStats {
                    grads,
                    fake: tape.value(score).item()?,
                    stitch: tape.value(stitch).item()?,
                })
            })
            .collect::<Result<_>>()?;
        let fake = stats.iter().map(|s| s.fake).sum::<f64>() / b as f64;
        let stitch = stats.iter().map(|s| s.stitch).sum::<f64>() / b as f64;
        let grads = sum_in_order(stats.into_iter().map(|s| s.grads).collect());
        adam_step(
            &mut self.generator.tensors_mut(),
            &grads,
            &mut self.g_adam,
            &self.config.adam,
        )?;
        Ok((-fake + lambda_s * stitch, stitch, fake))
    }

    /// `d_steps` critic updates on fresh real batches, then one generator
    /// update paired with the last real batch.
    pub fn train_step(&mut self, data: &[PointCloud]) -> Result<StepLog> {
        self.check_data(data)?;
        let mut last = None;
        let mut batch = Vec::new();
        for _ in 0..self.config.d_steps {
            batch = self.next_batch(data.len());
            let real: Vec<&PointCloud> = batch.iter().map(|&i| &data[i]).collect();
            last = Some(self.discriminator_step(&real)?);
        }
        let (d_loss, gp, score_real, _) = last.expect("at least one critic step");
        let real: Vec<&PointCloud> = batch.iter().map(|&i| &data[i]).collect();
        let (g_loss, stitch, score_fake) = self.generator_step(&real)?;
        self.cursor.iteration += 1;
        Ok(StepLog {
            iteration: self.cursor.iteration,
            d_loss,
            g_loss,
            stitch,
            gp,
            score_real,
            score_fake,
        })
    }

    /// Runs `iters` steps, handing each log to `on_step`.
    pub fn train<F: FnMut(&StepLog) -> Result<()>>(
        &mut self,
        data: &[PointCloud],
        iters: u64,
        mut on_step: F,
    ) -> Result<()> {
        for _ in 0..iters {
            let log = self.train_step(data)?;
            on_step(&log)?;
        }
        Ok(())
    }

    /// Generates `count` clouds from the evaluation stream at `n` points per prior.
    pub fn sample(&self, count: usize, n: usize, seed: u64) -> Result<Vec<PointCloud>> {
        let priors = Self::priors_for(&self.config, n)?;
        let mut rng = stream_rng(seed, streams::EVALUATION);
        let z = sample_latent(count, self.config.generator.latent_dim, &mut rng);
        z.par_iter()
            .map(|z| generate(z, &priors, &self.generator))
            .collect()
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        let json = |e: serde_json::Error| Error::Config(format!("serialising state: {e}"));
        a.push_bytes("config", serde_json::to_vec(&self.config).map_err(json)?);
        a.push_bytes("cursor", serde_json::to_vec(&self.cursor).map_err(json)?);
        for (name, adam, params) in [
            ("generator", &self.g_adam, self.generator.named_tensors()),
            (
                "discriminator",
                &self.d_adam,
                self.discriminator.named_tensors(),
            ),
        ] {
            a.push_bytes(
                format!("adam.{name}.step"),
                adam.step.to_le_bytes().to_vec(),
            );
            for (i, (pname, t)) in params.iter().enumerate() {
                a.push_array(pname.clone(), t);
                a.push_array(format!("adam.{pname}.first"), &adam.first[i]);
                a.push_array(format!("adam.{pname}.second"), &adam.second[i]);
            }
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let bad = |name: &str, e: serde_json::Error| -> Error {
            CheckpointError::Malformed {
                name: name.into(),
                detail: e.to_string(),
            }
            .into()
        };
        let config: TrainConfig =
            serde_json::from_slice(a.bytes("config")?).map_err(|e| bad("config", e))?;
        let cursor: Cursor =
            serde_json::from_slice(a.bytes("cursor")?).map_err(|e| bad("cursor", e))?;
        let mut state = TrainState::new(config)?;
        state.cursor = cursor;
        fn restore(
            a: &Archive,
            net: &mut dyn Parameters,
            adam: &mut AdamState,
            name: &str,
        ) -> Result<()> {
            let step = a.bytes(&format!("adam.{name}.step"))?;
            adam.step =
                u64::from_le_bytes(step.try_into().map_err(|_| CheckpointError::Malformed {
                    name: format!("adam.{name}.step"),
                    detail: "expected 8 bytes".into(),
                })?);
            let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (i, (pname, slot)) in names.iter().zip(net.tensors_mut()).enumerate() {
                for (key, dst) in [
                    (pname.clone(), slot),
                    (format!("adam.{pname}.first"), &mut adam.first[i]),
                    (format!("adam.{pname}.second"), &mut adam.second[i]),
                ] {
                    let src = a.array(&key)?;
                    if !src.same_shape(dst) {
                        return Err(CheckpointError::Malformed {
                            name: key,
                            detail: format!("shape {:?}, expected {:?}", src.shape(), dst.shape()),
                        }
                        .into());
                    }
                    *dst = src.clone();
                }
            }
            Ok(())
        }
        restore(a, &mut state.generator, &mut state.g_adam, "generator")?;
        restore(
            a,
            &mut state.discriminator,
            &mut state.d_adam,
            "discriminator",
        )?;
        Ok(state)
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    state.to_archive()?.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    TrainState::from_archive(&Archive::read(path)?)
}
