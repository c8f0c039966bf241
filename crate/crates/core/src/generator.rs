//! The warping generator.
//!
//! A latent code is lifted by the code-enhancement MLP, split into `M`
//! local codes (each slice concatenated with the whole enhanced code), and
//! every prior point is pushed twice through a shared point-wise MLP
//! conditioned on its prior's local code. All priors share the same two
//! warping blocks.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{
    linear_names, linear_tensors_mut, linear_vars, BoundParameters, Linear, LinearVars, Parameters,
    LEAKY_SLOPE,
};
use crate::prior::PriorSet;
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// `C`, length of the Gaussian latent code.
    pub latent_dim: usize,
    /// `D`, length of the enhanced code.
    pub enhanced_dim: usize,
    /// `M`, number of priors.
    pub num_priors: usize,
    /// Output width of each code-enhancement layer; the last equals `D`.
    pub enhance_widths: Vec<usize>,
    /// Hidden widths of a warping block; a final 3-wide layer is implied.
    pub warp_widths: Vec<usize>,
    /// When off, `z` is tiled up to length `D` instead of passing the MLP.
    pub code_enhancement: bool,
    /// When off, local codes are the bare slices without the enhanced code.
    pub global_code: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 128,
            enhanced_dim: 512,
            num_priors: 16,
            enhance_widths: vec![128, 128, 256, 256, 512],
            warp_widths: vec![256, 64],
            code_enhancement: true,
            global_code: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, d, m) = (self.latent_dim, self.enhanced_dim, self.num_priors);
        if c == 0 || m == 0 {
            return Err(Error::Config(
                "latent size and prior count must be positive".into(),
            ));
        }
        if d <= c {
            return Err(Error::Config(format!(
                "enhanced code length {d} must exceed latent length {c}"
            )));
        }
        if !d.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "enhanced code length {d} is not divisible by prior count {m}"
            )));
        }
        if self.code_enhancement {
            if self.enhance_widths.last() != Some(&d) {
                return Err(Error::Config(format!(
                    "last enhancement layer must output {d} values"
                )));
            }
        } else if d % c != 0 {
            return Err(Error::Config(format!(
                "without code enhancement, {d} must be a multiple of {c} for tiling"
            )));
        }
        if self
            .warp_widths
            .iter()
            .chain(&self.enhance_widths)
            .any(|&w| w == 0)
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Length of one local code: `D/M + D`, or `D/M` without the global code.
    pub fn local_code_width(&self) -> usize {
        let slice = self.enhanced_dim / self.num_priors;
        if self.global_code {
            slice + self.enhanced_dim
        } else {
            slice
        }
    }

    /// Width of a warping block's input rows.
    pub fn warp_input_width(&self) -> usize {
        3 + self.local_code_width()
    }

    fn warp_layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.warp_input_width()];
        dims.extend(&self.warp_widths);
        dims.push(3);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn enhance_layers(&self) -> Vec<(usize, usize)> {
        if !self.code_enhancement {
            return Vec::new();
        }
        let mut dims = vec![self.latent_dim];
        dims.extend(&self.enhance_widths);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Gaussian latent code `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latent code has non-finite entries".into()));
        }
        Ok(LatentCode(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub config: GeneratorConfig,
    pub enhance: Vec<Linear>,
    pub warp1: Vec<Linear>,
    pub warp2: Vec<Linear>,
}

impl GeneratorParams {
    /// Fan-in scaled uniform initialisation from `seed`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng: ChaCha8Rng = seeded(seed);
        let mut build = |dims: Vec<(usize, usize)>| -> Vec<Linear> {
            dims.into_iter()
                .map(|(i, o)| Linear::init(i, o, &mut rng))
                .collect()
        };
        let enhance = build(config.enhance_layers());
        let warp1 = build(config.warp_layers());
        let warp2 = build(config.warp_layers());
        Ok(GeneratorParams {
            config,
            enhance,
            warp1,
            warp2,
        })
    }

    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let build = |dims: Vec<(usize, usize)>| -> Vec<Linear> {
            dims.into_iter().map(|(i, o)| Linear::zeros(i, o)).collect()
        };
        Ok(GeneratorParams {
            enhance: build(config.enhance_layers()),
            warp1: build(config.warp_layers()),
            warp2: build(config.warp_layers()),
            config,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GeneratorVars {
        let bind = |layers: &[Linear], tape: &mut Tape| -> Vec<LinearVars> {
            layers.iter().map(|l| l.bind(tape, trainable)).collect()
        };
        GeneratorVars {
            config: self.config.clone(),
            enhance: bind(&self.enhance, tape),
            warp1: bind(&self.warp1, tape),
            warp2: bind(&self.warp2, tape),
        }
    }
}

impl Parameters for GeneratorParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = linear_names("generator.enhance", &self.enhance);
        out.extend(linear_names("generator.warp1", &self.warp1));
        out.extend(linear_names("generator.warp2", &self.warp2));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        linear_tensors_mut(&mut self.enhance)
            .chain(linear_tensors_mut(&mut self.warp1))
            .chain(linear_tensors_mut(&mut self.warp2))
            .collect()
    }
}

/// Generator parameters bound to a tape.
pub struct GeneratorVars {
    config: GeneratorConfig,
    pub enhance: Vec<LinearVars>,
    pub warp1: Vec<LinearVars>,
    pub warp2: Vec<LinearVars>,
}

impl BoundParameters for GeneratorVars {
    fn vars(&self) -> Vec<Var> {
        linear_vars(&self.enhance)
            .chain(linear_vars(&self.warp1))
            .chain(linear_vars(&self.warp2))
            .collect()
    }
}

impl GeneratorVars {
    /// `z -> z~` as a `1 x D` node.
    pub fn code_enhance(&self, tape: &mut Tape, z: &LatentCode) -> Result<Var> {
        let cfg = &self.config;
        if z.len() != cfg.latent_dim {
            return Err(Error::dim(
                "code_enhance",
                format!(
                    "latent code has length {}, expected {}",
                    z.len(),
                    cfg.latent_dim
                ),
            ));
        }
        if !cfg.code_enhancement {
            let reps = cfg.enhanced_dim / cfg.latent_dim;
            let tiled: Vec<f64> = z.as_slice().repeat(reps);
            return Ok(tape.constant(Tensor::row_vector(&tiled)));
        }
        let mut h = tape.constant(Tensor::row_vector(z.as_slice()));
        for layer in &self.enhance {
            h = layer.apply(tape, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        Ok(h)
    }

    /// Stacks the `M` local codes as an `M x width` node.
    pub fn local_codes(&self, tape: &mut Tape, enhanced: Var) -> Result<Var> {
        let cfg = &self.config;
        let d = tape.shape(enhanced)[1];
        let m = cfg.num_priors;
        if !d.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "code length {d} not divisible by {m}"
            )));
        }
        let w = d / m;
        let mut codes = Vec::with_capacity(m);
        for j in 0..m {
            let slice = tape.slice_cols(enhanced, j * w, (j + 1) * w)?;
            codes.push(if cfg.global_code {
                tape.concat(slice, enhanced)?
            } else {
                slice
            });
        }
        tape.concat_rows(&codes)
    }

    /// Applies every prior's point-wise warp in one pass over `points`
    /// (`M*n x 3`), rows of prior `j` conditioned on row `j` of `codes`.
    pub fn warp(
        &self,
        tape: &mut Tape,
        block: &[LinearVars],
        points: Var,
        codes: Var,
    ) -> Result<Var> {
        let rows = tape.shape(points)[0];
        let groups = tape.shape(codes)[0];
        if groups == 0 || !rows.is_multiple_of(groups) {
            return Err(Error::dim(
                "warp_block",
                format!("{rows} points cannot be split across {groups} priors"),
            ));
        }
        warp_layers(tape, block, points, codes, rows / groups)
    }

    /// Full generation on the tape; returns the `M*n x 3` cloud node.
    pub fn generate(&self, tape: &mut Tape, z: &LatentCode, priors: &PriorSet) -> Result<Var> {
        if priors.m() != self.config.num_priors {
            return Err(Error::Config(format!(
                "generator expects {} priors, got {}",
                self.config.num_priors,
                priors.m()
            )));
        }
        let enhanced = self.code_enhance(tape, z)?;
        let codes = self.local_codes(tape, enhanced)?;
        let prior = tape.constant(priors.stacked());
        let first = self.warp(tape, &self.warp1, prior, codes)?;
        self.warp(tape, &self.warp2, first, codes)
    }
}

fn warp_layers(
    tape: &mut Tape,
    block: &[LinearVars],
    points: Var,
    codes: Var,
    group: usize,
) -> Result<Var> {
    let (first, rest) = block.split_first().expect("warp block has layers");
    let [_, pc] = tape.shape(points);
    let [_, cc] = tape.shape(codes);
    let expect = tape.shape(first.weight)[0];
    if pc + cc != expect {
        return Err(Error::dim(
            "warp_block",
            format!("row width {pc}+{cc} does not match layer input {expect}"),
        ));
    }
    let mut h = tape.affine_coded(points, codes, group, first.weight, first.bias)?;
    for layer in rest {
        h = tape.leaky_relu(h, LEAKY_SLOPE);
        h = layer.apply(tape, h)?;
    }
    Ok(h)
}

/// Enhanced code `z~` for `z`.
pub fn code_enhance(z: &LatentCode, params: &GeneratorParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let out = vars.code_enhance(&mut tape, z)?;
    Ok(tape.value(out).data().to_vec())
}

/// Splits `z~` into `m` equal slices and appends the whole of `z~` to each
/// slice when `global_code` is set.
pub fn build_local_codes(enhanced: &[f64], m: usize, global_code: bool) -> Result<Vec<Vec<f64>>> {
    if m == 0 || !enhanced.len().is_multiple_of(m) {
        return Err(Error::Config(format!(
            "code length {} is not divisible by {m}",
            enhanced.len()
        )));
    }
    let w = enhanced.len() / m;
    Ok(enhanced
        .chunks(w)
        .map(|slice| {
            let mut code = slice.to_vec();
            if global_code {
                code.extend_from_slice(enhanced);
            }
            code
        })
        .collect())
}

/// One warping block applied point-wise to `points` under a single local code.
pub fn warp_block(points: &Tensor, code: &[f64], block: &[Linear]) -> Result<Tensor> {
    if points.cols() != 3 {
        return Err(Error::dim(
            "warp_block",
            format!("points have {} columns", points.cols()),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<LinearVars> = block.iter().map(|l| l.bind(&mut tape, false)).collect();
    let p = tape.constant(points.clone());
    let c = tape.constant(Tensor::row_vector(code));
    let out = warp_layers(&mut tape, &vars, p, c, points.rows())?;
    Ok(tape.value(out).clone())
}

/// Generates one cloud of `M * n` points, tagging each with its prior index.
pub fn generate(z: &LatentCode, priors: &PriorSet, params: &GeneratorParams) -> Result<PointCloud> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let out = vars.generate(&mut tape, z, priors)?;
    let mut cloud = PointCloud::from_tensor(tape.value(out))?;
    let n = priors.n();
    cloud.partition_of = Some((0..priors.total()).map(|i| i / n).collect());
    Ok(cloud)
}
