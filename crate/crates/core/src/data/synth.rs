use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Spheres,
    Boxes,
    Cylinders,
    /// Each shape drawn from one of the other three families.
    Mixed,
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spheres" => Ok(ShapeFamily::Spheres),
            "boxes" => Ok(ShapeFamily::Boxes),
            "cylinders" => Ok(ShapeFamily::Cylinders),
            "mixed" => Ok(ShapeFamily::Mixed),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset `{other}` (expected spheres, boxes, cylinders or mixed)"
            ))),
        }
    }
}

impl ShapeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Spheres => "spheres",
            ShapeFamily::Boxes => "boxes",
            ShapeFamily::Cylinders => "cylinders",
            ShapeFamily::Mixed => "mixed",
        }
    }
}

fn dimension<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(0.3..=1.0)
}

fn sphere<R: Rng>(n: usize, rng: &mut R) -> Vec<Point> {
    let r = dimension(rng);
    (0..n)
        .map(|_| loop {
            let v: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 1e-12 {
                break v.map(|c| r * c / len);
            }
        })
        .collect()
}

/// Index of the bucket a uniform draw falls in, by weight.
fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn cuboid<R: Rng>(n: usize, rng: &mut R) -> Vec<Point> {
    let e = [dimension(rng), dimension(rng), dimension(rng)];
    let areas = [
        e[1] * e[2],
        e[1] * e[2],
        e[0] * e[2],
        e[0] * e[2],
        e[0] * e[1],
        e[0] * e[1],
    ];
    (0..n)
        .map(|_| {
            let face = pick(&areas, rng);
            let axis = face / 2;
            let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            for (k, c) in p.iter_mut().enumerate() {
                *c = if k == axis {
                    sign * e[k] / 2.0
                } else {
                    rng.random_range(-e[k] / 2.0..=e[k] / 2.0)
                };
            }
            p
        })
        .collect()
}

fn cylinder<R: Rng>(n: usize, rng: &mut R) -> Vec<Point> {
    let r = dimension(rng);
    let h = dimension(rng);
    let areas = [2.0 * PI * r * h, PI * r * r, PI * r * r];
    (0..n)
        .map(|_| {
            let part = pick(&areas, rng);
            let theta = rng.random_range(0.0..2.0 * PI);
            if part == 0 {
                [
                    r * theta.cos(),
                    r * theta.sin(),
                    rng.random_range(-h / 2.0..=h / 2.0),
                ]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                let z = if part == 1 { h / 2.0 } else { -h / 2.0 };
                [rho * theta.cos(), rho * theta.sin(), z]
            }
        })
        .collect()
}

/// One raw shape of `family`, centred at the origin and not normalised.
pub fn synth_shape<R: Rng>(family: ShapeFamily, n: usize, rng: &mut R) -> PointCloud {
    let family = match family {
        ShapeFamily::Mixed => [
            ShapeFamily::Spheres,
            ShapeFamily::Boxes,
            ShapeFamily::Cylinders,
        ][rng.random_range(0..3)],
        f => f,
    };
    PointCloud::new(match family {
        ShapeFamily::Spheres => sphere(n, rng),
        ShapeFamily::Boxes => cuboid(n, rng),
        _ => cylinder(n, rng),
    })
}

/// `count` random shapes of `n` surface points each, normalised.
pub fn synth_dataset(family: ShapeFamily, count: usize, n: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || n == 0 {
        return Err(Error::Domain(
            "synthetic datasets need at least one shape and one point".into(),
        ));
    }
    let mut rng = stream_rng(seed, streams::DATASET);
    let clouds = (0..count)
        .map(|_| synth_shape(family, n, &mut rng))
        .collect();
    Dataset::from_clouds(family.name(), clouds, n, seed)
}
