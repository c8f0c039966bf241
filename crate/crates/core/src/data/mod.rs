//! Point-cloud files, normalisation, resampling and synthetic datasets.

mod format;
mod synth;

use std::path::Path;

use rand::Rng;

pub use format::{load_cloud, save_cloud, CloudFormat, PALETTE};
pub use synth::{synth_dataset, synth_shape, ShapeFamily};

use crate::cloud::{dist2, Point, PointCloud};
use crate::error::{Error, Result};
use crate::metrics::farthest_point_sampling;
use crate::rng::seeded;

/// A normalised cloud and the transform that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub centroid: Point,
    pub scale: f64,
}

/// Centres at the centroid and scales the farthest point to radius 1.
/// A cloud whose points all coincide keeps scale 1.
pub fn normalize(cloud: &PointCloud) -> Normalized {
    let n = cloud.len().max(1) as f64;
    let centroid = cloud
        .points
        .iter()
        .fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]])
        .map(|v| v / n);
    let centred: Vec<Point> = cloud
        .points
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let radius = centred
        .iter()
        .map(|p| dist2(p, &[0.0; 3]))
        .fold(0.0, f64::max)
        .sqrt();
    let scale = if radius > 0.0 { radius } else { 1.0 };
    let points = centred.iter().map(|p| p.map(|v| v / scale)).collect();
    Normalized {
        cloud: PointCloud {
            points,
            partition_of: cloud.partition_of.clone(),
        },
        centroid,
        scale,
    }
}

/// Exactly `target` points: farthest point sampling when shrinking, the
/// original points plus uniform draws with replacement when growing.
pub fn resample(cloud: &PointCloud, target: usize, seed: u64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("resample"));
    }
    let n = cloud.len();
    let idx: Vec<usize> = if target <= n {
        farthest_point_sampling(&cloud.points, target, 0)?
    } else {
        let mut rng = seeded(seed);
        (0..n)
            .chain((n..target).map(|_| rng.random_range(0..n)))
            .collect()
    };
    Ok(cloud.subset(&idx))
}

/// Shapes resampled to a common size and normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub shapes: Vec<PointCloud>,
    /// Per-shape `(centroid, scale)` removed by normalisation.
    pub normalization: Vec<(Point, f64)>,
}

impl Dataset {
    pub fn from_clouds(
        name: impl Into<String>,
        clouds: Vec<PointCloud>,
        points: usize,
        seed: u64,
    ) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::Domain("a dataset needs at least one shape".into()));
        }
        let mut shapes = Vec::with_capacity(clouds.len());
        let mut normalization = Vec::with_capacity(clouds.len());
        for (i, c) in clouds.iter().enumerate() {
            let r = resample(c, points, crate::rng::derive_seed(seed, i as u64))?;
            let norm = normalize(&r);
            shapes.push(norm.cloud);
            normalization.push((norm.centroid, norm.scale));
        }
        Ok(Dataset {
            name: name.into(),
            shapes,
            normalization,
        })
    }

    /// Every `.ply`/`.xyz` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path, points: usize, seed: u64) -> Result<Self> {
        let clouds = load_dir_clouds(dir)?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::from_clouds(name, clouds, points, seed)
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Splits off the last `count` shapes.
    pub fn split_off(&mut self, count: usize) -> Dataset {
        let at = self.shapes.len().saturating_sub(count);
        Dataset {
            name: format!("{}-heldout", self.name),
            shapes: self.shapes.split_off(at),
            normalization: self.normalization.split_off(at),
        }
    }
}

/// Loads every cloud file of a directory without resampling, sorted by name.
pub fn load_dir_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| CloudFormat::from_path(p).is_ok())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Domain(format!(
            "no .ply or .xyz files in {}",
            dir.display()
        )));
    }
    files.iter().map(|p| load_cloud(p)).collect()
}
