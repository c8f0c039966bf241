use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Point = [f64; 3];

/// An `N x 3` point set, optionally tagged with the prior each point came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub partition_of: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud {
            points,
            partition_of: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::from_vec(self.points.len(), 3, data).expect("N x 3")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.cols() != 3 {
            return Err(Error::dim(
                "point cloud",
                format!("expected 3 columns, got {}", t.cols()),
            ));
        }
        Ok(PointCloud::new(
            (0..t.rows())
                .map(|r| {
                    let p = t.row(r);
                    [p[0], p[1], p[2]]
                })
                .collect(),
        ))
    }

    pub fn subset(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            partition_of: self
                .partition_of
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
