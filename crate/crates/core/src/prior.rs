//! Pre-defined point priors on the unit cube.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Uniform3d,
    Uniform2d,
    Nonuniform3d,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform3d" => Ok(PriorKind::Uniform3d),
            "uniform2d" => Ok(PriorKind::Uniform2d),
            "nonuniform3d" => Ok(PriorKind::Nonuniform3d),
            other => Err(Error::Config(format!("unknown prior kind `{other}`"))),
        }
    }
}

/// `M` identical copies of one `n x 3` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet {
    pub kind: PriorKind,
    grid: Tensor,
    count: usize,
}

impl PriorSet {
    /// Points per prior.
    pub fn n(&self) -> usize {
        self.grid.rows()
    }

    /// Number of priors.
    pub fn m(&self) -> usize {
        self.count
    }

    /// Total prior points, `M * n`.
    pub fn total(&self) -> usize {
        self.count * self.grid.rows()
    }

    /// The shared grid.
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    /// All priors stacked, prior `j` occupying rows `j*n..(j+1)*n`.
    pub fn stacked(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.total() * 3);
        for _ in 0..self.count {
            data.extend_from_slice(self.grid.data());
        }
        Tensor::from_vec(self.total(), 3, data).expect("stacked priors")
    }

    /// Builds `m` copies of a freshly constructed prior of the given kind.
    pub fn build(kind: PriorKind, n: usize, m: usize, seed: u64) -> Result<Self> {
        let grid = match kind {
            PriorKind::Uniform3d => make_uniform_grid_3d(n)?,
            PriorKind::Uniform2d => make_uniform_grid_2d(n)?,
            PriorKind::Nonuniform3d => make_nonuniform_prior(n, seed)?,
        };
        replicate(kind, grid, m)
    }
}

/// Factor triple `k1 >= k2 >= k3` of `n` with the smallest spread `k1 - k3`,
/// ties going to the lexicographically smallest triple.
pub fn balanced_factors_3(n: usize) -> (usize, usize, usize) {
    let mut best: Option<(usize, usize, usize)> = None;
    for k3 in 1..=n {
        if k3 * k3 * k3 > n {
            break;
        }
        if !n.is_multiple_of(k3) {
            continue;
        }
        let rest = n / k3;
        for k2 in k3..=rest {
            if k2 * k2 > rest {
                break;
            }
            if !rest.is_multiple_of(k2) {
                continue;
            }
            let cand = (rest / k2, k2, k3);
            best = Some(match best {
                None => cand,
                Some(b) => {
                    let (sb, sc) = (b.0 - b.2, cand.0 - cand.2);
                    if sc < sb || (sc == sb && cand < b) {
                        cand
                    } else {
                        b
                    }
                }
            });
        }
    }
    best.unwrap_or((n, 1, 1))
}

/// Factor pair `k1 >= k2` of `n` with the smallest spread.
pub fn balanced_factors_2(n: usize) -> (usize, usize) {
    let mut k2 = 1;
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            k2 = d;
        }
        d += 1;
    }
    (n / k2, k2)
}

fn axis(k: usize) -> Vec<f64> {
    if k == 1 {
        vec![0.5]
    } else {
        (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
    }
}

/// Regular `k1 x k2 x k3` lattice on `[0,1]^3` with exactly `n` points,
/// emitted in lexicographic order of the axis indices.
pub fn make_uniform_grid_3d(n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Domain("a prior needs at least one point".into()));
    }
    let (k1, k2, k3) = balanced_factors_3(n);
    let (a1, a2, a3) = (axis(k1), axis(k2), axis(k3));
    let mut data = Vec::with_capacity(n * 3);
    for &x in &a1 {
        for &y in &a2 {
            for &z in &a3 {
                data.extend_from_slice(&[x, y, z]);
            }
        }
    }
    Tensor::from_vec(n, 3, data)
}

/// Regular `k1 x k2` lattice on the `z = 0` face.
pub fn make_uniform_grid_2d(n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Domain("a prior needs at least one point".into()));
    }
    let (k1, k2) = balanced_factors_2(n);
    let mut data = Vec::with_capacity(n * 3);
    for &x in &axis(k1) {
        for &y in &axis(k2) {
            data.extend_from_slice(&[x, y, 0.0]);
        }
    }
    Tensor::from_vec(n, 3, data)
}

/// `n` i.i.d. uniform samples in `[0,1]^3`.
pub fn make_nonuniform_prior(n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Domain("a prior needs at least one point".into()));
    }
    let mut rng: ChaCha8Rng = seeded(seed);
    let data = (0..n * 3).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(n, 3, data)
}

pub fn replicate(kind: PriorKind, grid: Tensor, m: usize) -> Result<PriorSet> {
    if m == 0 {
        return Err(Error::Domain("prior count must be at least 1".into()));
    }
    if grid.cols() != 3 {
        return Err(Error::dim(
            "replicate",
            format!("prior has {} columns, expected 3", grid.cols()),
        ));
    }
    Ok(PriorSet {
        kind,
        grid,
        count: m,
    })
}
