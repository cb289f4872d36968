//! Synthetic point-cloud images.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridImage};

/// Fraction of the units that [`ImageKind::ClustersPlusNoise`] spreads uniformly.
pub const NOISE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    Clusters,
    UniformNoise,
    ClustersPlusNoise,
}

impl ImageKind {
    pub const ALL: [ImageKind; 3] = [ImageKind::Clusters, ImageKind::UniformNoise, ImageKind::ClustersPlusNoise];

    pub fn name(self) -> &'static str {
        match self {
            ImageKind::Clusters => "clusters",
            ImageKind::UniformNoise => "uniform_noise",
            ImageKind::ClustersPlusNoise => "clusters_plus_noise",
        }
    }
}

impl fmt::Display for ImageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ImageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image kind {s:?}")))
    }
}

/// Parameters of a generated image. Masses are integer units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: ImageKind,
    pub delta: usize,
    pub k: usize,
    /// Standard deviation (pixels) of the per-axis offsets around a center.
    pub spread: f64,
    /// Total number of unit masses.
    pub units: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(kind: ImageKind, delta: usize, k: usize, spread: f64, seed: u64) -> Self {
        Self { kind, delta, k, spread, units: 1000, seed }
    }
}

/// A generated image split into its cluster and noise parts.
#[derive(Clone, Debug)]
pub struct Generated {
    pub clusters: GridImage,
    pub noise: GridImage,
    pub centers: Vec<(usize, usize)>,
}

impl Generated {
    pub fn image(&self) -> GridImage {
        &self.clusters + &self.noise
    }
}

pub fn generate(spec: &GenSpec) -> Result<GridImage> {
    Ok(generate_parts(spec)?.image())
}

pub fn generate_parts(spec: &GenSpec) -> Result<Generated> {
    let grid = Grid::new(spec.delta)?;
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return invalid(format!("spread must be finite and nonnegative, got {}", spec.spread));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_units = match spec.kind {
        ImageKind::Clusters => 0,
        ImageKind::UniformNoise => spec.units,
        ImageKind::ClustersPlusNoise => (NOISE_FRACTION * spec.units as f64).round() as usize,
    };
    let cluster_units = spec.units - noise_units;
    let mut clusters = GridImage::zeros(grid);
    let mut centers = Vec::new();
    if cluster_units > 0 {
        if spec.k == 0 || spec.k > grid.n() {
            return invalid(format!("need 1 <= k <= {} clusters, got {}", grid.n(), spec.k));
        }
        centers = rand::seq::index::sample(&mut rng, grid.n(), spec.k)
            .into_iter()
            .map(|p| grid.pixel_coords(p))
            .collect();
        let offsets = Normal::new(0.0, spec.spread.max(f64::MIN_POSITIVE)).expect("valid normal");
        let last = (grid.delta() - 1) as f64;
        for unit in 0..cluster_units {
            let (r, c) = centers[unit % spec.k];
            let (dr, dc) = if spec.spread == 0.0 {
                (0.0, 0.0)
            } else {
                (offsets.sample(&mut rng).round(), offsets.sample(&mut rng).round())
            };
            let r = (r as f64 + dr).clamp(0.0, last) as usize;
            let c = (c as f64 + dc).clamp(0.0, last) as usize;
            clusters.add_at(r, c, 1.0);
        }
    }
    let mut noise = GridImage::zeros(grid);
    for _ in 0..noise_units {
        let p = rng.random_range(0..grid.n());
        let (r, c) = grid.pixel_coords(p);
        noise.add_at(r, c, 1.0);
    }
    Ok(Generated { clusters, noise, centers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_is_k_sparse() {
        let x = generate(&GenSpec::new(ImageKind::Clusters, 32, 4, 0.0, 3)).unwrap();
        assert_eq!(x.nnz(), 4);
        assert_eq!(x.mass(), 1000.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec::new(ImageKind::UniformNoise, 16, 1, 0.0, 11);
        assert_eq!(generate(&spec).unwrap().to_emdimg(), generate(&spec).unwrap().to_emdimg());
        let other = GenSpec { seed: 12, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn noise_split() {
        let g = generate_parts(&GenSpec::new(ImageKind::ClustersPlusNoise, 32, 4, 2.0, 0)).unwrap();
        let x = g.image();
        assert!((g.noise.mass() / x.mass() - 0.05).abs() < 1e-3);
        assert!(x.values().iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn kinds_round_trip() {
        for k in ImageKind::ALL {
            assert_eq!(k.to_string().parse::<ImageKind>().unwrap(), k);
        }
        assert!("gauss".parse::<ImageKind>().is_err());
        assert!(generate(&GenSpec::new(ImageKind::Clusters, 12, 1, 0.0, 0)).is_err());
    }
}
