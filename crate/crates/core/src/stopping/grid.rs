//! Offline cost grids over the Fisher statistic `U`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cost::{estimate_optimal_cost, CostEstimate};
use crate::error::{Result, SjdeError};
use crate::linalg;
use crate::model::{CostWeights, LqgModel};
use crate::seed;

pub const GRID_FORMAT: &str = "sjde-cost-grid";
pub const GRID_VERSION: u32 = 1;

/// How grid coordinates map to `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridCoordinates {
    /// One axis per diagonal entry `u_nn` (`U` diagonal).
    Diagonal,
    /// One axis per group of equal diagonal entries.
    Grouped { groups: Vec<usize> },
    /// One axis per upper-triangle entry `u_ij`, `i ≤ j`, row-major.
    UpperTriangle,
}

impl GridCoordinates {
    pub fn dimension(&self, n: usize) -> usize {
        match self {
            GridCoordinates::Diagonal => n,
            GridCoordinates::Grouped { groups } => groups.len(),
            GridCoordinates::UpperTriangle => n * (n + 1) / 2,
        }
    }

    /// Coordinates of `u`.
    pub fn project(&self, u: &DMatrix<f64>) -> Vec<f64> {
        let n = u.nrows();
        match self {
            GridCoordinates::Diagonal => (0..n).map(|k| u[(k, k)]).collect(),
            GridCoordinates::Grouped { groups } => {
                let mut start = 0;
                groups
                    .iter()
                    .map(|&g| {
                        let s: f64 = (start..start + g).map(|k| u[(k, k)]).sum();
                        start += g;
                        s / g as f64
                    })
                    .collect()
            }
            GridCoordinates::UpperTriangle => {
                let mut out = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in i..n {
                        out.push(u[(i, j)]);
                    }
                }
                out
            }
        }
    }

    /// `U` at grid coordinates. Upper-triangle points off the PSD cone are
    /// projected onto it.
    pub fn matrix(&self, n: usize, coords: &[f64]) -> DMatrix<f64> {
        match self {
            GridCoordinates::Diagonal => DMatrix::from_diagonal(&DVector::from_column_slice(coords)),
            GridCoordinates::Grouped { groups } => {
                let diag: Vec<f64> = groups
                    .iter()
                    .zip(coords)
                    .flat_map(|(&g, &c)| std::iter::repeat_n(c, g))
                    .collect();
                DMatrix::from_diagonal(&DVector::from_vec(diag))
            }
            GridCoordinates::UpperTriangle => {
                let mut u = DMatrix::zeros(n, n);
                let mut it = coords.iter();
                for i in 0..n {
                    for j in i..n {
                        let c = *it.next().expect("coordinate count");
                        u[(i, j)] = c;
                        u[(j, i)] = c;
                    }
                }
                if linalg::min_eigenvalue(&u) < 0.0 {
                    linalg::psd_projection(&u)
                } else {
                    u
                }
            }
        }
    }
}

/// Evenly spaced breakpoints `min, …, max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.min],
            p => (0..p)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (p - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub coords: GridCoordinates,
    pub axes: Vec<AxisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub model_hash: String,
    pub seed: u64,
    pub mc_samples: usize,
}

/// Grid of cost estimates, points ordered with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostGrid {
    pub format: String,
    pub version: u32,
    pub metadata: GridMetadata,
    pub coords: GridCoordinates,
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<CostEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLookup {
    pub estimate: CostEstimate,
    pub point: usize,
    /// Some coordinate fell outside its axis range.
    pub extrapolated: bool,
}

/// SHA-256 of the canonical serialization of `(model, weights)`.
pub fn model_hash(model: &LqgModel, weights: &CostWeights) -> String {
    let bytes = serde_json::to_vec(&(model, weights)).expect("model serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn validate_axes(axes: &[Vec<f64>]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if a.is_empty() {
            return Err(SjdeError::EmptyAxis { axis: i });
        }
        if a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SjdeError::UnsortedAxis { axis: i });
        }
    }
    Ok(())
}

fn nearest(axis: &[f64], x: f64) -> (usize, bool) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, x < axis[0]);
    }
    if x >= axis[last] {
        return (last, x > axis[last]);
    }
    let hi = axis.partition_point(|&a| a < x);
    if axis[hi] == x {
        return (hi, false);
    }
    let lo = hi - 1;
    if x - axis[lo] <= axis[hi] - x {
        (lo, false)
    } else {
        (hi, false)
    }
}

pub fn build_cost_grid(
    spec: &GridSpec,
    model: &LqgModel,
    weights: &CostWeights,
    mc_samples: usize,
    seed: u64,
) -> Result<CostGrid> {
    model.require_binary()?;
    model.check_weights(weights)?;
    let n = model.n();
    if let GridCoordinates::Grouped { groups } = &spec.coords {
        if groups.iter().sum::<usize>() != n || groups.contains(&0) {
            return Err(SjdeError::DimensionMismatch {
                what: "grid coordinate groups",
                expected: n,
                got: groups.iter().sum(),
            });
        }
    }
    let dim = spec.coords.dimension(n);
    if spec.axes.len() != dim {
        return Err(SjdeError::DimensionMismatch {
            what: "grid axis count",
            expected: dim,
            got: spec.axes.len(),
        });
    }
    let axes: Vec<Vec<f64>> = spec.axes.iter().map(AxisSpec::breakpoints).collect();
    validate_axes(&axes)?;
    if spec.coords != GridCoordinates::UpperTriangle {
        for (i, a) in axes.iter().enumerate() {
            if a[0] < 0.0 {
                return Err(SjdeError::InvalidConfig(format!(
                    "diagonal grid axis {i} has negative breakpoints"
                )));
            }
        }
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let values = (0..total)
        .into_par_iter()
        .map(|p| {
            let coords = point_coords(&axes, p);
            let u = spec.coords.matrix(n, &coords);
            estimate_optimal_cost(&u, model, weights, mc_samples, seed::derive_seed(seed, "grid", p as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostGrid {
        format: GRID_FORMAT.to_string(),
        version: GRID_VERSION,
        metadata: GridMetadata {
            model_hash: model_hash(model, weights),
            seed,
            mc_samples,
        },
        coords: spec.coords.clone(),
        axes,
        values,
    })
}

fn point_coords(axes: &[Vec<f64>], mut p: usize) -> Vec<f64> {
    let mut coords = vec![0.0; axes.len()];
    for (c, axis) in coords.iter_mut().zip(axes).rev() {
        *c = axis[p % axis.len()];
        p /= axis.len();
    }
    coords
}

impl CostGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinates of point `p`.
    pub fn point(&self, p: usize) -> Vec<f64> {
        point_coords(&self.axes, p)
    }

    /// Nearest grid point in the flattened coordinates; exact midpoints go
    /// to the lower index.
    pub fn lookup_cost(&self, u: &DMatrix<f64>) -> GridLookup {
        let coords = self.coords.project(u);
        let mut p = 0;
        let mut extrapolated = false;
        for (axis, &x) in self.axes.iter().zip(&coords) {
            let (i, out) = nearest(axis, x);
            extrapolated |= out;
            p = p * axis.len() + i;
        }
        GridLookup {
            estimate: self.values[p],
            point: p,
            extrapolated,
        }
    }

    pub fn check_model(&self, model: &LqgModel, weights: &CostWeights) -> Result<()> {
        let expected = model_hash(model, weights);
        if self.metadata.model_hash != expected {
            return Err(SjdeError::ModelHashMismatch {
                found: self.metadata.model_hash.clone(),
                expected,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: CostGrid = serde_json::from_str(text).map_err(|e| SjdeError::GridFormat(e.to_string()))?;
        if grid.format != GRID_FORMAT {
            return Err(SjdeError::GridFormat(format!("unknown format tag {:?}", grid.format)));
        }
        if grid.version != GRID_VERSION {
            return Err(SjdeError::GridFormat(format!("unsupported version {}", grid.version)));
        }
        validate_axes(&grid.axes)?;
        let total: usize = grid.axes.iter().map(Vec::len).product();
        if grid.values.len() != total {
            return Err(SjdeError::GridFormat(format!(
                "{} values for {} grid points",
                grid.values.len(),
                total
            )));
        }
        Ok(grid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Loads a grid and checks it was built for `(model, weights)`.
    pub fn load(path: &Path, model: &LqgModel, weights: &CostWeights) -> Result<Self> {
        let grid = Self::from_json(&std::fs::read_to_string(path)?)?;
        grid.check_model(model, weights)?;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(axis: Vec<f64>) -> CostGrid {
        let values = axis
            .iter()
            .map(|&a| CostEstimate::exact(a * 10.0))
            .collect();
        CostGrid {
            format: GRID_FORMAT.into(),
            version: GRID_VERSION,
            metadata: GridMetadata {
                model_hash: String::new(),
                seed: 0,
                mc_samples: 100,
            },
            coords: GridCoordinates::Diagonal,
            axes: vec![axis],
            values,
        }
    }

    #[test]
    fn nearest_point_rules() {
        let g = grid_1d(vec![0.0, 1.0, 2.0]);
        let at = |x: f64| g.lookup_cost(&DMatrix::from_element(1, 1, x));
        assert_eq!(at(1.0).point, 1);
        assert_eq!(at(0.5).point, 0);
        assert_eq!(at(1.5).point, 1);
        assert_eq!(at(1.6).point, 2);
        let out = at(7.0);
        assert_eq!((out.point, out.extrapolated), (2, true));
        assert!(!at(2.0).extrapolated);
    }

    #[test]
    fn point_order_is_row_major() {
        let axes = vec![vec![0.0, 1.0], vec![5.0, 6.0, 7.0]];
        assert_eq!(point_coords(&axes, 0), vec![0.0, 5.0]);
        assert_eq!(point_coords(&axes, 1), vec![0.0, 6.0]);
        assert_eq!(point_coords(&axes, 3), vec![1.0, 5.0]);
    }

    #[test]
    fn upper_triangle_round_trip() {
        let u = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = GridCoordinates::UpperTriangle;
        assert_eq!(c.project(&u), vec![2.0, 0.5, 1.0]);
        assert_eq!(c.matrix(2, &[2.0, 0.5, 1.0]), u);
        let projected = c.matrix(2, &[1.0, 3.0, 1.0]);
        assert!(linalg::min_eigenvalue(&projected) > -1e-12);
    }

    #[test]
    fn grouped_coordinates() {
        let c = GridCoordinates::Grouped { groups: vec![2, 2] };
        let u = c.matrix(4, &[1.5, 3.0]);
        assert_eq!(u.diagonal().as_slice(), &[1.5, 1.5, 3.0, 3.0]);
        assert_eq!(c.project(&u), vec![1.5, 3.0]);
    }

    #[test]
    fn axis_validation() {
        assert_eq!(validate_axes(&[vec![]]), Err(SjdeError::EmptyAxis { axis: 0 }));
        assert_eq!(
            validate_axes(&[vec![0.0], vec![1.0, 1.0]]),
            Err(SjdeError::UnsortedAxis { axis: 1 })
        );
    }
}
