use std::collections::HashMap;

use thiserror::Error;

use super::PointCloud;
use crate::geometry::{is_finite, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("cannot index an empty point cloud")]
    EmptyCloud,
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
}

type Cell = [i64; 3];

/// Uniform voxel hash over an owned point cloud.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cloud: PointCloud,
    voxel: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl SpatialIndex {
    pub fn build(cloud: PointCloud, voxel_size: f64) -> Result<Self, IndexError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(IndexError::InvalidVoxelSize(voxel_size));
        }
        if cloud.is_empty() {
            return Err(IndexError::EmptyCloud);
        }
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            if !is_finite(p) {
                return Err(IndexError::NonFinitePoint(i));
            }
            cells.entry(cell_of(p, voxel_size)).or_default().push(i as u32);
        }
        Ok(Self { cloud, voxel: voxel_size, cells })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    /// Calls `f` with the index of every point within `radius` of `center`.
    pub fn for_each_within(&self, center: &Vec3, radius: f64, mut f: impl FnMut(usize)) {
        let lo = cell_of(&center.add_scalar(-radius), self.voxel);
        let hi = cell_of(&center.add_scalar(radius), self.voxel);
        let r2 = radius * radius;
        for cx in lo[0]..=hi[0] {
            for cy in lo[1]..=hi[1] {
                for cz in lo[2]..=hi[2] {
                    let Some(bucket) = self.cells.get(&[cx, cy, cz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let i = i as usize;
                        if (self.cloud.points[i] - center).norm_squared() <= r2 {
                            f(i);
                        }
                    }
                }
            }
        }
    }

    /// Indices of all points within `radius` of `center`, ascending.
    pub fn within_radius(&self, center: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Whether any occupied cell overlaps the cube of half-width `radius` around `center`.
    pub(crate) fn any_cell_near(&self, center: &Vec3, radius: f64) -> bool {
        let lo = cell_of(&center.add_scalar(-radius), self.voxel);
        let hi = cell_of(&center.add_scalar(radius), self.voxel);
        (lo[0]..=hi[0]).any(|cx| {
            (lo[1]..=hi[1]).any(|cy| (lo[2]..=hi[2]).any(|cz| self.cells.contains_key(&[cx, cy, cz])))
        })
    }
}

fn cell_of(p: &Vec3, voxel: f64) -> Cell {
    [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64]
}
