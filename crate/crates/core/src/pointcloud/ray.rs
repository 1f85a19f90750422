use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Region, SpatialIndex};
use crate::geometry::{is_finite, Vec3};

/// Ray-marching parameters for [`first_intersection`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarchParams {
    /// Distance between successive probe points, meters.
    pub step: f64,
    /// Neighborhood radius around each probe point, meters.
    pub capture_radius: f64,
    /// Points required inside the neighborhood to declare a hit.
    pub min_support: usize,
}

impl Default for MarchParams {
    fn default() -> Self {
        Self { step: 0.05, capture_radius: 0.10, min_support: 5 }
    }
}

impl MarchParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(format!("march step must be positive, got {}", self.step));
        }
        if !(self.capture_radius > 0.0 && self.capture_radius.is_finite()) {
            return Err(format!("capture radius must be positive, got {}", self.capture_radius));
        }
        if self.min_support == 0 {
            return Err("min_support must be at least 1".into());
        }
        Ok(())
    }
}

/// Half-line `origin + d·direction` for `0 < d ≤ max_range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub max_range: f64,
}

impl Ray {
    /// `direction` is normalized; returns `None` for a zero/non-finite
    /// direction or a non-positive range.
    pub fn new(origin: Vec3, direction: Vec3, max_range: f64) -> Option<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !is_finite(&origin) || !is_finite(&direction) || !(max_range > 0.0) {
            return None;
        }
        Some(Self { origin, direction: direction / n, max_range })
    }

    pub fn at(&self, d: f64) -> Vec3 {
        self.origin + self.direction * d
    }
}

/// First surface contact found by [`first_intersection`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    /// Estimated contact point on the surface.
    pub point: Vec3,
    /// Ray parameter of the probe that first found support; `0 < distance ≤ max_range`.
    pub distance: f64,
    pub support_count: usize,
    /// Majority label of the supporting points.
    pub region: Region,
}

// Ratio of smallest to middle covariance eigenvalue below which the
// supporting points are treated as a locally planar patch.
const PLANARITY_RATIO: f64 = 0.1;
// Rays closer than this (cosine) to the fitted plane keep the centroid.
const MIN_INCIDENCE_COS: f64 = 0.05;

/// Marches along `ray` and returns the first probe whose neighborhood holds
/// at least `min_support` points, or `None` if none does within range.
///
/// The contact point starts as the centroid of the supporting points. When
/// those points form a planar patch, it is moved along the ray to where the
/// ray pierces the fitted plane, which removes the offset the centroid has
/// at oblique incidence.
pub fn first_intersection(index: &SpatialIndex, ray: &Ray, params: &MarchParams) -> Option<Hit> {
    let cloud = index.cloud();
    let r = params.capture_radius;
    let mut support = Vec::new();
    let mut step = 1usize;
    loop {
        let d = step as f64 * params.step;
        if d > ray.max_range * (1.0 + 1e-12) {
            return None;
        }
        step += 1;
        let probe = ray.at(d);
        if !index.any_cell_near(&probe, r) {
            continue;
        }
        support.clear();
        index.for_each_within(&probe, r, |i| support.push(i));
        if support.len() < params.min_support {
            continue;
        }
        let n = support.len() as f64;
        let centroid = support.iter().fold(Vec3::zeros(), |acc, &i| acc + cloud.points[i]) / n;
        let point = refine_on_plane(cloud.points.as_slice(), &support, &centroid, ray, d, params)
            .unwrap_or(centroid);
        return Some(Hit {
            point,
            distance: d.min(ray.max_range),
            support_count: support.len(),
            region: majority_region(cloud, &support),
        });
    }
}

fn refine_on_plane(
    points: &[Vec3],
    support: &[usize],
    centroid: &Vec3,
    ray: &Ray,
    probe_distance: f64,
    params: &MarchParams,
) -> Option<Vec3> {
    if support.len() < 3 {
        return None;
    }
    let cov = support.iter().fold(Matrix3::zeros(), |acc, &i| {
        let q = points[i] - centroid;
        acc + q * q.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lmin, lmid) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(lmid > 0.0) || lmin > PLANARITY_RATIO * lmid {
        return None;
    }
    let normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    let cos = normal.dot(&ray.direction);
    if cos.abs() < MIN_INCIDENCE_COS {
        return None;
    }
    let t = normal.dot(&(centroid - ray.origin)) / cos;
    // The probe was within capture_radius of the plane, so the crossing
    // cannot be farther than capture_radius / |cos| from it.
    let bound = params.capture_radius / cos.abs() + params.step;
    if !(t > 0.0) || (t - probe_distance).abs() > bound {
        return None;
    }
    Some(ray.at(t))
}

fn majority_region(cloud: &super::PointCloud, support: &[usize]) -> Region {
    let mut counts = [0usize; 8];
    for &i in support {
        counts[cloud.label(i).code() as usize] += 1;
    }
    let (code, _) = counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (c, &n)| if n > best.1 { (c, n) } else { best });
    Region::from_code(code as u8).unwrap_or(Region::Unknown)
}
