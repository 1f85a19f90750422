//! Environment point clouds: storage, region labels, spatial index, ray
//! queries and ASCII PLY I/O.

mod index;
mod ply;
mod ray;

pub use index::{IndexError, SpatialIndex};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyError};
pub use ray::{first_intersection, Hit, MarchParams, Ray};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Default distance from a bounding-box face within which a point takes the face's label.
pub const DEFAULT_WALL_MARGIN: f64 = 0.15;

/// Semantic region of a point. The discriminants are the PLY `region` codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Region {
    Unknown = 0,
    Floor = 1,
    Ceiling = 2,
    /// Face at minimum x.
    WallWest = 3,
    /// Face at maximum x.
    WallEast = 4,
    /// Face at minimum y.
    WallSouth = 5,
    /// Face at maximum y.
    WallNorth = 6,
    Object = 7,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::Unknown,
        Region::Floor,
        Region::Ceiling,
        Region::WallWest,
        Region::WallEast,
        Region::WallSouth,
        Region::WallNorth,
        Region::Object,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Unknown => "unknown",
            Region::Floor => "floor",
            Region::Ceiling => "ceiling",
            Region::WallWest => "wall_west",
            Region::WallEast => "wall_east",
            Region::WallSouth => "wall_south",
            Region::WallNorth => "wall_north",
            Region::Object => "object",
        }
    }

    pub fn is_wall(self) -> bool {
        matches!(self, Region::WallWest | Region::WallEast | Region::WallSouth | Region::WallNorth)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown region '{s}'"))
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }
}

/// Environment geometry as a set of points with optional per-point labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<Region>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, labels: None }
    }

    /// Panics if the label count differs from the point count.
    pub fn with_labels(points: Vec<Vec3>, labels: Vec<Region>) -> Self {
        assert_eq!(points.len(), labels.len(), "one label per point");
        Self { points, labels: Some(labels) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::of_points(&self.points)
    }

    pub fn label(&self, i: usize) -> Region {
        self.labels.as_ref().map_or(Region::Unknown, |l| l[i])
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn extend(&mut self, other: PointCloud) {
        match (&mut self.labels, other.labels) {
            (Some(mine), Some(theirs)) => mine.extend(theirs),
            (Some(mine), None) => mine.extend(std::iter::repeat(Region::Unknown).take(other.points.len())),
            (None, Some(theirs)) if self.points.is_empty() => self.labels = Some(theirs),
            (None, Some(theirs)) => {
                let mut l = vec![Region::Unknown; self.points.len()];
                l.extend(theirs);
                self.labels = Some(l);
            }
            (None, None) => {}
        }
        self.points.extend(other.points);
    }
}

/// Labels every point by the bounding-box face it lies within `margin` of
/// (nearest face wins); points away from all faces become [`Region::Object`].
pub fn label_regions_by_bbox(cloud: &PointCloud, margin: f64) -> PointCloud {
    let Some(bbox) = cloud.bounding_box() else {
        return cloud.clone();
    };
    let faces = [
        (2, false, Region::Floor),
        (2, true, Region::Ceiling),
        (0, false, Region::WallWest),
        (0, true, Region::WallEast),
        (1, false, Region::WallSouth),
        (1, true, Region::WallNorth),
    ];
    let labels = cloud
        .points
        .iter()
        .map(|p| {
            faces
                .iter()
                .map(|&(axis, upper, region)| {
                    let d = if upper { bbox.max[axis] - p[axis] } else { p[axis] - bbox.min[axis] };
                    (d, region)
                })
                .filter(|(d, _)| *d <= margin)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map_or(Region::Object, |(_, r)| r)
        })
        .collect();
    PointCloud { points: cloud.points.clone(), labels: Some(labels) }
}

/// Returns the cloud unchanged when it already carries labels, otherwise
/// labels it by bounding box.
pub fn ensure_labels(cloud: PointCloud, margin: f64) -> PointCloud {
    if cloud.has_labels() {
        cloud
    } else {
        label_regions_by_bbox(&cloud, margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room_corners() -> Vec<Vec3> {
        vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(10.0, 8.0, 3.0)]
    }

    #[test]
    fn ceiling_point_labeled() {
        let mut pts = room_corners();
        pts.push(Vec3::new(5.0, 4.0, 2.99));
        pts.push(Vec3::new(5.0, 4.0, 1.5));
        let labeled = label_regions_by_bbox(&PointCloud::new(pts), 0.15);
        assert_eq!(labeled.label(2), Region::Ceiling);
        assert_eq!(labeled.label(3), Region::Object);
    }

    #[test]
    fn nearest_face_wins_near_edges() {
        let mut pts = room_corners();
        pts.push(Vec3::new(0.05, 4.0, 0.01));
        pts.push(Vec3::new(9.99, 7.9, 1.5));
        let labeled = label_regions_by_bbox(&PointCloud::new(pts), 0.15);
        assert_eq!(labeled.label(2), Region::Floor);
        assert_eq!(labeled.label(3), Region::WallEast);
    }

    #[test]
    fn region_codes_round_trip() {
        for r in Region::ALL {
            assert_eq!(Region::from_code(r.code()), Some(r));
            assert_eq!(r.name().parse::<Region>().unwrap(), r);
        }
        assert_eq!(Region::from_code(8), None);
    }

    #[test]
    fn extend_merges_labels() {
        let mut a = PointCloud::new(vec![Vec3::zeros()]);
        a.extend(PointCloud::with_labels(vec![Vec3::x()], vec![Region::Floor]));
        assert_eq!(a.labels, Some(vec![Region::Unknown, Region::Floor]));
    }
}
