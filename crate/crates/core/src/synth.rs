//! Image-source ground-truth generator.
//!
//! Rooms are axis-aligned boxes whose six faces, plus optional rectangular
//! reflector patches, act as specular mirrors. Paths up to second order are
//! built by mirroring the UE across the surfaces and validating each
//! specular point against its surface extent. The generated MPC records
//! carry the same fields an extraction algorithm would output, so they can
//! be fed straight into the classifier and tracker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{aoa_from_points, AoA, MpcKey, MpcRecord, PanelGeometry, UeState, Vec3, SPEED_OF_LIGHT};
use crate::pointcloud::{PointCloud, Region};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("plane normal is zero or non-finite")]
    DegenerateNormal,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Plane `normal · x = offset` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, SynthError> {
        let n = normal.norm();
        if !(n > 1e-12) || !n.is_finite() || !offset.is_finite() {
            return Err(SynthError::DegenerateNormal);
        }
        Ok(Self { normal: normal / n, offset: offset / n })
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Reflection of `point` across `plane`.
pub fn mirror_image(point: &Vec3, plane: &Plane) -> Vec3 {
    point - plane.normal * (2.0 * plane.signed_distance(point))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    /// The two in-plane axes, in ascending order.
    pub fn others(self) -> [usize; 2] {
        match self {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }
}

/// Axis-aligned rectangle in the plane `coord[axis] = offset`. `min`/`max`
/// bound the two in-plane coordinates in [`Axis::others`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub label: Region,
    pub axis: Axis,
    pub offset: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Surface {
    pub fn plane(&self) -> Plane {
        let mut n = Vec3::zeros();
        n[self.axis.index()] = 1.0;
        Plane { normal: n, offset: self.offset }
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let [a, b] = self.axis.others();
        (p[self.axis.index()] - self.offset).abs() <= tol
            && p[a] >= self.min[0] - tol
            && p[a] <= self.max[0] + tol
            && p[b] >= self.min[1] - tol
            && p[b] <= self.max[1] + tol
    }

    /// Point where segment `from → to` crosses the surface strictly between its ends.
    fn crossing(&self, from: &Vec3, to: &Vec3) -> Option<Vec3> {
        let k = self.axis.index();
        let span = to[k] - from[k];
        if span.abs() < 1e-15 {
            return None;
        }
        let t = (self.offset - from[k]) / span;
        if !(t > 1e-12 && t < 1.0 - 1e-12) {
            return None;
        }
        let mut p = from + (to - from) * t;
        p[k] = self.offset;
        self.contains(&p, 1e-9).then_some(p)
    }

    /// Regular grid with spacing close to `pitch`, edges included.
    pub fn sample(&self, pitch: f64) -> Vec<Vec3> {
        let [a, b] = self.axis.others();
        let grid = |lo: f64, hi: f64| -> Vec<f64> {
            let n = ((hi - lo) / pitch).round().max(1.0) as usize;
            (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
        };
        let (ga, gb) = (grid(self.min[0], self.max[0]), grid(self.min[1], self.max[1]));
        let mut pts = Vec::with_capacity(ga.len() * gb.len());
        for &u in &ga {
            for &v in &gb {
                let mut p = Vec3::zeros();
                p[self.axis.index()] = self.offset;
                p[a] = u;
                p[b] = v;
                pts.push(p);
            }
        }
        pts
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoxObstacle {
    fn faces(&self) -> Vec<Surface> {
        let mut out = Vec::with_capacity(6);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let [a, b] = axis.others();
            for offset in [self.min[axis.index()], self.max[axis.index()]] {
                out.push(Surface {
                    label: Region::Object,
                    axis,
                    offset,
                    min: [self.min[a], self.min[b]],
                    max: [self.max[a], self.max[b]],
                });
            }
        }
        out
    }

    /// Whether the open segment `a → b` passes through the box.
    fn blocks(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let (mut t0, mut t1) = (1e-9, 1.0 - 1e-9);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let (mut lo, mut hi) = ((self.min[k] - a[k]) / d[k], (self.max[k] - a[k]) / d[k]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = f64::max(t0, lo);
            t1 = f64::min(t1, hi);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    /// Extents along x, y, z; the room spans `[0, size]` on each axis.
    pub size: [f64; 3],
    /// Faces acting as mirrors; `None` means all six.
    #[serde(default)]
    pub reflective: Option<Vec<Region>>,
}

impl Room {
    pub fn faces(&self) -> [Surface; 6] {
        let [lx, ly, lz] = self.size;
        let face = |label, axis, offset, max| Surface { label, axis, offset, min: [0.0, 0.0], max };
        [
            face(Region::Floor, Axis::Z, 0.0, [lx, ly]),
            face(Region::Ceiling, Axis::Z, lz, [lx, ly]),
            face(Region::WallWest, Axis::X, 0.0, [ly, lz]),
            face(Region::WallEast, Axis::X, lx, [ly, lz]),
            face(Region::WallSouth, Axis::Y, 0.0, [lx, lz]),
            face(Region::WallNorth, Axis::Y, ly, [lx, lz]),
        ]
    }

    pub fn strictly_contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] > 0.0 && p[k] < self.size[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum PanelLayout {
    /// `count` panels starting at `first`, spaced `spacing` apart along `direction`.
    Row { count: u32, spacing: f64, first: Vec3, direction: Vec3, boresight: Vec3 },
    Explicit { panels: Vec<PanelGeometry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Route {
    /// `snapshots` positions evenly spaced by arc length along the polyline.
    Polyline { waypoints: Vec<Vec3>, snapshots: u32 },
    Explicit { positions: Vec<Vec3> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub sigma_angle_rad: f64,
    pub sigma_delay_s: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_angle_rad: 1f64.to_radians(), sigma_delay_s: 1e-9 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { sigma_angle_rad: 0.0, sigma_delay_s: 0.0 }
    }
}

/// Diffuse (non-specular) MPCs. Each snapshot draws nominal scatterers
/// shared by its panels; a link at distance `d` uses the first
/// `per_link + round(per_meter·d)` of them, each through a jittered
/// interaction point and with a random excess path length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClutterModel {
    pub per_link: u32,
    /// Additional scatterers per meter of panel-UE distance, rounded per link.
    pub per_meter: f64,
    /// Per-panel jitter of the interaction point around its nominal position, meters.
    pub position_sigma_m: f64,
    /// Excess path length is drawn uniformly from `[0, max_excess_m]`.
    pub max_excess_m: f64,
}

impl Default for ClutterModel {
    fn default() -> Self {
        Self { per_link: 12, per_meter: 0.0, position_sigma_m: 1.0, max_excess_m: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub room: Room,
    pub panels: PanelLayout,
    pub route: Route,
    pub max_reflection_order: u8,
    pub noise: NoiseModel,
    pub clutter: ClutterModel,
    /// Extra reflecting patches (e.g. boards, partial wall segments).
    pub reflectors: Vec<Surface>,
    pub boxes: Vec<BoxObstacle>,
    /// Drop paths whose segments cross a box.
    pub occlusion: bool,
    /// Sampling pitch of the exported point cloud, meters.
    pub cloud_pitch: f64,
}

impl Default for Scenario {
    /// 10 × 8 × 3 m room, eight panels 60 cm apart along the south side,
    /// 50 snapshots along a 12 m L-shaped route ending in front of the panels.
    fn default() -> Self {
        Self {
            seed: 1,
            room: Room { size: [10.0, 8.0, 3.0], reflective: None },
            panels: PanelLayout::Row {
                count: 8,
                spacing: 0.6,
                first: Vec3::new(2.9, 0.5, 1.5),
                direction: Vec3::x(),
                boresight: Vec3::y(),
            },
            route: Route::Polyline {
                waypoints: vec![Vec3::new(1.5, 7.5, 1.0), Vec3::new(7.5, 7.5, 1.0), Vec3::new(7.5, 1.5, 1.0)],
                snapshots: 50,
            },
            max_reflection_order: 2,
            noise: NoiseModel::default(),
            clutter: ClutterModel::default(),
            reflectors: Vec::new(),
            boxes: Vec::new(),
            occlusion: false,
            cloud_pitch: 0.02,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SynthError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::none();
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        if !self.room.size.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return bad(format!("room size must be positive, got {:?}", self.room.size));
        }
        if self.max_reflection_order > 2 {
            return bad(format!("max_reflection_order must be 0, 1 or 2, got {}", self.max_reflection_order));
        }
        if !(self.cloud_pitch > 0.0) {
            return bad(format!("cloud_pitch must be positive, got {}", self.cloud_pitch));
        }
        if !(self.noise.sigma_angle_rad >= 0.0 && self.noise.sigma_delay_s >= 0.0) {
            return bad("noise standard deviations must be non-negative".into());
        }
        if !(self.clutter.position_sigma_m >= 0.0 && self.clutter.max_excess_m >= 0.0 && self.clutter.per_meter >= 0.0) {
            return bad("clutter spreads must be non-negative".into());
        }
        if let Some(faces) = &self.room.reflective {
            if let Some(f) = faces.iter().find(|f| !(f.is_wall() || matches!(f, Region::Floor | Region::Ceiling))) {
                return bad(format!("'{f}' is not a room face"));
            }
        }
        let panels = self.panels();
        if panels.is_empty() {
            return bad("scenario has no panels".into());
        }
        let mut ids: Vec<u32> = panels.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != panels.len() {
            return bad("panel ids must be unique".into());
        }
        if let Some(p) = panels.iter().find(|p| !self.room.strictly_contains(&p.position)) {
            return bad(format!("panel {} at {:?} is not strictly inside the room", p.id, p.position.as_slice()));
        }
        let ues = self.ue_states();
        if ues.is_empty() {
            return bad("route has no snapshots".into());
        }
        if let Some(u) = ues.iter().find(|u| !self.room.strictly_contains(&u.position)) {
            return bad(format!("UE snapshot {} is not strictly inside the room", u.snapshot_id));
        }
        for r in &self.reflectors {
            if !(r.min[0] <= r.max[0] && r.min[1] <= r.max[1]) {
                return bad(format!("reflector '{}' has inverted bounds", r.label));
            }
        }
        Ok(())
    }

    pub fn panels(&self) -> Vec<PanelGeometry> {
        match &self.panels {
            PanelLayout::Row { count, spacing, first, direction, boresight } => {
                let dir = direction.try_normalize(0.0).unwrap_or_else(Vec3::x);
                (0..*count)
                    .map(|k| PanelGeometry {
                        id: k + 1,
                        position: first + dir * (*spacing * k as f64),
                        boresight: *boresight,
                    })
                    .collect()
            }
            PanelLayout::Explicit { panels } => panels.clone(),
        }
    }

    /// Snapshots along the route; `moved_distance` is the arc length traveled.
    pub fn ue_states(&self) -> Vec<UeState> {
        let samples: Vec<(Vec3, f64)> = match &self.route {
            Route::Explicit { positions } => {
                let mut moved = 0.0;
                positions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        if i > 0 {
                            moved += (p - positions[i - 1]).norm();
                        }
                        (*p, moved)
                    })
                    .collect()
            }
            Route::Polyline { waypoints, snapshots } => sample_polyline(waypoints, *snapshots as usize),
        };
        samples
            .into_iter()
            .enumerate()
            .map(|(i, (position, moved_distance))| UeState { snapshot_id: i as u32 + 1, position, moved_distance })
            .collect()
    }

    /// Mirroring surfaces: the reflective room faces followed by the extra reflectors.
    pub fn surfaces(&self) -> Vec<Surface> {
        let faces = self.room.faces();
        let mut out: Vec<Surface> = match &self.room.reflective {
            None => faces.to_vec(),
            Some(keep) => faces.into_iter().filter(|f| keep.contains(&f.label)).collect(),
        };
        out.extend(self.reflectors.iter().copied());
        out
    }

    fn occluded(&self, chain: &[Vec3]) -> bool {
        self.occlusion && chain.windows(2).any(|w| self.boxes.iter().any(|b| b.blocks(&w[0], &w[1])))
    }
}

/// `n` points evenly spaced by arc length, paired with their arc length.
fn sample_polyline(waypoints: &[Vec3], n: usize) -> Vec<(Vec3, f64)> {
    if waypoints.is_empty() || n == 0 {
        return Vec::new();
    }
    let seg: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg.iter().sum();
    if seg.is_empty() {
        return vec![(waypoints[0], 0.0); n];
    }
    if n == 1 {
        return vec![(waypoints[0], 0.0)];
    }
    (0..n)
        .map(|i| {
            let arc = total * i as f64 / (n - 1) as f64;
            let mut s = arc;
            for (k, &len) in seg.iter().enumerate() {
                if s <= len || k == seg.len() - 1 {
                    let t = if len > 0.0 { (s / len).min(1.0) } else { 0.0 };
                    return (waypoints[k] + (waypoints[k + 1] - waypoints[k]) * t, arc);
                }
                s -= len;
            }
            unreachable!()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    LineOfSight,
    Specular,
    Clutter,
}

/// An MPC record with the ground truth that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMpc {
    pub record: MpcRecord,
    pub kind: PathKind,
    /// Number of specular reflections; `None` for clutter.
    pub order: Option<u8>,
    /// Reflecting surfaces, first interaction first.
    pub surfaces: Vec<Region>,
    /// Indices into [`Scenario::surfaces`], parallel to `surfaces`.
    pub surface_indices: Vec<usize>,
    /// Virtual source position (`P + τc·e` before noise).
    pub true_vs: Vec3,
    /// Specular points, first interaction first.
    pub specular_points: Vec<Vec3>,
}

const STREAM_PATHS: u64 = 0x5041_5448;
const STREAM_CLUTTER: u64 = 0x434c_5554;

fn link_rng(seed: u64, purpose: u64, snapshot: u32, panel: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(((snapshot as u64) << 32) | panel as u64);
    rng
}

struct Candidate {
    order: u8,
    surfaces: Vec<usize>,
    image: Vec3,
    points: Vec<Vec3>,
}

/// Enumerates LOS and all valid specular paths up to the scenario's order
/// for one link, optionally perturbed by the scenario's noise model.
pub fn generate_paths(scenario: &Scenario, ue: &UeState, panel: &PanelGeometry) -> Vec<GroundTruthMpc> {
    let u = ue.position;
    let p = panel.position;
    let surfaces = scenario.surfaces();
    let mut cands = vec![Candidate { order: 0, surfaces: vec![], image: u, points: vec![] }];
    if scenario.max_reflection_order >= 1 {
        for (i, s) in surfaces.iter().enumerate() {
            let image = mirror_image(&u, &s.plane());
            if let Some(sp) = s.crossing(&p, &image) {
                cands.push(Candidate { order: 1, surfaces: vec![i], image, points: vec![sp] });
            }
        }
    }
    if scenario.max_reflection_order >= 2 {
        for (i, first) in surfaces.iter().enumerate() {
            let image1 = mirror_image(&u, &first.plane());
            for (j, last) in surfaces.iter().enumerate() {
                if i == j {
                    continue;
                }
                let image2 = mirror_image(&image1, &last.plane());
                let Some(s2) = last.crossing(&p, &image2) else { continue };
                let Some(s1) = first.crossing(&s2, &image1) else { continue };
                cands.push(Candidate { order: 2, surfaces: vec![i, j], image: image2, points: vec![s1, s2] });
            }
        }
    }

    let los_delay = (p - u).norm() / SPEED_OF_LIGHT;
    let mut rng = link_rng(scenario.seed, STREAM_PATHS, ue.snapshot_id, panel.id);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(cands.len());
    for c in cands {
        let mut chain = vec![u];
        chain.extend(c.points.iter().copied());
        chain.push(p);
        if scenario.occluded(&chain) {
            continue;
        }
        let Ok(aoa) = aoa_from_points(&p, &c.image) else { continue };
        let delay = (c.image - p).norm() / SPEED_OF_LIGHT;
        let (aoa, delay) = perturb(aoa, delay, los_delay, &scenario.noise, &mut rng, &normal);
        let key = MpcKey::new(panel.id, ue.snapshot_id, out.len() as u32);
        out.push(GroundTruthMpc {
            record: MpcRecord::new(key, aoa, delay),
            kind: if c.order == 0 { PathKind::LineOfSight } else { PathKind::Specular },
            order: Some(c.order),
            surfaces: c.surfaces.iter().map(|&k| surfaces[k].label).collect(),
            surface_indices: c.surfaces,
            true_vs: c.image,
            specular_points: c.points,
        });
    }
    out
}

/// Independent Gaussian perturbation of azimuth, zenith and delay. The
/// perturbed delay never drops below the link's LOS delay.
fn perturb(
    aoa: AoA,
    delay: f64,
    los_delay: f64,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
    normal: &Normal<f64>,
) -> (AoA, f64) {
    let (na, nz, nd): (f64, f64, f64) = (normal.sample(rng), normal.sample(rng), normal.sample(rng));
    if noise.sigma_angle_rad == 0.0 && noise.sigma_delay_s == 0.0 {
        return (aoa, delay);
    }
    let aoa = AoA::wrapped(aoa.azimuth + na * noise.sigma_angle_rad, aoa.zenith + nz * noise.sigma_angle_rad)
        .unwrap_or(aoa);
    let delay = (delay + nd * noise.sigma_delay_s).max(los_delay);
    (aoa, delay)
}

/// Appends diffuse MPCs to one link's paths. Nominal scatterers are shared
/// by all panels of a snapshot; interaction point jitter and excess length
/// are drawn per panel, so their virtual scatterers do not coincide.
pub fn add_scatter_clutter(
    mut paths: Vec<GroundTruthMpc>,
    scenario: &Scenario,
    ue: &UeState,
    panel: &PanelGeometry,
) -> Vec<GroundTruthMpc> {
    let model = &scenario.clutter;
    let size = Vec3::from(scenario.room.size);
    let count = model.per_link as usize + (model.per_meter * (ue.position - panel.position).norm()).round() as usize;
    if count == 0 {
        return paths;
    }
    let most = model.per_link as usize + (model.per_meter * size.norm()).ceil() as usize;
    let margin = 0.3f64.min(size.min() / 4.0);
    let mut nominal_rng = link_rng(scenario.seed, STREAM_CLUTTER, ue.snapshot_id, 0);
    let nominal: Vec<Vec3> = (0..most)
        .map(|_| {
            Vec3::new(
                nominal_rng.random_range(margin..size.x - margin),
                nominal_rng.random_range(margin..size.y - margin),
                nominal_rng.random_range(margin..size.z - margin),
            )
        })
        .collect();
    let mut rng = link_rng(scenario.seed, STREAM_CLUTTER, ue.snapshot_id, panel.id);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let excess = Uniform::new_inclusive(0.0, model.max_excess_m).expect("valid excess range");
    let p = panel.position;
    let u = ue.position;
    for q0 in nominal.into_iter().take(count) {
        let jitter = Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        let extra = excess.sample(&mut rng);
        let q = (q0 + jitter * model.position_sigma_m).zip_map(&size, |c, l| c.clamp(0.05, l - 0.05));
        let Ok(aoa) = aoa_from_points(&p, &q) else { continue };
        if (q - p).norm() < 0.1 {
            continue;
        }
        let length = (q - p).norm() + (u - q).norm() + extra;
        let key = MpcKey::new(panel.id, ue.snapshot_id, paths.len() as u32);
        paths.push(GroundTruthMpc {
            record: MpcRecord::new(key, aoa, length / SPEED_OF_LIGHT),
            kind: PathKind::Clutter,
            order: None,
            surfaces: vec![],
            surface_indices: vec![],
            true_vs: p + aoa.direction() * length,
            specular_points: vec![q],
        });
    }
    paths
}

/// Samples the room faces (all six, reflective or not), reflectors and box
/// faces on a grid of the given pitch, labeling each point by its surface.
pub fn export_cloud(scenario: &Scenario, pitch: f64) -> PointCloud {
    let mut surfaces: Vec<Surface> = scenario.room.faces().to_vec();
    surfaces.extend(scenario.reflectors.iter().copied());
    surfaces.extend(scenario.boxes.iter().flat_map(|b| b.faces()));
    let mut cloud = PointCloud::with_labels(Vec::new(), Vec::new());
    for s in surfaces {
        let pts = s.sample(pitch);
        let labels = vec![s.label; pts.len()];
        cloud.extend(PointCloud::with_labels(pts, labels));
    }
    cloud
}

/// Every link of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub panels: Vec<PanelGeometry>,
    pub ues: Vec<UeState>,
    /// Sorted by (snapshot, panel, path).
    pub paths: Vec<GroundTruthMpc>,
}

impl SyntheticDataset {
    pub fn records(&self) -> Vec<MpcRecord> {
        self.paths.iter().map(|p| p.record.clone()).collect()
    }
}

/// Generates specular paths plus clutter for every (snapshot, panel) link.
pub fn synthesize(scenario: &Scenario) -> Result<SyntheticDataset, SynthError> {
    scenario.validate()?;
    let panels = scenario.panels();
    let ues = scenario.ue_states();
    let links: Vec<(usize, usize)> =
        (0..ues.len()).flat_map(|s| (0..panels.len()).map(move |k| (s, k))).collect();
    let per_link: Vec<Vec<GroundTruthMpc>> = links
        .par_iter()
        .map(|&(s, k)| {
            let paths = generate_paths(scenario, &ues[s], &panels[k]);
            add_scatter_clutter(paths, scenario, &ues[s], &panels[k])
        })
        .collect();
    let mut paths: Vec<GroundTruthMpc> = per_link.into_iter().flatten().collect();
    paths.sort_by_key(|p| p.record.key.report_order());
    Ok(SyntheticDataset { panels, ues, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn empty_room_scenario(order: u8) -> Scenario {
        Scenario {
            max_reflection_order: order,
            clutter: ClutterModel { per_link: 0, ..Default::default() },
            ..Scenario::default()
        }
        .noiseless()
    }

    fn single_link(p: Vec3, u: Vec3) -> (PanelGeometry, UeState) {
        (
            PanelGeometry { id: 1, position: p, boresight: Vec3::y() },
            UeState { snapshot_id: 1, position: u, moved_distance: 0.0 },
        )
    }

    #[test]
    fn mirror_across_wall() {
        let wall = Plane::new(Vec3::x(), 5.0).unwrap();
        assert_eq!(mirror_image(&Vec3::new(2.0, 1.0, 1.0), &wall), Vec3::new(8.0, 1.0, 1.0));
        let on = Vec3::new(5.0, -3.0, 2.0);
        assert_eq!(mirror_image(&on, &wall), on);
        assert_eq!(Plane::new(Vec3::zeros(), 1.0).unwrap_err(), SynthError::DegenerateNormal);
    }

    #[test]
    fn mirror_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let Ok(plane) = Plane::new(n, rng.random_range(-5.0..5.0)) else { continue };
            let p = Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            assert!((mirror_image(&mirror_image(&p, &plane), &plane) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn order_zero_is_los_only() {
        let s = empty_room_scenario(0);
        let (p, u) = single_link(Vec3::new(5.0, 1.0, 1.5), Vec3::new(5.0, 6.0, 1.5));
        let paths = generate_paths(&s, &u, &p);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
    }

    #[test]
    fn first_order_mid_room_has_six_paths() {
        let s = empty_room_scenario(1);
        let (p, u) = single_link(Vec3::new(3.0, 2.0, 1.5), Vec3::new(6.0, 5.0, 1.5));
        let paths = generate_paths(&s, &u, &p);
        assert_eq!(paths.len(), 7);
        for gt in &paths[1..] {
            // hand-computed image of u across the reflecting face
            let face = s.room.faces().into_iter().find(|f| f.label == gt.surfaces[0]).unwrap();
            let k = face.axis.index();
            let mut image = u.position;
            image[k] = 2.0 * face.offset - image[k];
            let expect = (p.position - image).norm() / SPEED_OF_LIGHT;
            assert!((gt.record.delay - expect).abs() < 1e-18);
            assert!((gt.true_vs - image).norm() < 1e-12);
            assert!(gt.record.delay > paths[0].record.delay);
        }
    }

    #[test]
    fn floor_reflection_unfolds_to_right_triangle() {
        let s = empty_room_scenario(1);
        let (p, u) = single_link(Vec3::new(2.0, 4.0, 1.0), Vec3::new(8.0, 4.0, 1.0));
        let paths = generate_paths(&s, &u, &p);
        let floor = paths.iter().find(|g| g.surfaces == [Region::Floor]).unwrap();
        assert!((floor.record.path_length() - 40f64.sqrt()).abs() < 1e-9);
        assert!(floor.record.aoa.zenith > std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn second_order_skips_same_surface_and_validates_points() {
        let s = empty_room_scenario(2);
        let (p, u) = single_link(Vec3::new(3.0, 2.0, 1.5), Vec3::new(6.0, 5.0, 1.0));
        let paths = generate_paths(&s, &u, &p);
        let second: Vec<_> = paths.iter().filter(|g| g.order == Some(2)).collect();
        assert!(!second.is_empty());
        let faces = s.room.faces();
        for g in second {
            assert_ne!(g.surface_indices[0], g.surface_indices[1]);
            for (pt, &k) in g.specular_points.iter().zip(&g.surface_indices) {
                assert!(faces[k].contains(pt, 1e-9));
            }
            let length = (g.specular_points[0] - u.position).norm()
                + (g.specular_points[1] - g.specular_points[0]).norm()
                + (p.position - g.specular_points[1]).norm();
            assert!((g.record.path_length() - length).abs() < 1e-9);
        }
    }

    #[test]
    fn patch_reflects_only_where_specular_point_lands() {
        let mut s = empty_room_scenario(1);
        s.room.reflective = Some(vec![]);
        s.reflectors.push(Surface {
            label: Region::Object,
            axis: Axis::Y,
            offset: 8.0,
            min: [3.0, 0.0],
            max: [5.0, 3.0],
        });
        let u = UeState { snapshot_id: 1, position: Vec3::new(5.0, 4.0, 1.0), moved_distance: 0.0 };
        let visible: Vec<u32> = s
            .panels()
            .iter()
            .filter(|p| generate_paths(&s, &u, p).iter().any(|g| g.order == Some(1)))
            .map(|p| p.id)
            .collect();
        assert_eq!(visible, vec![1, 2, 3, 4]);
    }

    #[test]
    fn occluding_box_removes_los() {
        let mut s = empty_room_scenario(0);
        s.boxes.push(BoxObstacle { min: Vec3::new(4.5, 3.0, 0.0), max: Vec3::new(5.5, 4.0, 2.0) });
        let (p, u) = single_link(Vec3::new(5.0, 1.0, 1.0), Vec3::new(5.0, 6.0, 1.0));
        assert_eq!(generate_paths(&s, &u, &p).len(), 1);
        s.occlusion = true;
        assert!(generate_paths(&s, &u, &p).is_empty());
    }

    #[test]
    fn default_route_and_panels() {
        let s = Scenario::default();
        s.validate().unwrap();
        let ues = s.ue_states();
        assert_eq!(ues.len(), 50);
        assert!((ues.last().unwrap().moved_distance - 12.0).abs() < 1e-9);
        let panels = s.panels();
        assert_eq!(panels.len(), 8);
        assert!(((panels[1].position - panels[0].position).norm() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cloud_count_matches_area() {
        let s = Scenario::default();
        let cloud = export_cloud(&s, 0.02);
        let area: f64 = s.room.faces().iter().map(|f| f.area()).sum();
        let n = cloud.len() as f64;
        // edges are sampled inclusive, so the count slightly exceeds area / pitch²
        let expect: usize = s
            .room
            .faces()
            .iter()
            .map(|f| ((f.max[0] - f.min[0]) / 0.02).round() as usize + 1)
            .zip(s.room.faces().iter().map(|f| ((f.max[1] - f.min[1]) / 0.02).round() as usize + 1))
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(cloud.len(), expect);
        assert!((n - area / 0.0004).abs() / (area / 0.0004) < 0.02);
        let faces = s.room.faces();
        for (p, l) in cloud.points.iter().zip(cloud.labels.as_ref().unwrap()) {
            let f = faces.iter().find(|f| f.label == *l).unwrap();
            assert!((p[f.axis.index()] - f.offset).abs() <= 1e-12);
        }
    }

    #[test]
    fn clutter_zero_is_identity() {
        let s = empty_room_scenario(1);
        let (p, u) = single_link(Vec3::new(3.0, 2.0, 1.5), Vec3::new(6.0, 5.0, 1.5));
        let paths = generate_paths(&s, &u, &p);
        assert_eq!(add_scatter_clutter(paths.clone(), &s, &u, &p), paths);
    }

    #[test]
    fn clutter_respects_los_bound() {
        let s = Scenario::default();
        let (p, u) = single_link(Vec3::new(3.0, 2.0, 1.5), Vec3::new(6.0, 5.0, 1.5));
        let out = add_scatter_clutter(vec![], &s, &u, &p);
        assert_eq!(out.len(), 12);
        for g in out {
            g.record.check_link(&p.position, &u.position, 0.0).unwrap();
            assert_eq!(g.kind, PathKind::Clutter);
        }
    }

    #[test]
    fn noisy_delays_never_beat_los() {
        let s = Scenario { max_reflection_order: 1, ..Scenario::default() };
        let data = synthesize(&s).unwrap();
        for g in &data.paths {
            let p = &data.panels[g.record.key.panel_id as usize - 1];
            let u = &data.ues[g.record.key.snapshot_id as usize - 1];
            g.record.check_link(&p.position, &u.position, 1e-15).unwrap();
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let s = Scenario::default();
        assert_eq!(synthesize(&s).unwrap(), synthesize(&s).unwrap());
        let other = Scenario { seed: 2, ..Scenario::default() };
        assert_ne!(synthesize(&s).unwrap().paths, synthesize(&other).unwrap().paths);
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        assert!(Scenario::from_toml("max_reflection_order = 3").is_err());
    }
}
