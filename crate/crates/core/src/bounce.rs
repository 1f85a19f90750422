//! Interaction-order classification (single- vs. multi-bounce).
//!
//! For every MPC two candidate positions of its final interaction are
//! compared:
//!
//! * the *last-hop scatterer*, found by casting the AoA ray from the panel
//!   into the environment map, limited to the total path length `τ·c`;
//! * the *single-bounce estimate* `ŝ`, the point on the same ray whose
//!   detour `‖ŝ − P‖ + ‖ŝ − u‖` equals `τ·c`.
//!
//! If the path really bounced once both coincide, so the MPC is labeled
//! single-bounce when they are within a threshold of each other.
//!
//! The single-bounce position minimizes
//! `‖s − P − (τc − ‖s − u‖)·e‖²`, whose zero set on the ray is the
//! intersection of the ray with the ellipsoid of foci `P` and `u`. With
//! `v = P − u` and `s = P + d·e`, squaring `τc − d = ‖v + d·e‖` gives the
//! closed form `d = (τ²c² − ‖v‖²) / (2(τc + v·e))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MpcKey, MpcRecord, PanelGeometry, Vec3, DEFAULT_DELAY_TOLERANCE_S, SPEED_OF_LIGHT};
use crate::pointcloud::{first_intersection, Hit, MarchParams, Region, Ray, SpatialIndex};

/// Default single-/multi-bounce threshold on `‖ŝ − s_LH‖`, meters.
pub const DEFAULT_THRESHOLD_M: f64 = 1.5;

/// Denominators of the closed form at or below this (meters) are degenerate.
const DEGENERATE_EPS: f64 = 1e-9;

/// What to do with an MPC whose single-bounce geometry has no solution but
/// whose ray did hit the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    #[default]
    Multi,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub threshold_m: f64,
    pub march: MarchParams,
    pub infeasible_policy: InfeasiblePolicy,
    /// Delay tolerance used for the line-of-sight test, seconds.
    pub los_delay_tolerance_s: f64,
    /// Angular tolerance used for the line-of-sight test, radians.
    pub los_angle_tolerance_rad: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            threshold_m: DEFAULT_THRESHOLD_M,
            march: MarchParams::default(),
            infeasible_policy: InfeasiblePolicy::Multi,
            los_delay_tolerance_s: DEFAULT_DELAY_TOLERANCE_S,
            los_angle_tolerance_rad: 2f64.to_radians(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold_m > 0.0) {
            return Err(format!("bounce threshold must be positive, got {}", self.threshold_m));
        }
        self.march.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BounceLabel {
    Single,
    Multi,
    /// The AoA ray left the mapped environment.
    Indeterminate,
    /// Direct path; outside the bounce taxonomy.
    LineOfSight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    /// `τ·c < ‖P − u‖`.
    ShorterThanLineOfSight,
    /// `τ·c + v·e ≤ ε`: the ray points straight at the UE with LOS length.
    Degenerate,
    /// The root lies outside `(0, τ·c]`.
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BounceDecision {
    pub key: MpcKey,
    pub label: BounceLabel,
    pub last_hop: Option<Vec3>,
    pub last_hop_region: Option<Region>,
    pub single_bounce_estimate: Option<Vec3>,
    /// `‖ŝ − s_LH‖`, meters.
    pub mismatch: Option<f64>,
    pub infeasibility: Option<Infeasibility>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("link has no MPCs")]
    EmptyLink,
}

/// Casts the AoA ray from the panel, limited to `τ·c`, into the cloud.
pub fn last_hop_scatterer(
    mpc: &MpcRecord,
    panel: &PanelGeometry,
    index: &SpatialIndex,
    march: &MarchParams,
) -> Option<Hit> {
    let ray = Ray::new(panel.position, mpc.aoa.direction(), mpc.path_length())?;
    first_intersection(index, &ray, march)
}

/// Closed-form single-bounce scatterer on the AoA ray.
pub fn solve_single_bounce(mpc: &MpcRecord, panel: &PanelGeometry, ue: &Vec3) -> Result<Vec3, Infeasibility> {
    let total = mpc.path_length();
    let e = mpc.aoa.direction();
    let v = panel.position - ue;
    let los = v.norm();
    if total < los {
        return Err(Infeasibility::ShorterThanLineOfSight);
    }
    let denom = 2.0 * (total + v.dot(&e));
    if denom <= DEGENERATE_EPS {
        return Err(Infeasibility::Degenerate);
    }
    // (τc − ‖v‖)(τc + ‖v‖) loses less precision than τ²c² − ‖v‖² near LOS
    let d = (total - los) * (total + los) / denom;
    if !(d > 0.0 && d <= total) {
        return Err(Infeasibility::OutOfRange);
    }
    Ok(panel.position + e * d)
}

/// Direct path: delay within tolerance of the LOS delay and AoA pointing at the UE.
pub fn is_line_of_sight(mpc: &MpcRecord, panel: &PanelGeometry, ue: &Vec3, cfg: &ClassifierConfig) -> bool {
    let to_ue = ue - panel.position;
    let los = to_ue.norm();
    if los == 0.0 || (mpc.path_length() - los).abs() > cfg.los_delay_tolerance_s * SPEED_OF_LIGHT {
        return false;
    }
    let cos = (to_ue / los).dot(&mpc.aoa.direction()).clamp(-1.0, 1.0);
    cos.acos() <= cfg.los_angle_tolerance_rad
}

pub fn classify(
    mpc: &MpcRecord,
    panel: &PanelGeometry,
    ue: &Vec3,
    index: &SpatialIndex,
    cfg: &ClassifierConfig,
) -> BounceDecision {
    let mut decision = BounceDecision {
        key: mpc.key,
        label: BounceLabel::Indeterminate,
        last_hop: None,
        last_hop_region: None,
        single_bounce_estimate: None,
        mismatch: None,
        infeasibility: None,
    };
    if is_line_of_sight(mpc, panel, ue, cfg) {
        decision.label = BounceLabel::LineOfSight;
        return decision;
    }
    let hit = last_hop_scatterer(mpc, panel, index, &cfg.march);
    let estimate = solve_single_bounce(mpc, panel, ue);
    decision.last_hop = hit.map(|h| h.point);
    decision.last_hop_region = hit.map(|h| h.region);
    match estimate {
        Ok(s) => decision.single_bounce_estimate = Some(s),
        Err(why) => decision.infeasibility = Some(why),
    }
    decision.label = match (hit, estimate) {
        (None, _) => BounceLabel::Indeterminate,
        (Some(h), Ok(s)) => {
            let mismatch = (s - h.point).norm();
            decision.mismatch = Some(mismatch);
            if mismatch <= cfg.threshold_m {
                BounceLabel::Single
            } else {
                BounceLabel::Multi
            }
        }
        (Some(_), Err(_)) => match cfg.infeasible_policy {
            InfeasiblePolicy::Multi => BounceLabel::Multi,
            InfeasiblePolicy::Indeterminate => BounceLabel::Indeterminate,
        },
    };
    decision
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BounceCounts {
    pub single: usize,
    pub multi: usize,
    pub indeterminate: usize,
    pub line_of_sight: usize,
}

impl BounceCounts {
    pub fn tally<'a>(labels: impl IntoIterator<Item = &'a BounceLabel>) -> Self {
        let mut c = Self::default();
        for l in labels {
            match l {
                BounceLabel::Single => c.single += 1,
                BounceLabel::Multi => c.multi += 1,
                BounceLabel::Indeterminate => c.indeterminate += 1,
                BounceLabel::LineOfSight => c.line_of_sight += 1,
            }
        }
        c
    }

    /// Share of single-bounce among classified (single + multi) MPCs;
    /// `None` when nothing was classified.
    pub fn single_bounce_ratio(&self) -> Option<f64> {
        let denom = self.single + self.multi;
        (denom > 0).then(|| self.single as f64 / denom as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkClassification {
    pub decisions: Vec<BounceDecision>,
    pub counts: BounceCounts,
    /// `None` when every MPC was indeterminate or LOS.
    pub eta_sb: Option<f64>,
}

/// Classifies every MPC of one (panel, snapshot) link, in parallel.
/// Decisions come back in the input order.
pub fn classify_link(
    mpcs: &[MpcRecord],
    panel: &PanelGeometry,
    ue: &Vec3,
    index: &SpatialIndex,
    cfg: &ClassifierConfig,
) -> Result<LinkClassification, ClassifyError> {
    if mpcs.is_empty() {
        return Err(ClassifyError::EmptyLink);
    }
    let decisions: Vec<BounceDecision> = mpcs.par_iter().map(|m| classify(m, panel, ue, index, cfg)).collect();
    let counts = BounceCounts::tally(decisions.iter().map(|d| &d.label));
    Ok(LinkClassification { eta_sb: counts.single_bounce_ratio(), decisions, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AoA;
    use crate::pointcloud::PointCloud;
    use std::f64::consts::PI;

    fn panel_at(p: Vec3) -> PanelGeometry {
        PanelGeometry { id: 1, position: p, boresight: Vec3::y() }
    }

    fn mpc(az: f64, zen: f64, length: f64) -> MpcRecord {
        MpcRecord::new(MpcKey::new(1, 1, 0), AoA::new(az, zen).unwrap(), length / SPEED_OF_LIGHT)
    }

    fn wall_index(x0: f64) -> SpatialIndex {
        let mut pts = Vec::new();
        for i in 0..=200 {
            for j in 0..=200 {
                pts.push(Vec3::new(x0, -2.0 + i as f64 * 0.02, -2.0 + j as f64 * 0.02));
            }
        }
        let n = pts.len();
        SpatialIndex::build(PointCloud::with_labels(pts, vec![Region::WallEast; n]), 0.2).unwrap()
    }

    #[test]
    fn three_four_five_triangle() {
        let m = mpc(PI / 2.0, PI / 2.0, 8.0);
        let s = solve_single_bounce(&m, &panel_at(Vec3::zeros()), &Vec3::new(4.0, 0.0, 0.0)).unwrap();
        assert!((s - Vec3::new(0.0, 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn line_of_sight_is_degenerate() {
        let m = mpc(0.0, PI / 2.0, 4.0);
        let r = solve_single_bounce(&m, &panel_at(Vec3::zeros()), &Vec3::new(4.0, 0.0, 0.0));
        assert!(r.is_err());
        let short = mpc(PI / 2.0, PI / 2.0, 3.0);
        assert_eq!(
            solve_single_bounce(&short, &panel_at(Vec3::zeros()), &Vec3::new(4.0, 0.0, 0.0)),
            Err(Infeasibility::ShorterThanLineOfSight)
        );
    }

    #[test]
    fn last_hop_on_wall_and_range_limited() {
        let idx = wall_index(5.0);
        let p = panel_at(Vec3::zeros());
        let m = mpc(0.1, PI / 2.0 - 0.05, 12.0);
        let hit = last_hop_scatterer(&m, &p, &idx, &MarchParams::default()).unwrap();
        let e = m.aoa.direction();
        let exact = e * (5.0 / e.x);
        assert!((hit.point - exact).norm() < 0.05);
        assert!(last_hop_scatterer(&mpc(0.1, PI / 2.0, 3.0), &p, &idx, &MarchParams::default()).is_none());
        assert!(last_hop_scatterer(&mpc(PI, PI / 2.0, 12.0), &p, &idx, &MarchParams::default()).is_none());
    }

    #[test]
    fn wall_reflection_is_single() {
        // panel at origin, UE at (0, 3, 0), wall x = 5: image of u is (10, 3, 0)
        let idx = wall_index(5.0);
        let p = panel_at(Vec3::zeros());
        let u = Vec3::new(0.0, 3.0, 0.0);
        let image = Vec3::new(10.0, 3.0, 0.0);
        let aoa = AoA::from_direction(&image).unwrap();
        let m = MpcRecord::new(MpcKey::new(1, 1, 1), aoa, image.norm() / SPEED_OF_LIGHT);
        let d = classify(&m, &p, &u, &idx, &ClassifierConfig::default());
        assert_eq!(d.label, BounceLabel::Single);
        assert!(d.mismatch.unwrap() < 0.1);
        assert_eq!(d.last_hop_region, Some(Region::WallEast));
    }

    #[test]
    fn threshold_decides() {
        let idx = wall_index(5.0);
        let p = panel_at(Vec3::zeros());
        let u = Vec3::new(0.0, 3.0, 0.0);
        // ray along +x hits the wall at (5,0,0); choose lengths so ŝ sits 0.2 m / 2.0 m beyond it
        for (offset, want) in [(0.2, BounceLabel::Single), (2.0, BounceLabel::Multi)] {
            let s = Vec3::new(5.0 + offset, 0.0, 0.0);
            let length = s.norm() + (s - u).norm();
            let d = classify(&mpc(0.0, PI / 2.0, length), &p, &u, &idx, &ClassifierConfig::default());
            assert!((d.mismatch.unwrap() - offset).abs() < 1e-6, "{:?}", d.mismatch);
            assert_eq!(d.label, want);
        }
    }

    #[test]
    fn open_space_is_indeterminate_and_los_is_flagged() {
        let idx = wall_index(5.0);
        let p = panel_at(Vec3::zeros());
        let u = Vec3::new(0.0, 3.0, 0.0);
        let away = classify(&mpc(PI, PI / 2.0, 10.0), &p, &u, &idx, &ClassifierConfig::default());
        assert_eq!(away.label, BounceLabel::Indeterminate);
        let los = classify(&mpc(PI / 2.0, PI / 2.0, 3.0), &p, &u, &idx, &ClassifierConfig::default());
        assert_eq!(los.label, BounceLabel::LineOfSight);
    }

    #[test]
    fn infeasible_with_hit_follows_policy() {
        let idx = wall_index(5.0);
        let p = panel_at(Vec3::zeros());
        // UE straight down the ray beyond the wall, delay equal to LOS but AoA check disabled
        let u = Vec3::new(7.0, 0.0, 0.0);
        let m = mpc(0.0, PI / 2.0, 7.0);
        let cfg = ClassifierConfig { los_angle_tolerance_rad: -1.0, ..Default::default() };
        let d = classify(&m, &p, &u, &idx, &cfg);
        assert_eq!(d.label, BounceLabel::Multi);
        assert!(d.infeasibility.is_some());
        let cfg = ClassifierConfig { infeasible_policy: InfeasiblePolicy::Indeterminate, ..cfg };
        assert_eq!(classify(&m, &p, &u, &idx, &cfg).label, BounceLabel::Indeterminate);
    }

    #[test]
    fn link_ratio() {
        let c = BounceCounts { single: 3, multi: 7, indeterminate: 2, line_of_sight: 1 };
        assert!((c.single_bounce_ratio().unwrap() - 0.3).abs() < 1e-15);
        let c = BounceCounts { single: 0, multi: 5, ..Default::default() };
        assert_eq!(c.single_bounce_ratio(), Some(0.0));
        let c = BounceCounts { indeterminate: 4, ..Default::default() };
        assert_eq!(c.single_bounce_ratio(), None);
    }

    #[test]
    fn empty_link_rejected() {
        let idx = wall_index(5.0);
        let r = classify_link(&[], &panel_at(Vec3::zeros()), &Vec3::x(), &idx, &ClassifierConfig::default());
        assert_eq!(r.unwrap_err(), ClassifyError::EmptyLink);
    }
}
