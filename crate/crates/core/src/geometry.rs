//! Shared geometric and channel-domain types.
//!
//! Frame: right-handed, meters, `z` up. Angles of arrival use azimuth `φ`
//! in `(-π, π]` measured from `+x` toward `+y`, and zenith `θ` in `[0, π]`
//! measured from `+z`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position or displacement in meters.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Speed of light in vacuum, m/s. Every delay/length conversion goes through this.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default tolerance when checking a delay against the line-of-sight bound.
pub const DEFAULT_DELAY_TOLERANCE_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("azimuth {0} rad outside (-pi, pi]")]
    AzimuthOutOfRange(f64),
    #[error("zenith {0} rad outside [0, pi]")]
    ZenithOutOfRange(f64),
    #[error("points coincide; direction undefined")]
    CoincidentPoints,
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Which angle the second AoA column carries in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElevationConvention {
    /// Angle from the `+z` axis.
    #[default]
    Zenith,
    /// Angle above the horizontal plane; converted as `θ = π/2 − el`.
    Elevation,
}

impl ElevationConvention {
    pub fn to_zenith(self, value: f64) -> f64 {
        match self {
            Self::Zenith => value,
            Self::Elevation => PI / 2.0 - value,
        }
    }

    pub fn from_zenith(self, zenith: f64) -> f64 {
        match self {
            Self::Zenith => zenith,
            Self::Elevation => PI / 2.0 - zenith,
        }
    }
}

/// Angle of arrival at a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoA {
    /// Azimuth in radians, `(-π, π]`.
    pub azimuth: f64,
    /// Zenith in radians, `[0, π]`.
    pub zenith: f64,
}

impl AoA {
    pub fn new(azimuth: f64, zenith: f64) -> Result<Self, GeometryError> {
        if !(azimuth > -PI && azimuth <= PI) {
            return Err(GeometryError::AzimuthOutOfRange(azimuth));
        }
        if !(0.0..=PI).contains(&zenith) {
            return Err(GeometryError::ZenithOutOfRange(zenith));
        }
        Ok(Self { azimuth, zenith })
    }

    /// Canonical AoA of an arbitrary non-zero direction.
    ///
    /// At the poles the azimuth is undefined and is set to 0.
    pub fn from_direction(direction: &Vec3) -> Result<Self, GeometryError> {
        if !direction.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = direction.norm();
        if norm == 0.0 {
            return Err(GeometryError::CoincidentPoints);
        }
        let horizontal = direction.x.hypot(direction.y);
        // atan2 of the horizontal and vertical components is better conditioned
        // than acos near the poles.
        let zenith = horizontal.atan2(direction.z);
        let azimuth = if horizontal <= norm * 1e-15 {
            0.0
        } else {
            let phi = direction.y.atan2(direction.x);
            if phi <= -PI {
                PI
            } else {
                phi
            }
        };
        Ok(Self { azimuth, zenith })
    }

    /// Canonicalizes an arbitrary (possibly perturbed) angle pair by going
    /// through its direction vector.
    pub fn wrapped(azimuth: f64, zenith: f64) -> Result<Self, GeometryError> {
        Self::from_direction(&unit_direction(azimuth, zenith))
    }

    pub fn direction(&self) -> Vec3 {
        unit_direction(self.azimuth, self.zenith)
    }
}

/// `[cosφ sinθ, sinφ sinθ, cosθ]` for any angle pair, without range checks.
pub fn unit_direction(azimuth: f64, zenith: f64) -> Vec3 {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = zenith.sin_cos();
    Vec3::new(cp * st, sp * st, ct)
}

/// Unit vector of an AoA.
pub fn direction_vector(aoa: &AoA) -> Vec3 {
    aoa.direction()
}

/// AoA of the direction pointing from `from` to `to`.
pub fn aoa_from_points(from: &Vec3, to: &Vec3) -> Result<AoA, GeometryError> {
    AoA::from_direction(&(to - from))
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// One distributed base-station array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelGeometry {
    pub id: u32,
    pub position: Vec3,
    /// Informational only.
    #[serde(default = "default_boresight")]
    pub boresight: Vec3,
}

fn default_boresight() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

/// UE position at one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    #[serde(rename = "snapshot")]
    pub snapshot_id: u32,
    pub position: Vec3,
    #[serde(default)]
    pub moved_distance: f64,
}

/// Identity of one extracted path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MpcKey {
    pub panel_id: u32,
    pub snapshot_id: u32,
    pub path_id: u32,
}

impl MpcKey {
    pub fn new(panel_id: u32, snapshot_id: u32, path_id: u32) -> Self {
        Self { panel_id, snapshot_id, path_id }
    }

    /// Ordering used for reports: snapshot, then panel, then path.
    pub fn report_order(&self) -> (u32, u32, u32) {
        (self.snapshot_id, self.panel_id, self.path_id)
    }
}

impl fmt::Display for MpcKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "panel {} snapshot {} path {}", self.panel_id, self.snapshot_id, self.path_id)
    }
}

/// 2×2 complex polarization matrix, row-major `[re11, im11, re12, im12, re21, im21, re22, im22]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polarization(pub [f64; 8]);

/// One extracted path of a (panel, snapshot) link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcRecord {
    pub key: MpcKey,
    pub aoa: AoA,
    /// Seconds.
    pub delay: f64,
    pub doppler_hz: Option<f64>,
    pub gain_db: Option<f64>,
    pub polarization: Option<Polarization>,
}

impl MpcRecord {
    pub fn new(key: MpcKey, aoa: AoA, delay: f64) -> Self {
        Self { key, aoa, delay, doppler_hz: None, gain_db: None, polarization: None }
    }

    /// Total propagation length `τ·c` in meters.
    pub fn path_length(&self) -> f64 {
        self.delay * SPEED_OF_LIGHT
    }

    /// Checks `τ > 0` and `τ·c ≥ ‖P − u‖ − ε·c` for the record's link.
    pub fn check_link(&self, panel: &Vec3, ue: &Vec3, delay_tolerance: f64) -> Result<(), String> {
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(format!("non-positive delay {}", self.delay));
        }
        let los = (panel - ue).norm();
        if self.path_length() < los - delay_tolerance * SPEED_OF_LIGHT {
            return Err(format!(
                "path length {:.4} m shorter than line of sight {:.4} m",
                self.path_length(),
                los
            ));
        }
        Ok(())
    }
}
