//! Virtual-scatterer tracking across the panels of one snapshot.
//!
//! Each MPC defines a virtual scatterer (VS) by extending its AoA ray to the
//! full path length. Specular reflections seen by several panels share a VS
//! (the mirror image of the UE), so a static-state Kalman filter run over
//! the panels in order, with mutual-nearest-neighbor association, collects
//! the MPCs of one reflection into a track. MPCs on tracks spanning enough
//! panels are labeled reflected.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{aoa_from_points, AoA, GeometryError, MpcKey, MpcRecord, PanelGeometry, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Process noise variance per axis, m².
    pub process_noise: f64,
    /// Measurement noise variance per axis, m².
    pub measurement_noise: f64,
    /// Initial covariance per axis, m²; `None` means equal to `measurement_noise`.
    pub initial_covariance: Option<f64>,
    /// Association gate, meters. `f64::INFINITY` disables gating.
    pub gate: f64,
    pub confirm_min_panels: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.05 * 0.05,
            measurement_noise: 0.30 * 0.30,
            initial_covariance: None,
            gate: 1.0,
            confirm_min_panels: 3,
        }
    }
}

impl TrackerConfig {
    pub fn initial(&self) -> f64 {
        self.initial_covariance.unwrap_or(self.measurement_noise)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.process_noise >= 0.0) || !(self.measurement_noise > 0.0) || !(self.initial() > 0.0) {
            return Err("tracker variances must be positive".into());
        }
        if !(self.gate > 0.0) {
            return Err(format!("association gate must be positive, got {}", self.gate));
        }
        if self.confirm_min_panels < 2 {
            return Err("confirm_min_panels must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("covariance is not symmetric positive semi-definite (min eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),
}

/// Measured VS of one MPC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsMeasurement {
    pub position: Vec3,
    pub key: MpcKey,
}

/// `z = P + τc·e`.
pub fn compute_vs(mpc: &MpcRecord, panel: &PanelGeometry) -> VsMeasurement {
    VsMeasurement { position: panel.position + mpc.aoa.direction() * mpc.path_length(), key: mpc.key }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    pub state: Vec3,
    pub covariance: Matrix3<f64>,
    /// Member MPC per visited panel.
    pub members: BTreeMap<u32, MpcKey>,
}

impl Track {
    pub fn new(id: u32, z: &VsMeasurement, cfg: &TrackerConfig) -> Self {
        Self {
            id,
            state: z.position,
            covariance: Matrix3::identity() * cfg.initial(),
            members: BTreeMap::from([(z.key.panel_id, z.key)]),
        }
    }

    pub fn panels_visited(&self) -> BTreeSet<u32> {
        self.members.keys().copied().collect()
    }

    pub fn lifetime(&self) -> usize {
        self.members.len()
    }

    pub fn is_confirmed(&self, cfg: &TrackerConfig) -> bool {
        self.lifetime() >= cfg.confirm_min_panels
    }
}

/// Static-state prediction: state kept, covariance grows by `Q`.
pub fn kf_predict(track: &Track, cfg: &TrackerConfig) -> Track {
    let mut t = track.clone();
    t.covariance += Matrix3::identity() * cfg.process_noise;
    t
}

/// `K = M(M + R)⁻¹` for a predicted covariance `M` and `R = r·I`.
pub fn kalman_gain(predicted: &Matrix3<f64>, cfg: &TrackerConfig) -> Result<Matrix3<f64>, TrackerError> {
    check_psd(predicted)?;
    let innovation_cov = predicted + Matrix3::identity() * cfg.measurement_noise;
    // M + R is SPD because M is PSD and R is positive definite.
    let inv = innovation_cov
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(TrackerError::NotPositiveSemiDefinite(f64::NAN))?;
    Ok(predicted * inv)
}

/// Kalman update with identity observation:
/// `K = M(M + R)⁻¹`, `M' = (I − K)M`, `s' = s + K(z − s)`.
pub fn kf_update(track: &Track, z: &Vec3, cfg: &TrackerConfig) -> Result<Track, TrackerError> {
    let gain = kalman_gain(&track.covariance, cfg)?;
    let mut t = track.clone();
    t.state = track.state + gain * (z - track.state);
    let m = (Matrix3::identity() - gain) * track.covariance;
    t.covariance = (m + m.transpose()) * 0.5;
    Ok(t)
}

fn check_psd(m: &Matrix3<f64>) -> Result<(), TrackerError> {
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if !m.iter().all(|v| v.is_finite()) || asym > 1e-9 * scale {
        return Err(TrackerError::NotPositiveSemiDefinite(f64::NAN));
    }
    let min = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(TrackerError::NotPositiveSemiDefinite(min));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, measurement index)`, ascending by track index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_measurements: Vec<usize>,
}

/// Mutual-minimum-distance association: track `i` and measurement `j`
/// pair iff each is the other's nearest and their distance is within
/// `gate`. Distance ties resolve to the lower index.
pub fn associate(predicted: &[Vec3], measurements: &[Vec3], gate: f64) -> Association {
    let nearest = |from: &Vec3, to: &[Vec3]| -> Option<(usize, f64)> {
        to.iter()
            .enumerate()
            .map(|(k, p)| (k, (p - from).norm()))
            .fold(None, |best, (k, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((k, d)),
            })
    };
    let nearest_meas: Vec<Option<(usize, f64)>> = predicted.iter().map(|t| nearest(t, measurements)).collect();
    let nearest_track: Vec<Option<(usize, f64)>> = measurements.iter().map(|m| nearest(m, predicted)).collect();

    let mut out = Association::default();
    let mut meas_used = vec![false; measurements.len()];
    for (i, nm) in nearest_meas.iter().enumerate() {
        match nm {
            Some((j, d)) if *d <= gate && nearest_track[*j].map(|(t, _)| t) == Some(i) => {
                out.pairs.push((i, *j));
                meas_used[*j] = true;
            }
            _ => out.unmatched_tracks.push(i),
        }
    }
    out.unmatched_measurements = (0..measurements.len()).filter(|&j| !meas_used[j]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Reflected,
    /// Scattering, diffraction or a mix.
    Other,
    LineOfSight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotTracks {
    /// All tracks, confirmed or not, in birth order.
    pub tracks: Vec<Track>,
    /// Serialized as a list of `[key, mechanism]` pairs.
    #[serde(with = "label_pairs")]
    pub labels: BTreeMap<MpcKey, Mechanism>,
}

mod label_pairs {
    use super::{BTreeMap, Mechanism, MpcKey};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<MpcKey, Mechanism>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&MpcKey, &Mechanism)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MpcKey, Mechanism>, D::Error> {
        Ok(Vec::<(MpcKey, Mechanism)>::deserialize(d)?.into_iter().collect())
    }
}

impl SnapshotTracks {
    pub fn confirmed(&self, cfg: &TrackerConfig) -> impl Iterator<Item = &Track> + '_ {
        let cfg = *cfg;
        self.tracks.iter().filter(move |t| t.is_confirmed(&cfg))
    }
}

/// Runs the panel-by-panel tracker for one snapshot.
///
/// Panels are visited in ascending id. Within a panel, measurements are
/// sorted by key, so the result does not depend on input order. Tracks not
/// matched at a panel coast (predict only).
pub fn track_snapshot(
    by_panel: &BTreeMap<u32, Vec<VsMeasurement>>,
    cfg: &TrackerConfig,
) -> Result<SnapshotTracks, TrackerError> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut next_id = 0u32;
    for (n, meas) in by_panel.values().enumerate() {
        let mut meas = meas.clone();
        meas.sort_by_key(|m| m.key);
        if n > 0 {
            for t in tracks.iter_mut() {
                *t = kf_predict(t, cfg);
            }
        }
        let predicted: Vec<Vec3> = tracks.iter().map(|t| t.state).collect();
        let positions: Vec<Vec3> = meas.iter().map(|m| m.position).collect();
        let assoc = associate(&predicted, &positions, cfg.gate);
        for &(i, j) in &assoc.pairs {
            let mut updated = kf_update(&tracks[i], &meas[j].position, cfg)?;
            updated.members.insert(meas[j].key.panel_id, meas[j].key);
            tracks[i] = updated;
        }
        for &j in &assoc.unmatched_measurements {
            tracks.push(Track::new(next_id, &meas[j], cfg));
            next_id += 1;
        }
    }
    let mut labels: BTreeMap<MpcKey, Mechanism> = by_panel
        .values()
        .flatten()
        .map(|m| (m.key, Mechanism::Other))
        .collect();
    for t in tracks.iter().filter(|t| t.is_confirmed(cfg)) {
        for key in t.members.values() {
            labels.insert(*key, Mechanism::Reflected);
        }
    }
    Ok(SnapshotTracks { tracks, labels })
}

/// AoA each panel would observe from the track's final VS.
pub fn vs_to_aoa_per_panel(track: &Track, panels: &[PanelGeometry]) -> Result<Vec<(u32, AoA)>, GeometryError> {
    panels.iter().map(|p| Ok((p.id, aoa_from_points(&p.position, &track.state)?))).collect()
}

/// Greedy nearest-neighbor linking of confirmed-track positions between
/// consecutive snapshots. Input: per snapshot (ascending), the positions of
/// its confirmed tracks. Output: a global id for every input position,
/// same shape as the input.
pub fn link_across_snapshots(per_snapshot: &[Vec<Vec3>], gate: f64) -> Vec<Vec<u32>> {
    let mut next = 0u32;
    let mut out: Vec<Vec<u32>> = Vec::with_capacity(per_snapshot.len());
    for (s, current) in per_snapshot.iter().enumerate() {
        let mut ids: Vec<Option<u32>> = vec![None; current.len()];
        if s > 0 {
            let prev = &per_snapshot[s - 1];
            let mut cand: Vec<(f64, usize, usize)> = Vec::new();
            for (i, p) in prev.iter().enumerate() {
                for (j, c) in current.iter().enumerate() {
                    let d = (p - c).norm();
                    if d <= gate {
                        cand.push((d, i, j));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut prev_used = vec![false; prev.len()];
            for (_, i, j) in cand {
                if !prev_used[i] && ids[j].is_none() {
                    prev_used[i] = true;
                    ids[j] = Some(out[s - 1][i]);
                }
            }
        }
        out.push(
            ids.into_iter()
                .map(|id| {
                    id.unwrap_or_else(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AoA, SPEED_OF_LIGHT};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cfg() -> TrackerConfig {
        TrackerConfig::default()
    }

    fn meas(panel: u32, path: u32, p: Vec3) -> VsMeasurement {
        VsMeasurement { position: p, key: MpcKey::new(panel, 1, path) }
    }

    fn track_at(p: Vec3, m: Matrix3<f64>) -> Track {
        Track { id: 0, state: p, covariance: m, members: BTreeMap::new() }
    }

    #[test]
    fn vs_extends_full_delay() {
        let panel = PanelGeometry { id: 1, position: Vec3::zeros(), boresight: Vec3::y() };
        let m = MpcRecord::new(MpcKey::new(1, 1, 0), AoA::new(0.0, PI / 2.0).unwrap(), 1.0e-8);
        let z = compute_vs(&m, &panel).position;
        assert!((z - Vec3::new(2.99792458, 0.0, 0.0)).norm() < 1e-12);
        let up = MpcRecord::new(MpcKey::new(1, 1, 0), AoA::new(0.0, 0.0).unwrap(), 2.0 / SPEED_OF_LIGHT);
        assert!((compute_vs(&up, &panel).position - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn predict_adds_process_noise() {
        let t = track_at(Vec3::zeros(), Matrix3::identity());
        let p = kf_predict(&t, &cfg());
        assert!((p.covariance - Matrix3::identity() * 1.0025).abs().max() < 1e-15);
        assert_eq!(p.state, t.state);
        let still = kf_predict(&t, &TrackerConfig { process_noise: 0.0, ..cfg() });
        assert_eq!(still.covariance, t.covariance);
    }

    #[test]
    fn equal_prior_and_noise_gives_midpoint() {
        let c = cfg();
        let t = track_at(Vec3::zeros(), Matrix3::identity() * c.measurement_noise);
        let u = kf_update(&t, &Vec3::new(1.0, -2.0, 0.5), &c).unwrap();
        assert!((u.state - Vec3::new(0.5, -1.0, 0.25)).norm() < 1e-12);
        assert!((u.covariance - Matrix3::identity() * c.measurement_noise * 0.5).abs().max() < 1e-15);
    }

    #[test]
    fn vanishing_noise_trusts_measurement() {
        let c = TrackerConfig { measurement_noise: 1e-12, ..cfg() };
        let t = track_at(Vec3::zeros(), Matrix3::identity());
        let z = Vec3::new(3.0, 1.0, -1.0);
        assert!((kf_update(&t, &z, &c).unwrap().state - z).norm() < 1e-6);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let t = track_at(Vec3::zeros(), Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0)));
        assert!(kf_update(&t, &Vec3::zeros(), &cfg()).is_err());
    }

    #[test]
    fn association_examples() {
        let tracks = [Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)];
        let ms = [Vec3::new(0.1, 0.0, 0.0), Vec3::new(9.8, 0.0, 0.0)];
        let a = associate(&tracks, &ms, 1.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!(a.unmatched_tracks.is_empty() && a.unmatched_measurements.is_empty());

        let a = associate(&[Vec3::zeros()], &[Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0)], 1.0);
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched_measurements, vec![0]);

        let a = associate(&[Vec3::zeros()], &[Vec3::new(2.0, 0.0, 0.0)], 1.0);
        assert!(a.pairs.is_empty());
        assert_eq!(associate(&[], &[Vec3::zeros()], 1.0).unmatched_measurements, vec![0]);
        assert_eq!(associate(&[Vec3::zeros()], &[], 1.0).unmatched_tracks, vec![0]);
    }

    #[test]
    fn coincident_vs_across_panels_form_one_track() {
        let vs = Vec3::new(4.0, -3.0, 1.5);
        let by_panel: BTreeMap<u32, Vec<VsMeasurement>> = (1..=8).map(|k| (k, vec![meas(k, 7, vs)])).collect();
        let out = track_snapshot(&by_panel, &cfg()).unwrap();
        assert_eq!(out.tracks.len(), 1);
        assert_eq!(out.tracks[0].lifetime(), 8);
        assert!((out.tracks[0].state - vs).norm() < 1e-12);
        assert!(out.labels.values().all(|m| *m == Mechanism::Reflected));
    }

    #[test]
    fn partial_visibility_sets_lifetime() {
        let vs = Vec3::new(4.0, -3.0, 1.5);
        let mut by_panel: BTreeMap<u32, Vec<VsMeasurement>> = (1..=8).map(|k| (k, vec![])).collect();
        for k in 3..=5 {
            by_panel.get_mut(&k).unwrap().push(meas(k, 2, vs));
        }
        let out = track_snapshot(&by_panel, &cfg()).unwrap();
        let confirmed: Vec<&Track> = out.confirmed(&cfg()).collect();
        assert_eq!(confirmed.len(), 1);
        assert_eq!(confirmed[0].panels_visited(), BTreeSet::from([3, 4, 5]));
    }

    #[test]
    fn short_tracks_stay_other() {
        let vs = Vec3::new(4.0, -3.0, 1.5);
        let by_panel: BTreeMap<u32, Vec<VsMeasurement>> =
            (1..=2).map(|k| (k, vec![meas(k, 1, vs)])).collect();
        let out = track_snapshot(&by_panel, &cfg()).unwrap();
        assert!(out.labels.values().all(|m| *m == Mechanism::Other));
    }

    #[test]
    fn aoa_from_final_vs() {
        let t = track_at(Vec3::new(0.0, 4.0, 1.0), Matrix3::identity());
        let panels = [PanelGeometry { id: 1, position: Vec3::new(0.0, 0.0, 1.0), boresight: Vec3::y() }];
        let aoas = vs_to_aoa_per_panel(&t, &panels).unwrap();
        assert!((aoas[0].1.azimuth - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn linking_follows_moving_vs() {
        let per = vec![
            vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)],
            vec![Vec3::new(5.2, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0), Vec3::new(20.0, 0.0, 0.0)],
            vec![Vec3::new(0.4, 0.0, 0.0)],
        ];
        let ids = link_across_snapshots(&per, 1.0);
        assert_eq!(ids, vec![vec![0, 1], vec![1, 0, 2], vec![0]]);
    }

    proptest! {
        #[test]
        fn update_contracts_trace(
            diag in prop::array::uniform3(0.0f64..4.0),
            off in prop::array::uniform3(-1.0f64..1.0),
            r in 0.01f64..1.0,
        ) {
            let l = Matrix3::new(diag[0], 0.0, 0.0, off[0], diag[1], 0.0, off[1], off[2], diag[2]);
            let m = l * l.transpose();
            let c = TrackerConfig { measurement_noise: r, ..cfg() };
            let u = kf_update(&track_at(Vec3::zeros(), m), &Vec3::new(1.0, 2.0, 3.0), &c).unwrap();
            prop_assert!(u.covariance.trace() <= m.trace() + 1e-12);
            prop_assert!(check_psd(&u.covariance).is_ok());
        }

        #[test]
        fn association_is_symmetric(
            a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 0..8),
            b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 0..8),
            gate in 0.5f64..20.0,
        ) {
            let a: Vec<Vec3> = a.into_iter().map(Vec3::from).collect();
            let b: Vec<Vec3> = b.into_iter().map(Vec3::from).collect();
            let fwd = associate(&a, &b, gate);
            let rev = associate(&b, &a, gate);
            let mut flipped: Vec<(usize, usize)> = rev.pairs.iter().map(|&(j, i)| (i, j)).collect();
            flipped.sort();
            prop_assert_eq!(fwd.pairs, flipped);
        }
    }
}
