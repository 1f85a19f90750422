//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use dmimo_mpc::geometry::{MpcKey, MpcRecord, PanelGeometry, UeState, Vec3};
use dmimo_mpc::pointcloud::SpatialIndex;
use dmimo_mpc::synth::{export_cloud, synthesize, Route, Scenario};
use dmimo_mpc::tracker::VsMeasurement;

/// Default scenario cut down to `snapshots` UE positions.
pub fn scenario(snapshots: u32) -> Scenario {
    let mut s = Scenario::default();
    if let Route::Polyline { snapshots: n, .. } = &mut s.route {
        *n = snapshots;
    }
    s
}

pub struct LinkFixture {
    pub index: SpatialIndex,
    pub records: Vec<MpcRecord>,
    pub panels: Vec<PanelGeometry>,
    pub ues: Vec<UeState>,
}

/// Indexed room cloud plus the synthetic MPCs of `scenario(snapshots)`.
pub fn link_fixture(snapshots: u32) -> LinkFixture {
    let s = scenario(snapshots);
    let data = synthesize(&s).expect("default scenario is valid");
    let index = SpatialIndex::build(export_cloud(&s, s.cloud_pitch), 0.2).expect("cloud indexes");
    LinkFixture { index, records: data.records(), panels: data.panels, ues: data.ues }
}

/// `sources` static virtual sources seen at 8 panels with a fixed jitter.
pub fn vs_measurements(sources: usize) -> BTreeMap<u32, Vec<VsMeasurement>> {
    (1..=8u32)
        .map(|k| {
            let ms = (0..sources)
                .map(|i| {
                    let base = Vec3::new(2.0 * i as f64, 10.0 + (i % 3) as f64, (i % 2) as f64);
                    let jitter = Vec3::new(((k * 7 + i as u32) % 5) as f64, ((k * 3) % 4) as f64, 0.0) * 0.01;
                    VsMeasurement { position: base + jitter, key: MpcKey::new(k, 1, i as u32) }
                })
                .collect();
            (k, ms)
        })
        .collect()
}

/// Deterministic point sets for association.
pub fn point_sets(n: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let a: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64, (i * i % 7) as f64, 0.0)).collect();
    let b = a.iter().map(|p| p + Vec3::new(0.1, -0.05, 0.02)).collect();
    (a, b)
}
