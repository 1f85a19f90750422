use std::collections::BTreeMap;

use dmimo_mpc::geometry::Vec3;
use dmimo_mpc::io::{save_mpc_csv, GeometryFile};
use dmimo_mpc::pipeline::{export_plot_data, load_inputs, run_on_inputs, run_pipeline, ErrorKind, RunConfig};
use dmimo_mpc::pointcloud::{save_ply, Region};
use dmimo_mpc::synth::{export_cloud, synthesize, ClutterModel, PathKind, Route, Scenario};
use dmimo_mpc::tracker::Mechanism;

fn floor_and_north_wall() -> Scenario {
    let mut s = Scenario {
        max_reflection_order: 1,
        clutter: ClutterModel { per_link: 0, ..ClutterModel::default() },
        ..Scenario::default()
    }
    .noiseless();
    s.room.reflective = Some(vec![Region::Floor, Region::WallNorth]);
    s
}

#[test]
fn surface_distribution_matches_truth() {
    let cfg = RunConfig::synthetic(floor_and_north_wall(), 3);
    let inputs = load_inputs(&cfg).unwrap();
    let truth = inputs.truth.clone().unwrap();
    let report = run_on_inputs(&cfg, inputs).unwrap();
    for dist in &report.surface_distribution {
        let mut want: BTreeMap<Region, usize> = BTreeMap::new();
        for p in truth.iter().filter(|p| p.kind == PathKind::Specular && p.record.key.snapshot_id == dist.snapshot_id) {
            *want.entry(p.surfaces[0]).or_default() += 1;
        }
        let got: BTreeMap<Region, usize> = dist.counts.iter().filter(|(_, c)| **c > 0).map(|(r, c)| (*r, *c)).collect();
        assert_eq!(got, want, "snapshot {}", dist.snapshot_id);
        let sum: f64 = dist.fractions.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn every_record_gets_a_decision_and_los_is_recognized() {
    let cfg = RunConfig::synthetic(floor_and_north_wall(), 3);
    let inputs = load_inputs(&cfg).unwrap();
    let truth = inputs.truth.clone().unwrap();
    let report = run_on_inputs(&cfg, inputs).unwrap();
    assert_eq!(report.decisions.len(), truth.len());
    let mech: BTreeMap<_, _> = report.decisions.iter().map(|d| (d.key, d.mechanism)).collect();
    for p in &truth {
        if p.kind == PathKind::LineOfSight {
            assert_eq!(mech[&p.record.key], Mechanism::LineOfSight);
        }
    }
}

#[test]
fn measured_mode_reproduces_synthetic_labels() {
    let scenario = floor_and_north_wall();
    let synthetic = RunConfig::synthetic(scenario.clone(), 3);
    let expected = run_pipeline(&synthetic).unwrap();

    let data = synthesize(&Scenario { seed: 3, ..scenario.clone() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (cloud, mpcs, geometry) =
        (dir.path().join("room.ply"), dir.path().join("mpcs.csv"), dir.path().join("geometry.toml"));
    save_ply(&export_cloud(&scenario, scenario.cloud_pitch), &cloud).unwrap();
    save_mpc_csv(&data.records(), &mpcs, Default::default()).unwrap();
    std::fs::write(&geometry, GeometryFile { panels: data.panels, ue: data.ues }.to_toml()).unwrap();
    let measured = run_pipeline(&RunConfig::measured(cloud, mpcs, geometry, 3)).unwrap();

    let labels = |r: &dmimo_mpc::Report| r.decisions.iter().map(|d| (d.key, d.bounce, d.mechanism)).collect::<Vec<_>>();
    assert_eq!(labels(&measured), labels(&expected));
    assert_eq!(measured.tracks.len(), expected.tracks.len());
}

#[test]
fn empty_mpc_table_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let mpcs = dir.path().join("mpcs.csv");
    std::fs::write(&mpcs, "panel_id,snapshot_id,path_id,azimuth_rad,zenith_rad,delay_s\n").unwrap();
    let cfg = RunConfig::measured(dir.path().join("missing.ply"), mpcs, dir.path().join("missing.toml"), 1);
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.kind, ErrorKind::Input);
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("no records"));
}

#[test]
fn distance_dependent_clutter_lowers_single_bounce_share() {
    let scenario = Scenario {
        clutter: ClutterModel { per_link: 2, per_meter: 3.0, ..ClutterModel::default() },
        ..Scenario::default()
    };
    let cfg = RunConfig::synthetic(scenario, 11);
    let report = run_pipeline(&cfg).unwrap();
    let pooled = report.fits.iter().find(|f| f.panel_id.is_none()).unwrap();
    let cmp = pooled.comparison.as_ref().expect("pooled fit succeeds");
    eprintln!(
        "pooled fit: linear a={:.3} b={:.4} R²={:.3}; exponential a={:.3} b={:.4} R²={:.3}",
        cmp.linear.a, cmp.linear.b, cmp.linear.r_squared, cmp.exponential.a, cmp.exponential.b, cmp.exponential.r_squared
    );
    assert!(cmp.exponential.b < 0.0);
    assert!(cmp.linear.a < 0.0);

    let dir = tempfile::tempdir().unwrap();
    let files = export_plot_data(&report, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
}

#[test]
fn single_snapshot_route_has_one_distribution_entry() {
    let mut scenario = floor_and_north_wall();
    scenario.route = Route::Explicit { positions: vec![Vec3::new(5.0, 4.0, 1.0)] };
    let report = run_pipeline(&RunConfig::synthetic(scenario, 1)).unwrap();
    assert_eq!(report.surface_distribution.len(), 1);
    assert_eq!(report.tracks.len(), 2);
}

fn clutter_only(per_link: u32) -> Scenario {
    let mut scenario = Scenario::default().noiseless();
    scenario.room.reflective = Some(vec![]);
    scenario.clutter = ClutterModel { per_link, ..ClutterModel::default() };
    scenario
}

#[test]
fn sparse_clutter_confirms_no_tracks() {
    let report = run_pipeline(&RunConfig::synthetic(clutter_only(1), 21)).unwrap();
    let clutter = report.truth.as_ref().unwrap().iter().find(|r| r.group == "clutter").unwrap().total;
    assert_eq!(clutter, 400);
    assert!(report.tracks.is_empty(), "{} tracks", report.tracks.len());
}

#[test]
fn dense_clutter_rarely_coincides() {
    let cfg = RunConfig::synthetic(clutter_only(12), 21);
    let truth = load_inputs(&cfg).unwrap().truth.unwrap();
    let clutter: Vec<_> = truth.iter().filter(|p| p.kind == PathKind::Clutter).collect();
    // VSs of one nominal scatterer seen from two panels of the same snapshot
    let (mut apart, mut pairs) = (0, 0);
    for a in &clutter {
        for b in &clutter {
            let (ka, kb) = (a.record.key, b.record.key);
            if ka.snapshot_id == kb.snapshot_id && ka.panel_id < kb.panel_id && ka.path_id == kb.path_id {
                pairs += 1;
                if (a.true_vs - b.true_vs).norm() > cfg.tracker.gate {
                    apart += 1;
                }
            }
        }
    }
    assert!(apart as f64 >= 0.99 * pairs as f64, "{apart}/{pairs} pairs beyond the gate");

    let report = run_pipeline(&cfg).unwrap();
    let on_tracks: usize = report.tracks.iter().map(|t| t.members.len()).sum();
    assert!((on_tracks as f64) < 0.01 * clutter.len() as f64, "{on_tracks} of {} clutter MPCs on tracks", clutter.len());
}
