use dmimo_mpc::geometry::ElevationConvention;
use dmimo_mpc::io::{load_geometry, load_mpc_csv, read_mpc_csv, save_mpc_csv, GeometryFile};
use dmimo_mpc::pointcloud::{load_ply, save_ply};
use dmimo_mpc::synth::{export_cloud, synthesize, Scenario};

#[test]
fn synthetic_records_survive_csv_round_trip() {
    let data = synthesize(&Scenario::default()).unwrap();
    let records = data.records();
    let dir = tempfile::tempdir().unwrap();
    for convention in [ElevationConvention::Zenith, ElevationConvention::Elevation] {
        let path = dir.path().join("mpcs.csv");
        save_mpc_csv(&records, &path, convention).unwrap();
        let back = load_mpc_csv(&path, convention).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.delay, b.delay);
            assert!((a.aoa.azimuth - b.aoa.azimuth).abs() <= 1e-12);
            assert!((a.aoa.zenith - b.aoa.zenith).abs() <= 1e-12);
        }
    }
}

#[test]
fn geometry_and_cloud_round_trip() {
    let scenario = Scenario::default();
    let data = synthesize(&scenario).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let geometry = GeometryFile { panels: data.panels.clone(), ue: data.ues.clone() };
    let path = dir.path().join("geometry.toml");
    std::fs::write(&path, geometry.to_toml()).unwrap();
    assert_eq!(load_geometry(&path).unwrap(), geometry);

    let cloud = export_cloud(&scenario, 0.1);
    let path = dir.path().join("room.ply");
    save_ply(&cloud, &path).unwrap();
    let back = load_ply(&path).unwrap();
    assert_eq!(back.points, cloud.points);
    assert_eq!(back.labels, cloud.labels);
}

#[test]
fn malformed_row_reports_its_index() {
    let text = "panel_id,snapshot_id,path_id,azimuth_rad,zenith_rad,delay_s\n1,1,0,0.1,1.2,1e-8\n1,1,1,abc,1.2,1e-8\n";
    let err = read_mpc_csv(text.as_bytes(), ElevationConvention::Zenith).unwrap_err();
    assert_eq!(err.row(), Some(2));
}
