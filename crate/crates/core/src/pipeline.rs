//! End-to-end run: ingest (or synthesize), classify, track, aggregate,
//! and write the JSON report plus plot-ready CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounce::{classify_link, BounceCounts, BounceDecision, BounceLabel, ClassifierConfig};
use crate::geometry::{
    ElevationConvention, MpcKey, MpcRecord, PanelGeometry, UeState, Vec3, DEFAULT_DELAY_TOLERANCE_S,
};
use crate::io::{load_geometry, load_mpc_csv, IoError};
use crate::pointcloud::{ensure_labels, load_ply, PointCloud, Region, SpatialIndex, DEFAULT_WALL_MARGIN};
use crate::stats::{
    compare_models, fit_samples, lifetime_stats, stat_points, surface_distribution, DistanceMode, LifetimeSummary,
    ModelComparison, StatPoint, SurfaceDistribution,
};
use crate::synth::{export_cloud, synthesize, GroundTruthMpc, PathKind, Scenario};
use crate::tracker::{
    compute_vs, link_across_snapshots, track_snapshot, vs_to_aoa_per_panel, Mechanism, SnapshotTracks,
    TrackerConfig, VsMeasurement,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum InputSpec {
    Measured {
        cloud: PathBuf,
        mpcs: PathBuf,
        geometry: PathBuf,
        #[serde(default)]
        elevation_convention: ElevationConvention,
    },
    Synthetic {
        scenario: Scenario,
    },
}

impl InputSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            InputSpec::Measured { .. } => "measured",
            InputSpec::Synthetic { .. } => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub distance_mode: DistanceMode,
    /// Edge length of the spatial-index voxels, meters.
    #[serde(default = "default_voxel")]
    pub voxel_size: f64,
    /// Margin for labeling unlabeled clouds by their bounding box, meters.
    #[serde(default = "default_margin")]
    pub wall_margin: f64,
    /// Overrides the scenario seed in synthetic mode; recorded in both modes.
    pub seed: u64,
}

fn default_voxel() -> f64 {
    0.2
}

fn default_margin() -> f64 {
    DEFAULT_WALL_MARGIN
}

impl RunConfig {
    pub fn synthetic(scenario: Scenario, seed: u64) -> Self {
        Self {
            input: InputSpec::Synthetic { scenario },
            classifier: ClassifierConfig::default(),
            tracker: TrackerConfig::default(),
            distance_mode: DistanceMode::default(),
            voxel_size: default_voxel(),
            wall_margin: default_margin(),
            seed,
        }
    }

    pub fn measured(cloud: PathBuf, mpcs: PathBuf, geometry: PathBuf, seed: u64) -> Self {
        Self {
            input: InputSpec::Measured { cloud, mpcs, geometry, elevation_convention: ElevationConvention::Zenith },
            ..Self::synthetic(Scenario::default(), seed)
        }
    }

    /// SHA-256 of the canonical JSON form of the whole configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| PipelineError::input(Stage::Config, m);
        self.classifier.validate().map_err(err)?;
        self.tracker.validate().map_err(err)?;
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(err(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if let InputSpec::Synthetic { scenario } = &self.input {
            scenario.validate().map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Validate,
    Classify,
    Track,
    Stats,
    Export,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("{stage:?} stage: {message}{}", record.as_ref().map(|r| format!(" ({r})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    /// Offending record, if the failure is tied to one.
    pub record: Option<String>,
    pub message: String,
}

impl PipelineError {
    pub fn input(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, kind: ErrorKind::Input, record: None, message: message.into() }
    }

    pub fn numeric(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, kind: ErrorKind::Numeric, record: None, message: message.into() }
    }

    pub fn io(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, kind: ErrorKind::Io, record: None, message: message.into() }
    }

    pub fn with_record(mut self, record: impl ToString) -> Self {
        self.record = Some(record.to_string());
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    fn from_io(stage: Stage, e: IoError) -> Self {
        match e {
            IoError::Io(e) => Self::io(stage, e.to_string()),
            IoError::Row { row, message } => Self::input(stage, message).with_record(format!("row {row}")),
            other => Self::input(stage, other.to_string()),
        }
    }
}

/// Everything the classifier and tracker need.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub cloud: PointCloud,
    pub records: Vec<MpcRecord>,
    pub panels: Vec<PanelGeometry>,
    pub ues: Vec<UeState>,
    pub truth: Option<Vec<GroundTruthMpc>>,
}

/// Reads (or synthesizes) the inputs named by `cfg`. MPCs are read before
/// the point cloud so that an empty table fails fast.
pub fn load_inputs(cfg: &RunConfig) -> Result<PipelineInputs, PipelineError> {
    match &cfg.input {
        InputSpec::Measured { cloud, mpcs, geometry, elevation_convention } => {
            let records =
                load_mpc_csv(mpcs, *elevation_convention).map_err(|e| PipelineError::from_io(Stage::Ingest, e))?;
            if records.is_empty() {
                return Err(PipelineError::input(Stage::Ingest, "no records"));
            }
            let geometry = load_geometry(geometry).map_err(|e| PipelineError::from_io(Stage::Ingest, e))?;
            let cloud = load_ply(cloud).map_err(|e| match e {
                crate::pointcloud::PlyError::Io(e) => PipelineError::io(Stage::Ingest, e.to_string()),
                other => PipelineError::input(Stage::Ingest, other.to_string()),
            })?;
            Ok(PipelineInputs {
                cloud: ensure_labels(cloud, cfg.wall_margin),
                records,
                panels: geometry.panels,
                ues: geometry.ue,
                truth: None,
            })
        }
        InputSpec::Synthetic { scenario } => {
            let scenario = Scenario { seed: cfg.seed, ..scenario.clone() };
            let data = synthesize(&scenario).map_err(|e| PipelineError::input(Stage::Ingest, e.to_string()))?;
            if data.paths.is_empty() {
                return Err(PipelineError::input(Stage::Ingest, "no records"));
            }
            Ok(PipelineInputs {
                cloud: export_cloud(&scenario, scenario.cloud_pitch),
                records: data.records(),
                panels: data.panels,
                ues: data.ues,
                truth: Some(data.paths),
            })
        }
    }
}

/// Every record must reference a known panel and snapshot, have a unique
/// key, and not arrive earlier than the direct path allows.
pub fn validate_records(
    records: &[MpcRecord],
    panels: &[PanelGeometry],
    ues: &[UeState],
) -> Result<(), PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::input(Stage::Validate, "no records"));
    }
    let panel_at: BTreeMap<u32, &PanelGeometry> = panels.iter().map(|p| (p.id, p)).collect();
    let ue_at: BTreeMap<u32, &UeState> = ues.iter().map(|u| (u.snapshot_id, u)).collect();
    let mut seen = BTreeSet::new();
    for r in records {
        let fail = |m: String| Err(PipelineError::input(Stage::Validate, m).with_record(r.key));
        let Some(p) = panel_at.get(&r.key.panel_id) else {
            return fail(format!("unknown panel {}", r.key.panel_id));
        };
        let Some(u) = ue_at.get(&r.key.snapshot_id) else {
            return fail(format!("unknown snapshot {}", r.key.snapshot_id));
        };
        if !seen.insert(r.key) {
            return fail("duplicate MPC".into());
        }
        if let Err(m) = r.check_link(&p.position, &u.position, DEFAULT_DELAY_TOLERANCE_S) {
            return fail(m);
        }
    }
    Ok(())
}

fn group_by_link(records: &[MpcRecord]) -> BTreeMap<(u32, u32), Vec<MpcRecord>> {
    let mut links: BTreeMap<(u32, u32), Vec<MpcRecord>> = BTreeMap::new();
    for r in records {
        links.entry((r.key.snapshot_id, r.key.panel_id)).or_default().push(r.clone());
    }
    for v in links.values_mut() {
        v.sort_by_key(|r| r.key.path_id);
    }
    links
}

/// Classifies all records, links in parallel. Decisions are returned in
/// (snapshot, panel, path) order.
pub fn classify_records(
    records: &[MpcRecord],
    panels: &[PanelGeometry],
    ues: &[UeState],
    index: &SpatialIndex,
    cfg: &ClassifierConfig,
) -> Result<Vec<BounceDecision>, PipelineError> {
    let panel_at: BTreeMap<u32, &PanelGeometry> = panels.iter().map(|p| (p.id, p)).collect();
    let ue_at: BTreeMap<u32, Vec3> = ues.iter().map(|u| (u.snapshot_id, u.position)).collect();
    let links: Vec<((u32, u32), Vec<MpcRecord>)> = group_by_link(records).into_iter().collect();
    let per_link: Result<Vec<Vec<BounceDecision>>, PipelineError> = links
        .par_iter()
        .map(|((snapshot, panel), mpcs)| {
            let missing = || PipelineError::input(Stage::Classify, "unknown link").with_record(mpcs[0].key);
            let p = panel_at.get(panel).ok_or_else(missing)?;
            let u = ue_at.get(snapshot).ok_or_else(missing)?;
            classify_link(mpcs, p, u, index, cfg)
                .map(|l| l.decisions)
                .map_err(|e| PipelineError::input(Stage::Classify, e.to_string()).with_record(mpcs[0].key))
        })
        .collect();
    Ok(per_link?.into_iter().flatten().collect())
}

/// Tracks the VSs of each snapshot, snapshots in parallel. LOS-labeled
/// MPCs are left out; `decisions`, when given, supply those labels.
pub fn track_records(
    records: &[MpcRecord],
    panels: &[PanelGeometry],
    decisions: Option<&[BounceDecision]>,
    cfg: &TrackerConfig,
) -> Result<BTreeMap<u32, SnapshotTracks>, PipelineError> {
    let panel_at: BTreeMap<u32, &PanelGeometry> = panels.iter().map(|p| (p.id, p)).collect();
    let los: BTreeSet<MpcKey> = decisions
        .unwrap_or(&[])
        .iter()
        .filter(|d| d.label == BounceLabel::LineOfSight)
        .map(|d| d.key)
        .collect();
    let mut per_snapshot: BTreeMap<u32, BTreeMap<u32, Vec<VsMeasurement>>> = BTreeMap::new();
    for r in records {
        let Some(p) = panel_at.get(&r.key.panel_id) else {
            return Err(PipelineError::input(Stage::Track, "unknown panel").with_record(r.key));
        };
        let by_panel = per_snapshot.entry(r.key.snapshot_id).or_default();
        let slot = by_panel.entry(r.key.panel_id).or_default();
        if !los.contains(&r.key) {
            slot.push(compute_vs(r, p));
        }
    }
    let snapshots: Vec<(u32, BTreeMap<u32, Vec<VsMeasurement>>)> = per_snapshot.into_iter().collect();
    let tracked: Result<Vec<(u32, SnapshotTracks)>, PipelineError> = snapshots
        .par_iter()
        .map(|(s, by_panel)| {
            track_snapshot(by_panel, cfg)
                .map(|t| (*s, t))
                .map_err(|e| PipelineError::numeric(Stage::Track, e.to_string()).with_record(format!("snapshot {s}")))
        })
        .collect();
    Ok(tracked?.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub timestamp: u64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRef {
    pub snapshot_id: u32,
    pub track_id: u32,
    /// Identity shared by matching tracks of consecutive snapshots.
    pub global_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub key: MpcKey,
    pub bounce: BounceLabel,
    pub mechanism: Mechanism,
    pub mismatch_m: Option<f64>,
    pub last_hop: Option<Vec3>,
    pub last_hop_region: Option<Region>,
    pub single_bounce_estimate: Option<Vec3>,
    /// Confirmed track the MPC belongs to.
    pub track: Option<TrackRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelAoa {
    pub panel_id: u32,
    pub path_id: u32,
    pub measured_azimuth: f64,
    pub measured_zenith: f64,
    /// Seen from the panel toward the track's final VS.
    pub estimated_azimuth: f64,
    pub estimated_zenith: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub snapshot_id: u32,
    pub track_id: u32,
    pub global_id: u32,
    pub final_vs: Vec3,
    pub covariance_trace: f64,
    pub panels: BTreeSet<u32>,
    pub lifetime: usize,
    pub members: Vec<MpcKey>,
    pub aoa: Vec<PanelAoa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFit {
    /// `None` for the fit over all panels pooled.
    pub panel_id: Option<u32>,
    pub comparison: Option<ModelComparison>,
    pub error: Option<String>,
}

/// Label tallies of synthetic paths grouped by their true origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    /// `los`, `order1`, `order2` or `clutter`.
    pub group: String,
    pub total: usize,
    pub counts: BounceCounts,
    pub reflected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub decisions: Vec<DecisionRow>,
    pub tracks: Vec<TrackSummary>,
    pub stat_points: Vec<StatPoint>,
    pub fits: Vec<PanelFit>,
    pub surface_distribution: Vec<SurfaceDistribution>,
    pub lifetimes: LifetimeSummary,
    pub truth: Option<Vec<TruthRow>>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn without_timestamp(&self) -> Report {
        let mut r = self.clone();
        r.metadata.timestamp = 0;
        r
    }
}

/// Runs every stage for `cfg` and assembles the report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Report, PipelineError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    run_on_inputs(cfg, inputs)
}

pub fn run_on_inputs(cfg: &RunConfig, inputs: PipelineInputs) -> Result<Report, PipelineError> {
    let PipelineInputs { cloud, records, panels, ues, truth } = inputs;
    validate_records(&records, &panels, &ues)?;
    log::info!("{} MPCs, {} panels, {} snapshots, {} cloud points", records.len(), panels.len(), ues.len(), cloud.len());
    let index = SpatialIndex::build(cloud, cfg.voxel_size)
        .map_err(|e| PipelineError::input(Stage::Ingest, format!("point cloud: {e}")))?;

    let decisions = classify_records(&records, &panels, &ues, &index, &cfg.classifier)?;
    let tracks = track_records(&records, &panels, Some(&decisions), &cfg.tracker)?;

    let confirmed_states: Vec<Vec<Vec3>> = tracks
        .values()
        .map(|t| t.confirmed(&cfg.tracker).map(|tr| tr.state).collect())
        .collect();
    let global = link_across_snapshots(&confirmed_states, cfg.tracker.gate);

    let record_at: BTreeMap<MpcKey, &MpcRecord> = records.iter().map(|r| (r.key, r)).collect();
    let label_at: BTreeMap<MpcKey, BounceLabel> = decisions.iter().map(|d| (d.key, d.label)).collect();
    let mut membership: BTreeMap<MpcKey, TrackRef> = BTreeMap::new();
    let mut summaries = Vec::new();
    for ((snapshot_id, st), ids) in tracks.iter().zip(&global) {
        for (t, &global_id) in st.confirmed(&cfg.tracker).zip(ids) {
            let estimated = vs_to_aoa_per_panel(t, &panels)
                .map_err(|e| PipelineError::numeric(Stage::Track, e.to_string()).with_record(format!("snapshot {snapshot_id} track {}", t.id)))?;
            let aoa = t
                .members
                .values()
                .filter_map(|k| {
                    let r = record_at.get(k)?;
                    let (_, est) = estimated.iter().find(|(p, _)| *p == k.panel_id)?;
                    Some(PanelAoa {
                        panel_id: k.panel_id,
                        path_id: k.path_id,
                        measured_azimuth: r.aoa.azimuth,
                        measured_zenith: r.aoa.zenith,
                        estimated_azimuth: est.azimuth,
                        estimated_zenith: est.zenith,
                    })
                })
                .collect();
            for k in t.members.values() {
                membership.insert(*k, TrackRef { snapshot_id: *snapshot_id, track_id: t.id, global_id });
            }
            summaries.push(TrackSummary {
                snapshot_id: *snapshot_id,
                track_id: t.id,
                global_id,
                final_vs: t.state,
                covariance_trace: t.covariance.trace(),
                panels: t.panels_visited(),
                lifetime: t.lifetime(),
                members: t.members.values().copied().collect(),
                aoa,
            });
        }
    }

    // Reflected requires a confirmed track and a single/multi label.
    let mechanisms: BTreeMap<MpcKey, Mechanism> = decisions
        .iter()
        .map(|d| {
            let m = match d.label {
                BounceLabel::LineOfSight => Mechanism::LineOfSight,
                BounceLabel::Single | BounceLabel::Multi if membership.contains_key(&d.key) => Mechanism::Reflected,
                _ => Mechanism::Other,
            };
            (d.key, m)
        })
        .collect();

    let rows: Vec<DecisionRow> = decisions
        .iter()
        .map(|d| DecisionRow {
            key: d.key,
            bounce: d.label,
            mechanism: mechanisms[&d.key],
            mismatch_m: d.mismatch,
            last_hop: d.last_hop,
            last_hop_region: d.last_hop_region,
            single_bounce_estimate: d.single_bounce_estimate,
            track: membership.get(&d.key).cloned(),
        })
        .collect();

    let points = stat_points(&decisions, &panels, &ues, cfg.distance_mode);
    let mut fits: Vec<PanelFit> = panels
        .iter()
        .map(|p| panel_fit(Some(p.id), &fit_samples(points.iter().filter(|s| s.panel_id == p.id))))
        .collect();
    fits.push(panel_fit(None, &fit_samples(&points)));
    let distribution = surface_distribution(&ues, &decisions, &mechanisms);
    let panel_ids: Vec<u32> = panels.iter().map(|p| p.id).collect::<BTreeSet<_>>().into_iter().collect();
    let lifetimes = lifetime_stats(tracks.iter().map(|(s, t)| (*s, t)), &panel_ids, &cfg.tracker);
    let truth = truth.map(|t| truth_table(&t, &label_at, &mechanisms));

    let mut notes = vec!["estimated AoAs are computed from each track's final (all-panel) VS estimate".to_string()];
    if !cfg.tracker.gate.is_finite() {
        notes.push("association gate disabled".into());
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            mode: cfg.input.mode().into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            notes,
        },
        decisions: rows,
        tracks: summaries,
        stat_points: points,
        fits,
        surface_distribution: distribution,
        lifetimes,
        truth,
    })
}

fn panel_fit(panel_id: Option<u32>, samples: &[(f64, f64)]) -> PanelFit {
    match compare_models(samples) {
        Ok(c) => PanelFit { panel_id, comparison: Some(c), error: None },
        Err(e) => {
            let which = panel_id.map_or_else(|| "all panels".to_string(), |p| format!("panel {p}"));
            log::warn!("fit for {which} failed: {e}");
            PanelFit { panel_id, comparison: None, error: Some(e.to_string()) }
        }
    }
}

fn truth_table(
    truth: &[GroundTruthMpc],
    labels: &BTreeMap<MpcKey, BounceLabel>,
    mechanisms: &BTreeMap<MpcKey, Mechanism>,
) -> Vec<TruthRow> {
    let group = |g: &GroundTruthMpc| match (g.kind, g.order) {
        (PathKind::LineOfSight, _) => "los".to_string(),
        (PathKind::Clutter, _) => "clutter".to_string(),
        (PathKind::Specular, Some(o)) => format!("order{o}"),
        (PathKind::Specular, None) => "specular".to_string(),
    };
    let mut rows: BTreeMap<String, (Vec<BounceLabel>, usize)> = BTreeMap::new();
    for g in truth {
        let key = g.record.key;
        let entry = rows.entry(group(g)).or_default();
        if let Some(l) = labels.get(&key) {
            entry.0.push(*l);
        }
        if mechanisms.get(&key) == Some(&Mechanism::Reflected) {
            entry.1 += 1;
        }
    }
    rows.into_iter()
        .map(|(group, (ls, reflected))| TruthRow { group, total: ls.len(), counts: BounceCounts::tally(&ls), reflected })
        .collect()
}

pub const FIG4_FILE: &str = "fig4_eta_vs_dc.csv";
pub const FIG6_FILE: &str = "fig6_aoa_compare.csv";
pub const FIG7_FILE: &str = "fig7_surface_dist.csv";
pub const TAB1_FILE: &str = "tab1_fits.csv";
pub const REPORT_FILE: &str = "report.json";

/// Writes `report.json` and the four plot-data CSVs into `outdir`:
///
/// * `fig4_eta_vs_dc.csv`: `panel_id,d_c_m,eta_sb`, one row per link with a ratio.
/// * `fig6_aoa_compare.csv`: `panel_id,snapshot_id,track_id,path_id,measured_azimuth_rad,estimated_azimuth_rad,measured_zenith_rad,estimated_zenith_rad`.
/// * `fig7_surface_dist.csv`: `snapshot_id,moved_distance_m,reflected` then one fraction column per region.
/// * `tab1_fits.csv`: `panel_id,model,a,b,r_squared,n_points,preferred`; `panel_id` is `all` for the pooled fit.
pub fn export_plot_data(report: &Report, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let outdir = outdir.as_ref();
    let io_err = |p: &Path, e: std::io::Error| PipelineError::io(Stage::Export, format!("{}: {e}", p.display()));
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<(), PipelineError> {
        let path = outdir.join(name);
        let mut f = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
        f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };

    let mut fig4 = String::from("panel_id,d_c_m,eta_sb\n");
    for p in &report.stat_points {
        if let Some(eta) = p.eta_sb {
            fig4 += &format!("{},{},{}\n", p.panel_id, p.d_c, eta);
        }
    }
    emit(FIG4_FILE, fig4)?;

    let mut fig6 = String::from(
        "panel_id,snapshot_id,track_id,path_id,measured_azimuth_rad,estimated_azimuth_rad,measured_zenith_rad,estimated_zenith_rad\n",
    );
    for t in &report.tracks {
        for a in &t.aoa {
            fig6 += &format!(
                "{},{},{},{},{},{},{},{}\n",
                a.panel_id,
                t.snapshot_id,
                t.track_id,
                a.path_id,
                a.measured_azimuth,
                a.estimated_azimuth,
                a.measured_zenith,
                a.estimated_zenith
            );
        }
    }
    emit(FIG6_FILE, fig6)?;

    let mut fig7 = String::from("snapshot_id,moved_distance_m,reflected");
    for r in Region::ALL {
        fig7 += &format!(",{}", r.name());
    }
    fig7.push('\n');
    for d in &report.surface_distribution {
        fig7 += &format!("{},{},{}", d.snapshot_id, d.moved_distance, d.reflected);
        for r in Region::ALL {
            fig7 += &format!(",{}", d.fractions.get(&r).copied().unwrap_or(0.0));
        }
        fig7.push('\n');
    }
    emit(FIG7_FILE, fig7)?;

    let mut tab1 = String::from("panel_id,model,a,b,r_squared,n_points,preferred\n");
    for f in &report.fits {
        let Some(c) = &f.comparison else { continue };
        let id = f.panel_id.map(|p| p.to_string()).unwrap_or_else(|| "all".into());
        for fit in [&c.linear, &c.exponential] {
            let model = if fit.model == crate::stats::FitModel::Linear { "linear" } else { "exponential" };
            tab1 += &format!(
                "{id},{model},{},{},{},{},{}\n",
                fit.a,
                fit.b,
                fit.r_squared,
                fit.n_points,
                fit.model == c.preferred
            );
        }
    }
    emit(TAB1_FILE, tab1)?;

    emit(REPORT_FILE, report.to_json() + "\n")?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ClutterModel;

    fn small_scenario() -> Scenario {
        Scenario {
            route: crate::synth::Route::Explicit {
                positions: vec![Vec3::new(5.0, 6.0, 1.0), Vec3::new(6.0, 5.5, 1.0)],
            },
            max_reflection_order: 1,
            clutter: ClutterModel { per_link: 3, ..Default::default() },
            cloud_pitch: 0.05,
            ..Scenario::default()
        }
        .noiseless()
    }

    #[test]
    fn every_mpc_reported_once_and_order1_reflected() {
        let cfg = RunConfig::synthetic(small_scenario(), 5);
        let inputs = load_inputs(&cfg).unwrap();
        let n = inputs.records.len();
        let report = run_on_inputs(&cfg, inputs).unwrap();
        assert_eq!(report.decisions.len(), n);
        let keys: BTreeSet<MpcKey> = report.decisions.iter().map(|d| d.key).collect();
        assert_eq!(keys.len(), n);
        let order1 = report.truth.as_ref().unwrap().iter().find(|r| r.group == "order1").unwrap();
        assert_eq!(order1.counts.single, order1.total);
        assert_eq!(order1.reflected, order1.total);
        let tracked = report.decisions.iter().filter(|d| d.track.is_some() && matches!(d.bounce, BounceLabel::Single | BounceLabel::Multi)).count();
        let reflected = report.decisions.iter().filter(|d| d.mechanism == Mechanism::Reflected).count();
        assert!(reflected <= tracked);
    }

    #[test]
    fn config_hash_tracks_every_field() {
        let base = RunConfig::synthetic(small_scenario(), 5);
        let mut other = base.clone();
        other.classifier.threshold_m = 1.4;
        assert_ne!(base.hash(), other.hash());
        let mut other = base.clone();
        other.seed = 6;
        assert_ne!(base.hash(), other.hash());
        assert_eq!(base.hash(), base.clone().hash());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::input(Stage::Ingest, "x").exit_code(), 2);
        assert_eq!(PipelineError::numeric(Stage::Track, "x").exit_code(), 3);
        assert_eq!(PipelineError::io(Stage::Export, "x").exit_code(), 4);
    }

    #[test]
    fn unknown_panel_names_record() {
        let panels = vec![PanelGeometry { id: 1, position: Vec3::zeros(), boresight: Vec3::y() }];
        let ues = vec![UeState { snapshot_id: 1, position: Vec3::new(3.0, 0.0, 0.0), moved_distance: 0.0 }];
        let r = MpcRecord::new(MpcKey::new(2, 1, 0), crate::geometry::AoA::new(0.0, 1.0).unwrap(), 2e-8);
        let err = validate_records(&[r], &panels, &ues).unwrap_err();
        assert_eq!(err.stage, Stage::Validate);
        assert!(err.record.unwrap().contains("panel 2"));
        assert_eq!(validate_records(&[], &panels, &ues).unwrap_err().message, "no records");
    }
}
