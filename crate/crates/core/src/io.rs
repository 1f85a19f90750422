//! MPC tables (CSV) and panel/UE geometry files (TOML).
//!
//! MPC CSV columns, in this order:
//!
//! ```text
//! panel_id,snapshot_id,path_id,azimuth_rad,zenith_rad,delay_s
//! [,doppler_hz,gain_db,pol_re11,pol_im11,pol_re12,pol_im12,pol_re21,pol_im21,pol_re22,pol_im22]
//! ```
//!
//! Optional cells may be empty. The polarization cells are all present or
//! all empty. Geometry files hold `[[panels]]` tables (`id`, `position`,
//! optional `boresight`) and `[[ue]]` tables (`snapshot`, `position`,
//! optional `moved_distance`).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ElevationConvention, MpcKey, MpcRecord, PanelGeometry, Polarization, UeState, AoA, is_finite};
use crate::synth::GroundTruthMpc;

pub const REQUIRED_COLUMNS: [&str; 6] = ["panel_id", "snapshot_id", "path_id", "azimuth_rad", "zenith_rad", "delay_s"];
pub const OPTIONAL_COLUMNS: [&str; 10] = [
    "doppler_hz",
    "gain_db",
    "pol_re11",
    "pol_im11",
    "pol_re12",
    "pol_im12",
    "pol_re21",
    "pol_im21",
    "pol_re22",
    "pol_im22",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    /// `row` counts data rows from 1; the header is not a row.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IoError {
    pub fn row(&self) -> Option<usize> {
        match self {
            IoError::Row { row, .. } => Some(*row),
            _ => None,
        }
    }
}

pub fn load_mpc_csv(path: impl AsRef<Path>, convention: ElevationConvention) -> Result<Vec<MpcRecord>, IoError> {
    read_mpc_csv(File::open(path)?, convention)
}

/// Parses and validates every row; the first bad row aborts with its number.
pub fn read_mpc_csv(reader: impl Read, convention: ElevationConvention) -> Result<Vec<MpcRecord>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = col(name).ok_or_else(|| IoError::MissingColumn(name.to_string()))?;
    }
    let optional: Vec<Option<usize>> = OPTIONAL_COLUMNS.iter().map(|n| col(n)).collect();

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let bad = |message: String| IoError::Row { row, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let int = |c: usize, name: &str| -> Result<u32, IoError> {
            cell(c).parse().map_err(|_| bad(format!("invalid {name} '{}'", cell(c))))
        };
        let float = |c: usize, name: &str| -> Result<f64, IoError> {
            let v: f64 = cell(c).parse().map_err(|_| bad(format!("invalid {name} '{}'", cell(c))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-finite {name}")))
            }
        };
        let maybe = |c: Option<usize>, name: &str| -> Result<Option<f64>, IoError> {
            match c {
                Some(c) if !cell(c).is_empty() => float(c, name).map(Some),
                _ => Ok(None),
            }
        };

        let key = MpcKey::new(int(required[0], "panel_id")?, int(required[1], "snapshot_id")?, int(required[2], "path_id")?);
        let azimuth = float(required[3], "azimuth")?;
        let zenith = convention.to_zenith(float(required[4], "zenith")?);
        let aoa = AoA::new(azimuth, zenith).map_err(|e| bad(e.to_string()))?;
        let delay = float(required[5], "delay")?;
        if delay <= 0.0 {
            return Err(bad(format!("delay must be positive, got {delay}")));
        }
        if !seen.insert(key) {
            return Err(bad(format!("duplicate MPC ({key})")));
        }
        let mut record = MpcRecord::new(key, aoa, delay);
        record.doppler_hz = maybe(optional[0], "doppler_hz")?;
        record.gain_db = maybe(optional[1], "gain_db")?;
        let pol: Vec<Option<f64>> =
            (2..10).map(|k| maybe(optional[k], OPTIONAL_COLUMNS[k])).collect::<Result<_, _>>()?;
        if pol.iter().all(Option::is_some) {
            let mut m = [0.0; 8];
            for (dst, v) in m.iter_mut().zip(&pol) {
                *dst = v.expect("checked");
            }
            record.polarization = Some(Polarization(m));
        } else if pol.iter().any(Option::is_some) {
            return Err(bad("polarization cells must be all present or all empty".into()));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn save_mpc_csv(records: &[MpcRecord], path: impl AsRef<Path>, convention: ElevationConvention) -> Result<(), IoError> {
    write_mpc_csv(records, File::create(path)?, convention)
}

/// Writes the optional columns only if some record carries optional data.
/// Floats use the shortest text that reads back to the same value.
pub fn write_mpc_csv(records: &[MpcRecord], writer: impl Write, convention: ElevationConvention) -> Result<(), IoError> {
    let extended = records.iter().any(|r| r.doppler_hz.is_some() || r.gain_db.is_some() || r.polarization.is_some());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    if extended {
        header.extend(OPTIONAL_COLUMNS);
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let mut row = vec![
            r.key.panel_id.to_string(),
            r.key.snapshot_id.to_string(),
            r.key.path_id.to_string(),
            r.aoa.azimuth.to_string(),
            convention.from_zenith(r.aoa.zenith).to_string(),
            format!("{:e}", r.delay),
        ];
        if extended {
            row.push(opt(r.doppler_hz));
            row.push(opt(r.gain_db));
            for k in 0..8 {
                row.push(opt(r.polarization.map(|p| p.0[k])));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Static panel layout plus the UE position at each snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub panels: Vec<PanelGeometry>,
    pub ue: Vec<UeState>,
}

impl GeometryFile {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let mut g: GeometryFile = toml::from_str(text).map_err(|e| IoError::Geometry(e.to_string()))?;
        g.validate()?;
        // Files that omit moved distances get the cumulative UE displacement.
        if g.ue.len() > 1 && g.ue.iter().all(|u| u.moved_distance == 0.0) {
            let mut moved = 0.0;
            for i in 1..g.ue.len() {
                moved += (g.ue[i].position - g.ue[i - 1].position).norm();
                g.ue[i].moved_distance = moved;
            }
        }
        Ok(g)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("geometry serializes")
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::Geometry(m));
        if self.panels.is_empty() {
            return bad("no panels".into());
        }
        if self.ue.is_empty() {
            return bad("no UE positions".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.panels {
            if !ids.insert(p.id) {
                return bad(format!("duplicate panel id {}", p.id));
            }
            if !is_finite(&p.position) {
                return bad(format!("panel {} position is not finite", p.id));
            }
        }
        let mut snaps = BTreeSet::new();
        for u in &self.ue {
            if !snaps.insert(u.snapshot_id) {
                return bad(format!("duplicate snapshot {}", u.snapshot_id));
            }
            if !is_finite(&u.position) {
                return bad(format!("UE position of snapshot {} is not finite", u.snapshot_id));
            }
        }
        Ok(())
    }
}

pub fn load_geometry(path: impl AsRef<Path>) -> Result<GeometryFile, IoError> {
    GeometryFile::from_toml(&std::fs::read_to_string(path)?)
}

/// Ground truth of synthesized paths:
/// `panel_id,snapshot_id,path_id,kind,order,surfaces,vs_x,vs_y,vs_z`, with
/// surfaces joined by `+` (first interaction first) and `order` empty for clutter.
pub fn write_truth_csv(paths: &[GroundTruthMpc], writer: impl Write) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["panel_id", "snapshot_id", "path_id", "kind", "order", "surfaces", "vs_x", "vs_y", "vs_z"])?;
    for p in paths {
        let k = p.record.key;
        let kind = serde_json::to_value(p.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let surfaces: Vec<&str> = p.surfaces.iter().map(|s| s.name()).collect();
        w.write_record([
            k.panel_id.to_string(),
            k.snapshot_id.to_string(),
            k.path_id.to_string(),
            kind,
            p.order.map(|o| o.to_string()).unwrap_or_default(),
            surfaces.join("+"),
            p.true_vs.x.to_string(),
            p.true_vs.y.to_string(),
            p.true_vs.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
