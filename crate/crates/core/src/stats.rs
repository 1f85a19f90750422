//! Aggregate statistics: single-bounce share vs. distance and its model
//! fits, reflecting-surface distribution, and track lifetimes.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounce::{BounceCounts, BounceDecision};
use crate::geometry::{MpcKey, PanelGeometry, UeState, Vec3};
use crate::pointcloud::Region;
use crate::tracker::{Mechanism, SnapshotTracks, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    #[default]
    Euclidean,
    /// Ignore the height difference.
    Horizontal,
}

pub fn communication_distance(panel: &Vec3, ue: &Vec3, mode: DistanceMode) -> f64 {
    let d = ue - panel;
    match mode {
        DistanceMode::Euclidean => d.norm(),
        DistanceMode::Horizontal => d.xy().norm(),
    }
}

/// Single-bounce share of one (panel, snapshot) link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatPoint {
    pub panel_id: u32,
    pub snapshot_id: u32,
    pub d_c: f64,
    /// `None` when no MPC of the link was labeled single or multi.
    pub eta_sb: Option<f64>,
    pub counts: BounceCounts,
}

/// One point per link that has decisions, sorted by (panel, snapshot).
pub fn stat_points(
    decisions: &[BounceDecision],
    panels: &[PanelGeometry],
    ues: &[UeState],
    mode: DistanceMode,
) -> Vec<StatPoint> {
    let mut per_link: BTreeMap<(u32, u32), BounceCounts> = BTreeMap::new();
    for d in decisions {
        let c = per_link.entry((d.key.panel_id, d.key.snapshot_id)).or_default();
        *c = add_counts(*c, BounceCounts::tally([&d.label]));
    }
    per_link
        .into_iter()
        .filter_map(|((panel_id, snapshot_id), counts)| {
            let p = panels.iter().find(|p| p.id == panel_id)?;
            let u = ues.iter().find(|u| u.snapshot_id == snapshot_id)?;
            Some(StatPoint {
                panel_id,
                snapshot_id,
                d_c: communication_distance(&p.position, &u.position, mode),
                eta_sb: counts.single_bounce_ratio(),
                counts,
            })
        })
        .collect()
}

fn add_counts(a: BounceCounts, b: BounceCounts) -> BounceCounts {
    BounceCounts {
        single: a.single + b.single,
        multi: a.multi + b.multi,
        indeterminate: a.indeterminate + b.indeterminate,
        line_of_sight: a.line_of_sight + b.line_of_sight,
    }
}

/// `(d_c, η_SB)` pairs usable for fitting. Links without any single or
/// multi label carry no ratio and are dropped with a warning.
pub fn fit_samples<'a>(points: impl IntoIterator<Item = &'a StatPoint>) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for p in points {
        match p.eta_sb {
            Some(eta) => out.push((p.d_c, eta)),
            None => log::warn!(
                "dropping link panel {} snapshot {} from fit: no single/multi labels",
                p.panel_id,
                p.snapshot_id
            ),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `η = a·d + b`
    Linear,
    /// `η = a·exp(b·d)`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl FitResult {
    pub fn predict(&self, d: f64) -> f64 {
        match self.model {
            FitModel::Linear => self.a * d + self.b,
            FitModel::Exponential => self.a * (self.b * d).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("distances have no spread")]
    DegenerateSpread,
    #[error("need at least 3 points with positive ratio for the exponential model, got {0}")]
    TooFewPositive(usize),
    #[error("exponential fit did not converge (gradient norm {gradient_norm:e}); best a = {}, b = {}", best.a, best.b)]
    NotConverged { best: FitResult, gradient_norm: f64 },
}

/// `1 − SS_res/SS_tot`; defined as 0 when the data has no variance.
pub fn r_squared(samples: &[(f64, f64)], predict: impl Fn(f64) -> f64) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let ss_tot: f64 = samples.iter().map(|s| (s.1 - mean).powi(2)).sum();
    let ss_res: f64 = samples.iter().map(|s| (s.1 - predict(s.0)).powi(2)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    1.0 - ss_res / ss_tot
}

fn check_spread(samples: &[(f64, f64)]) -> Result<(), FitError> {
    if samples.len() < 3 {
        return Err(FitError::TooFewPoints { need: 3, got: samples.len() });
    }
    let first = samples[0].0;
    if samples.iter().all(|s| s.0 == first) {
        return Err(FitError::DegenerateSpread);
    }
    Ok(())
}

fn least_squares_line(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Ordinary least squares `η = a·d + b`.
pub fn fit_linear(samples: &[(f64, f64)]) -> Result<FitResult, FitError> {
    check_spread(samples)?;
    let (a, b) = least_squares_line(samples);
    let r2 = r_squared(samples, |d| a * d + b);
    Ok(FitResult { model: FitModel::Linear, a, b, r_squared: r2, n_points: samples.len() })
}

const GRADIENT_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 500;

/// Least squares `η = a·exp(b·d)` on untransformed residuals.
///
/// Started from a straight-line fit of `ln η` over the positive samples and
/// refined with Levenberg–Marquardt until the gradient of the squared
/// residual sum drops below 1e-10.
pub fn fit_exponential(samples: &[(f64, f64)]) -> Result<FitResult, FitError> {
    check_spread(samples)?;
    let positive: Vec<(f64, f64)> = samples.iter().filter(|s| s.1 > 0.0).map(|s| (s.0, s.1.ln())).collect();
    if positive.len() < 3 {
        return Err(FitError::TooFewPositive(positive.len()));
    }
    if positive.iter().all(|s| s.0 == positive[0].0) {
        return Err(FitError::DegenerateSpread);
    }
    // Shift distances to their mean so a and b are well conditioned; the
    // amplitude is mapped back at the end.
    let shift = samples.iter().map(|s| s.0).sum::<f64>() / samples.len() as f64;
    let xs: Vec<(f64, f64)> = samples.iter().map(|s| (s.0 - shift, s.1)).collect();
    let (b0, ln_a0) = least_squares_line(&positive.iter().map(|s| (s.0 - shift, s.1)).collect::<Vec<_>>());
    let mut theta = Vector2::new(ln_a0.exp(), b0);

    let system = |t: &Vector2<f64>| -> (f64, Vector2<f64>, Matrix2<f64>) {
        let (mut cost, mut grad, mut jtj) = (0.0, Vector2::zeros(), Matrix2::zeros());
        for &(x, y) in &xs {
            let e = (t[1] * x).exp();
            let r = t[0] * e - y;
            let j = Vector2::new(e, t[0] * x * e);
            cost += r * r;
            grad += j * r;
            jtj += j * j.transpose();
        }
        (cost, grad, jtj)
    };

    let (mut cost, mut grad, mut jtj) = system(&theta);
    let mut lambda = 1e-3;
    let mut converged = grad.norm() < GRADIENT_TOL;
    for _ in 0..MAX_ITERATIONS {
        if converged {
            break;
        }
        let mut damped = jtj;
        for k in 0..2 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&-grad) else {
            lambda *= 10.0;
            continue;
        };
        let trial = theta + step;
        let (c, g, j) = system(&trial);
        // Near the optimum the cost stops changing in floating point, so a
        // step that keeps it level and shrinks the gradient is accepted too.
        let improved = c < cost || (c <= cost * (1.0 + 1e-12) && g.norm() < grad.norm());
        if c.is_finite() && improved {
            let stalled = step.norm() <= 1e-15 * (1.0 + theta.norm());
            theta = trial;
            cost = c;
            grad = g;
            jtj = j;
            lambda = (lambda / 10.0).max(1e-15);
            converged = grad.norm() < GRADIENT_TOL;
            if stalled && !converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    let (a, b) = (theta[0] * (-theta[1] * shift).exp(), theta[1]);
    let result = FitResult {
        model: FitModel::Exponential,
        a,
        b,
        r_squared: r_squared(samples, |d| a * (b * d).exp()),
        n_points: samples.len(),
    };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NotConverged { best: result, gradient_norm: grad.norm() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub linear: FitResult,
    pub exponential: FitResult,
    /// Model with the larger R²; ties go to the linear model.
    pub preferred: FitModel,
}

pub fn compare_models(samples: &[(f64, f64)]) -> Result<ModelComparison, FitError> {
    let linear = fit_linear(samples)?;
    let exponential = fit_exponential(samples)?;
    let preferred =
        if exponential.r_squared > linear.r_squared { FitModel::Exponential } else { FitModel::Linear };
    Ok(ModelComparison { linear, exponential, preferred })
}

/// Per-snapshot share of reflected MPCs by the region of their last hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistribution {
    pub snapshot_id: u32,
    pub moved_distance: f64,
    pub reflected: usize,
    pub counts: BTreeMap<Region, usize>,
    /// Every region is present; the values sum to 1 unless `reflected == 0`,
    /// in which case they are all 0.
    pub fractions: BTreeMap<Region, f64>,
}

impl SurfaceDistribution {
    pub fn is_empty(&self) -> bool {
        self.reflected == 0
    }
}

/// Attributes each reflected MPC to the region label of its last-hop hit
/// (unknown when its ray found nothing). One entry per UE snapshot.
pub fn surface_distribution(
    ues: &[UeState],
    decisions: &[BounceDecision],
    mechanisms: &BTreeMap<MpcKey, Mechanism>,
) -> Vec<SurfaceDistribution> {
    let mut per_snapshot: BTreeMap<u32, BTreeMap<Region, usize>> = BTreeMap::new();
    for d in decisions {
        if mechanisms.get(&d.key) == Some(&Mechanism::Reflected) {
            let region = d.last_hop_region.unwrap_or(Region::Unknown);
            *per_snapshot.entry(d.key.snapshot_id).or_default().entry(region).or_default() += 1;
        }
    }
    ues.iter()
        .map(|u| {
            let found = per_snapshot.remove(&u.snapshot_id).unwrap_or_default();
            let reflected: usize = found.values().sum();
            let counts: BTreeMap<Region, usize> =
                Region::ALL.iter().map(|r| (*r, found.get(r).copied().unwrap_or(0))).collect();
            let fractions = counts
                .iter()
                .map(|(r, &c)| (*r, if reflected == 0 { 0.0 } else { c as f64 / reflected as f64 }))
                .collect();
            if reflected == 0 {
                log::debug!("snapshot {} has no reflected MPCs", u.snapshot_id);
            }
            SurfaceDistribution { snapshot_id: u.snapshot_id, moved_distance: u.moved_distance, reflected, counts, fractions }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifetimeRecord {
    pub snapshot_id: u32,
    pub track_id: u32,
    pub panels_visited: BTreeSet<u32>,
    pub lifetime: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LifetimeSummary {
    pub records: Vec<LifetimeRecord>,
    /// Lifetime → number of confirmed tracks.
    pub histogram: BTreeMap<usize, usize>,
    /// Panel → tracks visible there but not at the previous panel.
    pub births: BTreeMap<u32, usize>,
    /// Panel → tracks visible at the previous panel but not there.
    pub deaths: BTreeMap<u32, usize>,
}

/// Lifetimes of confirmed tracks. `panel_ids` gives the panel order used for
/// births and deaths; a track seen at the first panel counts as born there.
pub fn lifetime_stats<'a>(
    snapshots: impl IntoIterator<Item = (u32, &'a SnapshotTracks)>,
    panel_ids: &[u32],
    cfg: &TrackerConfig,
) -> LifetimeSummary {
    let mut out = LifetimeSummary {
        births: panel_ids.iter().map(|&k| (k, 0)).collect(),
        deaths: panel_ids.iter().map(|&k| (k, 0)).collect(),
        ..Default::default()
    };
    for (snapshot_id, tracks) in snapshots {
        for t in tracks.confirmed(cfg) {
            let visited = t.panels_visited();
            let mut prev_seen = false;
            for &k in panel_ids {
                let seen = visited.contains(&k);
                if seen && !prev_seen {
                    *out.births.get_mut(&k).expect("panel listed") += 1;
                }
                if !seen && prev_seen {
                    *out.deaths.get_mut(&k).expect("panel listed") += 1;
                }
                prev_seen = seen;
            }
            *out.histogram.entry(visited.len()).or_default() += 1;
            out.records.push(LifetimeRecord {
                snapshot_id,
                track_id: t.id,
                lifetime: visited.len(),
                panels_visited: visited,
            });
        }
    }
    out
}
