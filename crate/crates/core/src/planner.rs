//! Online trajectory planning.
//!
//! At every pose a predictor scores eleven candidate next views (fixed `phi`
//! increment, `theta` offsets from -25 to +25 degrees). Scores are min-max
//! normalised over the admissible candidates and combined with a smoothness
//! reward,
//!
//! ```text
//! i* = argmax_i  lambda * (u . v_i) + p_i
//! ```
//!
//! where `u` is the unit direction of the previous step and `v_i` the unit
//! direction towards candidate `i`, both in degree space.

use std::cmp::Ordering;

use crate::detectability::{view_detectability, DetectabilityConfig, DetectabilityMap};
use crate::error::{Error, Result};
use crate::geometry::{angular_distance, circular_difference, theta_in_range, wrap_degrees, AngularStats, DetectorGeometry, ViewAngles, THETA_MAX, THETA_MIN};
use crate::phantom::MaterialVolume;
use crate::projector::{simulate_projection, AttenuationTable, ProjectionImage, Spectrum};

pub const CANDIDATES: usize = 11;

/// `theta` offsets of the candidate views, degrees.
pub const DEFAULT_OFFSETS: [f64; CANDIDATES] = [-25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub delta_phi: f64,
    pub lambda: f64,
    /// Largest allowed `|theta - theta_start|`.
    pub theta_limit: f64,
    /// Total `phi` sweep.
    pub arc: f64,
    pub candidate_offsets: [f64; CANDIDATES],
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { delta_phi: 5.0, lambda: 0.6, theta_limit: 45.0, arc: 200.0, candidate_offsets: DEFAULT_OFFSETS }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.delta_phi > 0.0) || !(self.arc > 0.0) {
            return Err(Error::Config("delta_phi and arc must be positive".into()));
        }
        let steps = self.arc / self.delta_phi;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("arc {} is not a multiple of delta_phi {}", self.arc, self.delta_phi)));
        }
        if !(self.theta_limit >= 0.0) {
            return Err(Error::Config("theta_limit must be >= 0".into()));
        }
        if self.candidate_offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("candidate offsets must be finite".into()));
        }
        Ok(())
    }

    /// Number of poses in a planned trajectory (`arc / delta_phi`).
    pub fn views(&self) -> usize {
        (self.arc / self.delta_phi).round() as usize
    }

    /// Which candidates stay inside both the start-relative and global limits.
    pub fn admissible(&self, theta: f64, start_theta: f64) -> [bool; CANDIDATES] {
        self.candidate_offsets.map(|o| {
            let t = theta + o;
            (t - start_theta).abs() <= self.theta_limit + 1e-9 && theta_in_range(t)
        })
    }
}

/// Min-max normalisation over the admissible candidates; inadmissible ones
/// are set to 0. A flat score vector normalises to all zeros.
pub fn normalize_scores(raw: &[f64; CANDIDATES], valid: &[bool; CANDIDATES]) -> [f64; CANDIDATES] {
    let (lo, hi) = raw
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (&r, _)| (l.min(r), h.max(r)));
    let span = hi - lo;
    let mut out = [0.0; CANDIDATES];
    for i in 0..CANDIDATES {
        if valid[i] && span > 0.0 {
            out[i] = (raw[i] - lo) / span;
        }
    }
    out
}

/// Objective value of every candidate.
pub fn objective(prev_direction: (f64, f64), scores: &[f64; CANDIDATES], cfg: &PlannerConfig) -> Result<[f64; CANDIDATES]> {
    let (du, dv) = prev_direction;
    let norm = (du * du + dv * dv).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Range("previous direction must be non-zero".into()));
    }
    let u = (du / norm, dv / norm);
    let mut out = [0.0; CANDIDATES];
    for (i, o) in out.iter_mut().enumerate() {
        let (a, b) = (cfg.delta_phi, cfg.candidate_offsets[i]);
        let n = (a * a + b * b).sqrt();
        *o = cfg.lambda * (u.0 * a / n + u.1 * b / n) + scores[i];
    }
    Ok(out)
}

/// Index of the best admissible candidate. Ties go to the smallest `|offset|`,
/// then to the negative offset.
pub fn choose(
    theta: f64,
    start_theta: f64,
    prev_direction: (f64, f64),
    scores: &[f64; CANDIDATES],
    cfg: &PlannerConfig,
) -> Result<usize> {
    let valid = cfg.admissible(theta, start_theta);
    let obj = objective(prev_direction, scores, cfg)?;
    let mut best: Option<usize> = None;
    for i in (0..CANDIDATES).filter(|&i| valid[i]) {
        best = Some(match best {
            None => i,
            Some(b) => match obj[i].total_cmp(&obj[b]) {
                Ordering::Greater => i,
                Ordering::Less => b,
                Ordering::Equal => {
                    let (oi, ob) = (cfg.candidate_offsets[i], cfg.candidate_offsets[b]);
                    match oi.abs().total_cmp(&ob.abs()) {
                        Ordering::Less => i,
                        Ordering::Greater => b,
                        Ordering::Equal if oi < ob => i,
                        Ordering::Equal => b,
                    }
                }
            },
        });
    }
    best.ok_or_else(|| Error::Range(format!("no admissible candidate from theta {theta}")))
}

/// One planning step from `pose`: returns the next pose and the chosen index.
pub fn step(
    pose: ViewAngles,
    start_theta: f64,
    prev_direction: (f64, f64),
    scores: &[f64; CANDIDATES],
    cfg: &PlannerConfig,
) -> Result<(ViewAngles, usize)> {
    let i = choose(pose.theta(), start_theta, prev_direction, scores, cfg)?;
    let next = ViewAngles::new(pose.phi() + cfg.delta_phi, pose.theta() + cfg.candidate_offsets[i])?;
    Ok((next, i))
}

/// Scores candidate next views from the current view.
pub trait Predictor {
    /// Whether [`Predictor::predict`] looks at the projection image at all;
    /// when it does not, the planner skips simulating it.
    fn needs_image(&self) -> bool;

    /// Raw scores for the views at `phi + delta_phi`, `theta + offset_i`.
    /// Candidates outside the global `theta` range may receive any finite
    /// value; the planner excludes them.
    fn predict(&self, image: Option<&ProjectionImage>, pose: &ViewAngles, cfg: &PlannerConfig) -> Result<[f64; CANDIDATES]>;
}

/// True detectability of every candidate, computed on the known phantom or
/// looked up in a precomputed map.
pub enum OraclePredictor<'a> {
    Exact { vol: &'a MaterialVolume, cfg: &'a DetectabilityConfig },
    Map(&'a DetectabilityMap),
}

impl Predictor for OraclePredictor<'_> {
    fn needs_image(&self) -> bool {
        false
    }

    fn predict(&self, _image: Option<&ProjectionImage>, pose: &ViewAngles, cfg: &PlannerConfig) -> Result<[f64; CANDIDATES]> {
        let mut out = [0.0; CANDIDATES];
        for (o, off) in out.iter_mut().zip(&cfg.candidate_offsets) {
            let theta = pose.theta() + off;
            if !theta_in_range(theta) {
                continue;
            }
            let next = ViewAngles::new(pose.phi() + cfg.delta_phi, theta)?;
            *o = match self {
                Self::Exact { vol, cfg } => view_detectability(vol, next, cfg)?,
                Self::Map(map) => map.interpolate(next.phi(), next.theta()),
            };
        }
        Ok(out)
    }
}

/// Produces the projection seen at a pose.
pub trait ViewSource {
    fn image(&self, pose: ViewAngles) -> Result<ProjectionImage>;
}

/// Simulated acquisition of a phantom, noisy when `fluence` is set.
pub struct Simulator<'a> {
    pub vol: &'a MaterialVolume,
    pub geom: DetectorGeometry,
    pub spectrum: Spectrum,
    pub table: AttenuationTable,
    pub fluence: Option<f64>,
    pub noise_seed: u64,
}

impl ViewSource for Simulator<'_> {
    fn image(&self, pose: ViewAngles) -> Result<ProjectionImage> {
        simulate_projection(self.vol, pose, &self.geom, &self.spectrum, &self.table, self.fluence, self.noise_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub pose: ViewAngles,
    /// Raw score of this pose as predicted from the previous one (`None` for
    /// the start pose).
    pub chosen_score: Option<f64>,
    /// All raw candidate scores evaluated at the previous pose.
    pub scores: Option<[f64; CANDIDATES]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: ViewAngles,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn poses(&self) -> Vec<ViewAngles> {
        self.steps.iter().map(|s| s.pose).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The circular short scan at a fixed `theta`.
    pub fn circular(start: ViewAngles, cfg: &PlannerConfig) -> Result<Self> {
        cfg.validate()?;
        let steps = (0..cfg.views())
            .map(|t| {
                Ok(TrajectoryStep {
                    pose: ViewAngles::new(start.phi() + t as f64 * cfg.delta_phi, start.theta())?,
                    chosen_score: None,
                    scores: None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { start, steps })
    }
}

/// Plan a trajectory from `start`, simulating each acquired view only when the
/// predictor asks for it.
pub fn plan(predictor: &dyn Predictor, source: &dyn ViewSource, start: ViewAngles, cfg: &PlannerConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut steps = vec![TrajectoryStep { pose: start, chosen_score: None, scores: None }];
    let mut pose = start;
    let mut prev = (cfg.delta_phi, 0.0);
    for _ in 1..cfg.views() {
        let image = if predictor.needs_image() { Some(source.image(pose)?) } else { None };
        let raw = predictor.predict(image.as_ref(), &pose, cfg)?;
        check_scores(&raw)?;
        let valid = cfg.admissible(pose.theta(), start.theta());
        let p = normalize_scores(&raw, &valid);
        let (next, i) = step(pose, start.theta(), prev, &p, cfg)?;
        prev = (cfg.delta_phi, cfg.candidate_offsets[i]);
        steps.push(TrajectoryStep { pose: next, chosen_score: Some(raw[i]), scores: Some(raw) });
        pose = next;
    }
    Ok(Trajectory { start, steps })
}

fn check_scores(raw: &[f64; CANDIDATES]) -> Result<()> {
    if raw.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("predictor returned a non-finite score".into()));
    }
    Ok(())
}

/// A pre-acquired view for retrospective planning.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolView {
    pub pose: ViewAngles,
    pub image: Option<ProjectionImage>,
}

fn pose_distance(a: &ViewAngles, b: &ViewAngles) -> f64 {
    let dp = circular_difference(a.phi(), b.phi());
    let dt = a.theta() - b.theta();
    (dp * dp + dt * dt).sqrt()
}

fn take_nearest(pool: &mut Vec<PoolView>, target: &ViewAngles) -> Result<PoolView> {
    let best = pool
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| pose_distance(&a.pose, target).total_cmp(&pose_distance(&b.pose, target)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Range("pool of sampled views exhausted".into()))?;
    Ok(pool.remove(best))
}

/// Planning over a fixed set of sampled views: every requested pose snaps to
/// the nearest remaining view (Euclidean in degrees, `phi` circular), which is
/// then removed from the pool.
pub fn retrospective_plan(
    predictor: &dyn Predictor,
    mut pool: Vec<PoolView>,
    start: ViewAngles,
    cfg: &PlannerConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut current = take_nearest(&mut pool, &start)?;
    let start = current.pose;
    let mut steps = vec![TrajectoryStep { pose: start, chosen_score: None, scores: None }];
    let mut prev = (cfg.delta_phi, 0.0);
    for _ in 1..cfg.views() {
        let pose = current.pose;
        let image = if predictor.needs_image() {
            Some(current.image.as_ref().ok_or_else(|| Error::Config("sampled view has no image".into()))?)
        } else {
            None
        };
        let raw = predictor.predict(image, &pose, cfg)?;
        check_scores(&raw)?;
        let valid = cfg.admissible(pose.theta(), start.theta());
        let p = normalize_scores(&raw, &valid);
        let (target, i) = step(pose, start.theta(), prev, &p, cfg)?;
        let next = take_nearest(&mut pool, &target)?;
        let moved = (circular_difference(next.pose.phi(), pose.phi()), next.pose.theta() - pose.theta());
        if moved.0 != 0.0 || moved.1 != 0.0 {
            prev = moved;
        }
        steps.push(TrajectoryStep { pose: next.pose, chosen_score: Some(raw[i]), scores: Some(raw) });
        current = next;
    }
    Ok(Trajectory { start, steps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub angular: AngularStats,
    /// Mean and population std of `|d2_a - d2_b| / d2_b` over the poses.
    pub relative_d2: AngularStats,
}

/// Compare trajectory `a` against reference `b` on a detectability map.
pub fn compare(a: &Trajectory, b: &Trajectory, map: &DetectabilityMap) -> Result<Comparison> {
    let (pa, pb) = (a.poses(), b.poses());
    let angular = angular_distance(&pa, &pb)?;
    let rel: Vec<f64> = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| {
            let (da, db) = (map.interpolate(x.phi(), x.theta()), map.interpolate(y.phi(), y.theta()));
            if db > 0.0 {
                Ok((da - db).abs() / db)
            } else if da == db {
                Ok(0.0)
            } else {
                Err(Error::Numerical("reference detectability is zero".into()))
            }
        })
        .collect::<Result<_>>()?;
    let n = rel.len() as f64;
    let mean = rel.iter().sum::<f64>() / n;
    let std = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Comparison { angular, relative_d2: AngularStats { mean, std } })
}

/// Clamp a `theta` to the global range (used when building candidate grids).
pub fn clamp_theta(theta: f64) -> f64 {
    theta.clamp(THETA_MIN, THETA_MAX)
}

/// `phi` of step `t` from a start angle.
pub fn phi_at(start_phi: f64, t: usize, cfg: &PlannerConfig) -> f64 {
    wrap_degrees(start_phi + t as f64 * cfg.delta_phi)
}
