//! Synthetic streaming scenarios: procedural road maps, 2 Hz ego
//! trajectories, rasterized ground truth and noisy, occluded BEV observations.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{relative_transform, GridSpec, Pose2};
use crate::tensorops::FeatureMap;

pub const SCENARIO_VERSION: u32 = 1;
/// Seconds between frames (2 Hz).
pub const FRAME_DT: f64 = 0.5;
/// Background plus the three map classes.
pub const NUM_CLASSES: usize = 4;
pub const OBS_CHANNELS: usize = NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    PedCrossing,
    Divider,
    Boundary,
}

impl ElementClass {
    pub const ALL: [ElementClass; 3] = [ElementClass::PedCrossing, ElementClass::Divider, ElementClass::Boundary];

    /// Per-cell label index; 0 is background.
    pub fn label(self) -> u8 {
        match self {
            ElementClass::PedCrossing => 1,
            ElementClass::Divider => 2,
            ElementClass::Boundary => 3,
        }
    }

    /// Higher wins when elements overlap.
    fn precedence(self) -> u8 {
        match self {
            ElementClass::PedCrossing => 3,
            ElementClass::Divider => 2,
            ElementClass::Boundary => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementClass::PedCrossing => "ped_crossing",
            ElementClass::Divider => "divider",
            ElementClass::Boundary => "boundary",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapElement {
    pub class: ElementClass,
    /// World-frame polyline vertices in meters.
    pub points: Vec<[f64; 2]>,
    pub width_m: f64,
}

/// Axis-aligned rectangle in the ego frame, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoRect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl EgoRect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Blocks the observation inside `rect` for frames `start_frame..end_frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occluder {
    pub start_frame: usize,
    pub end_frame: usize,
    pub rect: EgoRect,
}

impl Occluder {
    pub fn active(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame < self.end_frame
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub grid: GridSpec,
    pub map_elements: Vec<MapElement>,
    /// World-frame ego poses, one per frame.
    pub trajectory: Vec<Pose2>,
    pub occluders: Vec<Occluder>,
    /// Seed of the per-frame observation noise.
    #[serde(default)]
    pub noise_seed: u64,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Data(format!("unsupported scenario version {}", self.version)));
        }
        self.grid.validate()?;
        if self.trajectory.len() < 2 {
            return Err(Error::Data("scenario needs at least 2 frames".into()));
        }
        for w in self.trajectory.windows(2) {
            let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            if !(d <= 15.0) {
                return Err(Error::Data(format!("implausible inter-frame displacement {d:.2} m")));
            }
        }
        for o in &self.occluders {
            if o.start_frame >= o.end_frame || o.end_frame > self.len() {
                return Err(Error::Data(format!(
                    "occluder interval {}..{} outside 0..{}",
                    o.start_frame,
                    o.end_frame,
                    self.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Ground truth and observations for every frame.
    pub fn render(&self, noise_sigma: f64) -> Result<SequenceData> {
        let frames = (0..self.len())
            .map(|t| {
                let labels = rasterize(&self.map_elements, &self.trajectory[t], &self.grid);
                observe(&labels, t, &self.occluders, self.noise_seed, noise_sigma, &self.grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SequenceData { grid: self.grid, poses: self.trajectory.clone(), frames })
    }
}

/// One rendered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFrame {
    /// `OBS_CHANNELS x H x W`; exactly zero on occluded cells.
    pub observation: FeatureMap<f32>,
    pub gt_labels: Vec<u8>,
    pub visibility: Vec<bool>,
}

/// A rendered scenario ready for training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub grid: GridSpec,
    pub poses: Vec<Pose2>,
    pub frames: Vec<ObservationFrame>,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, r: Range<usize>) -> SequenceData {
        SequenceData { grid: self.grid, poses: self.poses[r.clone()].to_vec(), frames: self.frames[r].to_vec() }
    }

    /// Cells hidden at frame `t` whose world location was visible in at
    /// least one of the `window` preceding frames (nearest-cell lookup).
    pub fn recoverable_cells(&self, t: usize, window: usize) -> Vec<bool> {
        let spec = &self.grid;
        let vis_t = &self.frames[t].visibility;
        let rels: Vec<(Pose2, &[bool])> = (1..=window.min(t))
            .map(|k| (relative_transform(&self.poses[t - k], &self.poses[t]), self.frames[t - k].visibility.as_slice()))
            .collect();
        let mut out = vec![false; spec.cells()];
        for i in 0..spec.h_cells {
            for j in 0..spec.w_cells {
                let cell = i * spec.w_cells + j;
                if vis_t[cell] {
                    continue;
                }
                out[cell] = rels.iter().any(|(rel, vis)| {
                    let (si, sj) = spec.map_back(rel, i as f64, j as f64);
                    spec.nearest_cell(si, sj).is_some_and(|(a, b)| vis[a * spec.w_cells + b])
                });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Straight,
    Turn,
    VariedSpeed,
}

/// Ego trajectory at 2 Hz.
///
/// * `Straight`: constant heading, constant speed in 5..15 m/s.
/// * `Turn`: a 60..90 degree heading change spread over 4..=8 frames.
/// * `VariedSpeed`: piecewise-constant speeds from {2, 8, 14} m/s.
pub fn gen_trajectory(seed: u64, kind: TrajectoryKind, frames: usize) -> Result<Vec<Pose2>> {
    if frames < 2 {
        return Err(Error::InvalidArgument("a trajectory needs at least 2 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heading0 = rng.gen_range(-PI..PI);
    let mut speeds = vec![0.0; frames];
    let mut yaw_rate = vec![0.0; frames];
    match kind {
        TrajectoryKind::Straight => {
            let v = rng.gen_range(5.0..15.0);
            speeds.iter_mut().for_each(|s| *s = v);
        }
        TrajectoryKind::Turn => {
            let v = rng.gen_range(6.0..10.0);
            speeds.iter_mut().for_each(|s| *s = v);
            let span = rng.gen_range(4..=8usize).min(frames - 1);
            let total = rng.gen_range(60.0f64..90.0).to_radians() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let latest = frames - span;
            let start = if latest > 1 { rng.gen_range(1..=latest) } else { 1 };
            for r in yaw_rate.iter_mut().skip(start).take(span) {
                *r = total / span as f64;
            }
        }
        TrajectoryKind::VariedSpeed => {
            let mut t = 0;
            while t < frames {
                let v = *[2.0, 8.0, 14.0].choose(&mut rng).unwrap();
                let len = rng.gen_range(3..=8usize);
                for s in speeds.iter_mut().skip(t).take(len) {
                    *s = v;
                }
                t += len;
            }
        }
    }
    let mut poses = Vec::with_capacity(frames);
    let (mut x, mut y, mut yaw) = (0.0, 0.0, heading0);
    poses.push(Pose2::new(x, y, yaw));
    for t in 1..frames {
        // Arc step: heading changes around the midpoint of the segment.
        let mid = yaw + 0.5 * yaw_rate[t];
        x += speeds[t] * FRAME_DT * mid.cos();
        y += speeds[t] * FRAME_DT * mid.sin();
        yaw += yaw_rate[t];
        poses.push(Pose2::new(x, y, yaw));
    }
    Ok(poses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParams {
    pub lane_width_m: (f64, f64),
    pub dividers: (usize, usize),
    pub crossings: (usize, usize),
    pub boundary_width_m: f64,
    pub divider_width_m: f64,
    pub crossing_depth_m: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            lane_width_m: (3.0, 4.0),
            dividers: (1, 3),
            crossings: (0, 3),
            boundary_width_m: 1.5,
            divider_width_m: 1.0,
            crossing_depth_m: 4.0,
        }
    }
}

fn offset_polyline(line: &[[f64; 2]], offset: f64) -> Vec<[f64; 2]> {
    let n = line.len();
    (0..n)
        .map(|k| {
            let a = line[k.saturating_sub(1)];
            let b = line[(k + 1).min(n - 1)];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = (dx * dx + dy * dy).sqrt().max(1e-12);
            let (nx, ny) = (-dy / len, dx / len);
            [line[k][0] + offset * nx, line[k][1] + offset * ny]
        })
        .collect()
}

/// Vertex positions at fixed arc-length spacing along a polyline.
fn resample(line: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = vec![line[0]];
    let mut carry = 0.0;
    for w in line.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let len = (dx * dx + dy * dy).sqrt();
        let mut s = spacing - carry;
        while s <= len {
            out.push([w[0][0] + dx * s / len, w[0][1] + dy * s / len]);
            s += spacing;
        }
        carry = len - (s - spacing);
    }
    if out.last() != line.last() {
        out.push(*line.last().unwrap());
    }
    out
}

/// Road centerline through the trajectory, extended by `margin` meters past
/// both ends so the map covers the whole perception range.
pub fn centerline_for(trajectory: &[Pose2], margin: f64) -> Vec<[f64; 2]> {
    let first = trajectory[0];
    let last = trajectory[trajectory.len() - 1];
    let mut line = vec![[first.x - margin * first.yaw.cos(), first.y - margin * first.yaw.sin()]];
    let mut prev = line[0];
    for p in trajectory {
        // Stationary frames would produce zero-length segments.
        if ((p.x - prev[0]).powi(2) + (p.y - prev[1]).powi(2)).sqrt() > 1e-6 {
            line.push([p.x, p.y]);
            prev = [p.x, p.y];
        }
    }
    line.push([last.x + margin * last.yaw.cos(), last.y + margin * last.yaw.sin()]);
    resample(&line, 2.0)
}

/// A road corridor along `centerline`: two boundaries, dividers between the
/// lanes and crossings perpendicular to the road.
pub fn gen_map(seed: u64, centerline: &[[f64; 2]], params: &MapParams) -> Result<Vec<MapElement>> {
    if centerline.len() < 2 {
        return Err(Error::InvalidArgument("centerline needs at least 2 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = rng.gen_range(params.lane_width_m.0..=params.lane_width_m.1);
    let dividers = rng.gen_range(params.dividers.0..=params.dividers.1);
    let lanes = dividers + 1;
    let half = lane * lanes as f64 / 2.0;
    let mut out = Vec::new();
    for side in [-1.0, 1.0] {
        out.push(MapElement {
            class: ElementClass::Boundary,
            points: offset_polyline(centerline, side * half),
            width_m: params.boundary_width_m,
        });
    }
    for d in 1..=dividers {
        out.push(MapElement {
            class: ElementClass::Divider,
            points: offset_polyline(centerline, -half + d as f64 * lane),
            width_m: params.divider_width_m,
        });
    }
    let crossings = rng.gen_range(params.crossings.0..=params.crossings.1);
    let interior = 1..centerline.len() - 1;
    for _ in 0..crossings {
        if interior.is_empty() {
            break;
        }
        let k = rng.gen_range(interior.clone());
        let (a, b) = (centerline[k - 1], centerline[k + 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        let (nx, ny) = (-dy / len, dx / len);
        let c = centerline[k];
        out.push(MapElement {
            class: ElementClass::PedCrossing,
            points: vec![[c[0] - half * nx, c[1] - half * ny], [c[0] + half * nx, c[1] + half * ny]],
            width_m: params.crossing_depth_m,
        });
    }
    Ok(out)
}

fn seg_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let l2 = abx * abx + aby * aby;
    let t = if l2 > 0.0 { ((apx * abx + apy * aby) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Per-cell class labels of the map seen from `pose`.
///
/// A cell takes an element's class when its center is within half the
/// element width of the polyline; crossing beats divider beats boundary.
pub fn rasterize(map: &[MapElement], pose: &Pose2, spec: &GridSpec) -> Vec<u8> {
    let mut labels = vec![0u8; spec.cells()];
    let mut prec = vec![0u8; spec.cells()];
    let corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)].map(|(a, b)| {
        pose.apply(spec.grid_to_ego(a * (spec.h_cells - 1) as f64, b * (spec.w_cells - 1) as f64))
    });
    let lo = [0, 1].map(|k| corners.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1].map(|k| corners.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max));
    for el in map {
        let half = el.width_m / 2.0;
        let segs: Vec<([f64; 2], [f64; 2])> = el
            .points
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|(a, b)| {
                (0..2).all(|k| a[k].min(b[k]) - half <= hi[k] && a[k].max(b[k]) + half >= lo[k])
            })
            .collect();
        if segs.is_empty() {
            continue;
        }
        let (label, p) = (el.class.label(), el.class.precedence());
        for i in 0..spec.h_cells {
            for j in 0..spec.w_cells {
                let cell = i * spec.w_cells + j;
                if prec[cell] >= p {
                    continue;
                }
                let w = pose.apply(spec.grid_to_ego(i as f64, j as f64));
                if segs.iter().any(|&(a, b)| seg_distance(w, a, b) <= half) {
                    labels[cell] = label;
                    prec[cell] = p;
                }
            }
        }
    }
    labels
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One-hot class channels plus Gaussian noise, zeroed under active occluders.
pub fn observe(
    gt_labels: &[u8],
    frame_idx: usize,
    occluders: &[Occluder],
    noise_seed: u64,
    sigma: f64,
    spec: &GridSpec,
) -> Result<ObservationFrame> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if gt_labels.len() != spec.cells() {
        return Err(Error::Shape(format!("{} labels for {} cells", gt_labels.len(), spec.cells())));
    }
    let active: Vec<&Occluder> = occluders.iter().filter(|o| o.active(frame_idx)).collect();
    let mut visibility = vec![true; spec.cells()];
    for i in 0..spec.h_cells {
        for j in 0..spec.w_cells {
            let p = spec.grid_to_ego(i as f64, j as f64);
            if active.iter().any(|o| o.rect.contains(p)) {
                visibility[i * spec.w_cells + j] = false;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise_seed, frame_idx as u64 + 1));
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let cells = spec.cells();
    let mut obs = FeatureMap::zeros(OBS_CHANNELS, spec.h_cells, spec.w_cells);
    for c in 0..OBS_CHANNELS {
        for cell in 0..cells {
            let noise = if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let base = if gt_labels[cell] as usize == c { 1.0 } else { 0.0 };
            obs.values[c * cells + cell] = if visibility[cell] { (base + noise) as f32 } else { 0.0 };
        }
    }
    Ok(ObservationFrame { observation: obs, gt_labels: gt_labels.to_vec(), visibility })
}

/// Cuts a sequence of `len` frames at a random point in `[2, len - 2]`.
pub fn split_sequence(len: usize, seed: u64) -> Result<(Range<usize>, Range<usize>)> {
    if len < 4 {
        return Err(Error::InvalidArgument(format!("cannot split a {len}-frame sequence")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cut = rng.gen_range(2..=len - 2);
    Ok((0..cut, cut..len))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionParams {
    /// Occluders per scenario (inclusive range).
    pub count: (usize, usize),
    /// Lifetime in frames (inclusive range).
    pub duration: (usize, usize),
    /// Longitudinal extent in meters.
    pub length_m: (f64, f64),
    /// Lateral extent in meters.
    pub width_m: (f64, f64),
    /// Longitudinal center as a fraction of the forward half-range.
    pub center_x_frac: (f64, f64),
    /// Lateral center in meters.
    pub center_y_m: (f64, f64),
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams {
            count: (1, 3),
            duration: (3, 8),
            length_m: (6.0, 12.0),
            width_m: (4.0, 8.0),
            center_x_frac: (-0.6, 0.2),
            center_y_m: (-7.0, 7.0),
        }
    }
}

/// Everything needed to generate scenarios from a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub grid: GridSpec,
    pub frames: usize,
    /// Relative weights of straight, turn and varied-speed trajectories.
    pub trajectory_mix: (f64, f64, f64),
    pub map: MapParams,
    pub occlusion: OcclusionParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            grid: GridSpec::default(),
            frames: 40,
            trajectory_mix: (1.0, 1.0, 1.0),
            map: MapParams::default(),
            occlusion: OcclusionParams::default(),
        }
    }
}

fn pick_kind(rng: &mut impl Rng, mix: (f64, f64, f64)) -> TrajectoryKind {
    let total = mix.0 + mix.1 + mix.2;
    let r = rng.gen_range(0.0..total);
    if r < mix.0 {
        TrajectoryKind::Straight
    } else if r < mix.0 + mix.1 {
        TrajectoryKind::Turn
    } else {
        TrajectoryKind::VariedSpeed
    }
}

fn gen_occluders(rng: &mut impl Rng, frames: usize, grid: &GridSpec, p: &OcclusionParams) -> Vec<Occluder> {
    let n = rng.gen_range(p.count.0..=p.count.1);
    let half_x = (grid.w_cells as f64 - 1.0) / 2.0 * grid.cell_size_m;
    (0..n)
        .map(|_| {
            let dur = rng.gen_range(p.duration.0..=p.duration.1).min(frames);
            let start = rng.gen_range(0..=frames - dur);
            let len = rng.gen_range(p.length_m.0..=p.length_m.1);
            let wid = rng.gen_range(p.width_m.0..=p.width_m.1);
            let cx = rng.gen_range(p.center_x_frac.0..=p.center_x_frac.1) * half_x;
            let cy = rng.gen_range(p.center_y_m.0..=p.center_y_m.1);
            Occluder {
                start_frame: start,
                end_frame: start + dur,
                rect: EgoRect { x_min: cx - len / 2.0, x_max: cx + len / 2.0, y_min: cy - wid / 2.0, y_max: cy + wid / 2.0 },
            }
        })
        .collect()
}

/// A complete scenario; identical `(seed, params)` give identical bytes.
pub fn gen_scenario(seed: u64, params: &ScenarioParams) -> Result<Scenario> {
    params.grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = pick_kind(&mut rng, params.trajectory_mix);
    let trajectory = gen_trajectory(rng.gen(), kind, params.frames)?;
    let reach = params.grid.w_cells.max(params.grid.h_cells) as f64 * params.grid.cell_size_m;
    let centerline = centerline_for(&trajectory, reach);
    let map_elements = gen_map(rng.gen(), &centerline, &params.map)?;
    let occluders = gen_occluders(&mut rng, params.frames, &params.grid, &params.occlusion);
    let sc = Scenario {
        version: SCENARIO_VERSION,
        grid: params.grid,
        map_elements,
        trajectory,
        occluders,
        noise_seed: rng.gen(),
    };
    sc.validate()?;
    Ok(sc)
}

/// Seed of scenario `index` in a dataset generated from `base_seed`.
pub fn scenario_seed(base_seed: u64, index: usize) -> u64 {
    mix_seed(base_seed, index as u64)
}

pub fn gen_scenarios(base_seed: u64, count: usize, params: &ScenarioParams) -> Result<Vec<Scenario>> {
    (0..count).map(|i| gen_scenario(scenario_seed(base_seed, i), params)).collect()
}
