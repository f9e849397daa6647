use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::terrain::{SyntheticWorld, TrailMask};
use crate::error::{Error, Result};
use crate::kinematics::{
    kinematic_context, KinematicContext, KinematicsConfig, PastTrack, TrackSample,
};
use crate::mdp::{
    rollout, value_iteration, Action, Cell, GridMap, GridWorld, PlannerConfig, Policy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioTag {
    Straight,
    Curve,
    Intersection,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 3] = [
        ScenarioTag::Straight,
        ScenarioTag::Curve,
        ScenarioTag::Intersection,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ScenarioTag> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Straight => "straight",
            ScenarioTag::Curve => "curve",
            ScenarioTag::Intersection => "intersection",
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario tag '{s}'")))
    }
}

/// Reward the expert plans with, and how the expert acts on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTruthConfig {
    pub trail_reward: f64,
    pub off_trail_reward: f64,
    /// Per-cell weight on distance away from the start, ignoring backward
    /// motion: `along + |across|` measured in cells.
    pub progress_weight: f64,
    /// Extra per-cell weight on `along` for vehicles faster than `fast_threshold`.
    pub fast_bonus: f64,
    /// Normalized speed above which the straight-ahead bonus applies.
    pub fast_threshold: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Expert inverse temperature.
    pub beta: f64,
    /// Length of the synthesized past track.
    pub past_seconds: f64,
    pub sample_rate_hz: f64,
    /// Past curvature (1/m) above which a demonstration counts as a curve.
    pub curve_kappa: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            trail_reward: 0.0,
            off_trail_reward: -2.0,
            progress_weight: 0.05,
            fast_bonus: 0.5,
            fast_threshold: 0.5,
            gamma: 0.95,
            epsilon: 1e-6,
            beta: 2.0,
            past_seconds: 5.0,
            sample_rate_hz: 10.0,
            curve_kappa: 0.05,
        }
    }
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.off_trail_reward < self.trail_reward) {
            return Err(Error::Config(format!(
                "ground truth must favor trail cells: trail {} vs off-trail {}",
                self.trail_reward, self.off_trail_reward
            )));
        }
        if !(self.past_seconds > 0.0) || !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config(
                "past duration and sample rate must be positive".into(),
            ));
        }
        self.planner().validate()
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            gamma: self.gamma,
            epsilon: self.epsilon,
            beta: self.beta,
            max_sweeps: None,
        }
    }
}

/// Ground-truth state reward for a vehicle at `start` with context `ctx`.
pub fn ground_truth_reward(
    trail: &TrailMask,
    start: Cell,
    ctx: &KinematicContext,
    cfg: &GroundTruthConfig,
) -> Result<GridMap> {
    let shape = trail.shape();
    shape.check(start)?;
    let (hx, hy) = ctx.heading().unwrap_or((0.0, 0.0));
    let fast = ctx.speed() > cfg.fast_threshold;
    Ok(GridMap::from_fn(shape, |c| {
        let x = c.col as f64 - start.col as f64;
        let y = c.row as f64 - start.row as f64;
        let along = x * hx + y * hy;
        let across = -x * hy + y * hx;
        let terrain = if trail.is_trail(c) {
            cfg.trail_reward
        } else {
            cfg.off_trail_reward
        };
        let bonus = if fast { cfg.fast_bonus * along } else { 0.0 };
        terrain + cfg.progress_weight * (along + across.abs()) + bonus
    }))
}

/// Where a demonstration starts and which trail neighbor it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoStart {
    pub cell: Cell,
    pub behind: Cell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRequest {
    /// Commanded speed in m/s.
    pub speed: f64,
    /// Future length in cells, start included.
    pub horizon: usize,
    /// Fixed start, or `None` to draw one on the trail.
    pub start: Option<DemoStart>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub world: GridWorld,
    pub past: PastTrack,
    /// `H` cells, start first.
    pub future: Vec<Cell>,
    /// `H - 1` actions; `actions[t]` leads from `future[t]` to `future[t + 1]`.
    pub actions: Vec<Action>,
    pub speed: f64,
    pub seed: u64,
    pub tag: ScenarioTag,
}

impl Demonstration {
    pub fn start(&self) -> Cell {
        self.future[0]
    }

    pub fn horizon(&self) -> usize {
        self.future.len()
    }

    /// Checks replay consistency and that the past ends in the start cell.
    pub fn validate(&self) -> Result<()> {
        if self.future.is_empty() {
            return Err(Error::Invalid("demonstration future is empty".into()));
        }
        if self.actions.len() + 1 != self.future.len() {
            return Err(Error::Invalid(format!(
                "{} actions for {} future cells",
                self.actions.len(),
                self.future.len()
            )));
        }
        let shape = self.world.shape();
        for &c in &self.future {
            shape.check(c)?;
        }
        for (t, a) in self.actions.iter().enumerate() {
            if shape.next(self.future[t], *a) != self.future[t + 1] {
                return Err(Error::Invalid(format!(
                    "action {t} does not reproduce the stored path"
                )));
            }
        }
        let end = self.past.last();
        let end_cell = self.world.cell_at(end.x, end.y);
        if end_cell != self.start() {
            return Err(Error::Invalid(format!(
                "past ends in {end_cell:?} but the future starts in {:?}",
                self.start()
            )));
        }
        Ok(())
    }

    /// Rotation by quarter turns of the world, both trajectories and hence
    /// the kinematic context. Square grids only.
    pub fn rotate(&self, quarter_turns: u8) -> Result<Demonstration> {
        let k = quarter_turns % 4;
        let world = self.world.rotate(k)?;
        let shape = world.shape();
        let extent = shape.cols as f64 * world.resolution();
        let mut past = self.past.clone();
        let mut actions = self.actions.clone();
        for _ in 0..k {
            past = past.map_points(|x, y| (extent - y, x));
            actions.iter_mut().for_each(|a| *a = a.rotate_quarter());
        }
        Ok(Demonstration {
            world,
            past,
            future: self
                .future
                .iter()
                .map(|&c| shape.rotate_cell(c, k))
                .collect(),
            actions,
            speed: self.speed,
            seed: self.seed,
            tag: self.tag,
        })
    }
}

/// All four quarter-turn rotations, identity first.
pub fn augment_rotations(demo: &Demonstration) -> Result<Vec<Demonstration>> {
    (0..4).map(|k| demo.rotate(k)).collect()
}

/// Track that arrives at `start.cell` from `start.behind` along the trail at
/// `speed`, continuing straight once the trail runs out.
pub fn synthesize_past(
    trail: &TrailMask,
    world: &GridWorld,
    start: DemoStart,
    speed: f64,
    cfg: &GroundTruthConfig,
) -> Result<PastTrack> {
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::Invalid(format!(
            "speed must be positive, got {speed}"
        )));
    }
    check_start(trail, start)?;
    let res = world.resolution();
    let length = speed * cfg.past_seconds;
    let shape = trail.shape();

    let mut visited = vec![false; shape.len()];
    visited[shape.index(start.cell)] = true;
    visited[shape.index(start.behind)] = true;
    let mut points = vec![
        world.cell_center(start.cell),
        world.cell_center(start.behind),
    ];
    let (mut prev, mut cur) = (start.cell, start.behind);
    let mut travelled = res;
    while travelled < length {
        let dir = (
            cur.row as isize - prev.row as isize,
            cur.col as isize - prev.col as isize,
        );
        let options: Vec<Cell> = trail
            .trail_neighbors(cur)
            .into_iter()
            .filter(|n| !visited[shape.index(*n)])
            .collect();
        let straight = options.iter().copied().find(|n| {
            (
                n.row as isize - cur.row as isize,
                n.col as isize - cur.col as isize,
            ) == dir
        });
        match straight.or_else(|| options.first().copied()) {
            Some(n) => {
                visited[shape.index(n)] = true;
                points.push(world.cell_center(n));
                prev = cur;
                cur = n;
                travelled += res;
            }
            None => {
                let (x, y) = world.cell_center(cur);
                let extra = length - travelled + res;
                points.push((x + dir.1 as f64 * extra, y + dir.0 as f64 * extra));
                break;
            }
        }
    }

    let n = (cfg.past_seconds * cfg.sample_rate_hz).round() as usize;
    let step = speed / cfg.sample_rate_hz;
    let mut samples: Vec<TrackSample> = (0..=n)
        .map(|k| {
            let (x, y) = point_at(&points, k as f64 * step);
            TrackSample {
                t: (n - k) as f64 / cfg.sample_rate_hz,
                x,
                y,
            }
        })
        .collect();
    samples.reverse();
    PastTrack::new(samples)
}

/// Point at arc length `s` along a polyline, clamped to its end.
fn point_at(points: &[(f64, f64)], s: f64) -> (f64, f64) {
    let mut left = s;
    for w in points.windows(2) {
        let seg = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        if left <= seg && seg > 0.0 {
            let f = left / seg;
            return (
                w[0].0 + f * (w[1].0 - w[0].0),
                w[0].1 + f * (w[1].1 - w[0].1),
            );
        }
        left -= seg;
    }
    *points.last().expect("non-empty polyline")
}

fn check_start(trail: &TrailMask, start: DemoStart) -> Result<()> {
    let shape = trail.shape();
    shape.check(start.cell)?;
    shape.check(start.behind)?;
    if !trail.is_trail(start.cell) {
        return Err(Error::Invalid(format!(
            "start {:?} is off the trail",
            start.cell
        )));
    }
    if !trail.trail_neighbors(start.cell).contains(&start.behind) {
        return Err(Error::Invalid(format!(
            "{:?} is not a trail neighbor of the start {:?}",
            start.behind, start.cell
        )));
    }
    Ok(())
}

/// Draws a start whose forward trail reach covers `horizon - 1` steps when
/// possible, otherwise the best of the attempts.
pub fn draw_start(trail: &TrailMask, horizon: usize, rng: &mut ChaCha8Rng) -> Result<DemoStart> {
    let cells: Vec<Cell> = trail
        .cells()
        .filter(|&c| !trail.trail_neighbors(c).is_empty())
        .collect();
    if cells.is_empty() {
        return Err(Error::Invalid("no trail cell has a trail neighbor".into()));
    }
    let mut best: Option<(usize, DemoStart)> = None;
    for _ in 0..64 {
        let cell = cells[rng.random_range(0..cells.len())];
        let nbrs = trail.trail_neighbors(cell);
        let behind = nbrs[rng.random_range(0..nbrs.len())];
        let reach = trail
            .reachable(cell, Some(behind))
            .last()
            .map_or(0, |&(_, d)| d);
        let cand = DemoStart { cell, behind };
        if reach + 1 >= horizon {
            return Ok(cand);
        }
        if best.is_none_or(|(r, _)| reach > r) {
            best = Some((reach, cand));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

/// Scenario tag from geometry: junction on the path, then turning, else straight.
pub fn classify(
    trail: &TrailMask,
    future: &[Cell],
    past_kappa: f64,
    curve_kappa: f64,
) -> ScenarioTag {
    if future.iter().any(|&c| trail.is_junction(c)) {
        return ScenarioTag::Intersection;
    }
    let mut dirs = future.windows(2).filter(|w| w[0] != w[1]).map(|w| {
        (
            w[1].row as isize - w[0].row as isize,
            w[1].col as isize - w[0].col as isize,
        )
    });
    let turns = match dirs.next() {
        Some(first) => dirs.any(|d| d != first),
        None => false,
    };
    if turns || past_kappa.abs() > curve_kappa {
        ScenarioTag::Curve
    } else {
        ScenarioTag::Straight
    }
}

/// Expert policy for a demonstration context.
pub fn expert_policy(
    sw: &SyntheticWorld,
    start: Cell,
    ctx: &KinematicContext,
    gt: &GroundTruthConfig,
) -> Result<Policy> {
    let reward = ground_truth_reward(&sw.trail, start, ctx, gt)?;
    Ok(value_iteration(&reward, &gt.planner())?.policy)
}

/// Samples one expert demonstration: past along the trail, future from the
/// annealed-softmax policy on the ground-truth reward.
pub fn generate_demonstration(
    sw: &SyntheticWorld,
    gt: &GroundTruthConfig,
    kin: &KinematicsConfig,
    req: &DemoRequest,
) -> Result<Demonstration> {
    gt.validate()?;
    if req.horizon == 0 {
        return Err(Error::Invalid("horizon must be at least one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let start = match req.start {
        Some(s) => s,
        None => draw_start(&sw.trail, req.horizon, &mut rng)?,
    };
    let past = synthesize_past(&sw.trail, &sw.world, start, req.speed, gt)?;
    let ctx = kinematic_context(&past, kin)?;
    let policy = expert_policy(sw, start.cell, &ctx, gt)?;
    let path = rollout(&policy, start.cell, req.horizon, &mut rng);
    let tag = classify(
        &sw.trail,
        &path.cells,
        ctx.kappa * kin.kappa_max,
        gt.curve_kappa,
    );
    let demo = Demonstration {
        world: sw.world.clone(),
        past,
        future: path.cells,
        actions: path.actions,
        speed: req.speed,
        seed: req.seed,
        tag,
    };
    demo.validate()?;
    Ok(demo)
}
