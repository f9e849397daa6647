use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{channel, Action, Cell, GridShape, GridWorld, ENV_CHANNELS, MIN_WORLD_EXTENT};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainClass {
    Trail,
    Grass,
    Rough,
}

/// Per-class appearance: mean and spread of each environment channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub max_height: f64,
    pub max_height_sd: f64,
    pub variance: f64,
    pub variance_sd: f64,
    pub rgb: [f64; 3],
    pub rgb_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palettes {
    pub trail: Palette,
    pub grass: Palette,
    pub rough: Palette,
}

impl Default for Palettes {
    fn default() -> Self {
        Palettes {
            trail: Palette {
                max_height: 0.05,
                max_height_sd: 0.02,
                variance: 0.03,
                variance_sd: 0.01,
                rgb: [0.48, 0.38, 0.28],
                rgb_sd: 0.03,
            },
            grass: Palette {
                max_height: 0.6,
                max_height_sd: 0.15,
                variance: 0.3,
                variance_sd: 0.08,
                rgb: [0.25, 0.55, 0.2],
                rgb_sd: 0.05,
            },
            rough: Palette {
                max_height: 0.4,
                max_height_sd: 0.25,
                variance: 0.8,
                variance_sd: 0.2,
                rgb: [0.42, 0.42, 0.36],
                rgb_sd: 0.08,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Cell edge in meters.
    pub resolution: f64,
    /// Main trails; the first is a staircase or a straight line, the rest
    /// are straight crossings.
    pub trail_count: usize,
    /// Trail width in cells.
    pub trail_width: usize,
    /// Dead-end spurs branching off the first trail.
    pub intersections: usize,
    /// Probability that the first trail is straight rather than a staircase.
    pub straight_probability: f64,
    /// Multiplier on the height-variance channel of trail cells.
    pub trail_variance_scale: f64,
    /// Multiplier on the height-variance channel of off-trail cells.
    pub off_trail_variance_scale: f64,
    /// Number of rough-terrain blobs painted over the grass.
    pub rough_blobs: usize,
    pub palettes: Palettes,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            rows: 32,
            cols: 32,
            resolution: 1.0,
            trail_count: 1,
            trail_width: 1,
            intersections: 1,
            straight_probability: 0.25,
            trail_variance_scale: 1.0,
            off_trail_variance_scale: 1.0,
            rough_blobs: 3,
            palettes: Palettes::default(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < MIN_WORLD_EXTENT || self.cols < MIN_WORLD_EXTENT {
            return Err(Error::Config(format!(
                "world must be at least {MIN_WORLD_EXTENT}x{MIN_WORLD_EXTENT}, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::Config(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.trail_count == 0 {
            return Err(Error::Config("at least one trail is required".into()));
        }
        if self.trail_width == 0 {
            return Err(Error::Config(
                "trail width must be at least one cell".into(),
            ));
        }
        let room = self.rows.min(self.cols) / (2 * self.trail_width + 1);
        if self.trail_count > room.max(1) {
            return Err(Error::Config(format!(
                "{} trails of width {} do not fit a {}x{} grid (at most {})",
                self.trail_count, self.trail_width, self.rows, self.cols, room
            )));
        }
        if !(0.0..=1.0).contains(&self.straight_probability) {
            return Err(Error::Config(format!(
                "straight_probability must lie in [0, 1], got {}",
                self.straight_probability
            )));
        }
        if self.trail_variance_scale < 0.0 || self.off_trail_variance_scale < 0.0 {
            return Err(Error::Config("variance scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Boolean trail membership per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrailMask {
    shape: GridShape,
    cells: Vec<bool>,
}

impl TrailMask {
    pub fn empty(shape: GridShape) -> Self {
        TrailMask {
            shape,
            cells: vec![false; shape.len()],
        }
    }

    pub fn from_cells(shape: GridShape, cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let mut m = Self::empty(shape);
        for c in cells {
            shape.check(c)?;
            m.set(c, true);
        }
        Ok(m)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn is_trail(&self, cell: Cell) -> bool {
        self.shape.contains(cell) && self.cells[self.shape.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, on: bool) {
        let i = self.shape.index(cell);
        self.cells[i] = on;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.shape.len())
            .filter(|&i| self.cells[i])
            .map(|i| self.shape.cell(i))
    }

    /// In-grid 4-neighbors of `cell`.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        let shape = self.shape;
        Action::ALL.into_iter().filter_map(move |a| {
            let n = shape.next(cell, a);
            (n != cell).then_some(n)
        })
    }

    pub fn trail_neighbors(&self, cell: Cell) -> Vec<Cell> {
        self.neighbors(cell).filter(|&n| self.is_trail(n)).collect()
    }

    /// A trail cell with three or more trail neighbors.
    pub fn is_junction(&self, cell: Cell) -> bool {
        self.is_trail(cell) && self.trail_neighbors(cell).len() >= 3
    }

    pub fn is_connected(&self) -> bool {
        let Some(first) = self.cells().next() else {
            return false;
        };
        self.reachable(first, None).len() == self.count()
    }

    /// Connected, no cycles of 4 or more, every cell with at most two trail
    /// neighbors, and exactly two ends (or a single cell).
    pub fn is_simple_path(&self) -> bool {
        let n = self.count();
        if n == 0 || !self.is_connected() {
            return false;
        }
        if n == 1 {
            return true;
        }
        let degrees: Vec<usize> = self
            .cells()
            .map(|c| self.trail_neighbors(c).len())
            .collect();
        degrees.iter().all(|&d| d <= 2) && degrees.iter().filter(|&&d| d == 1).count() == 2
    }

    /// Breadth-first distances over trail cells from `start`, never entering
    /// `blocked`. Returns `(cell, depth)` pairs in visit order.
    pub fn reachable(&self, start: Cell, blocked: Option<Cell>) -> Vec<(Cell, usize)> {
        let mut seen = vec![false; self.shape.len()];
        let mut out = Vec::new();
        if !self.is_trail(start) {
            return out;
        }
        if let Some(b) = blocked {
            if self.shape.contains(b) {
                seen[self.shape.index(b)] = true;
            }
        }
        seen[self.shape.index(start)] = true;
        let mut queue = VecDeque::from([(start, 0)]);
        while let Some((c, d)) = queue.pop_front() {
            out.push((c, d));
            for n in self.trail_neighbors(c) {
                let i = self.shape.index(n);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back((n, d + 1));
                }
            }
        }
        out
    }

    pub fn rotate(&self, quarter_turns: u8) -> Result<TrailMask> {
        if self.shape.rows != self.shape.cols {
            return Err(Error::Invalid(format!(
                "rotation needs a square grid, got {}x{}",
                self.shape.rows, self.shape.cols
            )));
        }
        TrailMask::from_cells(
            self.shape,
            self.cells()
                .map(|c| self.shape.rotate_cell(c, quarter_turns)),
        )
    }

    /// Each trail cell grown by `width - 1` cells towards larger indices.
    fn widened(&self, width: usize) -> TrailMask {
        let mut out = self.clone();
        for c in self.cells() {
            for dr in 0..width {
                for dc in 0..width {
                    let n = Cell::new(c.row + dr, c.col + dc);
                    if self.shape.contains(n) {
                        out.set(n, true);
                    }
                }
            }
        }
        out
    }
}

/// A generated world together with the trail layout it was painted from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub world: GridWorld,
    pub trail: TrailMask,
}

impl SyntheticWorld {
    pub fn rotate(&self, quarter_turns: u8) -> Result<SyntheticWorld> {
        Ok(SyntheticWorld {
            world: self.world.rotate(quarter_turns)?,
            trail: self.trail.rotate(quarter_turns)?,
        })
    }
}

/// Straight line through the grid, vertical when `vertical`, at `offset`.
pub fn straight_layout(shape: GridShape, vertical: bool, offset: usize) -> Result<TrailMask> {
    let n = if vertical { shape.rows } else { shape.cols };
    let cells = (0..n).map(|i| {
        if vertical {
            Cell::new(i, offset)
        } else {
            Cell::new(offset, i)
        }
    });
    TrailMask::from_cells(shape, cells)
}

/// A vertical trail in column `col` with a spur running right from
/// `(junction_row, col)` to the grid edge.
pub fn t_junction_layout(shape: GridShape, col: usize, junction_row: usize) -> Result<TrailMask> {
    let mut mask = straight_layout(shape, true, col)?;
    shape.check(Cell::new(junction_row, col))?;
    for c in col + 1..shape.cols {
        mask.set(Cell::new(junction_row, c), true);
    }
    Ok(mask)
}

/// Monotone staircase of right and down runs starting on the top edge.
fn staircase(shape: GridShape, rng: &mut ChaCha8Rng) -> TrailMask {
    let mut mask = TrailMask::empty(shape);
    let max_run = (shape.rows.min(shape.cols) / 2).max(4);
    let mut cur = Cell::new(0, rng.random_range(1..=shape.cols / 2));
    mask.set(cur, true);
    let mut down = true;
    'outer: loop {
        let run = rng.random_range(3..=max_run);
        let a = if down { Action::Down } else { Action::Right };
        for _ in 0..run {
            let next = shape.next(cur, a);
            if next == cur {
                break 'outer;
            }
            cur = next;
            mask.set(cur, true);
        }
        down = !down;
    }
    mask
}

fn flipped(mask: &TrailMask, flip_rows: bool, flip_cols: bool) -> TrailMask {
    let s = mask.shape();
    let cells = mask.cells().map(|c| {
        Cell::new(
            if flip_rows { s.rows - 1 - c.row } else { c.row },
            if flip_cols { s.cols - 1 - c.col } else { c.col },
        )
    });
    TrailMask::from_cells(s, cells).expect("flips stay in the grid")
}

/// Trail cells whose two neighbors along `a`'s axis are trail cells too,
/// `margin` deep, and whose perpendicular neighbors are free.
fn spur_candidates(mask: &TrailMask, margin: usize) -> Vec<(Cell, bool)> {
    let shape = mask.shape();
    let mut out = Vec::new();
    for c in mask.cells() {
        for vertical_run in [false, true] {
            let (along_a, along_b) = if vertical_run {
                (Action::Up, Action::Down)
            } else {
                (Action::Left, Action::Right)
            };
            let mut ok = true;
            for dir in [along_a, along_b] {
                let mut p = c;
                for _ in 0..margin {
                    let n = shape.next(p, dir);
                    if n == p || !mask.is_trail(n) {
                        ok = false;
                        break;
                    }
                    p = n;
                }
            }
            if ok && mask.trail_neighbors(c).len() == 2 {
                out.push((c, vertical_run));
            }
        }
    }
    out
}

fn try_spur(
    mask: &mut TrailMask,
    junction: Cell,
    vertical_run: bool,
    rng: &mut ChaCha8Rng,
) -> bool {
    let shape = mask.shape();
    let side = if vertical_run {
        if rng.random_bool(0.5) {
            Action::Left
        } else {
            Action::Right
        }
    } else if rng.random_bool(0.5) {
        Action::Up
    } else {
        Action::Down
    };
    // branches run on to the edge so that either way leads somewhere
    let mut cells = Vec::new();
    let mut cur = junction;
    loop {
        let n = shape.next(cur, side);
        if n == cur || mask.is_trail(n) {
            break;
        }
        // the spur may only touch the trail at the junction
        let touches = mask.neighbors(n).any(|m| m != cur && mask.is_trail(m));
        if touches {
            break;
        }
        cells.push(n);
        cur = n;
    }
    if cells.len() < 3 {
        return false;
    }
    for c in cells {
        mask.set(c, true);
    }
    true
}

fn add_crossing(mask: &mut TrailMask, rng: &mut ChaCha8Rng) -> bool {
    let shape = mask.shape();
    let vertical = rng.random_bool(0.5);
    let n = if vertical { shape.cols } else { shape.rows };
    if n < 3 {
        return false;
    }
    let offset = rng.random_range(1..n - 1);
    let line = straight_layout(shape, vertical, offset).expect("offset in range");
    // keep clear of parallel trail lines on either side
    for c in line.cells() {
        for side in if vertical {
            [Action::Left, Action::Right]
        } else {
            [Action::Up, Action::Down]
        } {
            let s = shape.next(c, side);
            if s != c && mask.is_trail(s) && !mask.is_trail(c) {
                let run_parallel = mask.trail_neighbors(s).iter().any(|&m| {
                    if vertical {
                        m.col == s.col
                    } else {
                        m.row == s.row
                    }
                });
                if run_parallel {
                    return false;
                }
            }
        }
    }
    if !line.cells().any(|c| mask.is_trail(c)) {
        return false;
    }
    for c in line.cells() {
        mask.set(c, true);
    }
    true
}

const LAYOUT_ATTEMPTS: usize = 50;

/// Trail layout of `spec`: first trail, spurs, then crossings. A base trail
/// with no room for the requested branches is redrawn.
pub fn generate_layout(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<TrailMask> {
    let shape = GridShape::new(spec.rows, spec.cols)?;
    let mut failure = None;
    for _ in 0..LAYOUT_ATTEMPTS {
        match try_layout(spec, shape, rng)? {
            Ok(mask) => return Ok(mask.widened(spec.trail_width)),
            Err(e) => failure = Some(e),
        }
    }
    Err(failure.expect("at least one attempt"))
}

fn try_layout(
    spec: &WorldSpec,
    shape: GridShape,
    rng: &mut ChaCha8Rng,
) -> Result<std::result::Result<TrailMask, Error>> {
    let base = if rng.random_bool(spec.straight_probability) {
        let vertical = rng.random_bool(0.5);
        let n = if vertical { spec.cols } else { spec.rows };
        straight_layout(shape, vertical, rng.random_range(n / 4..n - n / 4))?
    } else {
        flipped(
            &staircase(shape, rng),
            rng.random_bool(0.5),
            rng.random_bool(0.5),
        )
    };
    let mut mask = base;
    for k in 0..spec.intersections {
        let cands = spur_candidates(&mask, 2);
        let mut placed = false;
        for _ in 0..200 {
            if cands.is_empty() {
                break;
            }
            let (c, v) = cands[rng.random_range(0..cands.len())];
            if try_spur(&mut mask, c, v, rng) {
                placed = true;
                break;
            }
        }
        if !placed {
            return Ok(Err(Error::Config(format!(
                "could only place {k} of {} intersections on a {}x{} grid",
                spec.intersections, spec.rows, spec.cols
            ))));
        }
    }
    for k in 1..spec.trail_count {
        if !(0..200).any(|_| add_crossing(&mut mask, rng)) {
            return Ok(Err(Error::Config(format!(
                "could only place {k} of {} trails on a {}x{} grid",
                spec.trail_count, spec.rows, spec.cols
            ))));
        }
    }
    debug_assert!(mask.is_connected());
    Ok(Ok(mask))
}

fn rough_classes(mask: &TrailMask, blobs: usize, rng: &mut ChaCha8Rng) -> Vec<TerrainClass> {
    let shape = mask.shape();
    let centers: Vec<(f64, f64, f64)> = (0..blobs)
        .map(|_| {
            let r = rng.random_range(0.0..shape.rows as f64);
            let c = rng.random_range(0.0..shape.cols as f64);
            let radius = rng.random_range(1.5..(shape.rows.min(shape.cols) as f64 / 4.0).max(2.0));
            (r, c, radius)
        })
        .collect();
    (0..shape.len())
        .map(|i| {
            let cell = shape.cell(i);
            if mask.is_trail(cell) {
                return TerrainClass::Trail;
            }
            let inside = centers
                .iter()
                .any(|&(r, c, rad)| (cell.row as f64 - r).hypot(cell.col as f64 - c) <= rad);
            if inside {
                TerrainClass::Rough
            } else {
                TerrainClass::Grass
            }
        })
        .collect()
}

/// Environment channels for a layout; every value is representable as `f32`.
pub fn paint_world(spec: &WorldSpec, mask: &TrailMask, rng: &mut ChaCha8Rng) -> Result<GridWorld> {
    let shape = mask.shape();
    let classes = rough_classes(mask, spec.rough_blobs, rng);
    let plane = shape.len();
    let mut env = Tensor::zeros(&[ENV_CHANNELS, shape.rows, shape.cols]);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let d = env.data_mut();
    for (i, class) in classes.iter().enumerate() {
        let (p, var_scale) = match class {
            TerrainClass::Trail => (&spec.palettes.trail, spec.trail_variance_scale),
            TerrainClass::Grass => (&spec.palettes.grass, spec.off_trail_variance_scale),
            TerrainClass::Rough => (&spec.palettes.rough, spec.off_trail_variance_scale),
        };
        let mut z = || std_normal.sample(rng);
        let height = (p.max_height + p.max_height_sd * z()).max(0.0);
        let variance = ((p.variance + p.variance_sd * z()) * var_scale).max(0.0);
        let values = [
            (channel::MAX_HEIGHT, height),
            (channel::HEIGHT_VARIANCE, variance),
            (channel::RED, (p.rgb[0] + p.rgb_sd * z()).clamp(0.0, 1.0)),
            (channel::GREEN, (p.rgb[1] + p.rgb_sd * z()).clamp(0.0, 1.0)),
            (channel::BLUE, (p.rgb[2] + p.rgb_sd * z()).clamp(0.0, 1.0)),
        ];
        for (ch, v) in values {
            d[ch * plane + i] = v as f32 as f64;
        }
    }
    GridWorld::new(env, spec.resolution)
}

/// Deterministic world for `spec.seed`.
pub fn generate_world(spec: &WorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let trail = generate_layout(spec, &mut rng)?;
    let world = paint_world(spec, &trail, &mut rng)?;
    Ok(SyntheticWorld { world, trail })
}

/// Paints a hand-built layout, e.g. from [`t_junction_layout`].
pub fn world_from_layout(spec: &WorldSpec, trail: TrailMask) -> Result<SyntheticWorld> {
    spec.validate()?;
    if trail.shape() != GridShape::new(spec.rows, spec.cols)? {
        return Err(Error::Config(
            "layout dimensions differ from the world spec".into(),
        ));
    }
    if !trail.is_connected() {
        return Err(Error::Invalid(
            "trail cells must form a connected set".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let world = paint_world(spec, &trail, &mut rng)?;
    Ok(SyntheticWorld { world, trail })
}
