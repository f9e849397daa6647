//! Positional and kinematic input channels derived from the vehicle's past track.
//!
//! Metric coordinates use `x` along grid columns and `y` along grid rows.
//! Curvature is positive when the track turns counterclockwise in that `(x, y)`
//! frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Cell, GridWorld};
use crate::tensor::Tensor;

/// Channels appended to the learned environment features: `pos_x, pos_y, dx, dy, kappa`.
pub const AUX_CHANNELS: usize = 5;
pub const LEARNED_CHANNELS: usize = 25;
pub const STACK_CHANNELS: usize = LEARNED_CHANNELS + AUX_CHANNELS;

/// Fits with a radius beyond this are treated as straight.
pub const MAX_RADIUS_M: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Timestamped metric positions with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastTrack {
    samples: Vec<TrackSample>,
}

impl PastTrack {
    pub fn new(samples: Vec<TrackSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("past track is empty".into()));
        }
        if samples
            .iter()
            .any(|s| !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()))
        {
            return Err(Error::Invalid("past track holds non-finite values".into()));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::Invalid(format!(
                "timestamps must increase strictly ({} then {})",
                w[0].t, w[1].t
            )));
        }
        Ok(PastTrack { samples })
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> TrackSample {
        *self.samples.last().expect("non-empty")
    }

    /// Samples no older than `seconds` before the last one.
    pub fn trailing(&self, seconds: f64) -> PastTrack {
        let t_end = self.last().t;
        let samples = self
            .samples
            .iter()
            .copied()
            .filter(|s| s.t >= t_end - seconds - 1e-9)
            .collect();
        PastTrack { samples }
    }

    pub fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> PastTrack {
        PastTrack {
            samples: self
                .samples
                .iter()
                .map(|s| {
                    let (x, y) = f(s.x, s.y);
                    TrackSample { t: s.t, x, y }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    /// Speed (m/s) that maps to a unit velocity channel.
    pub speed_norm: f64,
    /// Curvature (1/m) that maps to a unit curvature channel.
    pub kappa_max: f64,
    /// Trailing window (s) the context is estimated from.
    pub window_s: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            speed_norm: 10.0,
            kappa_max: 0.5,
            window_s: 5.0,
        }
    }
}

/// Normalized `[dx, dy, kappa]`, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicContext {
    pub dx: f64,
    pub dy: f64,
    pub kappa: f64,
}

impl KinematicContext {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Normalized speed, `|dx| + |dy|` since one of them is zero.
    pub fn speed(&self) -> f64 {
        self.dx.abs() + self.dy.abs()
    }

    /// Unit cardinal heading `(hx, hy)`, or `None` when stationary.
    pub fn heading(&self) -> Option<(f64, f64)> {
        if self.dx != 0.0 {
            Some((self.dx.signum(), 0.0))
        } else if self.dy != 0.0 {
            Some((0.0, self.dy.signum()))
        } else {
            None
        }
    }
}

/// Mean velocity over the track snapped to its dominant axis (ties go to `x`),
/// with magnitude `min(path_speed / speed_norm, 1)`.
pub fn extract_velocity(track: &PastTrack, speed_norm: f64) -> Result<(f64, f64)> {
    if track.len() < 2 {
        return Err(Error::Invalid(format!(
            "velocity needs at least 2 samples, got {}",
            track.len()
        )));
    }
    if !(speed_norm > 0.0) {
        return Err(Error::Config(format!(
            "speed_norm must be positive, got {speed_norm}"
        )));
    }
    let s = track.samples();
    let first = s[0];
    let last = s[s.len() - 1];
    let duration = last.t - first.t;
    let path: f64 = s
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum();
    let (vx, vy) = ((last.x - first.x) / duration, (last.y - first.y) / duration);
    let magnitude = (path / duration / speed_norm).min(1.0);
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    if vx == 0.0 && vy == 0.0 {
        return Ok((0.0, 0.0));
    }
    if vx.abs() >= vy.abs() {
        Ok((sign(vx) * magnitude, 0.0))
    } else {
        Ok((0.0, sign(vy) * magnitude))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Algebraic (Kåsa) least-squares circle; `None` for (near-)collinear input.
pub fn fit_circle(points: &[(f64, f64)]) -> Option<Circle> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let scale = (points
        .iter()
        .map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale > 0.0) {
        return None;
    }
    let (mut suu, mut suv, mut svv, mut suz, mut svz, mut sz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = (x - mx) / scale;
        let v = (y - my) / scale;
        let z = u * u + v * v;
        suu += u * u;
        suv += u * v;
        svv += v * v;
        suz += u * z;
        svz += v * z;
        sz += z;
    }
    // centered coordinates decouple the offset term: F = -mean(z)
    let det = suu * svv - suv * suv;
    if det.abs() < 1e-10 * n * n {
        return None;
    }
    let d = (-suz * svv + svz * suv) / det;
    let e = (-svz * suu + suz * suv) / det;
    let f = -sz / n;
    let r2 = (d * d + e * e) / 4.0 - f;
    if !(r2 > 0.0) {
        return None;
    }
    Some(Circle {
        cx: mx - d / 2.0 * scale,
        cy: my - e / 2.0 * scale,
        radius: r2.sqrt() * scale,
    })
}

/// Signed curvature of the track, clamped to `±kappa_max`; straight tracks give 0.
pub fn fit_curvature(track: &PastTrack, kappa_max: f64) -> Result<f64> {
    if track.len() < 3 {
        return Err(Error::Invalid(format!(
            "curvature needs at least 3 samples, got {}",
            track.len()
        )));
    }
    let pts: Vec<(f64, f64)> = track.samples().iter().map(|s| (s.x, s.y)).collect();
    let Some(circle) = fit_circle(&pts) else {
        return Ok(0.0);
    };
    if circle.radius > MAX_RADIUS_M {
        return Ok(0.0);
    }
    let turn: f64 = pts
        .windows(3)
        .map(|w| {
            let (ax, ay) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let (bx, by) = (w[2].0 - w[1].0, w[2].1 - w[1].1);
            ax * by - ay * bx
        })
        .sum();
    let sign = if turn >= 0.0 { 1.0 } else { -1.0 };
    Ok((sign / circle.radius).clamp(-kappa_max, kappa_max))
}

/// Full context from the trailing window of the track. Tracks with fewer than
/// three samples in the window get zero curvature.
pub fn kinematic_context(track: &PastTrack, cfg: &KinematicsConfig) -> Result<KinematicContext> {
    let window = track.trailing(cfg.window_s);
    let (dx, dy) = extract_velocity(&window, cfg.speed_norm)?;
    let kappa = if window.len() >= 3 {
        fit_curvature(&window, cfg.kappa_max)? / cfg.kappa_max
    } else {
        0.0
    };
    Ok(KinematicContext {
        dx: dx.clamp(-1.0, 1.0),
        dy: dy.clamp(-1.0, 1.0),
        kappa: kappa.clamp(-1.0, 1.0),
    })
}

/// Vehicle-centered, world-aligned coordinates normalized by the grid extent.
pub fn positional_channels(world: &GridWorld, vehicle: Cell) -> Result<Tensor> {
    world.shape().check(vehicle)?;
    let (rows, cols) = (world.rows(), world.cols());
    let res = world.resolution();
    let ext_x = cols as f64 * res;
    let ext_y = rows as f64 * res;
    let mut t = Tensor::zeros(&[2, rows, cols]);
    let d = t.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            d[r * cols + c] = (c as f64 - vehicle.col as f64) * res / ext_x;
            d[rows * cols + r * cols + c] = (r as f64 - vehicle.row as f64) * res / ext_y;
        }
    }
    Ok(t)
}

/// The five non-learned channels: positions then `[dx, dy, kappa]` broadcast.
pub fn aux_channels(world: &GridWorld, vehicle: Cell, ctx: &KinematicContext) -> Result<Tensor> {
    let pos = positional_channels(world, vehicle)?;
    let plane = world.rows() * world.cols();
    let mut data = pos.into_data();
    for v in [ctx.dx, ctx.dy, ctx.kappa] {
        data.extend(std::iter::repeat_n(v, plane));
    }
    Tensor::from_vec(&[AUX_CHANNELS, world.rows(), world.cols()], data)
}

/// Second-stage input: 25 learned maps, then `pos_x, pos_y, dx, dy, kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack(Tensor);

impl InputStack {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, _, _) = t.dims3()?;
        if c != STACK_CHANNELS {
            return Err(Error::shape("input stack", &[STACK_CHANNELS], &[c]));
        }
        Ok(InputStack(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

pub fn build_input_stack(
    stage1_features: &Tensor,
    world: &GridWorld,
    vehicle: Cell,
    ctx: &KinematicContext,
) -> Result<InputStack> {
    let (c, r, w) = stage1_features.dims3()?;
    if c != LEARNED_CHANNELS || r != world.rows() || w != world.cols() {
        return Err(Error::shape(
            "stage-1 features",
            &[LEARNED_CHANNELS, world.rows(), world.cols()],
            &[c, r, w],
        ));
    }
    let aux = aux_channels(world, vehicle, ctx)?;
    InputStack::from_tensor(Tensor::concat_channels(&[stage1_features, &aux])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn world(n: usize) -> GridWorld {
        GridWorld::new(Tensor::zeros(&[5, n, n]), 1.0).unwrap()
    }

    fn track(points: &[(f64, f64)]) -> PastTrack {
        PastTrack::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrackSample {
                    t: i as f64 * 0.1,
                    x,
                    y,
                })
                .collect(),
        )
        .unwrap()
    }

    fn arc(radius: f64, start: f64, sweep: f64, n: usize, (cx, cy): (f64, f64)) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let a = start + sweep * i as f64 / (n - 1) as f64;
                (cx + radius * a.cos(), cy + radius * a.sin())
            })
            .collect()
    }

    #[test]
    fn positional_channels_examples() {
        let w = world(80);
        let p = positional_channels(&w, Cell::new(0, 0)).unwrap();
        assert!((p.channel(0)[79] - 79.0 / 80.0).abs() < 1e-15);
        let center = Cell::new(40, 40);
        let p = positional_channels(&w, center).unwrap();
        assert_eq!(p.channel(0)[40 * 80 + 40], 0.0);
        assert_eq!(p.channel(1)[40 * 80 + 40], 0.0);
        assert_eq!(p.channel(0)[40 * 80 + 45], -p.channel(0)[40 * 80 + 35]);
        assert_eq!(p.channel(1)[45 * 80 + 40], -p.channel(1)[35 * 80 + 40]);
        let q = positional_channels(&w, Cell::new(40, 41)).unwrap();
        for (a, b) in p.channel(0).iter().zip(q.channel(0)) {
            assert!((a - b - 1.0 / 80.0).abs() < 1e-12);
        }
        assert!(p.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn velocity_examples() {
        let straight = track(&(0..11).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
        assert_eq!(extract_velocity(&straight, 10.0).unwrap(), (1.0, 0.0));
        let still = track(&[(3.0, 4.0); 6]);
        assert_eq!(extract_velocity(&still, 10.0).unwrap(), (0.0, 0.0));
        let a = 30f64.to_radians();
        let slanted = track(
            &(0..11)
                .map(|i| (0.5 * i as f64 * a.cos(), 0.5 * i as f64 * a.sin()))
                .collect::<Vec<_>>(),
        );
        let (dx, dy) = extract_velocity(&slanted, 10.0).unwrap();
        assert!((dx - 0.5).abs() < 1e-12 && dy == 0.0);
        assert!(extract_velocity(&track(&[(0.0, 0.0)]), 10.0).is_err());
    }

    #[test]
    fn exact_circle_curvature() {
        let ccw = arc(5.0, 0.0, 1.5, 20, (2.0, -3.0));
        let k = fit_curvature(&track(&ccw), 0.5).unwrap();
        assert!((k - 0.2).abs() < 1e-9, "{k}");
        let cw: Vec<_> = ccw.iter().rev().copied().collect();
        assert!((fit_curvature(&track(&cw), 0.5).unwrap() + 0.2).abs() < 1e-9);
        let line = track(
            &(0..10)
                .map(|i| (i as f64, 2.0 * i as f64))
                .collect::<Vec<_>>(),
        );
        assert_eq!(fit_curvature(&line, 0.5).unwrap(), 0.0);
        assert!(fit_curvature(&track(&ccw[..2]), 0.5).is_err());
        // tight circles clamp
        assert_eq!(
            fit_curvature(&track(&arc(1.0, 0.0, 2.0, 10, (0.0, 0.0))), 0.5).unwrap(),
            0.5
        );
    }

    /// Geometric circle fit by exhaustive search over candidate centers.
    fn grid_search_radius(points: &[(f64, f64)], center_guess: (f64, f64), half: f64) -> f64 {
        let cost = |cx: f64, cy: f64| -> (f64, f64) {
            let d: Vec<f64> = points.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).collect();
            let r = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|v| (v - r).powi(2)).sum(), r)
        };
        let (mut cx, mut cy, mut span) = (center_guess.0, center_guess.1, half);
        let mut best = cost(cx, cy);
        for _ in 0..8 {
            let (mut bx, mut by) = (cx, cy);
            for i in -20..=20 {
                for j in -20..=20 {
                    let x = cx + span * i as f64 / 20.0;
                    let y = cy + span * j as f64 / 20.0;
                    let c = cost(x, y);
                    if c.0 < best.0 {
                        best = c;
                        bx = x;
                        by = y;
                    }
                }
            }
            cx = bx;
            cy = by;
            span /= 5.0;
        }
        best.1
    }

    #[test]
    fn noisy_arc_agrees_with_grid_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let pts: Vec<(f64, f64)> = arc(10.0, 0.3, 1.6, 25, (0.0, 0.0))
            .into_iter()
            .map(|(x, y)| (x + noise.sample(&mut rng), y + noise.sample(&mut rng)))
            .collect();
        let k = fit_curvature(&track(&pts), 0.5).unwrap();
        let oracle = 1.0 / grid_search_radius(&pts, (1.0, -1.0), 6.0);
        assert!((k - 0.1).abs() < 0.01, "kasa {k}");
        assert!((oracle - 0.1).abs() < 0.01, "oracle {oracle}");
        assert!((k - oracle).abs() < 0.01);
    }

    #[test]
    fn rigid_motion_and_mirroring() {
        let pts = arc(4.0, 0.2, 1.2, 15, (1.0, 1.0));
        let base = fit_curvature(&track(&pts), 0.5).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let moved: Vec<_> = pts
            .iter()
            .map(|&(x, y)| (c * x - s * y + 12.0, s * x + c * y - 4.0))
            .collect();
        assert!((fit_curvature(&track(&moved), 0.5).unwrap() - base).abs() < 1e-9);
        let mirrored: Vec<_> = pts.iter().map(|&(x, y)| (-x, y)).collect();
        assert!((fit_curvature(&track(&mirrored), 0.5).unwrap() + base).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_rotates_velocity() {
        // (x, y) -> (-y, x) maps (dx, dy) -> (-dy, dx)
        let pts: Vec<_> = (0..20).map(|i| (0.3 * i as f64, 0.1 * i as f64)).collect();
        let t = track(&pts);
        let (dx, dy) = extract_velocity(&t, 10.0).unwrap();
        let r = t.map_points(|x, y| (-y, x));
        let (rx, ry) = extract_velocity(&r, 10.0).unwrap();
        assert!((rx + dy).abs() < 1e-12 && (ry - dx).abs() < 1e-12);
        let k = fit_curvature(&t, 0.5).unwrap();
        assert_eq!(k.abs(), fit_curvature(&r, 0.5).unwrap().abs());
    }

    #[test]
    fn stack_layout() {
        let w = world(8);
        let feats = Tensor::filled(&[25, 8, 8], 0.3);
        let ctx = KinematicContext {
            dx: 0.5,
            dy: 0.0,
            kappa: -0.2,
        };
        let stack = build_input_stack(&feats, &w, Cell::new(2, 3), &ctx).unwrap();
        let t = stack.tensor();
        assert_eq!(t.shape(), &[30, 8, 8]);
        assert!(t.channel(27).iter().all(|&v| v == 0.5));
        assert!(t.channel(28).iter().all(|&v| v == 0.0));
        assert!(t.channel(29).iter().all(|&v| v == -0.2));
        assert_eq!(t.channel(27).iter().sum::<f64>() / 64.0, 0.5);
        let zero =
            build_input_stack(&feats, &w, Cell::new(2, 3), &KinematicContext::zero()).unwrap();
        assert!(zero.tensor().data()[27 * 64..].iter().all(|&v| v == 0.0));
        assert!(build_input_stack(&Tensor::zeros(&[24, 8, 8]), &w, Cell::new(0, 0), &ctx).is_err());
    }

    #[test]
    fn context_is_normalized() {
        let pts: Vec<_> = arc(1.5, 0.0, 3.0, 51, (0.0, 0.0));
        let ctx = kinematic_context(&track(&pts), &KinematicsConfig::default()).unwrap();
        assert!(ctx.dx.abs() <= 1.0 && ctx.dy.abs() <= 1.0 && ctx.kappa.abs() <= 1.0);
        assert!(ctx.dx == 0.0 || ctx.dy == 0.0);
        assert!(ctx.kappa > 0.0);
    }
}
