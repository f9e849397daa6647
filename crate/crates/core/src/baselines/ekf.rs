use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x5, Matrix5, Matrix5x2, SymmetricEigen, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::PastTrack;
use crate::mdp::Cell;
use crate::metrics::{cell_points, hausdorff, DemoMetrics, MethodEval};
use crate::par::{self, Exec};
use crate::synth::Demonstration;

/// Diagonal noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Front-to-rear axle distance in meters.
    pub wheelbase: f64,
    /// Per-update process noise on `[x, y, theta, v, delta]`.
    pub process: [f64; 5],
    /// Position measurement noise on `[x, y]`.
    pub measurement: [f64; 2],
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            wheelbase: 1.8,
            process: [0.01, 0.01, 0.005, 0.1, 0.01],
            measurement: [0.05, 0.05],
        }
    }
}

/// Kinematic bicycle state `[x, y, theta, v, delta]` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: Vector5<f64>,
    pub cov: Matrix5<f64>,
    pub wheelbase: f64,
    /// Measurement residual of the most recent correction.
    pub innovation: Vector2<f64>,
}

impl EkfState {
    pub fn x(&self) -> f64 {
        self.mean[0]
    }
    pub fn y(&self) -> f64 {
        self.mean[1]
    }
    pub fn heading(&self) -> f64 {
        self.mean[2]
    }
    pub fn speed(&self) -> f64 {
        self.mean[3]
    }
    pub fn steering(&self) -> f64 {
        self.mean[4]
    }
    /// Yaw rate per unit speed, `tan(delta) / L`.
    pub fn curvature(&self) -> f64 {
        self.steering().tan() / self.wheelbase
    }
}

/// Angle wrapped into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Exact bicycle motion over `dt` with frozen speed and steering.
pub fn bicycle_step(s: &Vector5<f64>, dt: f64, wheelbase: f64) -> Vector5<f64> {
    let (x, y, th, v, d) = (s[0], s[1], s[2], s[3], s[4]);
    let omega = v * d.tan() / wheelbase;
    let (nx, ny) = if (omega * dt).abs() < 1e-9 {
        (x + v * th.cos() * dt, y + v * th.sin() * dt)
    } else {
        let r = v / omega;
        (
            x + r * ((th + omega * dt).sin() - th.sin()),
            y - r * ((th + omega * dt).cos() - th.cos()),
        )
    };
    Vector5::new(nx, ny, wrap_angle(th + omega * dt), v, d)
}

fn motion_jacobian(s: &Vector5<f64>, dt: f64, wheelbase: f64) -> Matrix5<f64> {
    let mut j = Matrix5::zeros();
    for k in 0..5 {
        let h = 1e-6 * s[k].abs().max(1.0);
        let mut hi = *s;
        let mut lo = *s;
        hi[k] += h;
        lo[k] -= h;
        let mut d = bicycle_step(&hi, dt, wheelbase) - bicycle_step(&lo, dt, wheelbase);
        d[2] = wrap_angle(d[2]);
        j.set_column(k, &(d / (2.0 * h)));
    }
    j
}

fn check_psd(cov: &Matrix5<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(*cov);
    let min = eig.eigenvalues.min();
    let tol = 1e-9 * cov.trace().abs().max(1.0);
    if !min.is_finite() || min < -tol {
        return Err(Error::NotPsd(format!("smallest eigenvalue {min:e}")));
    }
    Ok(())
}

/// Predict over `dt`, then correct with a position measurement.
pub fn ekf_update(state: &EkfState, z: (f64, f64), dt: f64, cfg: &EkfConfig) -> Result<EkfState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
    }
    let f = motion_jacobian(&state.mean, dt, state.wheelbase);
    let mean = bicycle_step(&state.mean, dt, state.wheelbase);
    let q = Matrix5::from_diagonal(&Vector5::from(cfg.process));
    let p = f * state.cov * f.transpose() + q;

    let h = Matrix2x5::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
    let r = Matrix2::from_diagonal(&Vector2::from(cfg.measurement));
    let innovation = Vector2::new(z.0, z.1) - h * mean;
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::NotPsd("singular innovation covariance".into()))?;
    let k: Matrix5x2<f64> = p * h.transpose() * s_inv;
    let mut mean = mean + k * innovation;
    mean[2] = wrap_angle(mean[2]);
    // Joseph form, then symmetrize
    let a = Matrix5::identity() - k * h;
    let cov = a * p * a.transpose() + k * r * k.transpose();
    let cov = (cov + cov.transpose()) * 0.5;
    check_psd(&cov)?;
    Ok(EkfState {
        mean,
        cov,
        wheelbase: state.wheelbase,
        innovation,
    })
}

/// Initial state from the first three timed positions: finite-difference
/// heading, speed and steering.
pub fn ekf_init(points: &[(f64, f64, f64)], cfg: &EkfConfig) -> Result<EkfState> {
    if points.len() < 3 {
        return Err(Error::Invalid(format!(
            "EKF initialization needs 3 measurements, got {}",
            points.len()
        )));
    }
    if !(cfg.wheelbase > 0.0) {
        return Err(Error::Config(format!(
            "wheelbase must be positive, got {}",
            cfg.wheelbase
        )));
    }
    let [(t0, x0, y0), (t1, x1, y1), (t2, x2, y2)] = [points[0], points[1], points[2]];
    let (dt1, dt2) = (t1 - t0, t2 - t1);
    if !(dt1 > 0.0 && dt2 > 0.0) {
        return Err(Error::Invalid("measurement times must increase".into()));
    }
    let (vx, vy) = ((x2 - x1) / dt2, (y2 - y1) / dt2);
    let v = vx.hypot(vy);
    let th1 = (y1 - y0).atan2(x1 - x0);
    let th2 = vy.atan2(vx);
    let (theta, delta) = if v > 1e-6 && (x1 - x0).hypot(y1 - y0) > 1e-9 {
        let rate = wrap_angle(th2 - th1) / (0.5 * (dt1 + dt2));
        (th2, (rate * cfg.wheelbase / v).atan())
    } else {
        (if v > 1e-6 { th2 } else { 0.0 }, 0.0)
    };
    let cov = Matrix5::from_diagonal(&Vector5::new(
        cfg.measurement[0],
        cfg.measurement[1],
        0.1,
        1.0,
        0.1,
    ));
    Ok(EkfState {
        mean: Vector5::new(x2, y2, wrap_angle(theta), v, delta),
        cov,
        wheelbase: cfg.wheelbase,
        innovation: Vector2::zeros(),
    })
}

/// Runs the filter over a whole track.
pub fn ekf_filter(track: &PastTrack, cfg: &EkfConfig) -> Result<EkfState> {
    let pts: Vec<(f64, f64, f64)> = track.samples().iter().map(|s| (s.t, s.x, s.y)).collect();
    let mut state = ekf_init(&pts, cfg)?;
    for w in pts[2..].windows(2) {
        state = ekf_update(&state, (w[1].1, w[1].2), w[1].0 - w[0].0, cfg)?;
    }
    Ok(state)
}

/// Positions after each of `steps` forward steps with frozen speed and steering.
pub fn ekf_predict_trajectory(state: &EkfState, steps: usize, dt: f64) -> Vec<(f64, f64)> {
    let mut s = state.mean;
    (0..steps)
        .map(|_| {
            s = bicycle_step(&s, dt, state.wheelbase);
            (s[0], s[1])
        })
        .collect()
}

/// Rasterized forecast of a demonstration's future: the start cell, then one
/// prediction per cell length travelled.
pub fn ekf_forecast(demo: &Demonstration, cfg: &EkfConfig) -> Result<Vec<Cell>> {
    let state = ekf_filter(&demo.past, cfg)?;
    let res = demo.world.resolution();
    let steps = demo.horizon() - 1;
    let mut cells = vec![demo.start()];
    if state.speed().abs() < 1e-6 {
        cells.extend(std::iter::repeat_n(demo.start(), steps));
        return Ok(cells);
    }
    let dt = res / state.speed().abs();
    cells.extend(
        ekf_predict_trajectory(&state, steps, dt)
            .into_iter()
            .map(|(x, y)| demo.world.cell_at(x, y)),
    );
    Ok(cells)
}

/// EKF column of the comparison: Hausdorff distance only.
pub fn evaluate_ekf(demos: &[Demonstration], cfg: &EkfConfig, exec: Exec) -> Result<MethodEval> {
    let idx: Vec<usize> = (0..demos.len()).collect();
    let rows = par::map(exec, &idx, |&i| -> Result<DemoMetrics> {
        let d = &demos[i];
        let path = ekf_forecast(d, cfg)?;
        let hd = hausdorff(
            &cell_points(&d.world, &d.future),
            &cell_points(&d.world, &path),
        )?;
        Ok(DemoMetrics {
            index: i,
            tag: d.tag,
            nll: None,
            hd,
            hd_std_err: 0.0,
            entropy: None,
        })
    });
    Ok(MethodEval {
        method: "ekf".into(),
        demos: rows.into_iter().collect::<Result<_>>()?,
    })
}
