use super::{Cell, GridShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ENV_CHANNELS: usize = 5;
pub const MIN_WORLD_EXTENT: usize = 8;

/// Environment channel order.
pub mod channel {
    pub const MAX_HEIGHT: usize = 0;
    pub const HEIGHT_VARIANCE: usize = 1;
    pub const RED: usize = 2;
    pub const GREEN: usize = 3;
    pub const BLUE: usize = 4;
}

/// Per-cell terrain statistics on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    shape: GridShape,
    resolution: f64,
    env: Tensor,
}

impl GridWorld {
    pub fn new(env: Tensor, resolution: f64) -> Result<Self> {
        let (c, rows, cols) = env.dims3()?;
        if c != ENV_CHANNELS {
            return Err(Error::shape(
                "environment channels",
                &[ENV_CHANNELS, rows, cols],
                env.shape(),
            ));
        }
        if rows < MIN_WORLD_EXTENT || cols < MIN_WORLD_EXTENT {
            return Err(Error::Config(format!(
                "world must be at least {MIN_WORLD_EXTENT}x{MIN_WORLD_EXTENT}, got {rows}x{cols}"
            )));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Config(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !env.all_finite() {
            return Err(Error::Invalid(
                "environment channels contain non-finite values".into(),
            ));
        }
        Ok(GridWorld {
            shape: GridShape { rows, cols },
            resolution,
            env,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn env(&self) -> &Tensor {
        &self.env
    }

    /// Cell-center position in meters, `x` along columns and `y` along rows.
    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.col as f64 + 0.5) * self.resolution,
            (cell.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Nearest cell to a metric position, clamped into the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Cell {
        let clamp = |v: f64, n: usize| ((v / self.resolution).floor().max(0.0) as usize).min(n - 1);
        Cell::new(clamp(y, self.shape.rows), clamp(x, self.shape.cols))
    }

    /// Copy with every channel replaced by its grid mean.
    pub fn with_constant_channels(&self) -> GridWorld {
        let mut env = self.env.clone();
        for c in 0..ENV_CHANNELS {
            let plane = env.channel_mut(c);
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            plane.fill(mean);
        }
        GridWorld {
            env,
            ..self.clone()
        }
    }

    /// Square-grid rotation by quarter turns, `(r, c) -> (c, n-1-r)` per turn.
    pub fn rotate(&self, quarter_turns: u8) -> Result<GridWorld> {
        if self.shape.rows != self.shape.cols {
            return Err(Error::Invalid(format!(
                "rotation needs a square grid, got {}x{}",
                self.shape.rows, self.shape.cols
            )));
        }
        let mut env = Tensor::zeros(self.env.shape());
        for c in 0..ENV_CHANNELS {
            let src = self.env.channel(c);
            let dst = env.channel_mut(c);
            for (i, &v) in src.iter().enumerate() {
                let cell = self.shape.rotate_cell(self.shape.cell(i), quarter_turns);
                dst[self.shape.index(cell)] = v;
            }
        }
        Ok(GridWorld {
            env,
            ..self.clone()
        })
    }
}
