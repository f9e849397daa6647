use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

/// Cardinal moves, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// `(d_row, d_col)`
    pub fn offset(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    /// The action after rotating the grid a quarter turn, `(r, c) -> (c, n-1-r)`.
    pub fn rotate_quarter(self) -> Action {
        match self {
            Action::Right => Action::Down,
            Action::Down => Action::Left,
            Action::Left => Action::Up,
            Action::Up => Action::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("empty grid {rows}x{cols}")));
        }
        Ok(GridShape { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn check(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "cell ({}, {}) outside {}x{} grid",
                cell.row, cell.col, self.rows, self.cols
            )))
        }
    }

    /// Deterministic transition; moves that would leave the grid stay in place.
    pub fn next(&self, cell: Cell, action: Action) -> Cell {
        let (dr, dc) = action.offset();
        let r = cell.row as isize + dr;
        let c = cell.col as isize + dc;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            cell
        } else {
            Cell::new(r as usize, c as usize)
        }
    }

    /// Successor index table, `[cell][action]`.
    pub fn transition_table(&self) -> Vec<[usize; 4]> {
        (0..self.len())
            .map(|i| {
                let c = self.cell(i);
                Action::ALL.map(|a| self.index(self.next(c, a)))
            })
            .collect()
    }

    /// Cell position after `quarter_turns` rotations of a square grid.
    pub fn rotate_cell(&self, cell: Cell, quarter_turns: u8) -> Cell {
        let n = self.rows;
        match quarter_turns % 4 {
            0 => cell,
            1 => Cell::new(cell.col, n - 1 - cell.row),
            2 => Cell::new(n - 1 - cell.row, n - 1 - cell.col),
            _ => Cell::new(n - 1 - cell.col, cell.row),
        }
    }
}

/// A scalar per grid cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    shape: GridShape,
    data: Vec<f64>,
}

impl GridMap {
    pub fn zeros(shape: GridShape) -> Self {
        GridMap {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: GridShape, v: f64) -> Self {
        GridMap {
            shape,
            data: vec![v; shape.len()],
        }
    }

    pub fn from_vec(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "grid map",
                &[shape.rows, shape.cols],
                &[data.len()],
            ));
        }
        Ok(GridMap { shape, data })
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(Cell) -> f64) -> Self {
        GridMap {
            shape,
            data: (0..shape.len()).map(|i| f(shape.cell(i))).collect(),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.data[self.shape.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, v: f64) {
        let i = self.shape.index(cell);
        self.data[i] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1_distance(&self, other: &GridMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn rotate(&self, quarter_turns: u8) -> GridMap {
        let mut out = GridMap::zeros(self.shape);
        for i in 0..self.data.len() {
            let c = self.shape.cell(i);
            out.set(self.shape.rotate_cell(c, quarter_turns), self.data[i]);
        }
        out
    }
}

/// Per-cell distribution over the four actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    shape: GridShape,
    probs: Vec<[f64; 4]>,
}

impl Policy {
    pub fn new(shape: GridShape, probs: Vec<[f64; 4]>) -> Result<Self> {
        if probs.len() != shape.len() {
            return Err(Error::shape("policy", &[shape.len(), 4], &[probs.len(), 4]));
        }
        for (i, row) in probs.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "policy row {i} is not a distribution: {row:?}"
                )));
            }
        }
        Ok(Policy { shape, probs })
    }

    pub fn uniform(shape: GridShape) -> Self {
        Policy {
            shape,
            probs: vec![[0.25; 4]; shape.len()],
        }
    }

    /// Always takes `choose(cell)`.
    pub fn deterministic(shape: GridShape, choose: impl Fn(Cell) -> Action) -> Self {
        let probs = (0..shape.len())
            .map(|i| {
                let mut p = [0.0; 4];
                p[choose(shape.cell(i)).index()] = 1.0;
                p
            })
            .collect();
        Policy { shape, probs }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn probs(&self, cell: Cell) -> &[f64; 4] {
        &self.probs[self.shape.index(cell)]
    }

    pub fn rows(&self) -> &[[f64; 4]] {
        &self.probs
    }

    pub fn prob(&self, cell: Cell, action: Action) -> f64 {
        self.probs(cell)[action.index()]
    }
}
