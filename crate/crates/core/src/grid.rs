//! The age x time lattice and the lag neighbourhoods defined on it.
//!
//! Cells are addressed with 1-based `(age, time)` pairs. Times past
//! `n_times` are forecast columns: they belong to the grid and carry
//! latent variables and hazards, but no data.

use std::fmt;

use crate::error::{Error, Result};

/// A 1-based `(age, time)` index pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub age: usize,
    pub time: usize,
}

impl Cell {
    pub const fn new(age: usize, time: usize) -> Self {
        Cell { age, time }
    }

    /// Zero-based `[row, column]` index into an `(n_ages, total_times)` array.
    pub fn ix(self) -> [usize; 2] {
        [self.age - 1, self.time - 1]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.age, self.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n_ages: usize,
    n_times: usize,
    n_forecast: usize,
}

impl Grid {
    pub fn new(n_ages: usize, n_times: usize, n_forecast: usize) -> Result<Self> {
        if n_ages == 0 {
            return Err(Error::InvalidGrid("n_ages must be at least 1".into()));
        }
        if n_times == 0 {
            return Err(Error::InvalidGrid("n_times must be at least 1".into()));
        }
        Ok(Grid {
            n_ages,
            n_times,
            n_forecast,
        })
    }

    pub fn n_ages(&self) -> usize {
        self.n_ages
    }

    /// Number of observed time columns.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_forecast(&self) -> usize {
        self.n_forecast
    }

    /// Observed plus forecast time columns.
    pub fn total_times(&self) -> usize {
        self.n_times + self.n_forecast
    }

    pub fn n_cells(&self) -> usize {
        self.n_ages * self.total_times()
    }

    /// Shape of a matrix over the extended grid, ages by times.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_ages, self.total_times())
    }

    /// Same lattice with a different forecast horizon.
    pub fn with_forecast(&self, n_forecast: usize) -> Self {
        Grid { n_forecast, ..*self }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        (1..=self.n_ages).contains(&cell.age) && (1..=self.total_times()).contains(&cell.time)
    }

    pub fn check(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::InvalidIndex {
                age: cell.age,
                time: cell.time,
                n_ages: self.n_ages,
                n_times: self.total_times(),
            })
        }
    }

    pub fn is_forecast(&self, cell: Cell) -> bool {
        cell.time > self.n_times
    }

    /// Row-major flat index; matches the memory order of a standard-layout
    /// `Array2` of shape [`Grid::shape`].
    pub fn flat_index(&self, cell: Cell) -> usize {
        (cell.age - 1) * self.total_times() + (cell.time - 1)
    }

    pub fn cell_at(&self, flat: usize) -> Cell {
        let tt = self.total_times();
        Cell::new(flat / tt + 1, flat % tt + 1)
    }

    /// All cells in row-major order (age outer, time inner).
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (1..=self.n_ages).flat_map(move |age| (1..=self.total_times()).map(move |t| Cell::new(age, t)))
    }
}

/// The anchor cell followed by its in-grid lags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    cells: Vec<Cell>,
}

impl Neighborhood {
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Cell> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }

    pub fn intersection(&self, other: &Neighborhood) -> Vec<Cell> {
        self.cells
            .iter()
            .copied()
            .filter(|c| other.contains(*c))
            .collect()
    }
}

impl<'a> IntoIterator for &'a Neighborhood {
    type Item = &'a Cell;
    type IntoIter = std::slice::Iter<'a, Cell>;

    fn into_iter(self) -> Self::IntoIter {
        self.cells.iter()
    }
}

/// `{(x,t), (x-1,t), ..., (x-p,t), (x,t-1), ..., (x,t-q)}` restricted to the
/// grid. Lags that fall below index 1 are dropped.
pub fn neighborhood(cell: Cell, p: usize, q: usize, grid: &Grid) -> Result<Neighborhood> {
    grid.check(cell)?;
    let mut cells = Vec::with_capacity(1 + p + q);
    cells.push(cell);
    cells.extend((1..=p.min(cell.age - 1)).map(|k| Cell::new(cell.age - k, cell.time)));
    cells.extend((1..=q.min(cell.time - 1)).map(|k| Cell::new(cell.age, cell.time - k)));
    Ok(Neighborhood { cells })
}

/// Cells whose neighbourhood contains `cell`: the anchor plus up to `p`
/// older ages and `q` later times, clipped to the extended grid.
pub fn reverse_neighborhood(cell: Cell, p: usize, q: usize, grid: &Grid) -> Result<Neighborhood> {
    grid.check(cell)?;
    let mut cells = Vec::with_capacity(1 + p + q);
    cells.push(cell);
    let age_room = grid.n_ages() - cell.age;
    let time_room = grid.total_times() - cell.time;
    cells.extend((1..=p.min(age_room)).map(|k| Cell::new(cell.age + k, cell.time)));
    cells.extend((1..=q.min(time_room)).map(|k| Cell::new(cell.age, cell.time + k)));
    Ok(Neighborhood { cells })
}
