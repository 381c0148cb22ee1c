use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::Cell;

/// A carved maze on an odd lattice. Boundary cells are always walls and the
/// open cells form a single connected component by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maze {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    walls: Vec<bool>,
    dotted: Vec<bool>,
}

/// Randomized depth-first-search carving on the odd sub-lattice, then dotted
/// flags drawn independently per corridor cell with probability `dot_density`.
pub fn generate_maze(seed: u64, width: usize, height: usize, dot_density: f64) -> Result<Maze> {
    if width < 5 || height < 5 || width % 2 == 0 || height % 2 == 0 {
        return Err(Error::Validation(format!(
            "maze dimensions must be odd and at least 5x5, got {width}x{height}"
        )));
    }
    if !(0.0..=1.0).contains(&dot_density) {
        return Err(Error::Validation(format!(
            "dot density must lie in [0, 1], got {dot_density}"
        )));
    }

    let mut walls = vec![true; width * height];
    let idx = |x: usize, y: usize| y * width + x;
    let mut rng = rng::substream(seed, &[width as u64, height as u64]);

    // Iterative DFS over rooms at odd coordinates, knocking out the wall
    // between a room and its chosen unvisited neighbor two cells away.
    let mut stack = vec![(1usize, 1usize)];
    walls[idx(1, 1)] = false;
    while let Some(&(x, y)) = stack.last() {
        let mut neighbors: Vec<(usize, usize)> = Vec::with_capacity(4);
        for (dx, dy) in [(0isize, -2isize), (2, 0), (0, 2), (-2, 0)] {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 1 && ny >= 1 && (nx as usize) < width - 1 && (ny as usize) < height - 1 {
                let (nx, ny) = (nx as usize, ny as usize);
                if walls[idx(nx, ny)] {
                    neighbors.push((nx, ny));
                }
            }
        }
        match neighbors.choose(&mut rng) {
            Some(&(nx, ny)) => {
                walls[idx((x + nx) / 2, (y + ny) / 2)] = false;
                walls[idx(nx, ny)] = false;
                stack.push((nx, ny));
            }
            None => {
                stack.pop();
            }
        }
    }

    let mut dotted = vec![false; width * height];
    for i in 0..walls.len() {
        if !walls[i] && rng.gen::<f64>() < dot_density {
            dotted[i] = true;
        }
    }

    Ok(Maze { width, height, seed, walls, dotted })
}

impl Maze {
    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    #[inline]
    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn is_open(&self, cell: Cell) -> bool {
        !self.walls[self.index(cell)]
    }

    #[inline]
    pub fn is_dotted(&self, cell: Cell) -> bool {
        self.dotted[self.index(cell)]
    }

    /// All passable cells in row-major order.
    pub fn open_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_open((x, y)) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Destination of an attempted move: slipping or stepping into a wall
    /// leaves the robot in place.
    pub fn move_from(&self, cell: Cell, dir: usize) -> Cell {
        let (dx, dy) = super::DIRS[dir];
        let nx = cell.0 as isize + dx;
        let ny = cell.1 as isize + dy;
        if self.in_bounds(nx, ny) && self.is_open((nx as usize, ny as usize)) {
            (nx as usize, ny as usize)
        } else {
            cell
        }
    }

    /// Plain-text grid: `#` wall, `.` dotted corridor, ` ` open corridor.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if self.walls[self.index((x, y))] {
                    '#'
                } else if self.dotted[self.index((x, y))] {
                    '.'
                } else {
                    ' '
                });
            }
            s.push('\n');
        }
        s
    }

    /// Parse the plain-text grid format. The seed of a parsed maze is 0.
    pub fn from_text(text: &str) -> Result<Maze> {
        let lines: Vec<&str> = text.lines().collect();
        let height = lines.len();
        let width = lines.first().map_or(0, |l| l.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Validation("empty maze text".into()));
        }
        let mut walls = vec![true; width * height];
        let mut dotted = vec![false; width * height];
        for (y, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Validation(format!("ragged maze text at row {y}")));
            }
            for (x, ch) in line.chars().enumerate() {
                match ch {
                    '#' => {}
                    ' ' => walls[y * width + x] = false,
                    '.' => {
                        walls[y * width + x] = false;
                        dotted[y * width + x] = true;
                    }
                    other => {
                        return Err(Error::Validation(format!(
                            "unexpected character {other:?} in maze text"
                        )))
                    }
                }
            }
        }
        Ok(Maze { width, height, seed: 0, walls, dotted })
    }
}
