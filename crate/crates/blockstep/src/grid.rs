//! Uniform grids on the unit interval [0, 1].

use crate::error::{Error, Result};

/// A uniform grid of `G + 1` nodes on [0, 1] with spacing `h = 1/G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    g: usize,
}

impl Grid {
    /// Creates a grid with `g` subdivisions (`g + 1` nodes, so at least 2).
    pub fn new(g: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        Ok(Grid { g })
    }

    /// Number of subdivisions `G`.
    pub fn subdivisions(&self) -> usize {
        self.g
    }

    /// Number of nodes `G + 1`.
    pub fn num_nodes(&self) -> usize {
        self.g + 1
    }

    /// Node spacing `h = 1/G`.
    pub fn h(&self) -> f64 {
        1.0 / self.g as f64
    }

    /// Coordinate of node `a` (0 ≤ a ≤ G).
    pub fn node(&self, a: usize) -> f64 {
        a as f64 * self.h()
    }

    /// All node coordinates, strictly increasing from 0 to 1.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.g).map(|a| self.node(a)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_layout() {
        let g = Grid::new(4).unwrap();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(Grid::new(0).is_err());
    }
}
