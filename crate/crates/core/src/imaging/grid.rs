//! Cell-centred coordinates normalised to `(-1, 1)`.

/// Centre of cell `i` out of `n` along one axis: `-1 + (2i + 1) / n`.
pub fn cell_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub height: usize,
    pub width: usize,
    /// `(y, x)` of every cell, row-major.
    pub coords: Vec<(f64, f64)>,
}

impl CoordGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn make_coord_grid(height: usize, width: usize) -> CoordGrid {
    assert!(height >= 1 && width >= 1, "grid must be at least 1x1");
    let coords = (0..height)
        .flat_map(|i| (0..width).map(move |j| (cell_center(i, height), cell_center(j, width))))
        .collect();
    CoordGrid {
        height,
        width,
        coords,
    }
}
