//! Dense feature grids and the low-level linear operations over them.
//!
//! Layout is row-major `(row, column, channel)` throughout. Stored feature
//! data is `f32`; everything derived from it (inner products, activations,
//! likelihood planes) is `f64`.

use crate::error::{Error, Result};

/// A cell on the 2D feature lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Chebyshev (L-infinity) distance.
    pub fn chebyshev(self, other: Position) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

/// `H x W` grid of `D`-dimensional feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::Dimension(format!(
                "feature map dimensions must be positive, got {height}x{width}x{depth}"
            )));
        }
        if data.len() != height * width * depth {
            return Err(Error::Dimension(format!(
                "feature map {height}x{width}x{depth} needs {} values, got {}",
                height * width * depth,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature map contains non-finite values".into()));
        }
        Ok(Self { height, width, depth, data, normalized: false })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self::new(height, width, depth, vec![0.0; height * width * depth]).expect("positive dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, pos: Position) -> usize {
        pos.row * self.width + pos.col
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index / self.width, index % self.width)
    }

    pub fn vector(&self, pos: Position) -> &[f32] {
        self.vector_at(self.index(pos))
    }

    pub fn vector_at(&self, index: usize) -> &[f32] {
        &self.data[index * self.depth..(index + 1) * self.depth]
    }

    pub fn vector_mut(&mut self, pos: Position) -> &mut [f32] {
        let i = self.index(pos);
        self.normalized = false;
        &mut self.data[i * self.depth..(i + 1) * self.depth]
    }

    /// Void positions are all-zero vectors of a normalized map.
    pub fn is_void_at(&self, index: usize) -> bool {
        self.vector_at(index).iter().all(|&v| v == 0.0)
    }

    pub fn void_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_void_at(i)).count()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.depth)
    }

    /// Sub-grid starting at `origin` of size `height x width`; must lie inside.
    pub fn crop(&self, origin: Position, height: usize, width: usize) -> Result<FeatureMap> {
        if origin.row + height > self.height || origin.col + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width} at {origin:?} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.depth);
        for r in origin.row..origin.row + height {
            let start = (r * self.width + origin.col) * self.depth;
            data.extend_from_slice(&self.data[start..start + width * self.depth]);
        }
        let mut out = FeatureMap::new(height, width, self.depth, data)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    pub fn normalize_rows(&self, eps: f32) -> FeatureMap {
        normalize_rows(self, eps)
    }

    /// Trust a stored flag that the rows are already unit or void.
    pub(crate) fn assume_normalized(mut self) -> FeatureMap {
        self.normalized = true;
        self
    }
}

/// Vectors whose norm is within this of 1 are treated as already unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Scale every position vector to unit L2 norm. Vectors with norm below `eps`
/// become the zero vector (void).
pub fn normalize_rows(map: &FeatureMap, eps: f32) -> FeatureMap {
    assert!(eps > 0.0, "eps must be positive");
    let mut data = map.data.clone();
    for v in data.chunks_exact_mut(map.depth) {
        let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm < eps as f64 {
            v.fill(0.0);
        } else if (norm - 1.0).abs() > UNIT_TOLERANCE {
            for x in v.iter_mut() {
                *x = (*x as f64 / norm) as f32;
            }
        }
    }
    FeatureMap { height: map.height, width: map.width, depth: map.depth, data, normalized: true }
}

/// `H x W x C` tensor of 64-bit values (inner products, activations).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn get(&self, pos: Position) -> &[f64] {
        self.at(pos.row * self.width + pos.col)
    }
}

/// `b[i, k] = mu_k . f_i`. `kernels` holds `K` rows of length `depth`.
pub fn inner_product_maps(map: &FeatureMap, kernels: &[f64], depth: usize) -> Result<Tensor3> {
    if depth != map.depth || !kernels.len().is_multiple_of(depth) {
        return Err(Error::Dimension(format!("kernel depth {depth} vs feature depth {}", map.depth)));
    }
    let k = kernels.len() / depth;
    let mut out = Tensor3::zeros(map.height, map.width, k);
    for (f, b) in map.vectors().zip(out.data.chunks_exact_mut(k)) {
        for (mu, slot) in kernels.chunks_exact(depth).zip(b.iter_mut()) {
            *slot = dot_f32_f64(f, mu);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot_f32_f64(f: &[f32], mu: &[f64]) -> f64 {
    f.iter().zip(mu).map(|(&a, &b)| a as f64 * b).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spatial extent of a model window plus the cell that sits on the window center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShape {
    pub height: usize,
    pub width: usize,
    pub anchor: Position,
}

impl WindowShape {
    /// Anchor at `(height / 2, width / 2)`.
    pub fn centered(height: usize, width: usize) -> Self {
        Self { height, width, anchor: Position::new(height / 2, width / 2) }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Dimension("window must be non-empty".into()));
        }
        if self.anchor.row >= self.height || self.anchor.col >= self.width {
            return Err(Error::Dimension(format!(
                "anchor {:?} outside {}x{} window",
                self.anchor, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Placement of a [`WindowShape`] on a grid of `grid_height x grid_width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub shape: WindowShape,
    pub center: Position,
    pub grid_height: usize,
    pub grid_width: usize,
}

impl Window {
    pub fn new(shape: WindowShape, center: Position, grid_height: usize, grid_width: usize) -> Self {
        Self { shape, center, grid_height, grid_width }
    }

    /// Window placed so that it is centered on the grid center.
    pub fn centered_on_grid(shape: WindowShape, grid_height: usize, grid_width: usize) -> Self {
        Self::new(shape, Position::new(grid_height / 2, grid_width / 2), grid_height, grid_width)
    }

    /// Grid index of window cell `(u, v)`, or `None` when it falls outside the grid.
    #[inline]
    pub fn grid_index(&self, u: usize, v: usize) -> Option<usize> {
        let r = self.center.row as isize + u as isize - self.shape.anchor.row as isize;
        let c = self.center.col as isize + v as isize - self.shape.anchor.col as isize;
        if r < 0 || c < 0 || r >= self.grid_height as isize || c >= self.grid_width as isize {
            None
        } else {
            Some(r as usize * self.grid_width + c as usize)
        }
    }

    /// `(window cell index, grid index)` for every valid cell, in row-major window order.
    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.shape.width;
        (0..self.shape.cells()).filter_map(move |cell| self.grid_index(cell / w, cell % w).map(|g| (cell, g)))
    }

    pub fn mask(&self) -> Vec<bool> {
        let w = self.shape.width;
        (0..self.shape.cells()).map(|cell| self.grid_index(cell / w, cell % w).is_some()).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_cells().count()
    }
}

/// Borrowed view of a feature map through a window.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    pub map: &'a FeatureMap,
    pub window: Window,
}

impl<'a> WindowView<'a> {
    pub fn vector(&self, u: usize, v: usize) -> Option<&'a [f32]> {
        self.window.grid_index(u, v).map(|g| self.map.vector_at(g))
    }

    pub fn mask(&self) -> Vec<bool> {
        self.window.mask()
    }
}

/// The `shape`-sized sub-grid of `map` centered at `center`.
pub fn window(map: &FeatureMap, center: Position, shape: WindowShape) -> WindowView<'_> {
    WindowView { map, window: Window::new(shape, center, map.height, map.width) }
}

/// A plane of per-position scores with a validity mask. Invalid cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScoreGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "score grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("score grid contains non-finite values".into()));
        }
        Ok(Self { height, width, valid: vec![true; values.len()], values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, values: vec![value; height * width], valid: vec![true; height * width] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, pos: Position) -> f64 {
        self.values[pos.row * self.width + pos.col]
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index / self.width, index % self.width)
    }

    /// Sum over valid cells.
    pub fn valid_sum(&self) -> f64 {
        self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(v, _)| v).sum()
    }

    /// Row-major first index of the maximum over valid cells.
    pub fn argmax(&self) -> Option<Position> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&v, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
            if ok && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| self.position(i))
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).fold(None, |acc, (&v, _)| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}
