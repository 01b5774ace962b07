//! Axis-aligned boxes in continuous coordinates.

use crate::tensor::Position;

/// Half-open box `[x0, x1) x [y0, y1)`. Used in both feature-cell and pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Box spanning the cells from `tl` to `br`, both inclusive.
    pub fn from_cells(tl: Position, br: Position) -> Self {
        Self::new(tl.col as f64, tl.row as f64, br.col as f64 + 1.0, br.row as f64 + 1.0)
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }

    /// Shrink every side by `m` (grow when negative).
    pub fn erode(&self, m: f64) -> Self {
        Self::new(self.x0 + m, self.y0 + m, self.x1 - m, self.y1 - m)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Whether the unit cell at `pos` lies entirely inside the box.
    pub fn contains_cell(&self, pos: Position) -> bool {
        let (x, y) = (pos.col as f64, pos.row as f64);
        x >= self.x0 && x + 1.0 <= self.x1 && y >= self.y0 && y + 1.0 <= self.y1
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        let half = BBox::new(0.5, 0.0, 1.5, 1.0);
        assert!((a.iou(&half) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cells() {
        let b = BBox::from_cells(Position::new(1, 2), Position::new(3, 4));
        assert_eq!(b, BBox::new(2.0, 1.0, 5.0, 4.0));
        assert!(b.contains_cell(Position::new(3, 4)));
        assert!(!b.contains_cell(Position::new(4, 4)));
        assert!(!b.erode(1.0).contains_cell(Position::new(1, 3)));
        assert!(b.erode(1.0).contains_cell(Position::new(2, 3)));
    }
}
