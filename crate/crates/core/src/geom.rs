//! Building footprints and their pixel bounding boxes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned pixel rectangle, half-open: covers `x_min..x_max` by
/// `y_min..y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_max > x_min && y_max > y_min {
            Ok(Self { x_min, y_min, x_max, y_max })
        } else {
            Err(Error::InvalidBBox)
        }
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        (self.width() * self.height()) as u64
    }

    /// Grows the box by `pad` pixels on every side and clips it to a
    /// `width` x `height` raster.
    pub fn expand_clamped(&self, pad: u32, width: usize, height: usize) -> Result<Self> {
        let pad = pad as i64;
        Self::new(
            (self.x_min - pad).clamp(0, width as i64),
            (self.y_min - pad).clamp(0, height as i64),
            (self.x_max + pad).clamp(0, width as i64),
            (self.y_max + pad).clamp(0, height as i64),
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min as f64 && p.x <= self.x_max as f64 && p.y >= self.y_min as f64 && p.y <= self.y_max as f64
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }
}

/// Tight integer bounds of a polygon: minima floored, maxima ceiled.
pub fn polygon_bbox(polygon: &[Point]) -> Result<BBox> {
    if polygon.len() < 3 {
        return Err(Error::InvalidPolygon(format!("{} vertices, need at least 3", polygon.len())));
    }
    if polygon.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidPolygon(String::from("non-finite vertex")));
    }
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in polygon {
        lo = (lo.0.min(p.x), lo.1.min(p.y));
        hi = (hi.0.max(p.x), hi.1.max(p.y));
    }
    let bbox = BBox {
        x_min: libm::floor(lo.0) as i64,
        y_min: libm::floor(lo.1) as i64,
        x_max: libm::ceil(hi.0) as i64,
        y_max: libm::ceil(hi.1) as i64,
    };
    if hi.0 <= lo.0 || hi.1 <= lo.1 {
        return Err(Error::InvalidPolygon(String::from("zero-area bounds")));
    }
    Ok(bbox)
}

/// Closed rectangle ring as four corner vertices.
pub fn rect_polygon(b: &BBox) -> Vec<Point> {
    let (x0, y0, x1, y1) = (b.x_min as f64, b.y_min as f64, b.x_max as f64, b.y_max as f64);
    alloc::vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1),]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().copied().map(Point::from).collect()
    }

    #[test]
    fn square() {
        let b = polygon_bbox(&pts(&[(0., 0.), (10., 0.), (10., 10.), (0., 10.)])).unwrap();
        assert_eq!(b, BBox::new(0, 0, 10, 10).unwrap());
        assert_eq!(b.area(), 100);
    }

    #[test]
    fn triangle() {
        let b = polygon_bbox(&pts(&[(2., 3.), (8., 1.), (5., 9.)])).unwrap();
        assert_eq!(b, BBox::new(2, 1, 8, 9).unwrap());
        assert_eq!(b.area(), 48);
    }

    #[test]
    fn fractional_max_rounds_up() {
        let b = polygon_bbox(&pts(&[(0.5, 0.2), (9.1, 0.2), (9.1, 4.7)])).unwrap();
        assert_eq!(b, BBox::new(0, 0, 10, 5).unwrap());
    }

    #[test]
    fn degenerate() {
        assert!(matches!(polygon_bbox(&pts(&[(0., 0.), (5., 0.), (9., 0.)])), Err(Error::InvalidPolygon(_))));
        assert!(matches!(polygon_bbox(&pts(&[(0., 0.), (5., 5.)])), Err(Error::InvalidPolygon(_))));
    }

    #[test]
    fn clamp_to_raster() {
        let b = BBox::new(90, 10, 105, 20).unwrap();
        let c = b.expand_clamped(0, 100, 100).unwrap();
        assert_eq!(c, BBox::new(90, 10, 100, 20).unwrap());
        let outside = BBox::new(120, 10, 130, 20).unwrap();
        assert_eq!(outside.expand_clamped(0, 100, 100), Err(Error::InvalidBBox));
    }

    proptest! {
        #[test]
        fn bbox_contains_every_vertex(
            v in proptest::collection::vec((-50.0f64..1100.0, -50.0f64..1100.0), 3..12)
        ) {
            let poly = pts(&v);
            if let Ok(b) = polygon_bbox(&poly) {
                for p in &poly {
                    prop_assert!(b.contains(*p));
                }
            }
        }
    }
}
