use serde::{Deserialize, Serialize};

/// Axis-aligned box in absolute pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn translate_x(&self, dx: f64) -> Self {
        BBox { x: self.x + dx, ..*self }
    }

    /// Intersection with `[0, width] × [0, height]`; `None` when nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then_some(BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Mirror across the vertical axis of a frame `width` pixels wide.
    pub fn mirror_x(&self, width: f64) -> Self {
        BBox { x: width - self.x - self.w, ..*self }
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) { (values[mid - 1] + values[mid]) / 2.0 } else { values[mid] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(20.0, 0.0, 10.0, 10.0)), 0.0);
        // half overlap: 50 / 150
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clamp_and_mirror() {
        let b = BBox::new(-10.0, 5.0, 30.0, 10.0);
        assert_eq!(b.clamp_to(100.0, 100.0), Some(BBox::new(0.0, 5.0, 20.0, 10.0)));
        assert_eq!(BBox::new(150.0, 0.0, 10.0, 10.0).clamp_to(100.0, 100.0), None);
        assert_eq!(BBox::new(10.0, 0.0, 20.0, 5.0).mirror_x(100.0), BBox::new(70.0, 0.0, 20.0, 5.0));
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
