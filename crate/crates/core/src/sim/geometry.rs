/// Integer axis-aligned rectangle in scene pixels, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersection_area(&self, other: &Rect) -> i64 {
        self.intersect(other).map_or(0, |r| r.area())
    }

    pub fn contains(&self, px: i64, py: i64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    /// Same rectangle expressed relative to `origin`.
    pub fn relative_to(&self, origin: (i64, i64)) -> Rect {
        Rect::new(self.x - origin.0, self.y - origin.1, self.w, self.h)
    }
}

/// Real-valued rectangle given by center and extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectF {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl RectF {
    pub fn intersection_area(&self, other: &RectF) -> f64 {
        let ox = (self.cx + self.w / 2.0).min(other.cx + other.w / 2.0)
            - (self.cx - self.w / 2.0).max(other.cx - other.w / 2.0);
        let oy = (self.cy + self.h / 2.0).min(other.cy + other.h / 2.0)
            - (self.cy - self.h / 2.0).max(other.cy - other.h / 2.0);
        ox.max(0.0) * oy.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersection_cases() {
        let a = Rect::new(0, 0, 4, 4);
        assert_eq!(a.intersection_area(&Rect::new(2, 2, 4, 4)), 4);
        assert_eq!(a.intersection_area(&Rect::new(4, 0, 4, 4)), 0);
        assert_eq!(a.intersection_area(&Rect::new(1, 1, 1, 1)), 1);
        let f = RectF { cx: 0.0, cy: 0.0, w: 2.0, h: 2.0 };
        assert_eq!(f.intersection_area(&RectF { cx: 1.0, cy: 0.0, w: 2.0, h: 2.0 }), 2.0);
        assert_eq!(f.intersection_area(&RectF { cx: 5.0, cy: 0.0, w: 2.0, h: 2.0 }), 0.0);
    }
}
