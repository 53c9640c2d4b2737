//! Subject sprites and their trajectories.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Diamond,
    Plus,
    Disc,
    Triangle,
    Ring,
    Cross,
}

pub const SHAPES: [Shape; 7] = [
    Shape::Square,
    Shape::Diamond,
    Shape::Plus,
    Shape::Disc,
    Shape::Triangle,
    Shape::Ring,
    Shape::Cross,
];

pub const COLORS: [(&str, [f64; 3]); 7] = [
    ("red", [0.92, 0.12, 0.12]),
    ("green", [0.1, 0.82, 0.2]),
    ("blue", [0.12, 0.28, 0.95]),
    ("yellow", [0.96, 0.86, 0.08]),
    ("magenta", [0.88, 0.12, 0.82]),
    ("cyan", [0.08, 0.86, 0.88]),
    ("orange", [1.0, 0.52, 0.04]),
];

/// Brightness of the second animation phase.
const ALT_PHASE_GAIN: f64 = 0.78;

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Diamond => "diamond",
            Shape::Plus => "plus",
            Shape::Disc => "disc",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
            Shape::Cross => "cross",
        }
    }

    pub fn covers(self, u: usize, v: usize, size: usize) -> bool {
        let c = (size as f64 - 1.0) / 2.0;
        let (du, dv) = ((u as f64 - c).abs(), (v as f64 - c).abs());
        match self {
            Shape::Square => true,
            Shape::Diamond => du + dv <= c + 0.5,
            Shape::Plus => du.min(dv) < 0.75,
            Shape::Disc => du * du + dv * dv <= (c + 0.5).powi(2) * 0.85,
            Shape::Triangle => du <= (v as f64 + 0.5) / 2.0,
            Shape::Ring => u == 0 || v == 0 || u + 1 == size || v + 1 == size,
            Shape::Cross => (u as f64 - v as f64).abs() < 0.75 || (u as f64 + v as f64 - 2.0 * c).abs() < 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub subject_id: usize,
    pub color_name: String,
    pub color: [f64; 3],
    pub shape: Shape,
    pub size: usize,
}

impl Sprite {
    /// Library entry `subject_id`: 7 colors × 7 shapes, sizes cycling through
    /// `[min_size, max_size]`.
    pub fn from_id(subject_id: usize, min_size: usize, max_size: usize) -> Sprite {
        let (color_name, color) = COLORS[subject_id % COLORS.len()];
        let span = max_size - min_size + 1;
        Sprite {
            subject_id,
            color_name: color_name.to_string(),
            color,
            shape: SHAPES[(subject_id / COLORS.len()) % SHAPES.len()],
            size: min_size + (subject_id + subject_id / COLORS.len()) % span,
        }
    }

    /// Two-phase animation alternating every frame.
    pub fn color_at(&self, frame: usize) -> [f64; 3] {
        if frame % 2 == 0 {
            self.color
        } else {
            self.color.map(|c| c * ALT_PHASE_GAIN)
        }
    }

    pub fn covers(&self, u: usize, v: usize) -> bool {
        self.shape.covers(u, v, self.size)
    }
}

/// Path shapes in the unit square: (name, closed, waypoints).
pub const PATHS: [(&str, bool, &[(f64, f64)]); 10] = [
    ("horizontal", false, &[(0.0, 0.5), (1.0, 0.5)]),
    ("vertical", false, &[(0.5, 0.0), (0.5, 1.0)]),
    ("diagonal", false, &[(0.0, 0.0), (1.0, 1.0)]),
    ("anti-diagonal", false, &[(1.0, 0.0), (0.0, 1.0)]),
    ("square loop", true, &[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
    ("triangle loop", true, &[(0.5, 0.0), (1.0, 1.0), (0.0, 1.0)]),
    ("zigzag", false, &[(0.0, 0.0), (0.33, 1.0), (0.66, 0.0), (1.0, 1.0)]),
    ("corner", false, &[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]),
    ("u-turn", false, &[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]),
    ("hourglass", true, &[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]),
];

/// Constant-speed motion along a polyline of sprite top-left positions.
/// Open paths ping-pong; closed paths wrap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub path_id: usize,
    pub waypoints: Vec<(f64, f64)>,
    pub closed: bool,
    /// Pixels per frame.
    pub speed: f64,
    /// Arc length travelled before frame 0.
    pub offset: f64,
}

impl Trajectory {
    pub fn stationary(x: f64, y: f64) -> Self {
        Self {
            path_id: 0,
            waypoints: vec![(x, y)],
            closed: false,
            speed: 0.0,
            offset: 0.0,
        }
    }

    fn segments(&self) -> Vec<((f64, f64), (f64, f64))> {
        let w = &self.waypoints;
        let mut segs: Vec<_> = w.windows(2).map(|p| (p[0], p[1])).collect();
        if self.closed && w.len() > 2 {
            segs.push((w[w.len() - 1], w[0]));
        }
        segs
    }

    pub fn length(&self) -> f64 {
        self.segments()
            .iter()
            .map(|(a, b)| (b.0 - a.0).hypot(b.1 - a.1))
            .sum()
    }

    /// Continuous top-left position at `frame`.
    pub fn point(&self, frame: usize) -> (f64, f64) {
        let segs = self.segments();
        let len = self.length();
        if segs.is_empty() || len <= 0.0 {
            return self.waypoints[0];
        }
        let travelled = self.offset + self.speed * frame as f64;
        let mut s = if self.closed {
            travelled.rem_euclid(len)
        } else {
            let p = travelled.rem_euclid(2.0 * len);
            if p > len {
                2.0 * len - p
            } else {
                p
            }
        };
        for (a, b) in &segs {
            let l = (b.0 - a.0).hypot(b.1 - a.1);
            if s <= l && l > 0.0 {
                let f = s / l;
                return (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
            }
            s -= l;
        }
        segs.last().map(|s| s.1).unwrap_or(self.waypoints[0])
    }

    /// Integer top-left placement at `frame`.
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let (x, y) = self.point(frame);
        (x.floor() as i64, y.floor() as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub sprite: Sprite,
    pub trajectory: Trajectory,
}
