//! Back-and-forth camera tracks over the scene.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::Rect;
use super::pose::Pose;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPattern {
    Static,
    PanLeftRight,
    PanRightLeft,
    PanUpDown,
    PanDownUp,
    OrbitSegment,
    HoldThenReturn,
    DiagonalBackForth,
}

/// Patterns cycled by track id (`Static` is only built by hand).
pub const MOVING_PATTERNS: [CameraPattern; 7] = [
    CameraPattern::PanLeftRight,
    CameraPattern::PanRightLeft,
    CameraPattern::PanUpDown,
    CameraPattern::PanDownUp,
    CameraPattern::OrbitSegment,
    CameraPattern::HoldThenReturn,
    CameraPattern::DiagonalBackForth,
];

pub const AMPLITUDES: [f64; 4] = [16.0, 24.0, 32.0, 40.0];

impl CameraPattern {
    pub fn describe(self) -> &'static str {
        match self {
            CameraPattern::Static => "holds still",
            CameraPattern::PanLeftRight => "pans left and back",
            CameraPattern::PanRightLeft => "pans right and back",
            CameraPattern::PanUpDown => "pans up and back",
            CameraPattern::PanDownUp => "pans down and back",
            CameraPattern::OrbitSegment => "arcs away and back",
            CameraPattern::HoldThenReturn => "holds, swings down and returns",
            CameraPattern::DiagonalBackForth => "moves diagonally and back",
        }
    }

    /// Offsets from the start position as `(frame, dx, dy)` keyframes for a
    /// clip of `frames` frames and travel `amp`.
    fn keyframes(self, frames: usize, amp: f64) -> Vec<(f64, f64, f64)> {
        let f = frames as f64;
        let (t1, t2, t3, t4) = (0.15 * f, 0.45 * f, 0.55 * f, 0.85 * f);
        let out_back = |dx: f64, dy: f64| vec![(0.0, 0.0, 0.0), (t1, 0.0, 0.0), (t2, dx, dy), (t3, dx, dy), (t4, 0.0, 0.0)];
        match self {
            CameraPattern::Static => vec![(0.0, 0.0, 0.0)],
            CameraPattern::PanLeftRight => out_back(-amp, 0.0),
            CameraPattern::PanRightLeft => out_back(amp, 0.0),
            CameraPattern::PanUpDown => out_back(0.0, -amp),
            CameraPattern::PanDownUp => out_back(0.0, amp),
            CameraPattern::DiagonalBackForth => out_back(0.75 * amp, 0.75 * amp),
            CameraPattern::HoldThenReturn => vec![
                (0.0, 0.0, 0.0),
                (0.35 * f, 0.0, 0.0),
                (0.5 * f, 0.0, amp),
                (0.65 * f, 0.0, amp),
                (0.8 * f, 0.0, 0.0),
            ],
            CameraPattern::OrbitSegment => {
                const ARC_POINTS: usize = 6;
                let arc = |s: f64| {
                    let th = PI * s;
                    (amp / 2.0 * (th.cos() - 1.0), -amp / 4.0 * th.sin())
                };
                let mut k = vec![(0.0, 0.0, 0.0)];
                for i in 0..=ARC_POINTS {
                    let s = i as f64 / ARC_POINTS as f64;
                    let (dx, dy) = arc(s);
                    k.push((t1 + s * (t2 - t1), dx, dy));
                }
                for i in 0..=ARC_POINTS {
                    let s = i as f64 / ARC_POINTS as f64;
                    let (dx, dy) = arc(1.0 - s);
                    k.push((t3 + s * (t4 - t3), dx, dy));
                }
                k
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraTrack {
    pub track_id: usize,
    pub pattern: CameraPattern,
    /// Window extent `(W, H)`.
    pub window: (usize, usize),
    /// Window top-left at frame 0.
    pub start: (i64, i64),
    /// `(frame, dx, dy)` offsets from `start`, linearly interpolated and
    /// held after the last keyframe.
    pub keyframes: Vec<(f64, f64, f64)>,
}

impl CameraTrack {
    pub fn fixed(window: (usize, usize), origin: (i64, i64)) -> Self {
        Self {
            track_id: 0,
            pattern: CameraPattern::Static,
            window,
            start: origin,
            keyframes: vec![(0.0, 0.0, 0.0)],
        }
    }

    /// Track `track_id` with a random start such that the window stays in a
    /// `scene` of extent `(W, H)` for every frame.
    pub fn from_id(
        track_id: usize,
        window: (usize, usize),
        scene: (usize, usize),
        frames: usize,
        r: &mut rng::Rng,
    ) -> Self {
        let pattern = MOVING_PATTERNS[track_id % MOVING_PATTERNS.len()];
        let amp = AMPLITUDES[(track_id / MOVING_PATTERNS.len()) % AMPLITUDES.len()];
        let mut keyframes = pattern.keyframes(frames, amp);
        let avail = ((scene.0 - window.0) as f64, (scene.1 - window.1) as f64);
        let range = |sel: fn(&(f64, f64, f64)) -> f64| {
            let lo = keyframes.iter().map(sel).fold(0.0, f64::min);
            let hi = keyframes.iter().map(sel).fold(0.0, f64::max);
            hi - lo
        };
        let (rx, ry) = (range(|k| k.1), range(|k| k.2));
        let mut scale: f64 = 1.0;
        if rx > avail.0 {
            scale = scale.min(avail.0 / rx);
        }
        if ry > avail.1 {
            scale = scale.min(avail.1 / ry);
        }
        for k in &mut keyframes {
            k.1 = (k.1 * scale).floor();
            k.2 = (k.2 * scale).floor();
        }
        let min_dx = keyframes.iter().map(|k| k.1).fold(0.0, f64::min) as i64;
        let max_dx = keyframes.iter().map(|k| k.1).fold(0.0, f64::max) as i64;
        let min_dy = keyframes.iter().map(|k| k.2).fold(0.0, f64::min) as i64;
        let max_dy = keyframes.iter().map(|k| k.2).fold(0.0, f64::max) as i64;
        let x = r.random_range(-min_dx..=(scene.0 - window.0) as i64 - max_dx);
        let y = r.random_range(-min_dy..=(scene.1 - window.1) as i64 - max_dy);
        Self {
            track_id,
            pattern,
            window,
            start: (x, y),
            keyframes,
        }
    }

    fn offset_at(&self, frame: usize) -> (f64, f64) {
        let t = frame as f64;
        let k = &self.keyframes;
        if t <= k[0].0 {
            return (k[0].1, k[0].2);
        }
        for w in k.windows(2) {
            let (a, b) = (w[0], w[1]);
            if t <= b.0 {
                let f = if b.0 > a.0 { (t - a.0) / (b.0 - a.0) } else { 1.0 };
                return (a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2));
            }
        }
        let last = k[k.len() - 1];
        (last.1, last.2)
    }

    /// Window top-left at `frame`.
    pub fn origin(&self, frame: usize) -> (i64, i64) {
        let (dx, dy) = self.offset_at(frame);
        (self.start.0 + dx.round() as i64, self.start.1 + dy.round() as i64)
    }

    pub fn window_rect(&self, frame: usize) -> Rect {
        let (x, y) = self.origin(frame);
        Rect::new(x, y, self.window.0 as i64, self.window.1 as i64)
    }

    /// Pose with the window center as translation.
    pub fn pose(&self, frame: usize) -> Pose {
        let (x, y) = self.origin(frame);
        Pose::identity_at(x as f64 + self.window.0 as f64 / 2.0, y as f64 + self.window.1 as f64 / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_track_stays_inside_scene() {
        for id in 0..28 {
            for seed in 0..20 {
                let mut r = rng::seeded(seed);
                let t = CameraTrack::from_id(id, (16, 16), (64, 64), 48, &mut r);
                for f in 0..60 {
                    let w = t.window_rect(f);
                    assert!(w.x >= 0 && w.y >= 0 && w.x + w.w <= 64 && w.y + w.h <= 64, "track {id} frame {f}");
                }
            }
        }
    }

    #[test]
    fn moving_tracks_return_to_start() {
        let mut r = rng::seeded(1);
        for id in 0..28 {
            let t = CameraTrack::from_id(id, (16, 16), (64, 64), 48, &mut r);
            assert_eq!(t.origin(47), t.origin(0), "track {id}");
            assert!((0..48).any(|f| t.origin(f) != t.origin(0)));
        }
    }

    #[test]
    fn small_scene_scales_travel() {
        let mut r = rng::seeded(2);
        let t = CameraTrack::from_id(27, (16, 16), (24, 24), 48, &mut r);
        for f in 0..48 {
            let w = t.window_rect(f);
            assert!(w.x >= 0 && w.x + 16 <= 24 && w.y >= 0 && w.y + 16 <= 24);
        }
    }
}
