//! Procedural 2D worlds: static scenes, moving subjects and back-and-forth
//! camera tracks rendered to clips with exit–entry annotations.

mod camera;
mod geometry;
mod pose;
mod scene;
mod subject;

pub use camera::{CameraPattern, CameraTrack, AMPLITUDES, MOVING_PATTERNS};
pub use geometry::{Rect, RectF};
pub use pose::{CameraPoseSeq, Pose, POSE_DIM};
pub use scene::{Scene, SceneStyle};
pub use subject::{Shape, Sprite, Subject, Trajectory, COLORS, PATHS, SHAPES};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scene_width: usize,
    pub scene_height: usize,
    pub window_width: usize,
    pub window_height: usize,
    pub num_scenes: usize,
    pub num_subjects: usize,
    pub num_camera_tracks: usize,
    pub min_subjects: usize,
    pub max_subjects: usize,
    pub min_subject_size: usize,
    pub max_subject_size: usize,
    pub num_frames: usize,
    /// Minimum fraction of the subject box inside the window to count as visible.
    pub visibility_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene_width: 64,
            scene_height: 64,
            window_width: 16,
            window_height: 16,
            num_scenes: 17,
            num_subjects: 49,
            num_camera_tracks: 28,
            min_subjects: 1,
            max_subjects: 3,
            min_subject_size: 3,
            max_subject_size: 5,
            num_frames: 48,
            visibility_threshold: 0.25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if [self.scene_width, self.scene_height, self.window_width, self.window_height]
            .contains(&0)
        {
            return cfg("scene and window extents must be positive");
        }
        if self.window_width > self.scene_width || self.window_height > self.scene_height {
            return cfg("camera window larger than scene");
        }
        if self.num_scenes == 0 || self.num_subjects == 0 || self.num_camera_tracks == 0 {
            return cfg("scene, subject and camera track counts must be positive");
        }
        if self.min_subjects == 0 {
            return cfg("scenarios need at least one subject");
        }
        if self.max_subjects < self.min_subjects || self.max_subjects > self.num_subjects {
            return cfg("invalid subjects-per-scenario range");
        }
        if self.min_subject_size == 0 || self.max_subject_size < self.min_subject_size {
            return cfg("invalid subject size range");
        }
        if self.max_subject_size > self.scene_width.min(self.scene_height) {
            return cfg("subject larger than scene");
        }
        if self.num_frames < 2 {
            return cfg("clips need at least two frames");
        }
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return cfg("visibility threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn window(&self) -> (usize, usize) {
        (self.window_width, self.window_height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub scene: Scene,
    pub subjects: Vec<Subject>,
    pub camera: CameraTrack,
    pub visibility_threshold: f64,
}

/// Samples scene, subject set, trajectories and camera track from `seed`.
pub fn generate_scenario(seed: u64, config: &SimConfig) -> Result<Scenario> {
    config.validate()?;
    let mut r = rng::seeded(seed);
    let (sw, sh) = (config.scene_width, config.scene_height);
    let scene_id = r.random_range(0..config.num_scenes);
    let track_id = r.random_range(0..config.num_camera_tracks);
    let camera = CameraTrack::from_id(track_id, config.window(), (sw, sh), config.num_frames, &mut r);
    let count = r.random_range(config.min_subjects..=config.max_subjects);
    let ids = rand::seq::index::sample(&mut r, config.num_subjects, count).into_vec();
    let start = camera.window_rect(0);
    let (wcx, wcy) = (start.x as f64 + start.w as f64 / 2.0, start.y as f64 + start.h as f64 / 2.0);
    let mut subjects = Vec::with_capacity(count);
    for id in ids {
        let sprite = Sprite::from_id(id, config.min_subject_size, config.max_subject_size);
        let s = sprite.size as f64;
        let path_id = r.random_range(0..PATHS.len());
        let (_, closed, unit) = PATHS[path_id];
        let room_x = sw as f64 - s;
        let room_y = sh as f64 - s;
        let ex = r.random_range(3.0..12.0f64).min(room_x);
        let ey = r.random_range(3.0..12.0f64).min(room_y);
        let cx = wcx + r.random_range(-3.0..3.0);
        let cy = wcy + r.random_range(-3.0..3.0);
        let rx = (cx - ex / 2.0 - s / 2.0).clamp(0.0, room_x - ex);
        let ry = (cy - ey / 2.0 - s / 2.0).clamp(0.0, room_y - ey);
        let mut trajectory = Trajectory {
            path_id,
            waypoints: unit.iter().map(|&(u, v)| (rx + u * ex, ry + v * ey)).collect(),
            closed,
            speed: r.random_range(0.15..0.5),
            offset: 0.0,
        };
        trajectory.offset = r.random_range(0.0..1.0) * trajectory.length();
        subjects.push(Subject { sprite, trajectory });
    }
    Ok(Scenario {
        seed,
        scene: Scene::generate(scene_id, sw, sh),
        subjects,
        camera,
        visibility_threshold: config.visibility_threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrack {
    pub subject_id: usize,
    /// Sprite box in scene coordinates, one per frame.
    pub boxes: Vec<Rect>,
    pub visible: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub subject_id: usize,
    /// First invisible frame.
    pub exit_frame: usize,
    /// First visible frame after the gap.
    pub entry_frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedClip {
    pub seed: u64,
    pub scene_id: usize,
    pub track_id: usize,
    /// `3×F×H×W` in `[0, 1]`.
    pub frames: Tensor,
    pub poses: CameraPoseSeq,
    /// Camera window per frame, scene coordinates.
    pub windows: Vec<Rect>,
    pub subject_tracks: Vec<SubjectTrack>,
    pub events: Vec<Event>,
    pub caption: String,
}

impl RenderedClip {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn window_extent(&self) -> (usize, usize) {
        (self.frames.shape()[3], self.frames.shape()[2])
    }
}

/// Visible iff at least `threshold` of the box area lies in the window.
pub fn is_visible(b: &Rect, window: &Rect, threshold: f64) -> bool {
    b.intersection_area(window) as f64 >= threshold * b.area() as f64
}

fn caption(s: &Scenario) -> String {
    let parts: Vec<String> = s
        .subjects
        .iter()
        .map(|sub| {
            format!(
                "a {} {} moving along a {} path",
                sub.sprite.color_name,
                sub.sprite.shape.name(),
                PATHS[sub.trajectory.path_id].0
            )
        })
        .collect();
    format!("{} while the camera {}", parts.join(" and "), s.camera.pattern.describe())
}

/// Rasterizes `num_frames` frames: background then subjects in list order.
pub fn render(scenario: &Scenario, num_frames: usize) -> Result<RenderedClip> {
    if num_frames < 2 {
        return Err(Error::Usage(format!("render needs at least 2 frames, got {num_frames}")));
    }
    let bg = &scenario.scene.background;
    let (sw, sh) = (scenario.scene.width(), scenario.scene.height());
    let (ww, wh) = scenario.camera.window;
    let mut data = vec![0.0; 3 * num_frames * wh * ww];
    let idx = |c: usize, f: usize, y: usize, x: usize| ((c * num_frames + f) * wh + y) * ww + x;
    let mut windows = Vec::with_capacity(num_frames);
    let mut poses = Vec::with_capacity(num_frames);
    let mut tracks: Vec<SubjectTrack> = scenario
        .subjects
        .iter()
        .map(|s| SubjectTrack {
            subject_id: s.sprite.subject_id,
            boxes: Vec::with_capacity(num_frames),
            visible: Vec::with_capacity(num_frames),
        })
        .collect();
    for f in 0..num_frames {
        let win = scenario.camera.window_rect(f);
        if win.x < 0 || win.y < 0 || win.x + win.w > sw as i64 || win.y + win.h > sh as i64 {
            return Err(Error::Config(format!("camera window {win:?} leaves the scene at frame {f}")));
        }
        for c in 0..3 {
            for y in 0..wh {
                let src = (c * sh + win.y as usize + y) * sw + win.x as usize;
                for x in 0..ww {
                    data[idx(c, f, y, x)] = bg.data()[src + x];
                }
            }
        }
        for (sub, track) in scenario.subjects.iter().zip(&mut tracks) {
            let (bx, by) = sub.trajectory.position(f);
            let size = sub.sprite.size as i64;
            let b = Rect::new(bx, by, size, size);
            let color = sub.sprite.color_at(f);
            for v in 0..sub.sprite.size {
                for u in 0..sub.sprite.size {
                    let (px, py) = (bx + u as i64, by + v as i64);
                    if sub.sprite.covers(u, v) && win.contains(px, py) {
                        let (x, y) = ((px - win.x) as usize, (py - win.y) as usize);
                        for (c, &val) in color.iter().enumerate() {
                            data[idx(c, f, y, x)] = val;
                        }
                    }
                }
            }
            track.visible.push(is_visible(&b, &win, scenario.visibility_threshold));
            track.boxes.push(b);
        }
        poses.push(scenario.camera.pose(f));
        windows.push(win);
    }
    let events = events_from_tracks(&tracks);
    Ok(RenderedClip {
        seed: scenario.seed,
        scene_id: scenario.scene.scene_id,
        track_id: scenario.camera.track_id,
        frames: Tensor::new(vec![3, num_frames, wh, ww], data)?,
        poses: CameraPoseSeq(poses),
        windows,
        subject_tracks: tracks,
        events,
        caption: caption(scenario),
    })
}

/// Maximal invisible runs with a visible frame on both sides, as
/// `(first invisible, next visible)`.
pub fn visibility_gaps(visible: &[bool]) -> Vec<(usize, usize)> {
    let mut gaps = Vec::new();
    let mut seen_visible = false;
    let mut gap_start = None;
    for (f, &v) in visible.iter().enumerate() {
        match (v, gap_start) {
            (true, Some(s)) => {
                gaps.push((s, f));
                gap_start = None;
            }
            (false, None) if seen_visible => gap_start = Some(f),
            _ => {}
        }
        seen_visible |= v;
    }
    gaps
}

fn events_from_tracks(tracks: &[SubjectTrack]) -> Vec<Event> {
    tracks
        .iter()
        .flat_map(|t| {
            visibility_gaps(&t.visible).into_iter().map(|(exit_frame, entry_frame)| Event {
                subject_id: t.subject_id,
                exit_frame,
                entry_frame,
            })
        })
        .collect()
}

/// Exit–entry events from the clip's visibility flags.
pub fn detect_exit_entry(clip: &RenderedClip) -> Vec<Event> {
    events_from_tracks(&clip.subject_tracks)
}

/// Order-preserving subset of clips with at least one event.
pub fn filter_dataset(clips: Vec<RenderedClip>) -> Vec<RenderedClip> {
    clips.into_iter().filter(|c| !c.events.is_empty()).collect()
}

/// Contiguous frame range of a clip with its poses.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPart {
    pub frames: Tensor,
    pub poses: CameraPoseSeq,
}

/// Context `[0, n_ctx)` and target `[n_ctx, F)`.
pub fn split_clip(clip: &RenderedClip, n_ctx: usize) -> Result<(ClipPart, ClipPart)> {
    let f = clip.num_frames();
    if n_ctx == 0 || n_ctx >= f {
        return Err(Error::Usage(format!("context length {n_ctx} outside 1..{f}")));
    }
    let part = |start: usize, len: usize| -> Result<ClipPart> {
        Ok(ClipPart {
            frames: clip.frames.narrow(1, start, len)?,
            poses: CameraPoseSeq(clip.poses.0[start..start + len].to_vec()),
        })
    };
    Ok((part(0, n_ctx)?, part(n_ctx, f - n_ctx)?))
}

pub fn join_parts(ctx: &ClipPart, tgt: &ClipPart) -> Result<ClipPart> {
    let mut poses = ctx.poses.0.clone();
    poses.extend_from_slice(&tgt.poses.0);
    Ok(ClipPart {
        frames: Tensor::concat(&[&ctx.frames, &tgt.frames], 1)?,
        poses: CameraPoseSeq(poses),
    })
}

/// Context length for a clip: the largest multiple of `align` whose target
/// still contains an entry frame. Falls back to the last entry frame when
/// no aligned split works, and to half the clip for clips without events.
pub fn default_split(clip: &RenderedClip, align: usize) -> usize {
    let f = clip.num_frames();
    let Some(last_entry) = clip.events.iter().map(|e| e.entry_frame).max() else {
        return (f / 2).max(1);
    };
    let aligned = last_entry / align * align;
    if aligned >= 1 {
        aligned
    } else {
        last_entry.max(1)
    }
}

/// A prefix `[0, end)` of a clip ending in `target_len` target frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub n_ctx: usize,
    pub end: usize,
}

/// Picks the crop with the longest context such that an entry frame lies in
/// the target and both `n_ctx` and `end` are multiples of `align`.
pub fn event_crop(clip: &RenderedClip, target_len: usize, min_ctx: usize, align: usize) -> Option<Crop> {
    let f = clip.num_frames();
    clip.events
        .iter()
        .filter_map(|e| {
            let mut start = e.entry_frame / align * align;
            let mut end = start + target_len;
            if end > f {
                end = f / align * align;
                start = end.checked_sub(target_len)?;
            }
            (start <= e.entry_frame && e.entry_frame < end && start >= min_ctx && start % align == 0)
                .then_some(Crop { n_ctx: start, end })
        })
        .max_by_key(|c| c.n_ctx)
}

impl RenderedClip {
    /// Frames and poses `[0, end)` with annotations cut to match.
    pub fn truncate(&self, end: usize) -> Result<RenderedClip> {
        if end < 2 || end > self.num_frames() {
            return Err(Error::Usage(format!("cannot truncate {} frames to {end}", self.num_frames())));
        }
        let tracks: Vec<SubjectTrack> = self
            .subject_tracks
            .iter()
            .map(|t| SubjectTrack {
                subject_id: t.subject_id,
                boxes: t.boxes[..end].to_vec(),
                visible: t.visible[..end].to_vec(),
            })
            .collect();
        Ok(RenderedClip {
            seed: self.seed,
            scene_id: self.scene_id,
            track_id: self.track_id,
            frames: self.frames.narrow(1, 0, end)?,
            poses: CameraPoseSeq(self.poses.0[..end].to_vec()),
            windows: self.windows[..end].to_vec(),
            events: events_from_tracks(&tracks),
            subject_tracks: tracks,
            caption: self.caption.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        let v = |s: &str| s.chars().map(|c| c == 'V').collect::<Vec<_>>();
        assert_eq!(visibility_gaps(&v("VVIIV")), vec![(2, 4)]);
        assert!(visibility_gaps(&v("IIVV")).is_empty());
        assert!(visibility_gaps(&v("VVVV")).is_empty());
        assert!(visibility_gaps(&v("VVII")).is_empty());
        assert_eq!(visibility_gaps(&v("VIVIIV")), vec![(1, 2), (3, 5)]);
    }

    #[test]
    fn zero_subjects_is_config_error() {
        let cfg = SimConfig {
            min_subjects: 0,
            ..SimConfig::default()
        };
        assert!(matches!(generate_scenario(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_subject_is_config_error() {
        let cfg = SimConfig {
            min_subject_size: 70,
            max_subject_size: 70,
            ..SimConfig::default()
        };
        assert!(matches!(generate_scenario(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn render_rejects_single_frame() {
        let s = generate_scenario(3, &SimConfig::default()).unwrap();
        assert!(matches!(render(&s, 1), Err(Error::Usage(_))));
    }
}
