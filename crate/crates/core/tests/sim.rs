use std::collections::HashSet;

use hydra_core::rng;
use hydra_core::sim::*;
use proptest::prelude::*;

fn clip(seed: u64) -> RenderedClip {
    let cfg = SimConfig::default();
    render(&generate_scenario(seed, &cfg).unwrap(), cfg.num_frames).unwrap()
}

fn hand_scenario(camera: CameraTrack, subjects: Vec<Subject>) -> Scenario {
    Scenario {
        seed: 0,
        scene: Scene::generate(3, 64, 64),
        subjects,
        camera,
        visibility_threshold: 0.25,
    }
}

fn still_subject(id: usize, x: f64, y: f64) -> Subject {
    Subject {
        sprite: Sprite::from_id(id, 3, 5),
        trajectory: Trajectory::stationary(x, y),
    }
}

/// Overlap of `[a, a+al)` and `[b, b+bl)` along one axis.
fn overlap_1d(a: i64, al: i64, b: i64, bl: i64) -> i64 {
    ((a + al).min(b + bl) - a.max(b)).max(0)
}

fn visible_oracle(b: &Rect, w: &Rect) -> bool {
    let inter = overlap_1d(b.x, b.w, w.x, w.w) * overlap_1d(b.y, b.h, w.y, w.h);
    4 * inter >= b.w * b.h
}

/// Run-length decoding of a visibility string into (first invisible, next visible).
fn runs_oracle(v: &[bool]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(bool, usize, usize)> = Vec::new();
    for (i, &b) in v.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.0 == b => r.2 = i + 1,
            _ => runs.push((b, i, i + 1)),
        }
    }
    runs.windows(3)
        .filter(|w| w[0].0 && !w[1].0 && w[2].0)
        .map(|w| (w[1].1, w[1].2))
        .collect()
}

#[test]
fn generation_is_deterministic() {
    let cfg = SimConfig::default();
    assert_eq!(generate_scenario(17, &cfg).unwrap(), generate_scenario(17, &cfg).unwrap());
    assert_eq!(clip(17), clip(17));
    assert_ne!(clip(17).frames, clip(18).frames);
}

#[test]
fn seed_sweep_covers_every_dimension() {
    let cfg = SimConfig::default();
    let mut scenes = HashSet::new();
    let mut tracks = HashSet::new();
    let mut paths = HashSet::new();
    let mut subjects = HashSet::new();
    let mut counts = HashSet::new();
    for seed in 0..1000 {
        let s = generate_scenario(seed, &cfg).unwrap();
        scenes.insert(s.scene.scene_id);
        tracks.insert(s.camera.track_id);
        counts.insert(s.subjects.len());
        for sub in &s.subjects {
            paths.insert(sub.trajectory.path_id);
            subjects.insert(sub.sprite.subject_id);
        }
        let ids: HashSet<_> = s.subjects.iter().map(|x| x.sprite.subject_id).collect();
        assert_eq!(ids.len(), s.subjects.len(), "seed {seed} repeats a subject");
    }
    assert_eq!(scenes.len(), cfg.num_scenes);
    assert_eq!(tracks.len(), cfg.num_camera_tracks);
    assert_eq!(paths.len(), PATHS.len());
    assert_eq!(subjects.len(), cfg.num_subjects);
    assert_eq!(counts, HashSet::from([1, 2, 3]));
}

#[test]
fn invalid_configs_are_rejected() {
    let zero = SimConfig { min_subjects: 0, max_subjects: 0, ..SimConfig::default() };
    assert!(matches!(generate_scenario(0, &zero), Err(hydra_core::Error::Config(_))));
    let huge = SimConfig { min_subject_size: 80, max_subject_size: 90, ..SimConfig::default() };
    assert!(matches!(generate_scenario(0, &huge), Err(hydra_core::Error::Config(_))));
    let s = generate_scenario(0, &SimConfig::default()).unwrap();
    assert!(matches!(render(&s, 1), Err(hydra_core::Error::Usage(_))));
}

#[test]
fn static_camera_on_centered_subject_has_no_events() {
    let cam = CameraTrack::fixed((16, 16), (20, 20));
    let c = render(&hand_scenario(cam, vec![still_subject(5, 26.0, 26.0)]), 24).unwrap();
    assert!(c.subject_tracks[0].visible.iter().all(|&v| v));
    assert!(c.events.is_empty());
}

#[test]
fn pan_past_static_subject_gives_one_event() {
    let cam = CameraTrack {
        track_id: 0,
        pattern: CameraPattern::PanRightLeft,
        window: (16, 16),
        start: (0, 24),
        keyframes: vec![(0.0, 0.0, 0.0), (10.0, 40.0, 0.0), (20.0, 40.0, 0.0), (30.0, 0.0, 0.0)],
    };
    let sub = still_subject(8, 6.0, 30.0);
    let c = render(&hand_scenario(cam.clone(), vec![sub.clone()]), 36).unwrap();

    let size = sub.sprite.size as i64;
    let b = Rect::new(6, 30, size, size);
    let oracle: Vec<bool> = (0..36).map(|f| visible_oracle(&b, &cam.window_rect(f))).collect();
    assert_eq!(c.subject_tracks[0].visible, oracle);
    let gaps = runs_oracle(&oracle);
    assert_eq!(gaps.len(), 1);
    assert_eq!(c.events.len(), 1);
    assert_eq!((c.events[0].exit_frame, c.events[0].entry_frame), gaps[0]);
}

#[test]
fn background_is_static_after_offset_compensation() {
    for seed in [1, 2, 3] {
        let cfg = SimConfig::default();
        let s = generate_scenario(seed, &cfg).unwrap();
        let c = render(&s, cfg.num_frames).unwrap();
        let (w, h) = c.window_extent();
        for f in 0..c.num_frames() {
            let win = c.windows[f];
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = (win.x + x as i64, win.y + y as i64);
                    if c.subject_tracks.iter().any(|t| t.boxes[f].contains(sx, sy)) {
                        continue;
                    }
                    for ch in 0..3 {
                        assert_eq!(
                            c.frames.at(&[ch, f, y, x]),
                            s.scene.background.at(&[ch, sy as usize, sx as usize])
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn annotated_boxes_reproduce_sprite_pixels() {
    for seed in 0..20 {
        let cfg = SimConfig::default();
        let s = generate_scenario(seed, &cfg).unwrap();
        let c = render(&s, cfg.num_frames).unwrap();
        for f in 0..c.num_frames() {
            let win = c.windows[f];
            for (i, (sub, track)) in s.subjects.iter().zip(&c.subject_tracks).enumerate() {
                let b = track.boxes[f];
                let color = sub.sprite.color_at(f);
                for v in 0..sub.sprite.size {
                    for u in 0..sub.sprite.size {
                        let (px, py) = (b.x + u as i64, b.y + v as i64);
                        let drawn_over = s.subjects[i + 1..]
                            .iter()
                            .zip(&c.subject_tracks[i + 1..])
                            .any(|(o, t)| {
                                let ob = t.boxes[f];
                                ob.contains(px, py) && o.sprite.covers((px - ob.x) as usize, (py - ob.y) as usize)
                            });
                        if !sub.sprite.covers(u, v) || !win.contains(px, py) || drawn_over {
                            continue;
                        }
                        for (ch, &val) in color.iter().enumerate() {
                            let got = c.frames.at(&[ch, f, (py - win.y) as usize, (px - win.x) as usize]);
                            assert_eq!(got, val);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn rendered_clips_respect_bounds_and_ranges() {
    let cfg = SimConfig::default();
    for seed in 0..200 {
        let c = clip(seed);
        assert_eq!(c.poses.len(), c.num_frames());
        assert!(c.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for w in &c.windows {
            assert!(w.x >= 0 && w.y >= 0);
            assert!(w.x + w.w <= cfg.scene_width as i64 && w.y + w.h <= cfg.scene_height as i64);
        }
        for t in &c.subject_tracks {
            for b in &t.boxes {
                assert!(b.x >= 0 && b.y >= 0);
                assert!(b.x + b.w <= cfg.scene_width as i64 && b.y + b.h <= cfg.scene_height as i64);
            }
        }
        assert!(!c.caption.is_empty());
    }
}

#[test]
fn moving_tracks_reverse_direction() {
    let mut r = rng::seeded(0);
    for id in 0..28 {
        let cam = CameraTrack::from_id(id, (16, 16), (64, 64), 48, &mut r);
        let xs: Vec<(i64, i64)> = (0..48).map(|f| cam.origin(f)).collect();
        let reversed = |axis: fn(&(i64, i64)) -> i64| {
            let steps: Vec<i64> = xs.windows(2).map(|w| axis(&w[1]) - axis(&w[0])).filter(|d| *d != 0).collect();
            steps.windows(2).any(|p| p[0].signum() != p[1].signum())
        };
        assert!(reversed(|p| p.0) || reversed(|p| p.1), "track {id} never reverses");
    }
}

#[test]
fn visibility_pattern_examples() {
    let (v, i) = (true, false);
    assert!(visibility_gaps(&[v, v, v]).is_empty());
    assert_eq!(visibility_gaps(&[v, v, i, i, v]), vec![(2, 4)]);
    assert!(visibility_gaps(&[i, i, v, v]).is_empty());
    assert!(visibility_gaps(&[v, i, i]).is_empty());
}

#[test]
fn pose_flattening_roundtrips() {
    let c = clip(4);
    let flat = c.poses.flatten().unwrap();
    assert_eq!(flat.shape(), &[c.num_frames(), POSE_DIM]);
    assert_eq!(CameraPoseSeq::unflatten(&flat).unwrap(), c.poses);
    for (f, p) in c.poses.0.iter().enumerate() {
        assert_eq!(flat.at(&[f, 9]), p.translation[0]);
        assert_eq!(flat.at(&[f, 11]), 0.0);
        for row in &p.rotation {
            let n: f64 = row.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
    let yawed = Pose::with_yaw(3.0, 4.0, 0.7);
    assert_eq!(Pose::unflatten(&yawed.flatten()).unwrap(), yawed);
}

#[test]
fn filtering_keeps_event_clips_in_order() {
    let clips: Vec<RenderedClip> = (0..40).map(clip).collect();
    let with: Vec<_> = clips.iter().filter(|c| !c.events.is_empty()).take(4).cloned().collect();
    assert_eq!(with.len(), 4);
    let still = |k: i64| {
        let cam = CameraTrack::fixed((16, 16), (8 * k, 20));
        render(&hand_scenario(cam, vec![still_subject(k as usize, 8.0 * k as f64 + 6.0, 26.0)]), 12).unwrap()
    };
    let mut batch: Vec<RenderedClip> = (0..6).map(still).collect();
    for (pos, c) in [1, 3, 4, 8].into_iter().zip(&with) {
        batch.insert(pos, c.clone());
    }
    assert_eq!(batch.len(), 10);
    let expected: Vec<u64> = batch.iter().filter(|c| !runs_all(c).is_empty()).map(|c| c.seed).collect();
    let kept = filter_dataset(batch.clone());
    assert_eq!(kept, with);
    assert_eq!(kept.iter().map(|c| c.seed).collect::<Vec<_>>(), expected);
    assert_eq!(filter_dataset(kept.clone()), kept);
    assert!(filter_dataset((0..6).map(still).collect()).is_empty());
}

fn runs_all(c: &RenderedClip) -> Vec<(usize, usize)> {
    c.subject_tracks.iter().flat_map(|t| runs_oracle(&t.visible)).collect()
}

#[test]
fn split_examples() {
    let c = clip(6);
    let f = c.num_frames();
    let (_, tgt) = split_clip(&c, f - 1).unwrap();
    assert_eq!(tgt.frames.shape()[1], 1);
    assert_eq!(tgt.poses.len(), 1);
    for n in [1, 9, f - 1] {
        let (a, b) = split_clip(&c, n).unwrap();
        let joined = join_parts(&a, &b).unwrap();
        assert_eq!(joined.frames, c.frames);
        assert_eq!(joined.poses, c.poses);
        assert_eq!(a.poses.0[..], c.poses.0[..n]);
    }
    assert!(matches!(split_clip(&c, 0), Err(hydra_core::Error::Usage(_))));
    assert!(matches!(split_clip(&c, f), Err(hydra_core::Error::Usage(_))));
}

#[test]
fn default_split_puts_an_entry_in_the_target() {
    let mut checked = 0;
    for seed in 0..300 {
        let c = clip(seed);
        if c.events.is_empty() {
            continue;
        }
        let n = default_split(&c, 4);
        assert!(n >= 1 && n < c.num_frames());
        assert!(c.events.iter().any(|e| e.entry_frame >= n), "seed {seed}");
        checked += 1;
    }
    assert!(checked > 250);
}

#[test]
fn event_crop_contains_an_entry() {
    for seed in 0..100 {
        let c = clip(seed);
        if let Some(crop) = event_crop(&c, 8, 8, 4) {
            assert_eq!(crop.end - crop.n_ctx, 8);
            assert!(crop.n_ctx >= 8 && crop.n_ctx % 4 == 0);
            assert!(c.events.iter().any(|e| (crop.n_ctx..crop.end).contains(&e.entry_frame)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn events_are_sound(seed in any::<u64>()) {
        let c = clip(seed);
        prop_assert_eq!(&detect_exit_entry(&c), &c.events);
        for t in &c.subject_tracks {
            for (f, b) in t.boxes.iter().enumerate() {
                prop_assert_eq!(t.visible[f], visible_oracle(b, &c.windows[f]));
            }
        }
        let mut expected = Vec::new();
        for t in &c.subject_tracks {
            for (exit, entry) in runs_oracle(&t.visible) {
                expected.push((t.subject_id, exit, entry));
            }
        }
        let got: Vec<_> = c.events.iter().map(|e| (e.subject_id, e.exit_frame, e.entry_frame)).collect();
        prop_assert_eq!(got, expected);
        for e in &c.events {
            let t = c.subject_tracks.iter().find(|t| t.subject_id == e.subject_id).unwrap();
            prop_assert!(e.exit_frame >= 1 && e.exit_frame < e.entry_frame);
            prop_assert!(visible_oracle(&t.boxes[e.exit_frame - 1], &c.windows[e.exit_frame - 1]));
            prop_assert!(visible_oracle(&t.boxes[e.entry_frame], &c.windows[e.entry_frame]));
            for f in e.exit_frame..e.entry_frame {
                prop_assert!(!visible_oracle(&t.boxes[f], &c.windows[f]));
            }
        }
    }

    #[test]
    fn subject_position_is_a_function_of_frame(seed in 0u64..500, frame in 0usize..200) {
        let s = generate_scenario(seed, &SimConfig::default()).unwrap();
        for sub in &s.subjects {
            prop_assert_eq!(sub.trajectory.position(frame), sub.trajectory.position(frame));
            let (x, y) = sub.trajectory.position(frame);
            let size = sub.sprite.size as i64;
            prop_assert!(x >= 0 && y >= 0 && x + size <= 64 && y + size <= 64);
        }
    }
}
