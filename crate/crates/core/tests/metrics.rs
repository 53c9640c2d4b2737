use hydra_core::metrics::*;
use hydra_core::rng;
use hydra_core::sim::{generate_scenario, render, Rect, SimConfig};
use hydra_core::Tensor;

fn noisy(v: &Tensor, std: f64, seed: u64) -> Tensor {
    let n = Tensor::randn(v.shape(), std, &mut rng::seeded(seed));
    v.zip_map(&n, |a, b| (a + b).clamp(0.0, 1.0)).unwrap()
}

fn clip(seed: u64) -> hydra_core::sim::RenderedClip {
    let cfg = SimConfig::default();
    render(&generate_scenario(seed, &cfg).unwrap(), 24).unwrap()
}

#[test]
fn psnr_examples() {
    let a = Tensor::zeros(&[3, 2, 8, 8]);
    let b = Tensor::full(&[3, 2, 8, 8], 0.5);
    assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    assert!((psnr(&a, &b).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert_eq!(psnr(&b, &b).unwrap(), f64::INFINITY);
    let c = noisy(&b, 0.1, 1);
    assert_eq!(psnr(&b, &c).unwrap(), psnr(&c, &b).unwrap());
    let m = mse(&b, &c).unwrap();
    assert!((psnr(&b, &c).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-9);
    assert!(matches!(psnr(&a, &Tensor::zeros(&[3, 2, 8, 9])), Err(hydra_core::Error::Dimension { .. })));
}

#[test]
fn ssim_examples() {
    let v = clip(3).frames;
    assert!((ssim(&v, &v).unwrap() - 1.0).abs() < 1e-9);
    for (a, b) in [(0.2, 0.7), (0.0, 0.5), (0.9, 0.1)] {
        let x = Tensor::full(&[3, 2, 16, 16], a);
        let y = Tensor::full(&[3, 2, 16, 16], b);
        let c1 = 0.01f64.powi(2);
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&x, &y).unwrap() - expected).abs() < 1e-9);
    }
    let s1 = ssim(&v, &noisy(&v, 0.05, 2)).unwrap();
    let s2 = ssim(&v, &noisy(&v, 0.2, 2)).unwrap();
    assert!(1.0 > s1 && s1 > s2, "{s1} {s2}");
    assert!(matches!(ssim(&v, &Tensor::zeros(&[3, 1, 16, 16])), Err(hydra_core::Error::Dimension { .. })));
}

#[test]
fn ssim_fits_frames_smaller_than_the_window() {
    let v = Tensor::randn(&[1, 1, 6, 8], 0.2, &mut rng::seeded(4)).map(|x| x.abs().min(1.0));
    assert!((ssim(&v, &v).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn dsc_of_video_with_itself_is_one() {
    let c = clip(5);
    let boxes = clip_boxes(&c, 0, c.num_frames());
    for ex in [&PatchExtractor as &dyn FeatureExtractor, &ProjectionExtractor::new(3 * 16 * 16, 32, 9)] {
        if let Some(d) = dsc_gt(&c.frames, &c.frames, &boxes, ex).unwrap() {
            assert!((d - 1.0).abs() < 1e-12);
        }
        if let Some(d) = dsc_ctx(&c.frames, &boxes, &c.frames, &boxes, ex) {
            assert!((d - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn disjoint_indicator_crops_are_orthogonal() {
    // Left half lit in the prediction, right half lit in the reference; both
    // have mean 0.5 over the crop so centered features are ±a and ∓a on
    // disjoint halves... unless we make supports disjoint after centering.
    // Use a checkerboard-free construction: quadrant indicators.
    let mut pred = Tensor::zeros(&[1, 1, 4, 4]);
    let mut gt = Tensor::zeros(&[1, 1, 4, 4]);
    for y in 0..4 {
        for x in 0..4 {
            // pred lights the top-left quadrant, gt the top-right
            if y < 2 && x < 2 {
                pred.data_mut()[y * 4 + x] = 1.0;
            }
            if y < 2 && x >= 2 {
                gt.data_mut()[y * 4 + x] = 1.0;
            }
        }
    }
    let rect = Rect::new(0, 0, 4, 4);
    let fp = PatchExtractor.extract(&crop_resize(&pred, 0, &rect, CROP_SIZE).unwrap());
    let fg = PatchExtractor.extract(&crop_resize(&gt, 0, &rect, CROP_SIZE).unwrap());
    // oracle: centered quadrant indicators q - 1/4 have dot 4·(3/4)(−1/4)·2 + 8·(1/16)... compute directly
    let centered = |t: &Tensor| {
        let m = t.sum() / t.numel() as f64;
        t.data().iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (a, b) = (centered(&pred), centered(&gt));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let expected = dot / (na * nb);
    assert!((cosine(&fp, &fg) - expected).abs() < 1e-12);

    // Orthogonal after centering: opposite-half patterns inside a zero-mean design.
    let pattern = |sign: [f64; 4]| {
        let mut t = Tensor::zeros(&[1, 1, 4, 4]);
        for y in 0..4 {
            for x in 0..4 {
                t.data_mut()[y * 4 + x] = 0.5 + 0.25 * sign[(y / 2) * 2 + x / 2];
            }
        }
        t
    };
    let p = pattern([1.0, -1.0, 1.0, -1.0]);
    let g = pattern([1.0, 1.0, -1.0, -1.0]);
    let (ca, cb) = (centered(&p), centered(&g));
    assert_eq!(ca.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>(), 0.0);
    let boxes = vec![SubjectBoxes { subject_id: 0, boxes: vec![Some(rect)] }];
    let d = dsc_gt(&p, &g, &boxes, &PatchExtractor).unwrap().unwrap();
    assert!(d.abs() < 1e-12, "{d}");
}

#[test]
fn dsc_values_stay_in_bounds() {
    for seed in 0..10 {
        let c = clip(seed);
        let boxes = clip_boxes(&c, 0, c.num_frames());
        let other = noisy(&c.frames, 0.5, seed);
        if let Some(d) = dsc_gt(&other, &c.frames, &boxes, &PatchExtractor).unwrap() {
            assert!((-1.0..=1.0).contains(&d));
        }
    }
}

#[test]
fn never_visible_subject_is_absent() {
    let v = Tensor::zeros(&[3, 2, 8, 8]);
    let boxes = vec![
        SubjectBoxes { subject_id: 1, boxes: vec![None, None] },
        SubjectBoxes { subject_id: 2, boxes: vec![Some(Rect::new(0, 0, 2, 2)), None] },
    ];
    let per = dsc_gt_subjects(&v, &v, &boxes, &PatchExtractor).unwrap();
    assert_eq!(per, vec![None, Some(1.0)]);
    let none = vec![SubjectBoxes { subject_id: 1, boxes: vec![None, None] }];
    assert_eq!(dsc_gt(&v, &v, &none, &PatchExtractor).unwrap(), None);
}

#[test]
fn context_alignment_resamples_shorter_sequence() {
    // prediction visible in 2 frames, context in 4: each prediction feature
    // is compared with the context feature at index i·len/4 for i in 0..4
    let mk = |vals: &[f64]| {
        let mut t = Tensor::zeros(&[1, vals.len(), 2, 2]);
        for (f, &v) in vals.iter().enumerate() {
            t.data_mut()[f * 4] = v;
            t.data_mut()[f * 4 + 3] = -v;
        }
        t
    };
    let pred = mk(&[1.0, -1.0]);
    let ctx = mk(&[1.0, 1.0, -1.0, 1.0]);
    let full = |n: usize| vec![SubjectBoxes { subject_id: 0, boxes: vec![Some(Rect::new(0, 0, 2, 2)); n] }];
    let d = dsc_ctx(&pred, &full(2), &ctx, &full(4), &PatchExtractor).unwrap();
    // pairs: (p0,c0)=1, (p0,c1)=1, (p1,c2)=1, (p1,c3)=−1
    assert!((d - 0.5).abs() < 1e-12, "{d}");
}

#[test]
fn box_crops_repaste_to_original_pixels() {
    for seed in 0..10 {
        let c = clip(seed);
        let (w, h) = c.window_extent();
        let frame_rect = Rect::new(0, 0, w as i64, h as i64);
        for sb in clip_boxes(&c, 0, c.num_frames()) {
            for (f, b) in sb.boxes.iter().enumerate() {
                let Some(b) = b else { continue };
                let r = b.intersect(&frame_rect).unwrap();
                if r.w != r.h {
                    continue;
                }
                let crop = crop_resize(&c.frames, f, b, r.w as usize).unwrap();
                let mut pasted = c.frames.clone();
                for ch in 0..3 {
                    for y in 0..r.h as usize {
                        for x in 0..r.w as usize {
                            let off = pasted.offset(&[ch, f, r.y as usize + y, r.x as usize + x]);
                            pasted.data_mut()[off] = f64::NAN;
                        }
                    }
                }
                for ch in 0..3 {
                    for y in 0..r.h as usize {
                        for x in 0..r.w as usize {
                            let off = pasted.offset(&[ch, f, r.y as usize + y, r.x as usize + x]);
                            pasted.data_mut()[off] = crop.at(&[ch, y, x]);
                        }
                    }
                }
                assert_eq!(pasted, c.frames);
            }
        }
    }
}

#[test]
fn extractors_change_values_not_structure() {
    let c = clip(7);
    let boxes = clip_boxes(&c, 0, c.num_frames());
    let pred = noisy(&c.frames, 0.3, 1);
    let ex1 = PatchExtractor;
    let ex2 = ProjectionExtractor::new(3 * CROP_SIZE * CROP_SIZE, 24, 3);
    let e = ClipEval {
        clip: "a".into(),
        pred: &pred,
        gt: &c.frames,
        target_boxes: &boxes,
        ctx: &c.frames,
        ctx_boxes: &boxes,
    };
    let r1 = Report { extractor: ex1.id().into(), rows: vec![score_clip(&e, &ex1).unwrap()] };
    let r2 = Report { extractor: ex2.id().into(), rows: vec![score_clip(&e, &ex2).unwrap()] };
    let shape = |r: &Report| r.to_text().lines().map(|l| l.split('\t').take(2).collect::<Vec<_>>().join("\t")).skip(1).collect::<Vec<_>>();
    assert_eq!(shape(&r1)[..shape(&r1).len() - 5], shape(&r2)[..shape(&r2).len() - 5]);
    assert_eq!(r1.rows[0].psnr, r2.rows[0].psnr);
    assert_ne!(r1.rows[0].dsc_gt, r2.rows[0].dsc_gt);
    let crop = crop_resize(&c.frames, 0, &Rect::new(2, 2, 5, 5), CROP_SIZE).unwrap();
    assert_eq!(ex1.extract(&crop), ex1.extract(&crop));
    let f = ex1.extract(&crop);
    assert!((f.iter().sum::<f64>()).abs() < 1e-9);
    assert!((f.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn ground_truth_against_itself_scores_perfectly() {
    let mut rows = Vec::new();
    for seed in 0..5 {
        let c = clip(seed);
        let ctx = c.frames.narrow(1, 0, 12).unwrap();
        let tgt = c.frames.narrow(1, 12, 12).unwrap();
        let tb = clip_boxes(&c, 12, 12);
        let cb = clip_boxes(&c, 0, 12);
        let e = ClipEval {
            clip: format!("c{seed}"),
            pred: &tgt,
            gt: &tgt,
            target_boxes: &tb,
            ctx: &ctx,
            ctx_boxes: &cb,
        };
        let s = score_clip(&e, &PatchExtractor).unwrap();
        assert_eq!(s.psnr, f64::INFINITY);
        assert!((s.ssim - 1.0).abs() < 1e-9);
        if let Some(d) = s.dsc_gt {
            assert!((d - 1.0).abs() < 1e-12);
        }
        rows.push(s);
    }
    let report = Report { extractor: "patch".into(), rows };
    let text = report.to_text();
    assert_eq!(text.lines().filter(|l| l.starts_with('c') && l.contains("\tpsnr\t")).count(), 5);
    assert!(text.contains("c0\tpsnr\tinf"));
}

#[test]
fn aggregates_match_recomputed_means() {
    let rows: Vec<ClipScores> = (0..6)
        .map(|i| ClipScores {
            clip: format!("r{i}"),
            psnr: 20.0 + i as f64,
            ssim: 0.5 + 0.05 * i as f64,
            dsc_ctx: (i % 2 == 0).then_some(0.1 * i as f64),
            dsc_gt: None,
        })
        .collect();
    let report = Report { extractor: "patch".into(), rows: rows.clone() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
    assert!((report.summary("psnr").mean - mean(&psnrs)).abs() < 1e-12);
    let var = psnrs.iter().map(|x| (x - mean(&psnrs)).powi(2)).sum::<f64>() / 6.0;
    assert!((report.summary("psnr").std - var.sqrt()).abs() < 1e-12);
    assert_eq!(report.summary("dsc_ctx").count, 3);
    assert!((report.summary("dsc_ctx").mean - 0.2).abs() < 1e-12);
    assert_eq!(report.summary("dsc_gt").count, 0);
    assert_eq!(report.to_text().matches("absent").count(), 9);
}

#[test]
fn bootstrap_spread_shrinks_with_sample_size() {
    let small: Vec<f64> = (0..10).map(|i| (i % 3) as f64).collect();
    let large: Vec<f64> = (0..1000).map(|i| (i % 3) as f64).collect();
    let (a, b) = (bootstrap_std(&small, 500, 1), bootstrap_std(&large, 500, 1));
    assert!(a > b && b > 0.0);
    assert_eq!(bootstrap_std(&small, 500, 1), a);
}
