use hydra_core::codec::Codec;
use hydra_core::data::{build_examples, DataConfig, Example};
use hydra_core::model::{Conditioning, LatentDims, Model, ModelConfig};
use hydra_core::params::{Bound, ParamStore};
use hydra_core::rng;
use hydra_core::sim::{generate_scenario, render, Crop, Pose, RenderedClip, SimConfig};
use hydra_core::trainer::*;
use hydra_core::{Error, Graph, Result, Tensor, Var};

/// Predicts `(z0 − z_t)/(1 − t)`, which equals `v_t` on the interpolation path.
struct Oracle {
    z0: Tensor,
    params: ParamStore,
}

impl FlowModel for Oracle {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn velocity_graph(&self, g: &mut Graph, _: &Bound, z_t: Var, t: f64, _: &Conditioning) -> Result<Var> {
        let z0 = g.constant(self.z0.clone());
        let d = g.sub(z0, z_t)?;
        Ok(g.scale(d, 1.0 / (1.0 - t)))
    }
}

fn example(z0: Tensor) -> Example {
    Example {
        id: "e".into(),
        target: z0,
        cond: Conditioning {
            memory: None,
            poses: vec![Pose::identity_at(0.0, 0.0)],
            view: (16.0, 16.0),
        },
        crop: Crop { n_ctx: 4, end: 8 },
    }
}

#[test]
fn interpolation_endpoints_are_exact() {
    let z0 = Tensor::randn(&[2, 3], 1.0, &mut rng::seeded(1));
    let z1 = Tensor::randn(&[2, 3], 1.0, &mut rng::seeded(2));
    assert_eq!(interpolate(&z0, &z1, 1.0).unwrap(), z0);
    assert_eq!(interpolate(&z0, &z1, 0.0).unwrap(), z1);
    let s = sample_at(&z0, z1.clone(), 0.25).unwrap();
    assert_eq!(s.v_t, z0.zip_map(&z1, |a, b| a - b).unwrap());
}

#[test]
fn noisy_latent_mean_matches_scaled_data() {
    let z0 = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let n = 10_000;
    let t = 0.3;
    let mut r = rng::seeded(3);
    let mut acc = [0.0; 3];
    let mut t_acc = 0.0;
    for _ in 0..n {
        let s = sample_at(&z0, Tensor::randn(&[3], 1.0, &mut r), t).unwrap();
        for (a, v) in acc.iter_mut().zip(s.z_t.data()) {
            *a += v;
        }
        t_acc += make_train_sample(&z0, &mut r).unwrap().t;
    }
    let sigma = (1.0 - t) / (n as f64).sqrt();
    for (a, z) in acc.iter().zip(z0.data()) {
        assert!((a / n as f64 - t * z).abs() < 3.0 * sigma);
    }
    let t_sigma = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
    assert!((t_acc / n as f64 - 0.5).abs() < 3.0 * t_sigma);
}

#[test]
fn exact_velocity_gives_zero_loss() {
    let z0 = Tensor::randn(&[2, 1, 2, 2], 1.0, &mut rng::seeded(4));
    let ex = example(z0.clone());
    let oracle = Oracle { z0, params: ParamStore::new() };
    let batch = draw_batch(&[&ex, &ex], 77).unwrap();
    let (loss, _) = flow_loss(&oracle, &batch).unwrap();
    assert!(loss < 1e-20, "{loss}");
}

#[test]
fn loss_gradient_matches_finite_difference() {
    let mut model = Model::new(
        ModelConfig { width: 16, heads: 2, blocks: 1, ffn_mult: 2, tokenizer_kernel: [1, 2, 2], tokenizer_stride: [1, 2, 2], ..ModelConfig::default() },
        LatentDims { channels: 4, height: 4, width: 4 },
        5,
    )
    .unwrap();
    model.perturb(0.1, 6);
    let mut ex = example(Tensor::randn(&[4, 2, 4, 4], 0.5, &mut rng::seeded(7)));
    ex.cond.memory = Some(Tensor::randn(&[4, 2, 4, 4], 0.5, &mut rng::seeded(8)));
    ex.cond.poses = (0..4).map(|i| Pose::identity_at(10.0 + i as f64, 20.0)).collect();
    let batch = draw_batch(&[&ex], 9).unwrap();
    let (_, grads) = flow_loss(&model, &batch).unwrap();
    for (name, coord) in [("out.w", 3), ("blocks.0.attn.wq", 17), ("mem.conv.w", 5), ("cam.w1", 2)] {
        let id = model.params.id(name).unwrap();
        let idx = model.params.iter().position(|(n, _)| n == name).unwrap();
        let h = 1e-6;
        let at = |delta: f64| {
            let mut m = model.clone();
            m.params.get_mut(id).data_mut()[coord] += delta;
            flow_loss(&m, &batch).unwrap().0
        };
        let num = (at(h) - at(-h)) / (2.0 * h);
        let err = hydra_core::gradcheck::rel_err(grads[idx][coord], num);
        assert!(err < 1e-4, "{name}: {err:.3e}");
    }
}

#[test]
fn euler_on_closed_form_fields() {
    let z1 = Tensor::randn(&[5], 1.0, &mut rng::seeded(10));
    let still = euler(z1.clone(), 7, |z, _| Ok(Tensor::zeros(z.shape()))).unwrap();
    assert_eq!(still, z1);
    let c = Tensor::new(vec![5], vec![0.5, -1.0, 2.0, 0.0, 3.0]).unwrap();
    let moved = euler(z1.clone(), 8, |_, _| Ok(c.clone())).unwrap();
    assert!(moved.max_abs_diff(&z1.zip_map(&c, |a, b| a + b).unwrap()) < 1e-12);
    let one = euler(z1.clone(), 1, |z, t| {
        assert_eq!(t, 0.0);
        Ok(z.map(|v| 2.0 * v))
    })
    .unwrap();
    assert_eq!(one, z1.map(|v| 3.0 * v));
    assert!(matches!(euler(z1, 0, |z, _| Ok(z.clone())), Err(Error::Usage(_))));
}

#[test]
fn euler_error_halves_when_steps_double() {
    // dz/dt = a·z + b·t has the solution z(1) = e^a·z0 + b·(e^a − 1 − a)/a²
    let (a, b) = (-0.8f64, 1.5);
    let z0 = 0.7;
    let exact = a.exp() * z0 + b * (a.exp() - 1.0 - a) / (a * a);
    let err = |s: usize| {
        let z = euler(Tensor::new(vec![1], vec![z0]).unwrap(), s, |z, t| Ok(z.map(|v| a * v + b * t))).unwrap();
        (z.item() - exact).abs()
    };
    for s in [8, 16, 32] {
        let ratio = err(s) / err(2 * s);
        assert!((1.8..2.2).contains(&ratio), "S={s}: ratio {ratio}");
    }
}

fn toy_examples(n: u64) -> Vec<Example> {
    let cfg = SimConfig::default();
    let clips: Vec<(String, RenderedClip)> = (0..n)
        .map(|s| (format!("c{s}"), render(&generate_scenario(s, &cfg).unwrap(), cfg.num_frames).unwrap()))
        .collect();
    build_examples(clips.iter().map(|(i, c)| (i.as_str(), c)), &DataConfig::default(), &Codec::default()).unwrap()
}

fn small_model(seed: u64) -> Model {
    Model::new(
        ModelConfig { width: 16, heads: 2, blocks: 1, ffn_mult: 2, ..ModelConfig::default() },
        LatentDims { channels: 48, height: 8, width: 8 },
        seed,
    )
    .unwrap()
}

#[test]
fn fixed_seeds_reproduce_the_loss_curve() {
    let exs = toy_examples(6);
    let run = || {
        let mut model = small_model(3);
        let mut opt = Adam::new(OptimConfig::default(), &model.params);
        (0..4)
            .map(|step| {
                let (idx, seed) = batch_plan(11, step, exs.len(), 2);
                let batch: Vec<&Example> = idx.iter().map(|&i| &exs[i]).collect();
                train_step(&mut model, &mut opt, &batch, seed).unwrap().loss.to_bits()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
    assert_eq!(batch_plan(1, 5, 100, 4), batch_plan(1, 5, 100, 4));
    assert_ne!(batch_plan(1, 5, 100, 4), batch_plan(1, 6, 100, 4));
}

#[test]
fn non_finite_loss_reports_the_batch_seed() {
    let exs = toy_examples(3);
    let mut model = small_model(4);
    let id = model.params.id("out.b").unwrap();
    model.params.get_mut(id).data_mut()[0] = f64::NAN;
    let mut opt = Adam::new(OptimConfig::default(), &model.params);
    let before = model.params.clone();
    let err = train_step(&mut model, &mut opt, &[&exs[0]], 0xbeef).unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("0xbeef"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(opt.step, 0);
    assert_eq!(format!("{:?}", model.params), format!("{before:?}"));
}

#[test]
fn first_adam_step_moves_by_lr_times_sign() {
    let mut params = ParamStore::new();
    params.insert("p", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let cfg = OptimConfig { lr: 0.1, warmup_steps: 0, grad_clip: 0.0, eps: 0.0, ..OptimConfig::default() };
    let mut opt = Adam::new(cfg, &params);
    let mut grads = vec![vec![0.5, -3.0, 1e-3]];
    opt.update(&mut params, &mut grads).unwrap();
    let got = params.by_name("p").unwrap().data().to_vec();
    for (g, w) in got.iter().zip([0.9, 2.1, 2.9]) {
        assert!((g - w).abs() < 1e-12);
    }
    assert_eq!(opt.step, 1);
}

#[test]
fn gradient_clipping_bounds_the_update_norm() {
    let mut params = ParamStore::new();
    params.insert("p", Tensor::zeros(&[2])).unwrap();
    let mut opt = Adam::new(OptimConfig { grad_clip: 1.0, ..OptimConfig::default() }, &params);
    let mut grads = vec![vec![30.0, 40.0]];
    opt.update(&mut params, &mut grads).unwrap();
    assert!((grads[0][0] - 0.6).abs() < 1e-12 && (grads[0][1] - 0.8).abs() < 1e-12);
    let warm = Adam::new(OptimConfig { lr: 1.0, warmup_steps: 4, ..OptimConfig::default() }, &params);
    assert_eq!([warm.lr_at(0), warm.lr_at(1), warm.lr_at(3), warm.lr_at(100)], [0.25, 0.5, 1.0, 1.0]);
}
