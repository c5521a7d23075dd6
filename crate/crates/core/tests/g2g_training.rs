use g2g::arch::ArchConfig;
use g2g::g2g::{fit_on_pairs, iterate_g2g, n2n_gradients, n2n_loss, train_g2g, DenoiserModel, G2GConfig};
use g2g::gradcheck::{central_difference, relative_error};
use g2g::nn::{LrSchedule, Mode};
use g2g::toy::toy_corpus;
use g2g::wgan::{generate_pairs, Denoise, ImageGenerator, PairBatch, WganBundle};
use g2g::{Image, Rng, Tensor};

fn arch() -> ArchConfig {
    ArchConfig {
        channels: 1,
        latent_dim: 4,
        patch: 16,
        noise_gen_widths: [4, 3, 2, 2],
        critic_widths: [2, 3, 4],
        image_gen_depth: 3,
        image_gen_width: 3,
    }
}

fn cfg() -> G2GConfig {
    G2GConfig {
        epochs: 2,
        steps_per_epoch: Some(3),
        batch: 2,
        lr: 1e-3,
        schedule: LrSchedule::Constant,
        patch_size: 16,
        iterations: 1,
        refine_epochs: Some(1),
        fresh_pairs: true,
        depth: 3,
        width: 4,
    }
}

fn noisy() -> Vec<Image> {
    toy_corpus(4, 24, 24, 3).into_iter().map(|(_, img)| img).collect()
}

fn pairs(seed: u64) -> PairBatch {
    let mut rng = Rng::new(seed, 0);
    let base = Tensor::from_fn(&[3, 1, 9, 7], |_| rng.uniform());
    PairBatch {
        first: base.map(|v| v + 0.1),
        second: base.map(|v| v - 0.05),
        base,
        base_tag: "test".into(),
    }
}

fn param_slot(model: &mut DenoiserModel, mut i: usize) -> &mut f64 {
    for p in model.network_mut().params_mut().params_mut() {
        if i < p.value.len() {
            return &mut p.value.data_mut()[i];
        }
        i -= p.value.len();
    }
    unreachable!()
}

#[test]
fn n2n_loss_matches_per_image_mse() {
    let mut m = DenoiserModel::new(1, 4, 3, 5).unwrap();
    let p = pairs(1);
    let loss = n2n_loss(&mut m, &p, Mode::Eval).unwrap();
    let targets = Image::batch_from_tensor(&p.first).unwrap();
    let inputs = Image::batch_from_tensor(&p.second).unwrap();
    let mut total = 0.0;
    for (t, x) in targets.iter().zip(&inputs) {
        let y = m.denoise(x).unwrap();
        total += t.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    assert!((loss - total / p.first.len() as f64).abs() < 1e-12);
}

#[test]
fn n2n_gradient_matches_finite_differences() {
    let mut m = DenoiserModel::new(1, 3, 3, 8).unwrap();
    let p = pairs(2);
    m.network_mut().zero_grad();
    n2n_gradients(&mut m, &p).unwrap();
    let analytic: Vec<f64> = m.network().params().params().iter().flat_map(|q| q.grad.data().to_vec()).collect();
    let fd = central_difference(&mut m, analytic.len(), 1e-6, param_slot, |m| n2n_loss(m, &p, Mode::Train).unwrap());
    let err = relative_error(&analytic, &fd);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn zero_lr_on_replayed_pairs_repeats_the_loss() {
    let mut bundle = WganBundle::new(&arch(), 1).unwrap();
    let c = G2GConfig {
        lr: 0.0,
        fresh_pairs: false,
        epochs: 3,
        ..cfg()
    };
    let run = train_g2g(&noisy(), &mut bundle, None, &c, 4).unwrap();
    let steps = 3;
    for (i, row) in run.trace.iter().enumerate().skip(steps) {
        assert_eq!(row.n2n_loss, run.trace[i % steps].n2n_loss);
    }
}

#[test]
fn pair_noises_are_uncorrelated() {
    let mut bundle = WganBundle::new(&arch(), 2).unwrap();
    let mut rng = Rng::new(3, 0);
    let z = Tensor::from_fn(&[32, 1, 32, 32], |_| rng.uniform());
    let (mut g2, mut noise) = bundle.split();
    let p = generate_pairs(&z, &mut g2, &mut noise, &mut rng).unwrap();
    // An untrained generator has a fixed spatial pattern, so centre each
    // position over the batch before correlating the two draws.
    let centred = |t: Tensor| {
        let k = t.item_len();
        let n = t.len() / k;
        let mean: Vec<f64> = (0..k).map(|j| (0..n).map(|i| t.data()[i * k + j]).sum::<f64>() / n as f64).collect();
        t.data().iter().enumerate().map(|(i, v)| v - mean[i % k]).collect::<Vec<f64>>()
    };
    let a = centred(p.first.sub(&p.base).unwrap());
    let b = centred(p.second.sub(&p.base).unwrap());
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let va: f64 = a.iter().map(|x| x * x).sum();
    let vb: f64 = b.iter().map(|y| y * y).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 0.05, "corr {corr}");
    assert_eq!(p.base_tag, "g2");
}

#[test]
fn fresh_pairs_differ_between_epochs() {
    let mut bundle = WganBundle::new(&arch(), 3).unwrap();
    let mut model = cfg().fresh_model(1, 1).unwrap();
    let mut seen: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 2];
    let (mut g2, mut noise) = bundle.split();
    fit_on_pairs(&noisy(), &mut g2, &mut noise, &mut model, &cfg(), 2, 0, 5, &mut |epoch, p| {
        seen[epoch].push(p.first.data().to_vec())
    })
    .unwrap();
    for (a, b) in seen[0].iter().zip(&seen[1]) {
        assert_ne!(a, b);
    }
}

#[test]
fn refinement_uses_the_denoiser_as_base() {
    let mut bundle = WganBundle::new(&arch(), 4).unwrap();
    let c = G2GConfig { iterations: 2, ..cfg() };
    let first = train_g2g(&noisy(), &mut bundle, None, &c, 6).unwrap();
    assert_eq!(first.base_tags, ["g2"]);
    let before = first.model.fingerprint();
    let refined = iterate_g2g(&noisy(), &mut bundle, first.model, &c, 6).unwrap();
    assert_eq!(refined.base_tags, ["denoiser", "denoiser"]);
    assert_eq!(refined.trace.len(), 2 * 3);
    assert!(refined.trace.iter().all(|r| r.round >= 1));
    assert_ne!(refined.model.fingerprint(), before);
}

#[test]
fn zero_iterations_leave_the_model_untouched() {
    let mut bundle = WganBundle::new(&arch(), 5).unwrap();
    let m = DenoiserModel::new(1, 4, 3, 7).unwrap();
    let c = G2GConfig { iterations: 0, ..cfg() };
    let run = iterate_g2g(&noisy(), &mut bundle, m.clone(), &c, 1).unwrap();
    assert_eq!(run.model.fingerprint(), m.fingerprint());
    assert!(run.trace.is_empty());
}

#[test]
fn warm_start_keeps_the_initial_weights() {
    let mut bundle = WganBundle::new(&arch(), 6).unwrap();
    let init = DenoiserModel::new(1, 4, 3, 11).unwrap();
    let c = G2GConfig { lr: 0.0, ..cfg() };
    let run = train_g2g(&noisy(), &mut bundle, Some(init.clone()), &c, 2).unwrap();
    let values = |m: &DenoiserModel| -> Vec<f64> {
        m.network().params().params().iter().flat_map(|p| p.value.data().to_vec()).collect()
    };
    assert_eq!(values(&run.model), values(&init));
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut bundle = WganBundle::new(&arch(), 7).unwrap();
        train_g2g(&noisy(), &mut bundle, None, &cfg(), 3).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model.fingerprint(), b.model.fingerprint());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn g2_base_is_an_image_generator() {
    let mut bundle = WganBundle::new(&arch(), 8).unwrap();
    let mut rng = Rng::new(1, 1);
    let z = Tensor::from_fn(&[1, 1, 16, 16], |_| rng.uniform());
    let direct = bundle.g2.forward(&z, Mode::Eval).unwrap();
    let mut g2 = ImageGenerator(&mut bundle.g2);
    assert_eq!(g2.tag(), "g2");
    assert_eq!(g2.denoise_batch(&z).unwrap(), direct);
}

#[test]
fn loss_moving_average_does_not_increase() {
    let mut bundle = WganBundle::new(&arch(), 9).unwrap();
    let c = G2GConfig {
        epochs: 30,
        steps_per_epoch: Some(8),
        batch: 4,
        schedule: LrSchedule::HalveEvery { every: 10 },
        ..cfg()
    };
    let run = train_g2g(&noisy(), &mut bundle, None, &c, 1).unwrap();
    let per_epoch: Vec<f64> = run.trace.chunks(8).map(|c| c.iter().map(|r| r.n2n_loss).sum::<f64>() / 8.0).collect();
    let avg: Vec<f64> = per_epoch.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in avg.windows(2) {
        assert!(w[1] <= w[0] * 1.01, "moving average rose: {avg:?}");
    }
}

#[test]
fn refinement_starts_from_the_given_weights() {
    let mut bundle = WganBundle::new(&arch(), 10).unwrap();
    let m = DenoiserModel::new(1, 4, 3, 12).unwrap();
    let c = G2GConfig { lr: 0.0, ..cfg() };
    let run = iterate_g2g(&noisy(), &mut bundle, m.clone(), &c, 1).unwrap();
    let values = |m: &DenoiserModel| -> Vec<f64> {
        m.network().params().params().iter().flat_map(|p| p.value.data().to_vec()).collect()
    };
    assert_eq!(values(&run.model), values(&m));
}

#[test]
fn non_finite_loss_aborts() {
    let mut bundle = WganBundle::new(&arch(), 11).unwrap();
    let c = G2GConfig { lr: 1e300, ..cfg() };
    let err = train_g2g(&noisy(), &mut bundle, None, &c, 1).unwrap_err();
    assert!(matches!(err, g2g::Error::NonFinite { step: 2.., .. }), "{err}");
    assert!(err.to_string().contains("L_N2N"));
}
