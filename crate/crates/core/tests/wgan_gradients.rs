//! Gradients of the three adversarial/cycle terms against central
//! differences, network by network.

use g2g::arch::ArchConfig;
use g2g::gradcheck::{central_difference, relative_error};
use g2g::nn::Network;
use g2g::wgan::{Batch, LossWeights, WganBundle};
use g2g::{Rng, Tensor};

// BatchNorm over a six-sample latent batch makes g1 strongly curved; the
// O(h²) truncation error at h = 1e-5 sits right at the tolerance.
const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn arch() -> ArchConfig {
    ArchConfig {
        channels: 1,
        latent_dim: 5,
        patch: 16,
        noise_gen_widths: [4, 3, 3, 2],
        critic_widths: [3, 3, 4],
        image_gen_depth: 3,
        image_gen_width: 3,
    }
}

fn setup(seed: u64) -> (WganBundle, Batch) {
    let mut b = WganBundle::new(&arch(), seed).unwrap();
    let mut rng = Rng::new(seed, 9);
    // Move shifts and biases off zero so no gradient is trivially zero.
    for net in [&mut b.g1, &mut b.g2, &mut b.g3, &mut b.c1, &mut b.c2] {
        for p in net.params_mut().params_mut() {
            if p.name.ends_with("beta") || p.name.ends_with("bias") || p.name.ends_with("gamma") {
                p.value.data_mut().iter_mut().for_each(|v| *v += 0.2 * rng.normal());
            }
        }
    }
    let batch = Batch {
        noise: Tensor::from_fn(&[3, 1, 16, 16], |_| 0.1 * rng.normal()),
        noisy: Tensor::from_fn(&[3, 1, 16, 16], |_| rng.uniform()),
        latent: Tensor::from_fn(&[6, 5, 1, 1], |_| rng.normal()),
    };
    (b, batch)
}

fn net(b: &mut WganBundle, which: usize) -> &mut Network {
    match which {
        0 => &mut b.g1,
        1 => &mut b.g2,
        2 => &mut b.g3,
        3 => &mut b.c1,
        _ => &mut b.c2,
    }
}

fn slot(n: &mut Network, mut i: usize) -> &mut f64 {
    for p in n.params_mut().params_mut() {
        if i < p.value.len() {
            return &mut p.value.data_mut()[i];
        }
        i -= p.value.len();
    }
    panic!("index out of range")
}

fn grads(n: &Network) -> Vec<f64> {
    n.params().params().iter().flat_map(|p| p.grad.data().to_vec()).collect()
}

fn check_generator(w: LossWeights, nets: &[usize], label: &str) {
    let (mut b, batch) = setup(1);
    b.generator_gradients(&batch, w).unwrap();
    for &k in nets {
        let analytic = grads(net(&mut b, k));
        let len = analytic.len();
        let fd = central_difference(&mut b, len, H, |b, i| slot(net(b, k), i), |b| {
            b.generator_objective(&batch, w).unwrap()
        });
        let err = relative_error(&analytic, &fd);
        assert!(err < TOL, "{label}: network {k} rel err {err:e}");
        assert!(fd.iter().any(|g| g.abs() > 1e-8), "{label}: network {k} has no signal");
    }
}

#[test]
fn noise_term_reaches_g1() {
    check_generator(LossWeights::new(1.0, 0.0, 0.0), &[0], "L_n");
}

#[test]
fn image_term_reaches_g1_and_g2() {
    check_generator(LossWeights::new(0.0, 1.0, 0.0), &[0, 1], "L_Z");
}

#[test]
fn cycle_term_reaches_g2_and_g3() {
    check_generator(LossWeights::new(0.0, 0.0, 1.0), &[1, 2], "L_cyc");
}

#[test]
fn weighted_generator_objective() {
    check_generator(LossWeights::new(5.0, 1.0, 10.0), &[0, 1, 2], "weighted");
}

#[test]
fn critic_objective() {
    let (mut b, batch) = setup(2);
    let w = LossWeights::new(1.0, 1.0, 0.0);
    b.critic_gradients(&batch, w).unwrap();
    for k in [3, 4] {
        let analytic = grads(net(&mut b, k));
        let len = analytic.len();
        let fd = central_difference(&mut b, len, H, |b, i| slot(net(b, k), i), |b| b.critic_objective(&batch, w).unwrap());
        let err = relative_error(&analytic, &fd);
        assert!(err < TOL, "critic {k}: rel err {err:e}");
    }
    // Generators are only read during the critic phase.
    assert!(b.g1.params().grads_are_zero() && b.g2.params().grads_are_zero());
}

#[test]
fn generator_phase_leaves_critic_gradients_zero() {
    let (mut b, batch) = setup(3);
    b.generator_gradients(&batch, LossWeights::new(5.0, 1.0, 10.0)).unwrap();
    assert!(b.c1.params().grads_are_zero() && b.c2.params().grads_are_zero());
    // The cycle term alone never touches g1.
    let (mut b, batch) = setup(3);
    b.generator_gradients(&batch, LossWeights::new(0.0, 0.0, 1.0)).unwrap();
    assert!(b.g1.params().grads_are_zero());
}

