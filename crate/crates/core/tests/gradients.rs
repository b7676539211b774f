//! Analytic splatting gradients against central finite differences.

use nalgebra::{Point3, Vector3};
use proedit_core::camera::Camera;
use proedit_core::image::Image;
use proedit_core::splat::{backward, render, Gaussian, GaussianCloud, PARAM_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(seed: u64) -> (GaussianCloud, Camera, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let gaussians = (0..n)
        .map(|_| Gaussian {
            mean: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
            log_scale: std::array::from_fn(|_| rng.random_range(0.05f64..0.25).ln()),
            rotation: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            opacity_logit: rng.random_range(-2.0..2.0),
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        })
        .collect();
    let eye = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -3.0);
    let cam = Camera::look_at(eye, Point3::origin(), Vector3::new(0.0, -1.0, 0.0), 40.0, (32, 32)).unwrap();
    let grad = Image::from_fn(32, 32, |_, _| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    (GaussianCloud::new(gaussians, 2.0).unwrap(), cam, grad)
}

fn objective(cloud: &GaussianCloud, cam: &Camera, weights: &Image) -> f64 {
    let img = render(cloud, cam).image;
    img.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let step = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (cloud, cam, weights) = random_scene(seed);
        let grads = backward(&cloud, &cam, &weights).unwrap();
        for gi in 0..cloud.len() {
            for k in 0..PARAM_COUNT {
                let analytic = grads.params[gi][k];
                let mut plus = cloud.clone();
                let mut minus = cloud.clone();
                let mut p = plus.gaussians()[gi].params();
                p[k] += step;
                plus.gaussians_mut()[gi].set_params(&p);
                let mut p = minus.gaussians()[gi].params();
                p[k] -= step;
                minus.gaussians_mut()[gi].set_params(&p);
                let fd = (objective(&plus, &cam, &weights) - objective(&minus, &cam, &weights)) / (2.0 * step);
                if analytic.abs().max(fd.abs()) <= 1e-6 {
                    continue;
                }
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                worst = worst.max(rel);
                assert!(rel <= 1e-3, "seed {seed} gaussian {gi} param {k}: analytic {analytic} fd {fd} rel {rel}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "only {checked} parameters checked");
    eprintln!("checked {checked} parameters, worst relative error {worst:.3e}");
}

