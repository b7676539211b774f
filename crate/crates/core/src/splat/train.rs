use super::gaussian::GaussianCloud;
use super::loss::{photometric_loss, LossConfig};
use super::optim::Adam;
use super::render::{accumulate_stats, render_and_backward};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;

/// One optimization step of `cloud` toward `target` seen from `cam`. Returns the loss.
pub fn train_step(
    cloud: &mut GaussianCloud,
    target: &Image,
    cam: &Camera,
    opt: &mut Adam,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    if target.resolution() != cam.resolution() {
        return Err(Error::dims(
            format!("{}x{}", cam.width, cam.height),
            format!("{}x{}", target.width(), target.height()),
        ));
    }
    let (loss, _, grads) =
        render_and_backward(cloud, cam, |img| photometric_loss(img, target, loss_cfg))?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss));
    }
    accumulate_stats(cloud, cam, &grads);
    opt.step(cloud, &grads);
    Ok(loss)
}

/// A multi-view fitting loop: views are visited in a seeded shuffled order, one
/// step per view, reshuffled every epoch.
pub fn fit(
    cloud: &mut GaussianCloud,
    views: &[(Camera, Image)],
    iterations: usize,
    opt: &mut Adam,
    loss_cfg: &LossConfig,
    mut maintainer: Option<&mut crate::adaptive::Maintainer>,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if views.is_empty() {
        return Err(Error::Invalid("fit needs at least one view".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
        }
        let v = order.pop().unwrap();
        let (cam, target) = &views[v];
        losses.push(train_step(cloud, target, cam, opt, loss_cfg)?);
        if let Some(m) = maintainer.as_deref_mut() {
            m.after_step(cloud, opt)?;
        }
    }
    Ok(losses)
}
