//! Fixtures shared by the kernel benchmarks.

use proedit_core::camera::{Camera, Orbit};
use proedit_core::editor::FosParams;
use proedit_core::image::Image;
use proedit_core::scene::{SceneSpec, SyntheticBench};
use proedit_core::splat::{render, GaussianCloud};

/// The standard synthetic benchmark: 200 Gaussians, 8 views at 64x64.
pub fn standard_bench() -> SyntheticBench {
    SyntheticBench::new(&SceneSpec::default(), &Orbit::default(), FosParams::default(), 0)
        .expect("the default benchmark is valid")
}

/// A scene of `n` Gaussians seen from one camera at `res`x`res`, plus a target image.
pub fn scene_at(n: usize, res: usize) -> (GaussianCloud, Camera, Image) {
    let spec = SceneSpec {
        gaussians: n,
        ..SceneSpec::default()
    };
    let orbit = Orbit {
        count: 2,
        resolution: [res, res],
        ..Orbit::default()
    };
    let cam = orbit.cameras().expect("valid orbit").remove(0);
    let target = render(&spec.target(), &cam).image;
    (spec.source(), cam, target)
}
