use proedit_bench::{scene_at, standard_bench};

#[test]
fn fixtures_have_the_advertised_shape() {
    let b = standard_bench();
    assert_eq!(b.views.len(), 8);
    assert_eq!(b.source.len(), 200);
    let (cloud, cam, target) = scene_at(50, 32);
    assert_eq!(cloud.len(), 50);
    assert_eq!(cam.resolution(), (32, 32));
    assert_eq!(target.resolution(), (32, 32));
}
