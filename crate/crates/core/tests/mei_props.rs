use std::f64::consts::PI;

use proptest::prelude::*;
use turbsim_core::mei::{degrade_mei, draw_elastic_params, elastic_field, ElasticParams};
use turbsim_core::{BlurKind, DrawnParams, ImageBuffer, RandomSource};

#[test]
fn ten_thousand_draws_stay_in_range() {
    let p = ElasticParams::default();
    let mut rng = RandomSource::new(1);
    let mut kinds = [0usize; 2];
    for _ in 0..10_000 {
        let d = draw_elastic_params(&p, &mut rng).unwrap();
        assert!((1.0..=25.0).contains(&d.blur_sigma_x) && (1.0..=25.0).contains(&d.blur_sigma_y));
        assert!((0.125..=1.0).contains(&d.downsample));
        assert!((0.0..=50.0).contains(&d.elastic_alpha));
        assert!((4.0..=5.0).contains(&d.elastic_sigma));
        assert!((0.0..=PI).contains(&d.blur_angle));
        kinds[(d.kernel == BlurKind::Anisotropic) as usize] += 1;
        if d.kernel == BlurKind::Isotropic {
            assert_eq!(d.blur_sigma_x, d.blur_sigma_y);
        }
    }
    assert!(kinds.iter().all(|k| (4700..5300).contains(k)), "{kinds:?}");
}

#[test]
fn fields_are_smooth() {
    // Default image size, narrowest smoothing in the default range.
    let (n, alpha, sigma) = (256, 50.0, 4.0);
    for seed in 0..100 {
        let f = elastic_field(alpha, sigma, n, n, &mut RandomSource::new(seed)).unwrap();
        let mut worst: f64 = 0.0;
        for comp in [f.dx(), f.dy()] {
            for y in 0..n {
                for x in 0..n {
                    let v = comp[y * n + x];
                    if x + 1 < n {
                        worst = worst.max((comp[y * n + x + 1] - v).abs());
                    }
                    if y + 1 < n {
                        worst = worst.max((comp[(y + 1) * n + x] - v).abs());
                    }
                }
            }
        }
        assert!(worst <= alpha / sigma, "seed {seed}: {worst}");
    }
}

#[test]
fn full_ranges_are_deterministic_and_recorded() {
    let img = ImageBuffer::from_fn(64, 64, |y, x| ((x / 8 + y / 8) % 2) as f64);
    let p = ElasticParams::default();
    let a = degrade_mei(&img, &p, &mut RandomSource::new(9)).unwrap();
    let b = degrade_mei(&img, &p, &mut RandomSource::new(9)).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.drawn, b.drawn);
    let DrawnParams::Mei { elastic_alpha, .. } = a.drawn else { panic!() };
    assert!((a.field.max_magnitude() - elastic_alpha).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn max_magnitude_equals_alpha(seed in any::<u64>(), alpha in 0.1f64..50.0, sigma in 4.0f64..5.0) {
        let f = elastic_field(alpha, sigma, 32, 32, &mut RandomSource::new(seed)).unwrap();
        prop_assert!((f.max_magnitude() - alpha).abs() <= 4.0 * f64::EPSILON * alpha);
    }

    #[test]
    fn alpha_is_a_pure_scale(seed in any::<u64>(), alpha in 0.1f64..25.0) {
        let a = elastic_field(alpha, 4.5, 24, 24, &mut RandomSource::new(seed)).unwrap();
        let b = elastic_field(2.0 * alpha, 4.5, 24, 24, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(a.scaled(2.0), b);
    }
}
