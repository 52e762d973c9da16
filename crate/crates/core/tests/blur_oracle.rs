use hpvit_core::blur::{blur_image, BlurError, BlurSchedule, CurriculumPartition, GaussianKernel};
use hpvit_core::{CurriculumDataset, Image};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    let px = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    Image::new(h, w, c, px).unwrap()
}

/// Mirror with the edge repeated, by explicit folding.
fn mirror(mut p: i64, n: i64) -> usize {
    loop {
        if p < 0 {
            p = -p - 1;
        } else if p >= n {
            p = 2 * n - 1 - p;
        } else {
            return p as usize;
        }
    }
}

fn naive_blur(img: &Image, sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut g = Vec::new();
    for i in -r..=r {
        for j in -r..=r {
            g.push((-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = g.iter().sum();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for ch in 0..c {
                let mut acc = 0.0;
                let mut k = 0;
                for i in -r..=r {
                    for j in -r..=r {
                        let sy = mirror(y + i, h as i64);
                        let sx = mirror(x + j, w as i64);
                        acc += img.get(sy, sx, ch) * (g[k] / total);
                        k += 1;
                    }
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[test]
#[allow(clippy::approx_constant)]
fn kernel_sigma_half_radius_one_matches_high_precision_values() {
    let center = 0.636_619_772_367_581_343_075_535_053_490_057_448_137_8;
    let edge = 0.086_157_117_207_394_519_143_486_244_573_109_329_942_86;
    let corner = 0.011_660_097_860_112_774_369_201_070_060_796_106_707_09;
    let raw = GaussianKernel::unnormalized(0.5, 1);
    let expected = [
        corner, edge, corner, edge, center, edge, corner, edge, corner,
    ];
    for (a, b) in raw.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    let k = GaussianKernel::new(0.5, 1).unwrap();
    let normalized = [
        0.011_343_736_558_495_073_069_350_464_235_900_494_201_94,
        0.083_819_505_802_210_604_371_845_171_600_389_951_749_44,
        0.619_347_030_557_177_290_235_217_456_654_838_216_194_5,
    ];
    assert!((k.at(-1, -1) - normalized[0]).abs() < 1e-15);
    assert!((k.at(0, 1) - normalized[1]).abs() < 1e-15);
    assert!((k.at(0, 0) - normalized[2]).abs() < 1e-15);
}

#[test]
fn kernel_rejects_non_positive_sigma() {
    for s in [0.0, -1.0, f64::NAN] {
        assert!(matches!(
            GaussianKernel::new(s, 2),
            Err(BlurError::Sigma(_))
        ));
    }
    let k = GaussianKernel::new(2.0, 0).unwrap();
    assert_eq!(k.weights(), &[1.0]);
}

#[test]
fn blur_matches_naive_convolution_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut shapes = vec![
        (1, 1, 1),
        (1, 7, 1),
        (7, 1, 3),
        (1, 1, 3),
        (2, 2, 1),
        (8, 8, 1),
    ];
    while shapes.len() < 24 {
        shapes.push((
            rng.random_range(1..12),
            rng.random_range(1..12),
            if rng.random::<bool>() { 1 } else { 3 },
        ));
    }
    for (idx, &(h, w, c)) in shapes.iter().enumerate() {
        let img = random_image(&mut rng, h, w, c);
        let (sigma, radius) = if idx == 5 {
            (1.0, 2)
        } else {
            (rng.random_range(0.3..4.0), rng.random_range(0..6))
        };
        let kernel = GaussianKernel::new(sigma, radius).unwrap();
        let got = blur_image(&img, &kernel);
        let want = naive_blur(&img, sigma, radius);
        for (a, b) in got.pixels().iter().zip(&want) {
            assert!(
                (a - b).abs() <= 1e-15,
                "shape {h}x{w}x{c} r={radius}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn blur_of_constant_image_is_constant() {
    let img = Image::filled(6, 9, 3, 0.37).unwrap();
    for level in BlurSchedule::linear(10).unwrap().levels() {
        let out = blur_image(&img, &level.kernel());
        assert!((out.mean() - 0.37).abs() < 1e-9);
        assert!(out.pixels().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }
}

#[test]
fn identity_kernel_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(&mut rng, 5, 6, 3);
    assert_eq!(blur_image(&img, &GaussianKernel::identity()), img);
}

#[test]
fn wide_sigma_approaches_uniform() {
    for radius in 1..5 {
        let k = GaussianKernel::new(100.0 * radius as f64, radius).unwrap();
        let max = k.weights().iter().cloned().fold(f64::MIN, f64::max);
        let min = k.weights().iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-3);
    }
}

#[test]
fn schedule_is_strictly_monotone() {
    let s = BlurSchedule::linear(10).unwrap();
    for w in s.levels().windows(2) {
        assert!(w[1].y > w[0].y && w[1].sigma > w[0].sigma);
    }
    let order = s.consumption_order();
    assert!(order.windows(2).all(|w| w[0] > w[1]));
    assert!(matches!(BlurSchedule::linear(0), Err(BlurError::NoLevels)));
}

#[test]
fn yielded_sigma_is_a_ten_step_staircase() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<(Image, usize)> = (0..100)
        .map(|i| (random_image(&mut rng, 4, 4, 1), i % 2))
        .collect();
    let schedule = BlurSchedule::linear(10).unwrap();
    let partition = CurriculumPartition::new(100, 10, 8).unwrap();
    let ds = CurriculumDataset::apply(&data, &schedule, &partition).unwrap();
    let sigmas: Vec<f64> = ds
        .epoch_passes(8, 0)
        .iter()
        .flat_map(|p| p.samples.iter().map(|&i| ds.samples()[i].group))
        .map(|b| schedule.levels()[b].sigma)
        .collect();
    assert_eq!(sigmas.len(), 100);
    assert!(sigmas.windows(2).all(|w| w[0] >= w[1]));
    let steps = 1 + sigmas.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(steps, 10);
}

#[test]
fn one_level_curriculum_is_uniform_half_sigma_blur() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<(Image, usize)> = (0..12)
        .map(|i| (random_image(&mut rng, 5, 5, 1), i % 3))
        .collect();
    let schedule = BlurSchedule::linear(1).unwrap();
    let partition = CurriculumPartition::new(12, 1, 0).unwrap();
    let ds = CurriculumDataset::apply(&data, &schedule, &partition).unwrap();
    for s in ds.samples() {
        let want = naive_blur(&data[s.source_index].0, 0.5, 1);
        for (a, b) in s.image.pixels().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_a_disjoint_cover(n in 1usize..10_000, k_frac in 0.0f64..1.0, seed: u64) {
        let k = 1 + ((n - 1) as f64 * k_frac * k_frac) as usize;
        let p = CurriculumPartition::new(n, k, seed).unwrap();
        let groups = p.groups();
        prop_assert_eq!(groups.len(), k);
        let mut seen = vec![false; n];
        for g in &groups {
            prop_assert!(g.len() == n / k || g.len() == n / k + 1);
            for &i in g {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert_eq!(p.group_order, (0..k).rev().collect::<Vec<_>>());
    }

    #[test]
    fn kernel_is_symmetric_normalized_and_peaked(sigma in 0.05f64..50.0, radius in 0usize..12) {
        let k = GaussianKernel::new(sigma, radius).unwrap();
        let r = radius as i64;
        let total: f64 = k.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in -r..=r {
            for j in -r..=r {
                prop_assert_eq!(k.at(i, j), k.at(j, i));
                prop_assert_eq!(k.at(i, j), k.at(-i, -j));
                prop_assert!(k.at(i, j) <= k.at(0, 0));
            }
        }
    }
}
