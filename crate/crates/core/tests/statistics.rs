use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use fpi_core::denoiser::{
    Condition, GaussianMixtureModel, GuidanceConfig, MixtureComponent, MixtureDenoiser,
};
use fpi_core::sampler::generate_final;
use fpi_core::schedule::ScheduleConfig;
use fpi_core::LatentVector;

fn two_component_1d() -> GaussianMixtureModel {
    GaussianMixtureModel::new(
        1,
        vec![
            MixtureComponent { weight: 0.3, mean: vec![-1.0], variance: vec![0.25] },
            MixtureComponent { weight: 0.7, mean: vec![1.5], variance: vec![0.5] },
        ],
    )
    .unwrap()
}

/// Bins z_t finely and compares the empirical mean of ε in each bin to the
/// closed-form posterior mean at the bin centre.
#[test]
fn posterior_noise_matches_monte_carlo() {
    let m = two_component_1d();
    let ab: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pick = WeightedIndex::new(m.weights()).unwrap();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let (lo, hi, bins) = (-1.0, 2.0, 30usize);
    let width = (hi - lo) / bins as f64;
    let mut sum = vec![0.0; bins];
    let mut sq = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for _ in 0..1_000_000 {
        let c = &m.components()[pick.sample(&mut rng)];
        let x0 = c.mean[0] + c.variance[0].sqrt() * unit.sample(&mut rng);
        let eps: f64 = unit.sample(&mut rng);
        let z = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
        if z >= lo && z < hi {
            let b = ((z - lo) / width) as usize;
            sum[b] += eps;
            sq[b] += eps * eps;
            count[b] += 1;
        }
    }
    for b in 0..bins {
        let n = count[b] as f64;
        assert!(n > 1000.0);
        let mean = sum[b] / n;
        let se = ((sq[b] / n - mean * mean) / n).sqrt();
        let centre = lo + (b as f64 + 0.5) * width;
        let pred = m
            .expected_noise(&LatentVector::new(vec![centre]).unwrap(), ab, Condition::Unconditional)
            .unwrap()[0];
        // within-bin slope of E[ε|z] adds at most a small bias at this width
        assert!((mean - pred).abs() < 3.0 * se + 0.01, "bin {b}: {mean} vs {pred} (se {se})");
    }
}

#[test]
fn single_gaussian_generation_matches_target() {
    let mean = vec![0.8, -0.4, 1.2];
    let var = vec![0.3, 0.6, 0.1];
    let m = GaussianMixtureModel::new(
        3,
        vec![MixtureComponent { weight: 1.0, mean: mean.clone(), variance: var.clone() }],
    )
    .unwrap();
    let model = MixtureDenoiser::new(m, ScheduleConfig::default().build().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1000;
    let samples: Vec<LatentVector> = (0..n)
        .map(|_| {
            let seed = LatentVector::standard_normal(3, &mut rng);
            generate_final(&model, &seed, Condition::Unconditional, GuidanceConfig::default()).unwrap()
        })
        .collect();
    for i in 0..3 {
        let avg = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
        let se = (var[i] / n as f64).sqrt();
        assert!((avg - mean[i]).abs() < 3.0 * se, "dim {i}: {avg} vs {}", mean[i]);
    }
}

#[test]
fn seed_norms_follow_chi_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = 16;
    let upper = ChiSquared::new(d as f64).unwrap().inverse_cdf(0.999);
    let lower = ChiSquared::new(d as f64).unwrap().inverse_cdf(0.001);
    let n = 2000;
    let outside = (0..n)
        .filter(|_| {
            let s = LatentVector::standard_normal(d, &mut rng).norm().powi(2);
            s > upper || s < lower
        })
        .count();
    // expected 4 of 2000
    assert!(outside <= 15, "{outside} squared norms outside the 99.9% band");
}
