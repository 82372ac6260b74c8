use proptest::prelude::*;
use sagd::diagnostics::{band_energy, energy_distance};
use sagd::diffusion::{eps_from_score, score_from_eps};
use sagd::io::{read_tensor, write_tensor};
use sagd::spectral::DEFAULT_ZERO_TOL;
use sagd::{AnisotropicCovariance, Band, DiffusionSchedule, FrequencyGrid, SpectralWeight, TensorField, TensorField32};

fn field(values: Vec<f64>, size: usize) -> TensorField {
    let n = values.len() / (size * size);
    TensorField::new(vec![n, 1, size, size], values[..n * size * size].to_vec()).unwrap()
}

fn omission_cov(size: usize) -> AnisotropicCovariance {
    let grid = FrequencyGrid::new(size, size).unwrap();
    let w =
        SpectralWeight::two_band(grid, 1.0, Band::new(0.0, 0.4).unwrap(), 0.7, Band::new(0.5, 1.0).unwrap()).unwrap();
    AnisotropicCovariance::from_weight(&w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_files_round_trip_bit_exactly(
        dims in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n as u64)
            .map(|i| f32::from_bits((sagd::rng::derive_seed(seed, &[i]) as u32) & 0x7f7f_ffff))
            .collect();
        let x = TensorField32::new(dims, data).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        let y: TensorField32 = read_tensor(buf.as_slice()).unwrap();
        prop_assert_eq!(x.shape(), y.shape());
        prop_assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(
        a in prop::collection::vec(-3.0f64..3.0, 2..40),
        b in prop::collection::vec(-3.0f64..3.0, 2..40),
    ) {
        let x = TensorField::new(vec![a.len() / 2, 2], a[..a.len() / 2 * 2].to_vec()).unwrap();
        let y = TensorField::new(vec![b.len() / 2, 2], b[..b.len() / 2 * 2].to_vec()).unwrap();
        let xy = energy_distance(&x, &y).unwrap();
        let yx = energy_distance(&y, &x).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - yx).abs() <= 1e-12 * (1.0 + xy));
        prop_assert_eq!(energy_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn covariance_action_is_linear(
        u in prop::collection::vec(-2.0f64..2.0, 128),
        v in prop::collection::vec(-2.0f64..2.0, 128),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let cov = omission_cov(8);
        let (x, y) = (field(u, 8), field(v, 8));
        let lhs = cov.apply(&x.lin_comb(a, &y, b).unwrap()).unwrap();
        let rhs = cov.apply(&x).unwrap().lin_comb(a, &cov.apply(&y).unwrap(), b).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn score_round_trip_is_the_support_projection(
        u in prop::collection::vec(-2.0f64..2.0, 128),
        t in 1usize..=1000,
    ) {
        let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let cov = omission_cov(8);
        let s = field(u, 8);
        let eps = eps_from_score(&s, t, &sched, &cov).unwrap();
        let back = score_from_eps(&eps, t, &sched, &cov, DEFAULT_ZERO_TOL).unwrap();
        let proj = cov.support_projector(DEFAULT_ZERO_TOL).unwrap().apply(&s).unwrap();
        prop_assert!(back.sub(&proj).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn full_band_energy_is_the_mean_square_norm(u in prop::collection::vec(-2.0f64..2.0, 128)) {
        let x = field(u, 8);
        let energy = band_energy(&x, Band::full()).unwrap();
        let mean_sq = x.data().iter().map(|v| v * v).sum::<f64>() / x.batch() as f64;
        prop_assert!((energy - mean_sq).abs() <= 1e-6 * mean_sq.max(1.0));
    }
}
