use proptest::prelude::*;
use scaling_dmft::analysis::{fit_power_law, log_grid};
use scaling_dmft::dmft::{solve_dmft, DmftConfig};
use scaling_dmft::experiment::{point_seed, ExperimentConfig};
use scaling_dmft::exponents::{chi_closed, classify, compute_optimal_exponent, loss_surrogate, LearningMode, RegimeLabel};
use scaling_dmft::limits::{bootstrap_chi, limiting_loss, solve_r3};
use scaling_dmft::spectra::{ModeBins, SourceCapacitySpec, SpectrumTable};
use scaling_dmft::trajectory::LossTrajectory;

fn table(alpha: f64, beta: f64, m: usize) -> SpectrumTable {
    SpectrumTable::build(&SourceCapacitySpec::new(alpha, beta, m).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn signal_is_a_pure_power(alpha in 1.05f64..4.0, beta in 0.05f64..4.0, m in 1usize..400) {
        let t = table(alpha, beta, m);
        for (i, s) in t.signal().iter().enumerate() {
            let k = (i + 1) as f64;
            let exact = k.powf(-alpha * beta - 1.0);
            prop_assert!((s / exact - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(t.eigenvalues()[0], 1.0);
        prop_assert!(t.eigenvalues().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bins_conserve_mass(alpha in 1.05f64..4.0, beta in 0.05f64..3.0, m in 1usize..5000, budget in 1usize..300) {
        let t = table(alpha, beta, m);
        let bins = ModeBins::new(&t, budget).unwrap();
        prop_assert!(!bins.is_empty() && bins.len() <= m);
        let count: usize = bins.bins().iter().map(|b| b.count).sum();
        prop_assert_eq!(count, m);
        let lam: f64 = bins.bins().iter().map(|b| b.lambda_mass).sum();
        let direct: f64 = t.eigenvalues().iter().rev().sum();
        prop_assert!((lam / direct - 1.0).abs() < 1e-12);
        prop_assert!((bins.total_signal() / t.total_signal() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_power_laws_fit_exactly(c in 0.01f64..100.0, r in -2.0f64..3.0, lo in 0.0f64..2.0, span in 1.0f64..4.0) {
        let times = log_grid(10f64.powf(lo), 10f64.powf(lo + span), 10);
        let loss = times.iter().map(|t| c * t.powf(-r)).collect();
        let traj = LossTrajectory::new(times.clone(), loss).unwrap();
        let fit = fit_power_law(&traj, Some((times[0], *times.last().unwrap()))).unwrap();
        prop_assert!((fit.exponent - r).abs() < 1e-10);
        prop_assert!(fit.stderr < 1e-12);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn compute_exponent_is_continuous_across_regimes(alpha in 1.1f64..5.0) {
        let eps = 1e-9;
        for beta in [1.0, 2.0 - 1.0 / alpha] {
            for mode in [LearningMode::Lazy, LearningMode::Rich] {
                let below = compute_optimal_exponent(alpha, beta - eps, mode).unwrap().0;
                let above = compute_optimal_exponent(alpha, beta + eps, mode).unwrap().0;
                prop_assert!((below - above).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rich_never_slower(alpha in 1.1f64..5.0, beta in 0.01f64..4.0) {
        let lazy = compute_optimal_exponent(alpha, beta, LearningMode::Lazy).unwrap().0;
        let rich = compute_optimal_exponent(alpha, beta, LearningMode::Rich).unwrap().0;
        prop_assert!(rich >= lazy - 1e-15);
        prop_assert!(chi_closed(beta) >= beta);
        prop_assert!(chi_closed(beta) <= 1.0 || beta > 1.0);
        let label = classify(alpha, beta).unwrap().label;
        prop_assert_eq!(label == RegimeLabel::Hard, beta <= 1.0);
    }

    #[test]
    fn surrogate_decreases_in_time(t in 1.0f64..1e6, n in 1.0f64..1e6, b in 1.0f64..1e3, beta in 0.1f64..3.0) {
        for mode in [LearningMode::Lazy, LearningMode::Rich] {
            let now = loss_surrogate(t, n, b, 0.1, 2.0, beta, mode).unwrap();
            let later = loss_surrogate(2.0 * t, n, b, 0.1, 2.0, beta, mode).unwrap();
            prop_assert!(later < now);
        }
    }

    #[test]
    fn bootstrap_levels_follow_recursion(beta in 0.01f64..0.99, levels in 1usize..40) {
        let s = bootstrap_chi(beta, levels);
        prop_assert_eq!(s.len(), levels + 1);
        prop_assert_eq!(s[0], beta);
        for w in s.windows(2) {
            prop_assert!((w[1] - beta * (2.0 - w[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn bottleneck_floor_decreases_with_size(beta in 0.2f64..3.0, n in 2.0f64..200.0) {
        let t = table(2.0, beta, 2000);
        let small = limiting_loss(&t, solve_r3(&t, n, 1e-10).unwrap());
        let large = limiting_loss(&t, solve_r3(&t, 2.0 * n, 1e-10).unwrap());
        prop_assert!(large < small);
        prop_assert!(small < t.total_signal());
    }

    #[test]
    fn point_seeds_ignore_other_axes(base in any::<u64>(), a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let one = point_seed(base, &[("beta".into(), a)]);
        prop_assert_eq!(one, point_seed(base, &[("beta".into(), a)]));
        if a != b {
            prop_assert_ne!(one, point_seed(base, &[("beta".into(), b)]));
        }
    }

    #[test]
    fn simulate_configs_round_trip(
        seed in any::<u32>(), n in 1usize..4096, b in 1usize..512, eta in 1e-4f64..2.0,
        gamma in 0.0f64..4.0, steps in 1usize..100000, beta in 0.1f64..3.0,
    ) {
        let text = format!(
            "base_seed = {seed}\n[spectrum]\nalpha = 2.0\nbeta = {beta:?}\nn_modes = 100\n\
             [experiment]\nkind = \"simulate\"\nn_params = {n}\nbatch_size = {b}\n\
             learning_rate_per_step = {eta:?}\nrichness = {gamma:?}\nsteps = {steps}\nn_seeds = 2\n\
             [sweep]\nrichness = [{gamma:?}, 1.5]\n"
        );
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(&c, &again);
        prop_assert_eq!(c.grid().unwrap(), again.grid().unwrap());
    }
}

fn max_abs(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernel_set_is_causal_and_psd(
        gamma in 0.0f64..1.5, n in 4.0f64..256.0, b in 1.0f64..64.0, eta in 0.05f64..0.4, beta in 0.3f64..1.5,
    ) {
        let t = table(2.0, beta, 64);
        let config = DmftConfig {
            n_params: n,
            batch_size: b,
            learning_rate: eta,
            richness: gamma,
            horizon: 24,
            max_bins: 16,
            ..Default::default()
        };
        let k = solve_dmft(&t, &config).unwrap().kernels;
        for (name, c) in [("c0", &k.c0), ("c2", &k.c2), ("c3", &k.c3), ("cw", &k.cw)] {
            let scale = max_abs(c).max(1e-300);
            prop_assert!(max_abs(&(c - c.transpose())) <= 1e-10 * scale, "{} not symmetric", name);
            let eig = c.clone().symmetric_eigen().eigenvalues;
            let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
            prop_assert!(min >= -1e-9 * scale, "{} has eigenvalue {}", name, min);
        }
        // response is causal: nothing above the diagonal
        for i in 0..k.r3.nrows() {
            for j in i + 1..k.r3.ncols() {
                prop_assert_eq!(k.r3[(i, j)], 0.0);
            }
        }
        let loss = k.loss();
        prop_assert!((loss[0] / t.total_signal() - 1.0).abs() < 1e-12);
        prop_assert!(loss.iter().all(|l| l.is_finite() && *l > 0.0));
    }
}
