use super::*;
use crate::graph::{generate_synthetic_graph, DegreeProfile};

fn quiet(horizon: usize, seed: u64) -> SimParams {
    SimParams {
        gamma_a: 0.0,
        gamma_n: 0.0,
        gamma_f: 0.0,
        gamma_g: 0.0,
        rho_u: 0.0,
        rho_n: 0.0,
        rho_f: 0.0,
        rho_g: 0.0,
        beta_a: 0.0,
        beta_n: 0.0,
        noise_std: 0.0,
        horizon,
        seed,
        ..SimParams::default()
    }
}

fn flickr(n: usize, seed: u64) -> Graph {
    generate_synthetic_graph(n, DegreeProfile::FLICKR, seed).unwrap()
}

#[test]
fn static_covariates_are_reproducible() {
    let a = sample_static_covariates(4, 10, 1).unwrap();
    let b = sample_static_covariates(4, 10, 1).unwrap();
    assert_eq!(a.shape(), [4, 10]);
    assert_eq!(a, b);
    assert_ne!(a, sample_static_covariates(4, 10, 2).unwrap());
}

#[test]
fn static_covariate_mean_near_zero() {
    let v = sample_static_covariates(1000, 10, 7).unwrap();
    let mean = v.data().iter().sum::<f64>() / v.len() as f64;
    assert!(mean.abs() < 5.0 / (v.len() as f64).sqrt(), "{mean}");
}

#[test]
fn zero_static_dim_rejected() {
    assert!(matches!(sample_static_covariates(4, 0, 1), Err(Error::Parameter(_))));
}

#[test]
fn treatment_probability_examples() {
    let zero = quiet(1, 0);
    assert_eq!(treatment_probability(0.0, Some(0.0), 0.0, Some(0.0), &zero), 0.5);
    let own = SimParams {
        gamma_a: 10.0,
        delta_a: 5.0,
        ..zero.clone()
    };
    assert_eq!(treatment_probability(5.0, None, 0.0, None, &own), 0.5);
    let p = treatment_probability(10.0, None, 0.0, None, &own);
    let expect = 1.0 / (1.0 + 50f64.exp());
    assert!((p - expect).abs() < 1e-30 && (p - 1.9e-22).abs() < 0.1e-22, "{p}");
}

#[test]
fn isolated_nodes_ignore_neighbor_terms() {
    let p = SimParams {
        gamma_n: 3.3,
        gamma_g: 3.3,
        delta_n: 5.0,
        ..quiet(1, 0)
    };
    assert_eq!(treatment_probability(1.0, None, 2.0, None, &p), 0.5);
    assert!(treatment_probability(1.0, Some(1.0), 0.0, Some(0.0), &p) > 0.5);
}

#[test]
fn dose_recursion_examples() {
    let p = SimParams::default();
    let mut d = 0.0;
    let doses: Vec<f64> = [1, 0, 1]
        .iter()
        .map(|&a| {
            d = update_dose(d, a, &p);
            d
        })
        .collect();
    assert_eq!(doses, vec![1.0, 0.5, 1.25]);

    let mut d = 0.0;
    for _ in 0..60 {
        let next = update_dose(d, 1, &p);
        assert!((2.0 - next) <= 0.5 * (2.0 - d) + 1e-15);
        assert!(next <= 2.0);
        d = next;
    }
    assert!((d - 2.0).abs() < 1e-12);
    assert_eq!(update_dose(update_dose(0.0, 0, &p), 0, &p), 0.0);
}

#[test]
fn derivative_vanishes_at_carrying_capacity() {
    let p = SimParams::default();
    let terms = PkpdTerms {
        x: p.carrying_capacity,
        dose: 0.0,
        static_term: 0.0,
        neighbors: None,
        noise: 0.0,
    };
    assert_eq!(pkpd_derivative(&terms, &p).unwrap(), 0.0);
}

#[test]
fn derivative_treatment_only() {
    let p = SimParams {
        beta_a: 0.03,
        ..quiet(1, 0)
    };
    let terms = PkpdTerms {
        x: 1.0,
        dose: 1.0,
        static_term: 0.0,
        neighbors: None,
        noise: 0.0,
    };
    assert!((pkpd_derivative(&terms, &p).unwrap() - 0.03).abs() < 1e-15);
}

#[test]
fn derivative_matches_independent_evaluator() {
    let p = SimParams {
        rho_u: -0.001,
        rho_n: -0.00033,
        ..quiet(1, 0)
    };
    let terms = PkpdTerms {
        x: 2.0,
        dose: 0.0,
        static_term: 0.0,
        neighbors: Some(NeighborTerms {
            x_mean: 4.0,
            static_mean: 0.0,
            dose_mean: 0.0,
        }),
        noise: 0.0,
    };
    let k: f64 = 15.0;
    let oracle = 2.0 * (-0.001 * (k.ln() - 2f64.ln()) - 0.00033 * (k.ln() - 4f64.ln()));
    assert!((pkpd_derivative(&terms, &p).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn nonpositive_state_is_a_domain_error() {
    let terms = PkpdTerms {
        x: 0.0,
        dose: 0.0,
        static_term: 0.0,
        neighbors: None,
        noise: 0.0,
    };
    assert!(matches!(pkpd_derivative(&terms, &SimParams::default()), Err(Error::Domain(_))));
}

#[test]
fn invalid_params_rejected() {
    let bad = [
        SimParams { x_min: 0.0, ..SimParams::default() },
        SimParams { x_max: 0.05, ..SimParams::default() },
        SimParams { dt: 0.0, ..SimParams::default() },
        SimParams { dt: 0.3, ..SimParams::default() },
        SimParams { horizon: 0, ..SimParams::default() },
        SimParams { w_a: vec![1.0; 3], ..SimParams::default() },
    ];
    for p in bad {
        assert!(matches!(p.validate(), Err(Error::Parameter(_))), "{p:?}");
    }
}

#[test]
fn unconfounded_treatment_rate_is_half() {
    let g = flickr(1000, 3);
    let data = simulate_trajectory(&g, &quiet(10, 3)).unwrap();
    let rate = data.treatment_rate();
    assert!((0.45..=0.55).contains(&rate), "{rate}");
}

#[test]
fn simulation_is_deterministic() {
    let g = flickr(200, 1);
    let p = SimParams {
        seed: 11,
        ..SimParams::default()
    };
    let a = simulate_trajectory(&g, &p).unwrap();
    let b = simulate_trajectory(&g, &p).unwrap();
    assert_eq!(a, b);
    let c = simulate_trajectory(&g, &SimParams { seed: 12, ..p }).unwrap();
    assert_ne!(a.covariates, c.covariates);
}

#[test]
fn zero_dynamics_keep_state_constant() {
    let g = flickr(100, 2);
    let data = simulate_trajectory(&g, &quiet(6, 2)).unwrap();
    for row in &data.covariates {
        assert_eq!(row, &data.covariates[0]);
    }
}

#[test]
fn dataset_invariants_hold() {
    let g = flickr(300, 5);
    let p = SimParams {
        seed: 5,
        ..SimParams::default()
    };
    let data = simulate_trajectory(&g, &p).unwrap();
    assert_eq!(data.covariates.len(), p.horizon + 1);
    for t in 0..=p.horizon {
        assert!(data.covariates[t].iter().all(|&x| (p.x_min..=p.x_max).contains(&x)));
        assert_eq!(data.interference[t], g.interference_summary(&data.treatments[t]).unwrap());
        for i in 0..g.num_nodes() {
            let prev = if t == 0 { 0.0 } else { data.dose[t - 1][i] };
            assert_eq!(data.dose[t][i], update_dose(prev, data.treatments[t][i], &p));
            assert!(data.dose[t][i] <= 2.0 * p.full_dose);
        }
    }
}

#[test]
fn confounding_favors_treating_the_sick() {
    let (mut low, mut high) = ((0usize, 0usize), (0usize, 0usize));
    for seed in 0..5 {
        let g = flickr(300, seed);
        let data = simulate_trajectory(&g, &SimParams { seed, ..SimParams::default() }).unwrap();
        for t in 0..=data.horizon() {
            let xbar = data.running_mean(t);
            for i in 0..g.num_nodes() {
                let bucket = if xbar[i] < data.params.delta_a { &mut low } else { &mut high };
                bucket.0 += data.treatments[t][i] as usize;
                bucket.1 += 1;
            }
        }
    }
    let rate = |(a, n): (usize, usize)| a as f64 / n.max(1) as f64;
    assert!(rate(low) > rate(high), "{low:?} {high:?}");
}

#[test]
fn null_intervention_reproduces_factual_bitwise() {
    let g = flickr(150, 4);
    let data = simulate_trajectory(&g, &SimParams { seed: 4, ..SimParams::default() }).unwrap();
    for start in [0, 3, data.horizon()] {
        let cf = counterfactual_oracle(&data, &InterventionSpec::ratio(start, 0.0, 9)).unwrap();
        assert_eq!(cf.outcomes, data.covariates);
        assert_eq!(cf.interference, data.interference);
        assert_eq!(cf.dose, data.dose);
    }
}

#[test]
fn intervention_keeps_prefix_and_flips_exact_count() {
    let g = flickr(150, 4);
    let data = simulate_trajectory(&g, &SimParams { seed: 4, ..SimParams::default() }).unwrap();
    let spec = InterventionSpec::ratio(5, 0.5, 1);
    let cf = counterfactual_oracle(&data, &spec).unwrap();
    assert_eq!(cf.outcomes[..=5], data.covariates[..=5]);
    assert_eq!(cf.treatments[..5], data.treatments[..5]);
    let flips: usize = (5..=10)
        .flat_map(|t| (0..150).map(move |i| (t, i)))
        .filter(|&(t, i)| cf.treatments[t][i] != data.treatments[t][i])
        .count();
    assert_eq!(flips, (0.5f64 * 6.0 * 150.0).round() as usize);
    assert_ne!(cf.outcomes[10], data.covariates[10]);
}

#[test]
fn start_beyond_horizon_rejected() {
    let g = flickr(20, 1);
    let data = simulate_trajectory(&g, &quiet(3, 1)).unwrap();
    let err = counterfactual_oracle(&data, &InterventionSpec::ratio(4, 0.5, 0));
    assert!(matches!(err, Err(Error::Parameter(_))));
    let err = counterfactual_oracle(&data, &InterventionSpec::ratio(1, 1.5, 0));
    assert!(matches!(err, Err(Error::Parameter(_))));
}

#[test]
fn flipped_isolated_node_matches_hand_unrolled_euler() {
    let g = Graph::new(1, &[]).unwrap();
    let p = SimParams {
        beta_a: 0.03,
        dt: 0.5,
        ..quiet(1, 8)
    };
    let data = simulate_trajectory(&g, &p).unwrap();
    let cf = counterfactual_oracle(&data, &InterventionSpec::ratio(0, 1.0, 0)).unwrap();
    assert_ne!(cf.treatments[0][0], data.treatments[0][0]);
    let x0 = data.covariates[0][0];
    let two_steps = |dose: f64| {
        let h = 0.5;
        let x1 = x0 + h * x0 * 0.03 * dose;
        x1 + h * x1 * 0.03 * dose
    };
    let dose_f = data.treatments[0][0] as f64;
    let dose_cf = cf.treatments[0][0] as f64;
    assert_eq!(data.covariates[1][0], two_steps(dose_f));
    assert_eq!(cf.outcomes[1][0], two_steps(dose_cf));
    let diff = data.covariates[1][0] - cf.outcomes[1][0];
    let expect = two_steps(dose_f) - two_steps(dose_cf);
    assert!((diff - expect).abs() < 1e-15 && diff.abs() > 0.0);
}

#[test]
fn flipping_neighbors_recomputes_interference() {
    // path 0 - 1 - 2
    let g = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
    let data = simulate_trajectory(&g, &quiet(2, 3)).unwrap();
    let mask = vec![vec![1, 0, 1], vec![0, 0, 0], vec![1, 0, 0]];
    let spec = InterventionSpec {
        start_time: 0,
        flip: Flip::Mask(mask),
    };
    let cf = counterfactual_oracle(&data, &spec).unwrap();
    for t in 0..=2 {
        let a = &cf.treatments[t];
        assert_eq!(cf.interference[t][1], (a[0] + a[2]) as f64 / 2.0);
        assert_eq!(cf.interference[t][0], a[1] as f64);
    }
    assert_eq!(cf.treatments[0][0], 1 - data.treatments[0][0]);
    assert_eq!(cf.treatments[1], data.treatments[1]);
}

#[test]
fn dataset_directory_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let g = flickr(80, 6);
    let data = simulate_trajectory(&g, &SimParams { seed: 6, ..SimParams::default() }).unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    let bits = |rows: &[Vec<f64>]| rows.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.covariates), bits(&data.covariates));
    assert_eq!(bits(&back.noise), bits(&data.noise));
    assert_eq!(back, data);

    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &data).unwrap();
    for f in DATASET_FILES {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn corrupt_dataset_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_trajectory(&flickr(30, 1), &quiet(2, 1)).unwrap();
    write_dataset(dir.path(), &data).unwrap();
    std::fs::write(dir.path().join("A.csv"), "0,1\n").unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
}
