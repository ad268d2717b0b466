use nalgebra::{DMatrix, DVector};
use pompkit::benchmarks::gompertz::gompertz_model_with_len;
use pompkit::benchmarks::ou2::ou2_model_with_len;
use pompkit::benchmarks::{gompertz_exact_loglik, GompertzParams, LinearGaussian, Ou2Params};
use pompkit::model::simulate;
use pompkit::*;

#[test]
fn ou2_simulation_is_reproducible() {
    let m = ou2_model_with_len(100);
    let th = Ou2Params::default().to_param_vector();
    let (a, _) = simulate(&m, &th, &RngStream::new(1)).unwrap();
    let (b, _) = simulate(&m, &th, &RngStream::new(1)).unwrap();
    assert_eq!(a.len(), 100);
    assert_eq!(a.dim_obs(), 2);
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let (c, _) = simulate(&m, &th, &RngStream::new(2)).unwrap();
    assert_ne!(a.values(), c.values());
}

#[test]
fn ou2_without_noise_follows_the_recursion() {
    let p = Ou2Params {
        sigma: [0.0; 3],
        tau: 0.0,
        ..Default::default()
    };
    let m = ou2_model_with_len(20);
    let (d, _) = simulate(&m, &p.to_param_vector(), &RngStream::new(3)).unwrap();
    let a = p.alpha;
    let mut x = p.x0;
    for n in 0..20 {
        x = [a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]];
        assert!((d.row(n)[0] - x[0]).abs() < 1e-12 && (d.row(n)[1] - x[1]).abs() < 1e-12);
    }
}

#[test]
fn gompertz_log_mean_matches_stationary_ar1() {
    let p = GompertzParams::default();
    let (d, _) = simulate(&gompertz_model_with_len(100), &p.to_param_vector(), &RngStream::new(1)).unwrap();
    let logs: Vec<f64> = d.values().iter().map(|y| y.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    // log X is AR(1) with coefficient s around log K, log Y adds N(0, tau^2).
    let s = (-p.r).exp();
    let var_x = p.sigma * p.sigma / (1.0 - s * s);
    let se = ((var_x * (1.0 + s) / (1.0 - s) + p.tau * p.tau) / n).sqrt();
    assert!((mean - p.K.ln()).abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn gompertz_oracle_matches_generic_kalman_on_log_scale() {
    let p = GompertzParams {
        r: 0.3,
        K: 2.0,
        sigma: 0.2,
        tau: 0.15,
        X0: 1.5,
    };
    let (d, _) = simulate(&gompertz_model_with_len(60), &p.to_param_vector(), &RngStream::new(9)).unwrap();
    let s = (-p.r).exp();
    let lg = LinearGaussian {
        a: DMatrix::from_element(1, 1, s),
        c: DVector::from_element(1, (1.0 - s) * p.K.ln()),
        q: DMatrix::from_element(1, 1, p.sigma * p.sigma),
        h: DMatrix::identity(1, 1),
        d: DVector::zeros(1),
        r: DMatrix::from_element(1, 1, p.tau * p.tau),
        m0: DVector::from_element(1, p.X0.ln()),
        p0: DMatrix::zeros(1, 1),
    };
    let ys: Vec<Vec<f64>> = d.values().iter().map(|y| vec![y.ln()]).collect();
    let jac: f64 = d.values().iter().map(|y| y.ln()).sum();
    let generic = lg.run(&ys).unwrap().loglik - jac;
    let oracle = gompertz_exact_loglik(&p, &d).unwrap();
    assert!((generic - oracle).abs() < 1e-9, "{generic} vs {oracle}");
}

#[test]
fn pfilter_is_seed_deterministic_and_near_the_oracle() {
    let m = gompertz_model_with_len(50);
    let p = GompertzParams::default();
    let (d, _) = simulate(&m, &p.to_param_vector(), &RngStream::new(4)).unwrap();
    let th = p.to_param_vector();
    let run = |s| pfilter(&m, &th, &d, 2000, &RngStream::new(s), &FilterOptions::default()).unwrap();
    let (a, b) = (run(11), run(11));
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    assert_eq!(a.cond_loglik, b.cond_loglik);
    let exact = gompertz_exact_loglik(&p, &d).unwrap();
    assert!((a.loglik - exact).abs() < 1.0, "{} vs {exact}", a.loglik);
}
