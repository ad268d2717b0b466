use pompkit::benchmarks::{ou2_model, LinearGaussian, Ou2Params};
use nalgebra::{DMatrix, DVector};
use pompkit::*;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// `x_n = 0.8 x_{n-1} + N(0, 1)`, `y_n ~ N(x_n, 1)`, `x_0 ~ N(0, 1)`.
struct Toy;

impl PompModel for Toy {
    fn rinit(&self, _: &[f64], rng: &mut SimRng, x0: &mut [f64]) {
        x0[0] = StandardNormal.sample(rng);
    }
    fn rprocess(&self, x: &mut [f64], th: &[f64], _: f64, _: f64, rng: &mut SimRng) {
        let z: f64 = StandardNormal.sample(rng);
        x[0] = th[0] * x[0] + z;
    }
    fn dmeasure(&self, y: &[f64], x: &[f64], _: &[f64], _: f64) -> f64 {
        let e = y[0] - x[0];
        -0.5 * (e * e + (2.0 * std::f64::consts::PI).ln())
    }
}

#[test]
fn lag_zero_smoother_reproduces_the_filter() {
    let d = TimeSeriesData::read_csv_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ou2_seed1.csv")).unwrap();
    let m = ou2_model();
    let th = Ou2Params::default().to_param_vector();
    for seed in [1, 2, 3] {
        let rng = RngStream::new(seed);
        let f = pfilter(&m, &th, &d, 300, &rng, &FilterOptions::default()).unwrap();
        let s = psmooth(&m, &th, &d, 300, 0, &rng, &SmoothOptions::default()).unwrap();
        assert_eq!(f.loglik.to_bits(), s.loglik.to_bits());
        assert_eq!(s.state_means.as_slice(), s.filter_state_means.as_slice());
    }
}

#[test]
fn full_lag_on_three_steps_matches_the_exact_smoother() {
    let ys = [0.7, -0.4, 1.3];
    let m = ModelSpec::new("toy", 1, 1, vec!["a".into()], vec![], 0.0, vec![1.0, 2.0, 3.0], Arc::new(Toy)).unwrap();
    let d = TimeSeriesData::new(vec![1.0, 2.0, 3.0], 1, ys.to_vec()).unwrap();
    let th = ParamVector::for_model(&m, vec![0.8]).unwrap();
    let lg = LinearGaussian {
        a: DMatrix::from_element(1, 1, 0.8),
        c: DVector::zeros(1),
        q: DMatrix::identity(1, 1),
        h: DMatrix::identity(1, 1),
        d: DVector::zeros(1),
        r: DMatrix::identity(1, 1),
        m0: DVector::zeros(1),
        p0: DMatrix::identity(1, 1),
    };
    let exact = lg.run(&ys.iter().map(|y| vec![*y]).collect::<Vec<_>>()).unwrap();
    let target = exact.smoother_means[0][0];

    let est: Vec<f64> = (0..10)
        .map(|s| {
            let out = psmooth(&m, &th, &d, 100_000, 2, &RngStream::new(s), &SmoothOptions::default()).unwrap();
            out.state_means.get(0, 0)
        })
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!((mean - target).abs() < 3.0 * se.max(1e-4), "{mean} vs {target} (se {se})");
}

#[test]
fn lag_beyond_the_series_is_rejected() {
    let d = TimeSeriesData::read_csv_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ou2_seed1.csv")).unwrap();
    let th = Ou2Params::default().to_param_vector();
    let r = psmooth(&ou2_model(), &th, &d, 10, 100, &RngStream::new(1), &SmoothOptions::default());
    assert!(matches!(r, Err(PompError::InvalidArgument(_))));
}
