use nalgebra::DMatrix;
use statgeo::decoder::{toy_circle_codes, toy_decoder, ToyFamily};
use statgeo::land::{euclidean_init, land_fit, LandConfig};
use statgeo::metric::{grid_build, GridSpec, LatentMetric};
use statgeo::RngStream;

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn constant_metric_fit_is_the_euclidean_mle() {
    let mut rng = RngStream::new(11);
    let points: Vec<Vec<f64>> = (0..500)
        .map(|_| vec![1.0 + rng.standard_normal(), -0.5 + rng.standard_normal()])
        .collect();
    let metric = LatentMetric::Constant(DMatrix::identity(2, 2));
    let cfg = LandConfig {
        mc_samples: 256,
        ..LandConfig::default()
    };
    let (mean0, precision0) = euclidean_init(&points, 0.0);
    let start = Some((vec![0.0, 0.0], DMatrix::identity(2, 2) * 0.5));
    let fit = land_fit(&points, &metric, start, &cfg, &mut RngStream::new(3)).unwrap();
    let m = &fit.model;
    assert!((m.mean[0] - mean0[0]).abs() < 0.1 && (m.mean[1] - mean0[1]).abs() < 0.1, "{m:?}");
    assert!(frobenius(&(&m.precision - &precision0)) < 0.15 * frobenius(&precision0), "{m:?}");
    let oracle = m.precision.determinant().sqrt() / (2.0 * std::f64::consts::PI);
    assert!((m.norm_const - oracle).abs() <= 3.0 * m.norm_const_se + 1e-12 * oracle);
    for w in fit.nll_history.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn toy_circle_land_beats_the_euclidean_gaussian() {
    let codes = toy_circle_codes(200, 0.1, &mut RngStream::new(1));
    let dec = toy_decoder(ToyFamily::Normal, &codes, 20).unwrap();
    let spec = GridSpec {
        lower: vec![-1.6, -1.6],
        upper: vec![1.6, 1.6],
        resolution: vec![17, 17],
        sigma: 0.2,
    };
    let grid = LatentMetric::Grid(grid_build(&LatentMetric::ExactPullback(dec), spec).unwrap());
    let data: Vec<Vec<f64>> = codes.iter().step_by(4).cloned().collect();
    let cfg = LandConfig {
        mc_samples: 128,
        max_iters: 5,
        ..LandConfig::default()
    };
    let fit = land_fit(&data, &grid, None, &cfg, &mut RngStream::new(5)).unwrap();
    // the fit starts at the Euclidean Gaussian and scores both with the same
    // manifold normalizer estimate
    let start = *fit.nll_history.first().unwrap();
    let end = *fit.nll_history.last().unwrap();
    assert!(end < start, "{:?}", fit.nll_history);
    assert!(fit.model.validate().is_ok());
}
