mod common;

use common::*;
use mfnets::data_io::{self, params_from_slots, THREE_MODEL_REFERENCE_FIT};
use mfnets::objective::Objective;
use mfnets::optimize::{kkt_residual, soft_threshold};
use mfnets::{
    fit, fit_sparse, single_fidelity_fit, Basis, BasisSpec, Error, FitConfig, GraphSpec, InitScheme, MfNet, NodeData,
    NodeSpec, RegConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Least-squares coefficients from the normal equations.
fn normal_equations(v: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (v.transpose() * v).cholesky().expect("full column rank").solve(&(v.transpose() * y))
}

fn root_instance(seed: u64) -> (BasisSpec, DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=2);
    let degree = rng.random_range(0..=3);
    let spec = if rng.random_bool(0.5) {
        BasisSpec::monomial(degree, dim)
    } else {
        BasisSpec::legendre(degree, vec![[-1.0, 1.0]; dim])
    };
    let n = 3 * spec.cardinality() + 2;
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    (spec, x, y)
}

#[test]
fn root_only_fits_match_the_normal_equations() {
    for seed in 0..20 {
        let (spec, x, y) = root_instance(seed);
        let basis = Basis::new(spec.clone()).unwrap();
        let expected = normal_equations(&basis.eval(&x).unwrap(), &y);
        let scale = expected.amax().max(1.0);

        let svd = single_fidelity_fit(&basis, &x, &y, None).unwrap();
        assert!((&svd - &expected).amax() <= 1e-8 * scale, "seed {seed}");

        let net = MfNet::new(GraphSpec { target: 1, nodes: vec![NodeSpec { id: 1, basis: spec }], edges: vec![] }).unwrap();
        let data = [NodeData::new(1, x, y, 1.0).unwrap()];
        let config = FitConfig { grad_tol: 1e-12, ..Default::default() };
        let r = fit(&net, &data, &config).unwrap();
        assert!((&r.params.values - &expected).amax() <= 1e-8 * scale, "seed {seed}");
    }
}

#[test]
fn chain_degree_grows_with_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let h = rng.random_range(2..=4u32);
        let p = rng.random_range(1..=2usize);
        let ids: Vec<u32> = (1..=h).collect();
        let edges: Vec<_> = if trial % 2 == 0 { (1..h).map(|j| (j, j + 1)).collect() } else { (1..h).map(|j| (j, h)).collect() };
        let spec = uniform_graph(&ids, &edges, h, p, 1);
        let chain = mfnets::graph::longest_chain(&spec, h).unwrap();
        let net = MfNet::new(spec).unwrap();
        let theta = DVector::from_fn(net.num_params(), |_, _| rng.random_range(0.5..1.5));
        let poly = net.expand_to_polynomial(&net.params_from(theta).unwrap(), h).unwrap();
        assert_eq!(poly.degree_above(1e-12), chain * p, "trial {trial}");
    }
}

#[test]
fn noiseless_truth_is_recovered_with_ample_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for trial in 0..20 {
        let h = rng.random_range(2..=3u32);
        let p = rng.random_range(1..=2usize);
        let ids: Vec<u32> = (1..=h).collect();
        let edges: Vec<_> = if trial % 2 == 0 { (1..h).map(|j| (j, j + 1)).collect() } else { (1..h).map(|j| (j, h)).collect() };
        let net = MfNet::new(uniform_graph(&ids, &edges, h, p, 1)).unwrap();
        let truth = net.params_from(DVector::from_fn(net.num_params(), |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let data: Vec<_> = ids
            .iter()
            .map(|&id| {
                let x = DMatrix::from_fn(4 * net.num_params(), 1, |_, _| rng.random_range(-1.0..1.0));
                let y = net.evaluate(&truth, id, &x).unwrap();
                NodeData::new(id, x, y, 1.0).unwrap()
            })
            .collect();
        let config = FitConfig {
            init: InitScheme::ConstantEdgeOne,
            grad_tol: 1e-12,
            max_iters: 5000,
            restarts: 4,
            seed: trial,
            ..Default::default()
        };
        let r = fit(&net, &data, &config).unwrap();
        let test = data_io::grid_1d(101);
        let want = net.evaluate(&truth, h, &test).unwrap();
        let got = net.evaluate(&r.params, h, &test).unwrap();
        let rrmse = data_io::error_report(&want, &got).unwrap().relative_rmse;
        assert!(rrmse <= 1e-6, "trial {trial}: relative rmse {rrmse}");
    }
}

#[test]
fn distinct_parameters_give_the_same_intermediate_surrogate() {
    let (net, truth) = data_io::three_model_truth();
    let learned = params_from_slots(&net, &THREE_MODEL_REFERENCE_FIT).unwrap();
    assert!((&truth.values - &learned.values).amax() > 0.1);
    let a = net.expand_to_polynomial(&truth, 2).unwrap();
    let b = net.expand_to_polynomial(&learned, 2).unwrap();
    for k in 0..3 {
        let (x, y) = (a.coefficient(&[k]), b.coefficient(&[k]));
        assert!((x - y).abs() <= 1e-2 * x.abs(), "coefficient {k}: {x} vs {y}");
    }
}

#[test]
fn fitted_true_graph_recovers_f2_from_nested_data() {
    let (truth_net, truth) = data_io::three_model_truth();
    let want = truth_net.expand_to_polynomial(&truth, 2).unwrap();
    let config = mfnets::experiments::ThreeModelConfig::default().fit;
    for seed in 0..5 {
        let p = data_io::generate_three_model(&[2, 3, 3], true, seed).unwrap();
        let r = fit(&truth_net, &p.datasets, &FitConfig { seed, ..config.clone() }).unwrap();
        assert!(r.converged);
        let got = truth_net.expand_to_polynomial(&r.params, 2).unwrap();
        for k in 0..3 {
            let (x, y) = (want.coefficient(&[k]), got.coefficient(&[k]));
            assert!((x - y).abs() <= 1e-2 * x.abs(), "seed {seed} coefficient {k}: {x} vs {y}");
        }
    }
}

#[test]
fn same_seed_same_fit() {
    let inst = random_instance(Shape::Diamond, 3);
    let config = FitConfig { init: InitScheme::Gaussian { scale: 0.3 }, restarts: 3, seed: 9, ..Default::default() };
    let a = fit(&inst.net, &inst.data, &config).unwrap();
    let b = fit(&inst.net, &inst.data, &config).unwrap();
    assert_eq!(a.params.values, b.params.values);
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn laplace_goes_through_the_sparse_solver() {
    let inst = random_instance(Shape::Star, 1);
    let config = FitConfig { reg: RegConfig::laplace(0.1), ..Default::default() };
    assert!(matches!(fit(&inst.net, &inst.data, &config), Err(Error::InvalidConfig(_))));
    let config = FitConfig { reg: RegConfig::gaussian(0.1), ..Default::default() };
    assert!(matches!(fit_sparse(&inst.net, &inst.data, &config), Err(Error::InvalidConfig(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_trace_never_increases(shape in prop::sample::select(SHAPES.to_vec()), seed in any::<u64>()) {
        let inst = random_instance(shape, seed);
        let config = FitConfig { reg: RegConfig::gaussian(1e-2), max_iters: 300, ..Default::default() };
        let r = fit(&inst.net, &inst.data, &config).unwrap();
        for w in r.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        prop_assert_eq!(r.objective(), *r.objective_trace.last().unwrap());
    }

    #[test]
    fn fit_never_worse_than_its_start(shape in prop::sample::select(SHAPES.to_vec()), seed in any::<u64>()) {
        let inst = random_instance(shape, seed);
        let config = FitConfig { max_iters: 200, ..Default::default() };
        let r = fit(&inst.net, &inst.data, &config).unwrap();
        let start = Objective::new(&inst.net, &inst.data).unwrap().value(&DVector::zeros(inst.net.num_params()));
        prop_assert!(r.objective() <= start);
    }

    #[test]
    fn lasso_solutions_satisfy_optimality(shape in prop::sample::select(SHAPES.to_vec()), seed in any::<u64>(), lambda in 0.01f64..2.0) {
        let inst = random_instance(shape, seed);
        let config = FitConfig { reg: RegConfig::laplace(lambda), max_iters: 3000, grad_tol: 1e-9, ..Default::default() };
        let r = fit_sparse(&inst.net, &inst.data, &config).unwrap();
        let (_, g) = Objective::new(&inst.net, &inst.data).unwrap().value_and_grad(&r.params.values);
        let w = config.reg.weights(inst.net.layout()).unwrap();
        prop_assert_eq!(kkt_residual(&r.params.values, &g, &w), r.grad_norm_final);
        if r.converged {
            prop_assert!(r.grad_norm_final <= 1e-4);
        }
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(v, t);
        // minimizer of (u - v)^2 / 2 + t |u| checked against nearby points
        let phi = |u: f64| 0.5 * (u - v) * (u - v) + t * u.abs();
        for du in [-1e-3, 1e-3, -0.1, 0.1] {
            prop_assert!(phi(s) <= phi(s + du) + 1e-12);
        }
        prop_assert!(s.abs() <= v.abs());
    }
}
