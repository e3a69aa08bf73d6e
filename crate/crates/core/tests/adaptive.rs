mod common;

use adaloc::adaptive::{
    adaptive_cycle, cost_3d, cost_and_grad_3d, cost_grad_4d, future_penalty, grad_3d, minimize,
    minimize_with, probe, CostContext, FdScheme, FourDSettings, FutureWindows, GammaPrior,
    OptimizerSettings,
};
use adaloc::checks::RandomInstance;
use adaloc::denkf::{ForecastProducts, ObsSpaceForecast};
use adaloc::ensemble::{Ensemble, Observation, ObservationOperator};
use adaloc::localization::{
    build_rho, GroupMapping, LocalizationFunction, LocalizationGeometry, LocalizationSpec,
    MeanFunction, RadiiVector,
};
use adaloc::models::{propagate, Lorenz96, Lorenz96Config, ModelSystem};
use common::{dense_cost, dense_rho, rel};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    inst: RandomInstance,
    os: ObsSpaceForecast,
    geo: LocalizationGeometry,
}

impl Fixture {
    fn new(seed: u64, mean: MeanFunction, groups: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = RandomInstance::generate(&mut rng, mean, groups, 10, 8, 6).unwrap();
        let os = inst.obs_space().unwrap();
        let geo = inst.geometry().unwrap();
        Self { inst, os, geo }
    }

    fn ctx(&self) -> CostContext<'_> {
        CostContext {
            obs_space: &self.os,
            geometry: &self.geo,
            spec: &self.inst.spec,
            prior: &self.inst.prior,
            lower_bound: 1e-3,
        }
    }
}

#[test]
fn cost_matches_dense_state_space_form() {
    for seed in 0..12 {
        let mean = MeanFunction::ALL[seed as usize % 6];
        let mut fx = Fixture::new(seed, mean, 1 + seed as usize % 3);
        // radii small enough for a well-conditioned localized covariance
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let g = fx.inst.spec.groups.groups();
        fx.inst.upsilon = RadiiVector::new((0..g).map(|_| rng.random_range(0.6..1.5)).collect())
            .unwrap();
        let eval = cost_3d(&fx.inst.upsilon, &fx.ctx()).unwrap();
        let radii = fx.inst.spec.groups.prolong(&fx.inst.upsilon).unwrap();
        let rho = dense_rho(&fx.inst.model, mean, &radii);
        let (state_fit, obs_fit, prior) = dense_cost(
            &fx.inst.forecast,
            &fx.inst.obs,
            &fx.inst.h,
            &rho,
            fx.inst.prior.alpha(),
            fx.inst.prior.beta(),
            fx.inst.upsilon.as_slice(),
        );
        assert!(rel(eval.forecast_fit, state_fit) < 1e-9, "{} vs {state_fit}", eval.forecast_fit);
        assert!(rel(eval.obs_fit, obs_fit) < 1e-9);
        assert!(rel(eval.prior, prior) < 1e-12);
        assert!(rel(eval.value, eval.terms_sum()) < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences_for_each_combiner() {
    for (i, mean) in MeanFunction::DIFFERENTIABLE.into_iter().enumerate() {
        for groups in 1..=3 {
            let fx = Fixture::new(40 + (i * 3 + groups) as u64, mean, groups);
            let ctx = fx.ctx();
            let grad = grad_3d(&fx.inst.upsilon, &ctx).unwrap();
            for j in 0..groups {
                let u = fx.inst.upsilon.as_slice();
                let h = 1e-6 * u[j].max(1.0);
                let at = |delta: f64| {
                    let mut v = u.to_vec();
                    v[j] += delta;
                    cost_3d(&RadiiVector::new(v).unwrap(), &ctx).unwrap().value
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                assert!(rel(grad[j], fd) < 1e-5, "{mean} g={groups} j={j}: {} vs {fd}", grad[j]);
            }
        }
    }
}

#[test]
fn two_solves_equal_explicit_inverse_square() {
    let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
    let bprime = DMatrix::from_row_slice(3, 3, &[0.3, -0.1, 0.05, -0.1, 0.2, 0.4, 0.05, 0.4, -0.6]);
    let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.7, 0.1, 0.7, 1.5, 0.3, 0.1, 0.3, 1.0]);
    let z = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let inv = s.clone().try_inverse().unwrap();
    let explicit: f64 = (z.transpose() * &bprime * &inv * &inv * &b * &inv * &z)[(0, 0)];
    let chol = Cholesky::new(s).unwrap();
    let u = chol.solve(&z);
    let v = chol.solve(&chol.solve(&(&b * &u)));
    let solved: f64 = (z.transpose() * &bprime * v)[(0, 0)];
    assert!((explicit - solved).abs() <= 1e-10 * explicit.abs().max(1.0));
}

fn degenerate_context(alpha_mean: f64, var: f64) -> (ObsSpaceForecast, LocalizationGeometry, LocalizationSpec, GammaPrior) {
    let model = Lorenz96::new(Lorenz96Config { n: 6, ..Default::default() }).unwrap();
    let ens = Ensemble::new(DMatrix::from_element(6, 4, 2.0)).unwrap();
    let h = ObservationOperator::new(vec![0, 3], 6).unwrap();
    let y = Observation::with_uniform_variance(DVector::from_element(2, 2.0), 1.0).unwrap();
    (
        ObsSpaceForecast::new(&ens, &y, &h).unwrap(),
        LocalizationGeometry::new(&model, &h).unwrap(),
        LocalizationSpec::univariate(6),
        GammaPrior::uniform(1, alpha_mean, var).unwrap(),
    )
}

#[test]
fn prior_only_objective_reaches_mode() {
    // α = 2, β = 1 from mean 2, variance 2
    let (os, geo, spec, prior) = degenerate_context(2.0, 2.0);
    let ctx = CostContext {
        obs_space: &os,
        geometry: &geo,
        spec: &spec,
        prior: &prior,
        lower_bound: 1e-3,
    };
    let settings = OptimizerSettings::default();
    let start = prior.means().to_vec();
    let report = minimize_with(&settings, &start, |u| cost_and_grad_3d(u, &ctx)).unwrap();
    assert!((report.upsilon.as_slice()[0] - 1.0).abs() < 1e-4, "{:?}", report.upsilon);
    assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(report.value <= report.initial_value);
}

#[test]
fn optimizer_beats_log_grid_in_univariate_case() {
    for seed in 0..6 {
        let fx = Fixture::new(200 + seed, MeanFunction::Mean, 1);
        let ctx = fx.ctx();
        let settings = OptimizerSettings::default();
        let start = fx.inst.prior.means().to_vec();
        let report = minimize_with(&settings, &start, |u| cost_and_grad_3d(u, &ctx)).unwrap();
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
        let best_grid = (0..100)
            .map(|k| {
                let r = 10f64.powf(-1.0 + 2.5 * k as f64 / 99.0);
                cost_3d(&RadiiVector::new(vec![r]).unwrap(), &ctx)
                    .map(|c| c.value)
                    .unwrap_or(f64::INFINITY)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            report.value <= best_grid + 1e-6,
            "seed {seed}: optimizer {} vs grid {best_grid}",
            report.value
        );
    }
}

#[test]
fn tight_prior_pins_the_radius() {
    let fx = Fixture::new(7, MeanFunction::Mean, 1);
    let prior = GammaPrior::uniform(1, 3.0, 1e-6 * 9.0).unwrap();
    let products = ForecastProducts::new(&fx.inst.forecast, &fx.inst.obs, &fx.inst.h).unwrap();
    let settings = OptimizerSettings::default();
    let run = || {
        adaptive_cycle::<Lorenz96>(&prior, &products, &fx.geo, &fx.inst.spec, &settings, None)
            .unwrap()
    };
    let choice = run();
    let r = choice.report.upsilon.as_slice()[0];
    assert!((r - 3.0).abs() < 1e-2, "radius {r}");
    let full = build_rho(&fx.inst.model, LocalizationFunction::Gauss, MeanFunction::Mean, &vec![r; fx.inst.model.dim()])
        .unwrap();
    for (k, &o) in fx.inst.h.indices().iter().enumerate() {
        for i in 0..fx.inst.model.dim() {
            assert_eq!(choice.rho_state_obs[(i, k)], full[(i, o)]);
        }
    }
    let again = run();
    assert_eq!(again.report.upsilon, choice.report.upsilon);
    assert_eq!(again.rho_obs, choice.rho_obs);
}

#[test]
fn cost_stays_in_observation_space() {
    if !probe::ENABLED {
        return;
    }
    let model = Lorenz96::new(Lorenz96Config { n: 40, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ens = Ensemble::new(DMatrix::from_fn(40, 6, |_, _| rng.random_range(-2.0..2.0))).unwrap();
    let h = ObservationOperator::new((0..40).step_by(5).collect(), 40).unwrap();
    let y = Observation::with_uniform_variance(DVector::from_element(8, 0.5), 1.0).unwrap();
    let os = ObsSpaceForecast::new(&ens, &y, &h).unwrap();
    let geo = LocalizationGeometry::new(&model, &h).unwrap();
    let spec = LocalizationSpec {
        function: LocalizationFunction::Gauss,
        mean: MeanFunction::Harm,
        groups: GroupMapping::cyclic(40, 3).unwrap(),
    };
    let prior = GammaPrior::uniform(3, 4.0, 2.0).unwrap();
    let ctx = CostContext {
        obs_space: &os,
        geometry: &geo,
        spec: &spec,
        prior: &prior,
        lower_bound: 1e-3,
    };
    probe::reset();
    cost_and_grad_3d(&RadiiVector::new(vec![2.0, 3.0, 4.0]).unwrap(), &ctx).unwrap();
    let (r, c) = probe::max_shape();
    let (m, members) = (8usize, 6usize);
    let bound = m.max(members);
    assert!(r.min(c) > 0, "nothing recorded");
    assert!(r.min(c) <= bound, "object of shape {r}×{c} exceeds max(m, N) = {bound}");
}

struct FourDFixture {
    model: Lorenz96,
    h: ObservationOperator,
    forecast: Ensemble,
    obs: Observation,
    future: Vec<Observation>,
    spec: LocalizationSpec,
    prior: GammaPrior,
}

fn four_d_fixture() -> FourDFixture {
    let model = Lorenz96::new(Lorenz96Config { n: 12, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = model.initial_condition().unwrap();
    let forecast = Ensemble::new(DMatrix::from_fn(12, 5, |i, _| base[i] + rng.random_range(-1.0..1.0)))
        .unwrap();
    let h = ObservationOperator::new(vec![0, 2, 4, 6, 8, 10], 12).unwrap();
    let truth_next = adaloc::models::integrate(&model, &base, 0.0, 0.05).unwrap();
    let obs = Observation::with_uniform_variance(h.project_vector(&base).unwrap(), 1.0).unwrap();
    let future = vec![Observation::with_uniform_variance(h.project_vector(&truth_next).unwrap(), 1.0).unwrap()];
    FourDFixture {
        model,
        h,
        forecast,
        obs,
        future,
        spec: LocalizationSpec {
            function: LocalizationFunction::Gauss,
            mean: MeanFunction::Sqrt,
            groups: GroupMapping::cyclic(12, 2).unwrap(),
        },
        prior: GammaPrior::uniform(2, 3.0, 1.0).unwrap(),
    }
}

#[test]
fn four_d_with_zero_windows_is_three_d() {
    let fx = four_d_fixture();
    let products = ForecastProducts::new(&fx.forecast, &fx.obs, &fx.h).unwrap();
    let geo = LocalizationGeometry::new(&fx.model, &fx.h).unwrap();
    let ctx = CostContext {
        obs_space: &products.obs_space,
        geometry: &geo,
        spec: &fx.spec,
        prior: &fx.prior,
        lower_bound: 1e-3,
    };
    let windows = FutureWindows {
        model: &fx.model,
        h: &fx.h,
        observations: &fx.future,
        t0: 0.0,
        window: 0.05,
    };
    let ups = RadiiVector::new(vec![2.0, 3.5]).unwrap();
    let zero = FourDSettings { k: 0, ..Default::default() };
    let four = cost_grad_4d(&ups, &ctx, &products, &zero, &windows).unwrap();
    let three = cost_and_grad_3d(&ups, &ctx).unwrap();
    assert_eq!(four, three);
    assert_eq!(four.value.to_bits(), three.value.to_bits());
}

#[test]
fn four_d_schemes_agree_and_penalty_adds() {
    let fx = four_d_fixture();
    let products = ForecastProducts::new(&fx.forecast, &fx.obs, &fx.h).unwrap();
    let geo = LocalizationGeometry::new(&fx.model, &fx.h).unwrap();
    let ctx = CostContext {
        obs_space: &products.obs_space,
        geometry: &geo,
        spec: &fx.spec,
        prior: &fx.prior,
        lower_bound: 1e-3,
    };
    let windows = FutureWindows {
        model: &fx.model,
        h: &fx.h,
        observations: &fx.future,
        t0: 0.0,
        window: 0.05,
    };
    let ups = RadiiVector::new(vec![2.0, 3.5]).unwrap();
    let one = FourDSettings { k: 1, ..Default::default() };
    let central = FourDSettings { scheme: FdScheme::Central, ..one };
    let a = cost_grad_4d(&ups, &ctx, &products, &one, &windows).unwrap();
    let b = cost_grad_4d(&ups, &ctx, &products, &central, &windows).unwrap();
    let three = cost_and_grad_3d(&ups, &ctx).unwrap();
    let penalty = future_penalty(&ups, &ctx, &products, 1, &windows).unwrap();
    assert!(penalty > 0.0);
    assert_eq!(a.value, three.value + penalty);
    assert_eq!(a.future_fit, penalty);
    let (ga, gb) = (a.gradient.unwrap(), b.gradient.unwrap());
    for j in 0..2 {
        // one-sided error is O(h) with h = 1e−4·max(1, υ)
        let scale = ga[j].abs().max(gb[j].abs()).max(1.0);
        assert!((ga[j] - gb[j]).abs() <= 1e-2 * scale, "{} vs {}", ga[j], gb[j]);
    }
}

#[test]
fn four_d_zero_residual_adds_nothing() {
    // a zero-spread ensemble makes the analysis independent of the radii, so
    // future observations equal to the propagated members give zero penalty
    let model = Lorenz96::new(Lorenz96Config { n: 8, ..Default::default() }).unwrap();
    let x0 = model.initial_condition().unwrap();
    let members = DMatrix::from_fn(8, 3, |i, _| x0[i]);
    let forecast = Ensemble::new(members).unwrap();
    let h = ObservationOperator::new(vec![0, 2, 4, 6], 8).unwrap();
    let obs = Observation::with_uniform_variance(h.project_vector(forecast.mean()).unwrap(), 1.0).unwrap();
    let products = ForecastProducts::new(&forecast, &obs, &h).unwrap();
    let geo = LocalizationGeometry::new(&model, &h).unwrap();
    let spec = LocalizationSpec::univariate(8);
    let prior = GammaPrior::uniform(1, 2.0, 1.0).unwrap();
    let ctx = CostContext {
        obs_space: &products.obs_space,
        geometry: &geo,
        spec: &spec,
        prior: &prior,
        lower_bound: 1e-3,
    };
    let next = propagate(&model, &forecast, 0.0, 0.05).unwrap();
    let hx = h.project_rows(next.members()).unwrap();
    assert!((0..3).all(|e| hx.column(e) == hx.column(0)));
    let future = vec![Observation::with_uniform_variance(hx.column(0).into_owned(), 1.0).unwrap()];
    let windows = FutureWindows {
        model: &model,
        h: &h,
        observations: &future,
        t0: 0.0,
        window: 0.05,
    };
    let ups = RadiiVector::new(vec![2.0]).unwrap();
    let four = cost_grad_4d(&ups, &ctx, &products, &FourDSettings { k: 1, ..Default::default() }, &windows)
        .unwrap();
    let three = cost_and_grad_3d(&ups, &ctx).unwrap();
    assert_eq!(four.future_fit, 0.0);
    let diff = (four.gradient.unwrap() - three.gradient.unwrap()).norm();
    assert!(diff <= 1e-10);
    let settings = OptimizerSettings::default();
    let report = minimize(&settings, &ctx, &products, Some((&FourDSettings { k: 1, ..Default::default() }, &windows)))
        .unwrap();
    assert!(report.value <= report.initial_value);
}
