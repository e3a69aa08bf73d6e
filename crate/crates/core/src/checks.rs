//! Fast self-checks of the numerical core: gradient against finite
//! differences, positive semi-definiteness of localized covariances, model
//! invariants. Shared by the `check` command and the test suites.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adaptive::{cost_3d, grad_3d, CostContext, GammaPrior};
use crate::denkf::ObsSpaceForecast;
use crate::ensemble::{Ensemble, Observation, ObservationOperator};
use crate::error::Result;
use crate::localization::{
    build_rho, localize_cov, GroupMapping, LocalizationFunction, LocalizationGeometry,
    LocalizationSpec, MeanFunction, RadiiVector,
};
use crate::models::{
    arakawa_jacobian, helmholtz_operator_dense, integrate_with_step, lorenz96_tendency, Lorenz96,
    Lorenz96Config, ModelSystem, QgConfig, QgModel,
};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed metric.
    pub metric: f64,
    pub threshold: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (limit {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            self.threshold
        )
    }
}

fn outcome(name: &'static str, metric: f64, threshold: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: metric.is_finite() && metric < threshold,
        metric,
        threshold,
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A small random filtering problem on a Lorenz'96 ring.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: Lorenz96,
    pub h: ObservationOperator,
    pub forecast: Ensemble,
    pub obs: Observation,
    pub spec: LocalizationSpec,
    pub prior: GammaPrior,
    pub upsilon: RadiiVector,
}

impl RandomInstance {
    /// `n ≤ max_n`, `m ≤ max_m`, `N ≤ max_members`, with `groups` cyclic
    /// radius groups.
    pub fn generate(
        rng: &mut impl Rng,
        mean: MeanFunction,
        groups: usize,
        max_n: usize,
        max_m: usize,
        max_members: usize,
    ) -> Result<Self> {
        let n = rng.random_range(groups.max(4)..=max_n.max(groups.max(4)));
        let model = Lorenz96::new(Lorenz96Config {
            n,
            ..Default::default()
        })?;
        let m = rng.random_range(2..=max_m.min(n));
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        let mut indices = pool[..m].to_vec();
        indices.sort_unstable();
        let h = ObservationOperator::new(indices, n)?;
        let members = rng.random_range(3..=max_members.max(3));
        let scale = rng.random_range(0.5..2.0);
        let center: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let forecast = Ensemble::new(DMatrix::from_fn(n, members, |i, _| {
            center[i] + scale * normal(rng)
        }))?;
        let values = DVector::from_iterator(
            m,
            h.indices()
                .iter()
                .map(|&i| center[i] + 1.5 * normal(rng))
                .collect::<Vec<_>>(),
        );
        let variances = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(0.3..2.0)));
        let obs = Observation::new(values, variances)?;
        let spec = LocalizationSpec {
            function: LocalizationFunction::Gauss,
            mean,
            groups: GroupMapping::cyclic(n, groups)?,
        };
        let means: Vec<f64> = (0..groups).map(|_| rng.random_range(1.0..5.0)).collect();
        let vars: Vec<f64> = means
            .iter()
            .map(|&mu| rng.random_range(0.1..0.9) * mu * mu)
            .collect();
        let prior = GammaPrior::new(means, vars)?;
        let upsilon = RadiiVector::new((0..groups).map(|_| rng.random_range(0.5..4.0)).collect())?;
        Ok(Self {
            model,
            h,
            forecast,
            obs,
            spec,
            prior,
            upsilon,
        })
    }

    pub fn obs_space(&self) -> Result<ObsSpaceForecast> {
        ObsSpaceForecast::new(&self.forecast, &self.obs, &self.h)
    }

    pub fn geometry(&self) -> Result<LocalizationGeometry> {
        LocalizationGeometry::new(&self.model, &self.h)
    }
}

/// Largest per-component relative error between the analytic gradient and
/// central differences with step `1e−6·max(1, υ_j)`, over `count` random
/// instances cycling through the differentiable combiners and 1–3 groups.
pub fn gradient_max_error(count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let mean = MeanFunction::DIFFERENTIABLE[i % 4];
        let groups = 1 + i % 3;
        let inst = RandomInstance::generate(&mut rng, mean, groups, 12, 8, 6)?;
        let os = inst.obs_space()?;
        let geo = inst.geometry()?;
        let ctx = CostContext {
            obs_space: &os,
            geometry: &geo,
            spec: &inst.spec,
            prior: &inst.prior,
            lower_bound: 1e-3,
        };
        let analytic = grad_3d(&inst.upsilon, &ctx)?;
        for j in 0..groups {
            let u = inst.upsilon.as_slice();
            let h = 1e-6 * u[j].max(1.0);
            let at = |delta: f64| -> Result<f64> {
                let mut v = u.to_vec();
                v[j] += delta;
                Ok(cost_3d(&RadiiVector::new(v)?, &ctx)?.value)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            let scale = analytic[j].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((analytic[j] - fd).abs() / scale);
        }
    }
    Ok(worst)
}

pub fn gradient_check(count: usize, seed: u64) -> Result<CheckOutcome> {
    Ok(outcome("gradient vs finite differences", gradient_max_error(count, seed)?, 1e-5))
}

/// Points on a line at unit spacing. The uniform-radius Gaussian taper is a
/// positive-definite kernel here, so any loss of definiteness comes from
/// mixing radii.
struct Line(usize);

impl ModelSystem for Line {
    fn dim(&self) -> usize {
        self.0
    }
    fn tendency(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn distance(&self, i: usize, j: usize) -> f64 {
        i.abs_diff(j) as f64
    }
    fn default_timestep(&self) -> f64 {
        1.0
    }
}

/// Smallest `λ_min(ρ∘P)/trace(P)` over `count` draws of a full-rank
/// Wishart `P = AAᵀ` (`A` square standard normal, `n ≤ 10`) and per-component
/// radii uniform on `[0.2, 8]`, for every differentiable combiner.
///
/// Not a theorem: mixed radii can make `ρ` indefinite, and rank-deficient
/// `P` then exposes it. Full-rank `P` rarely does.
pub fn psd_worst(count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let n = rng.random_range(2..=10);
        let a = DMatrix::from_fn(n, n, |_, _| normal(&mut rng));
        let p = &a * a.transpose();
        let trace = p.trace();
        let radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..8.0)).collect();
        for mean in MeanFunction::DIFFERENTIABLE {
            let rho = build_rho(&Line(n), LocalizationFunction::Gauss, mean, &radii)?;
            let local = localize_cov(&rho, &p)?;
            let eig = SymmetricEigen::new(local).eigenvalues.min();
            worst = worst.min(eig / trace);
        }
    }
    Ok(worst)
}

pub fn psd_check(count: usize, seed: u64) -> Result<CheckOutcome> {
    Ok(outcome("localized covariance PSD", -psd_worst(count, seed)?, 1e-10))
}

/// `max_i |dx/dt|` at the uniform equilibrium `x = F·1`.
pub fn lorenz_equilibrium_residual() -> Result<f64> {
    let model = Lorenz96::new(Lorenz96Config::default())?;
    let x = DVector::from_element(model.dim(), 8.0);
    Ok(lorenz96_tendency(&model, 0.0, &x)?.amax())
}

struct Decay;

impl ModelSystem for Decay {
    fn dim(&self) -> usize {
        2
    }
    fn tendency(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        // rotation with damping; exact solution known in closed form
        out[0] = -0.3 * x[0] - x[1];
        out[1] = x[0] - 0.3 * x[1];
    }
    fn distance(&self, i: usize, j: usize) -> f64 {
        i.abs_diff(j) as f64
    }
    fn default_timestep(&self) -> f64 {
        0.1
    }
}

/// Observed convergence order of RK4 on a damped rotation, from the two
/// finest of three step halvings.
pub fn rk4_observed_order() -> Result<f64> {
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let t: f64 = 2.0;
    let exact = DVector::from_vec(vec![(-0.3 * t).exp() * t.cos(), (-0.3 * t).exp() * t.sin()]);
    let errs = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| Ok((integrate_with_step(&Decay, &x0, 0.0, t, dt)? - &exact).norm()))
        .collect::<Result<Vec<f64>>>()?;
    Ok((errs[0] / errs[1]).log2().min((errs[1] / errs[2]).log2()))
}

/// Relative size of `Σ J`, `Σ a·J` and `Σ b·J` for the Arakawa Jacobian of
/// random fields that vanish on the boundary ring, summed over every node.
pub fn arakawa_conservation(grid: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = grid + 2;
    let h = 1.0 / (grid as f64 + 1.0);
    let embed = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut f = vec![0.0; full * full];
        for iy in 1..=grid {
            for ix in 1..=grid {
                f[iy * full + ix] = normal(rng);
            }
        }
        f
    };
    let a = embed(&mut rng);
    let b = embed(&mut rng);
    let j = arakawa_jacobian(full, h, &a, &b);
    let scale_j: f64 = j.iter().map(|v| v.abs()).sum();
    let scale_aj: f64 = j.iter().zip(&a).map(|(x, y)| (x * y).abs()).sum();
    let scale_bj: f64 = j.iter().zip(&b).map(|(x, y)| (x * y).abs()).sum();
    let s0: f64 = j.iter().sum();
    let s1: f64 = j.iter().zip(&a).map(|(x, y)| x * y).sum();
    let s2: f64 = j.iter().zip(&b).map(|(x, y)| x * y).sum();
    (s0.abs() / scale_j)
        .max(s1.abs() / scale_aj)
        .max(s2.abs() / scale_bj)
}

/// Relative error of the banded Helmholtz solve against a manufactured
/// solution whose right-hand side comes from the dense operator.
pub fn helmholtz_residual(grid: usize) -> Result<f64> {
    let cfg = QgConfig {
        grid,
        ..Default::default()
    };
    let model = QgModel::new(cfg)?;
    let h = model.spacing();
    let n = grid * grid;
    let exact = DVector::from_fn(n, |k, _| {
        let (ix, iy) = ((k % grid) as f64 + 1.0, (k / grid) as f64 + 1.0);
        (std::f64::consts::PI * ix * h).sin() * (2.0 * std::f64::consts::PI * iy * h).sin()
            + 0.3 * (3.0 * std::f64::consts::PI * ix * h).sin() * (std::f64::consts::PI * iy * h).sin()
    });
    let q = helmholtz_operator_dense(grid, cfg.big_f) * &exact;
    let psi = DVector::from_vec(model.helmholtz_solve(q.as_slice())?);
    Ok((psi - &exact).norm() / exact.norm())
}

/// The full fast suite.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let order = rk4_observed_order()?;
    Ok(vec![
        gradient_check(20, seed)?,
        psd_check(50, seed)?,
        outcome("Lorenz'96 equilibrium tendency", lorenz_equilibrium_residual()?, f64::MIN_POSITIVE),
        CheckOutcome {
            name: "RK4 observed order",
            passed: order >= 3.9,
            metric: order,
            threshold: 3.9,
        },
        outcome("Arakawa conservation", arakawa_conservation(17, seed), 1e-10),
        outcome("Helmholtz manufactured solution", helmholtz_residual(17)?, 1e-8),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_all(0).unwrap() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn instances_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in 1..=3 {
            let inst = RandomInstance::generate(&mut rng, MeanFunction::Mean, g, 12, 8, 6).unwrap();
            assert!(inst.model.dim() <= 12 && inst.h.obs_dim() <= 8 && inst.forecast.size() <= 6);
            assert_eq!(inst.upsilon.len(), g);
        }
    }
}
