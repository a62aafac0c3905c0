//! Synthetic objectives with known smoothness, noise and heterogeneity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::protocol::ModelMatrix;
use crate::rng::{lane, stream, Domain};

/// A finite-sum objective `f = (1/n) sum_i f_i` with noisy local gradients.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn workers(&self) -> usize;
    fn local_loss(&self, worker: usize, x: &DVector<f64>) -> f64;
    fn local_gradient(&self, worker: usize, x: &DVector<f64>) -> DVector<f64>;
    /// One noisy gradient for `worker`, keyed by `(seed, iteration)`.
    fn stochastic_gradient(&self, x: &DVector<f64>, worker: usize, seed: u64, iteration: u64) -> GradientSample;

    fn loss(&self, x: &DVector<f64>) -> f64 {
        let n = self.workers();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }

    fn full_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.workers();
        let mut g = DVector::zeros(self.dim());
        for i in 0..n {
            g += self.local_gradient(i, x);
        }
        g / n as f64
    }

    /// `(1/n) sum_i grad f_i(x_i)`, each worker at its own model.
    fn grad_avg(&self, x: &ModelMatrix) -> DVector<f64> {
        let n = self.workers();
        let mut g = DVector::zeros(self.dim());
        for i in 0..n {
            g += self.local_gradient(i, &x.column(i));
        }
        g / n as f64
    }

    fn grad_norm_sq_avg(&self, x: &ModelMatrix) -> f64 {
        self.grad_avg(x).norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub worker: usize,
    pub value: DVector<f64>,
}

fn gaussian_vector(d: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn noise_for(d: usize, sigma: f64, worker: usize, seed: u64, iteration: u64) -> DVector<f64> {
    if sigma == 0.0 {
        return DVector::zeros(d);
    }
    let mut rng = stream(seed, Domain::GradientNoise, iteration, lane(worker, 0));
    gaussian_vector(d, sigma, &mut rng)
}

/// `f_i(x) = x^T A x / 2 - b_i^T x + c_i` with one shared curvature `A`.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    b: Vec<DVector<f64>>,
    c: Vec<f64>,
    b_mean: DVector<f64>,
    c_mean: f64,
    noise_sigma: f64,
    lipschitz: f64,
    x_star: DVector<f64>,
    zeta_sq: f64,
}

impl QuadraticTask {
    /// Builds a task from an explicit symmetric positive definite `A` and
    /// per-worker linear terms. Offsets are `c_i = |b_i|^2`.
    pub fn from_parts(a: DMatrix<f64>, b: Vec<DVector<f64>>, noise_sigma: f64) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() {
            return Err(Error::Shape { expected: "square, non-empty A".into(), actual: format!("{:?}", a.shape()) });
        }
        if b.is_empty() || b.iter().any(|bi| bi.len() != d) {
            return Err(Error::Shape { expected: format!("one {d}-vector per worker"), actual: format!("{} vectors", b.len()) });
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidParameter("A is not symmetric".into()));
        }
        let eig = a.clone().symmetric_eigen();
        let lmin = eig.eigenvalues.min();
        if lmin <= 0.0 {
            return Err(Error::InvalidParameter(format!("A must be positive definite, min eigenvalue {lmin}")));
        }
        let lipschitz = eig.eigenvalues.max();
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let a_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();

        let n = b.len() as f64;
        let mut b_mean = DVector::zeros(d);
        for bi in &b {
            b_mean += bi;
        }
        b_mean /= n;
        if b.iter().all(|bi| bi == &b[0]) {
            b_mean = b[0].clone();
        }
        let c: Vec<f64> = b.iter().map(|bi| bi.norm_squared()).collect();
        let c_mean = c.iter().sum::<f64>() / n;
        let zeta_sq = b.iter().map(|bi| (bi - &b_mean).norm_squared()).sum::<f64>() / n;
        let x_star = &a_inv * &b_mean;
        Ok(Self { a, a_inv, b, c, b_mean, c_mean, noise_sigma, lipschitz, x_star, zeta_sq })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self, worker: usize) -> &DVector<f64> {
        &self.b[worker]
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Smoothness constant: largest eigenvalue of `A`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Total gradient-noise variance `d * noise_sigma^2`.
    pub fn sigma_sq(&self) -> f64 {
        self.dim() as f64 * self.noise_sigma * self.noise_sigma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq().sqrt()
    }

    /// `(1/n) sum_i |grad f_i(x) - grad f(x)|^2`, the same for every `x`.
    pub fn zeta_sq(&self) -> f64 {
        self.zeta_sq
    }

    pub fn zeta(&self) -> f64 {
        self.zeta_sq.sqrt()
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn local_minimizer(&self, worker: usize) -> DVector<f64> {
        &self.a_inv * &self.b[worker]
    }

    pub fn f0(&self) -> f64 {
        self.c_mean
    }

    pub fn f_star(&self) -> f64 {
        self.c_mean - 0.5 * self.b_mean.dot(&self.x_star)
    }
}

impl Objective for QuadraticTask {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn workers(&self) -> usize {
        self.b.len()
    }

    fn local_loss(&self, worker: usize, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b[worker].dot(x) + self.c[worker]
    }

    fn local_gradient(&self, worker: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b[worker]
    }

    fn stochastic_gradient(&self, x: &DVector<f64>, worker: usize, seed: u64, iteration: u64) -> GradientSample {
        let value = self.local_gradient(worker, x) + noise_for(self.dim(), self.noise_sigma, worker, seed, iteration);
        GradientSample { worker, value }
    }

    fn loss(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b_mean.dot(x) + self.c_mean
    }

    fn full_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b_mean
    }
}

/// Default curvature range of generated tasks.
pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_L: f64 = 1.0;

pub fn make_quadratic(n: usize, d: usize, heterogeneity: f64, noise_sigma: f64, seed: u64) -> Result<QuadraticTask> {
    make_quadratic_with_curvature(n, d, heterogeneity, noise_sigma, seed, DEFAULT_MU, DEFAULT_L)
}

/// Random quadratic task. `A = Q diag(lambda) Q^T` with eigenvalues evenly
/// spaced on `[mu, l]`; `b_i = b + delta_i` where `b` is a random unit vector
/// and the `delta_i` are centred and scaled so that `zeta = heterogeneity`.
pub fn make_quadratic_with_curvature(
    n: usize,
    d: usize,
    heterogeneity: f64,
    noise_sigma: f64,
    seed: u64,
    mu: f64,
    l: f64,
) -> Result<QuadraticTask> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!("need n, d >= 1, got n={n} d={d}")));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::InvalidParameter(format!("heterogeneity must be >= 0, got {heterogeneity}")));
    }
    if !(mu > 0.0 && l >= mu && l.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < mu <= L, got mu={mu} L={l}")));
    }
    let mut rng = stream(seed, Domain::TaskSetup, 0, 0);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let lambda = DVector::from_fn(d, |k, _| if d == 1 { l } else { mu + (l - mu) * k as f64 / (d - 1) as f64 });
    let a = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;

    let mut b_mean = gaussian_vector(d, 1.0, &mut rng);
    b_mean /= b_mean.norm();

    let mut deltas: Vec<DVector<f64>> = (0..n).map(|_| gaussian_vector(d, 1.0, &mut rng)).collect();
    let mut centre = DVector::zeros(d);
    for delta in &deltas {
        centre += delta;
    }
    centre /= n as f64;
    for delta in &mut deltas {
        *delta -= &centre;
    }
    let spread = deltas.iter().map(|x| x.norm_squared()).sum::<f64>() / n as f64;
    let scale = if n == 1 || spread == 0.0 { 0.0 } else { heterogeneity / spread.sqrt() };
    let b = deltas.iter().map(|delta| &b_mean + delta * scale).collect();
    QuadraticTask::from_parts(a, b, noise_sigma)
}

/// L2-regularised logistic regression split across workers. Constants are
/// only estimates; use it for qualitative runs.
#[derive(Debug, Clone)]
pub struct LogisticTask {
    features: Vec<DMatrix<f64>>,
    labels: Vec<DVector<f64>>,
    reg: f64,
    batch: usize,
    full_batch: bool,
}

impl LogisticTask {
    /// `samples` points per worker in `d` dimensions. Worker `i`'s features
    /// are shifted by `heterogeneity * u_i` for a random unit `u_i`.
    pub fn generate(n: usize, d: usize, samples: usize, heterogeneity: f64, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || samples == 0 || batch == 0 {
            return Err(Error::InvalidParameter("logistic task needs n, d, samples, batch >= 1".into()));
        }
        let mut rng = stream(seed, Domain::TaskSetup, 1, 0);
        let mut truth = gaussian_vector(d, 1.0, &mut rng);
        truth /= truth.norm();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut shift = gaussian_vector(d, 1.0, &mut rng);
            shift *= heterogeneity / shift.norm();
            let x = DMatrix::from_fn(samples, d, |_, c| rng.sample::<f64, _>(StandardNormal) + shift[c]);
            let y = DVector::from_fn(samples, |r, _| {
                let margin = x.row(r).transpose().dot(&truth);
                let prob = 1.0 / (1.0 + (-4.0 * margin).exp());
                if rng.random::<f64>() < prob { 1.0 } else { -1.0 }
            });
            features.push(x);
            labels.push(y);
        }
        Ok(Self { features, labels, reg: 1e-3, batch: batch.min(samples), full_batch: false })
    }

    /// Uses full local gradients instead of minibatches.
    pub fn deterministic(mut self) -> Self {
        self.full_batch = true;
        self
    }

    /// Upper estimate of the smoothness constant.
    pub fn lipschitz_estimate(&self) -> f64 {
        let max_row = self
            .features
            .iter()
            .flat_map(|x| x.row_iter().map(|r| r.norm_squared()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        max_row / 4.0 + self.reg
    }

    fn point_gradient(&self, worker: usize, row: usize, x: &DVector<f64>, out: &mut DVector<f64>) {
        let a = self.features[worker].row(row).transpose();
        let y = self.labels[worker][row];
        let z = y * a.dot(x);
        // d/dz log(1 + e^{-z}) = -1 / (1 + e^z)
        let coef = -y / (1.0 + z.exp());
        out.axpy(coef, &a, 1.0);
    }
}

fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl Objective for LogisticTask {
    fn dim(&self) -> usize {
        self.features[0].ncols()
    }

    fn workers(&self) -> usize {
        self.features.len()
    }

    fn local_loss(&self, worker: usize, x: &DVector<f64>) -> f64 {
        let m = self.features[worker].nrows();
        let margins = &self.features[worker] * x;
        let data: f64 = (0..m).map(|r| log1p_exp_neg(self.labels[worker][r] * margins[r])).sum();
        data / m as f64 + 0.5 * self.reg * x.norm_squared()
    }

    fn local_gradient(&self, worker: usize, x: &DVector<f64>) -> DVector<f64> {
        let m = self.features[worker].nrows();
        let mut g = DVector::zeros(self.dim());
        for r in 0..m {
            self.point_gradient(worker, r, x, &mut g);
        }
        g / m as f64 + x * self.reg
    }

    fn stochastic_gradient(&self, x: &DVector<f64>, worker: usize, seed: u64, iteration: u64) -> GradientSample {
        if self.full_batch {
            return GradientSample { worker, value: self.local_gradient(worker, x) };
        }
        let m = self.features[worker].nrows();
        let mut rng = stream(seed, Domain::GradientNoise, iteration, lane(worker, 1));
        let mut g = DVector::zeros(self.dim());
        for _ in 0..self.batch {
            let r = rng.random_range(0..m);
            self.point_gradient(worker, r, x, &mut g);
        }
        GradientSample { worker, value: g / self.batch as f64 + x * self.reg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_worker_line() -> QuadraticTask {
        let b = vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)];
        QuadraticTask::from_parts(DMatrix::identity(1, 1), b, 0.0).unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let t = two_worker_line();
        let zero = DVector::zeros(1);
        assert_eq!(t.zeta_sq(), 1.0);
        assert_eq!(t.x_star()[0], 0.0);
        assert_eq!(t.f_star(), 1.0);
        assert_eq!(t.f0(), 1.0);
        assert_eq!(t.loss(&zero), 1.0);
        assert_eq!(t.full_gradient(&zero)[0], 0.0);
        assert_eq!(t.lipschitz(), 1.0);
    }

    #[test]
    fn generated_constants() {
        for &(n, d, het) in &[(8, 16, 1.0), (4, 3, 0.3), (2, 1, 2.0), (5, 10, 0.0)] {
            let t = make_quadratic(n, d, het, 0.25, 11).unwrap();
            assert!((t.zeta() - het).abs() <= 1e-12 + 0.05 * het, "n={n} d={d}");
            assert!((t.lipschitz() - DEFAULT_L).abs() < 1e-12);
            assert!((t.sigma_sq() - d as f64 * 0.0625).abs() < 1e-15);
            assert!(t.full_gradient(t.x_star()).amax() < 1e-12);
            assert!((t.loss(&DVector::zeros(d)) - t.f0()).abs() < 1e-12);
            assert!((t.loss(t.x_star()) - t.f_star()).abs() < 1e-12);
            let a = t.a();
            assert!((a - a.transpose()).amax() == 0.0);
            assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn homogeneous_and_single_worker() {
        let t = make_quadratic(6, 5, 0.0, 0.1, 3).unwrap();
        let x = DVector::from_element(5, 0.7);
        for i in 1..6 {
            assert_eq!(t.local_gradient(i, &x), t.local_gradient(0, &x));
        }
        assert_eq!(t.zeta_sq(), 0.0);
        let single = make_quadratic(1, 5, 3.0, 0.1, 3).unwrap();
        assert_eq!(single.zeta_sq(), 0.0);
        assert!((single.loss(&x) - single.local_loss(0, &x)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_quadratic(0, 3, 1.0, 1.0, 0).is_err());
        assert!(make_quadratic(3, 0, 1.0, 1.0, 0).is_err());
        assert!(make_quadratic(3, 3, -1.0, 1.0, 0).is_err());
        assert!(make_quadratic(3, 3, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn noiseless_gradient_is_exact() {
        let t = make_quadratic(3, 4, 1.0, 0.0, 5).unwrap();
        let x = DVector::from_fn(4, |i, _| i as f64 - 1.5);
        let s = t.stochastic_gradient(&x, 2, 9, 17);
        assert_eq!(s.worker, 2);
        assert_eq!(s.value, t.local_gradient(2, &x));
        let own = t.local_minimizer(1);
        assert!(t.stochastic_gradient(&own, 1, 9, 0).value.amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = make_quadratic(4, 6, 1.0, 0.0, 8).unwrap();
        let mut rng = stream(99, Domain::Sampling, 0, 0);
        for _ in 0..100 {
            let x = gaussian_vector(6, 2.0, &mut rng);
            let g = t.full_gradient(&x);
            let h = 1e-5;
            let fd = DVector::from_fn(6, |k, _| {
                let mut up = x.clone();
                let mut down = x.clone();
                up[k] += h;
                down[k] -= h;
                (t.loss(&up) - t.loss(&down)) / (2.0 * h)
            });
            let rel = (&fd - &g).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-6, "{rel}");
        }
    }

    #[test]
    fn noise_variance_and_bias() {
        let sigma = 0.3;
        let t = make_quadratic(2, 5, 1.0, sigma, 4).unwrap();
        let x = DVector::from_element(5, 0.2);
        let exact = t.local_gradient(0, &x);
        let draws = 10_000;
        let mut mean = DVector::zeros(5);
        let mut sq = 0.0;
        for k in 0..draws {
            let e = t.stochastic_gradient(&x, 0, 31, k).value - &exact;
            sq += e.norm_squared();
            mean += e;
        }
        mean /= draws as f64;
        let var = sq / draws as f64;
        assert!((var / t.sigma_sq() - 1.0).abs() < 0.10, "{var}");
        let se = sigma / (draws as f64).sqrt();
        assert!(mean.amax() < 4.0 * se, "{mean}");
    }

    #[test]
    fn gradient_average_of_identical_columns() {
        let t = make_quadratic(3, 4, 1.0, 0.0, 2).unwrap();
        let x = DVector::from_element(4, -0.4);
        let m = ModelMatrix::replicated(&x, 3);
        assert!((t.grad_avg(&m) - t.full_gradient(&x)).amax() < 1e-14);
        assert!((t.grad_norm_sq_avg(&m) - t.full_gradient(&x).norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let t = LogisticTask::generate(3, 4, 50, 0.5, 8, 1).unwrap();
        let x = DVector::from_fn(4, |i, _| 0.3 * i as f64 - 0.2);
        let h = 1e-6;
        for i in 0..3 {
            let g = t.local_gradient(i, &x);
            for k in 0..4 {
                let mut up = x.clone();
                let mut down = x.clone();
                up[k] += h;
                down[k] -= h;
                let fd = (t.local_loss(i, &up) - t.local_loss(i, &down)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7);
            }
        }
        let full = t.clone().deterministic().stochastic_gradient(&x, 1, 0, 0).value;
        assert_eq!(full, t.local_gradient(1, &x));
        assert!(t.lipschitz_estimate() > 0.0);
    }

    proptest! {
        #[test]
        fn loss_bounded_below_by_optimum(seed in 0u64..1000, v in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let t = make_quadratic(3, 4, 1.0, 0.0, seed).unwrap();
            let x = DVector::from_vec(v);
            prop_assert!(t.loss(&x) >= t.f_star() - 1e-12);
        }
    }
}
