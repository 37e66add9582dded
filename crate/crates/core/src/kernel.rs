//! Squared-exponential kernel `λ·exp(−‖a−b‖²/(2η))`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Kernel scale `lambda`, squared width `eta` and observation-noise variance
/// `sigma_w_sq` for one output dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub lambda: f64,
    pub eta: f64,
    pub sigma_w_sq: f64,
}

impl KernelParams {
    pub fn new(lambda: f64, eta: f64, sigma_w_sq: f64) -> Result<Self> {
        let p = KernelParams {
            lambda,
            eta,
            sigma_w_sq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::input(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.sigma_w_sq >= 0.0 && self.sigma_w_sq.is_finite()) {
            return Err(Error::input(format!(
                "sigma_w_sq must be nonnegative, got {}",
                self.sigma_w_sq
            )));
        }
        Ok(())
    }

    /// `(log λ, log η, log σ_w²)`
    pub fn to_log(&self) -> [f64; 3] {
        [self.lambda.ln(), self.eta.ln(), self.sigma_w_sq.ln()]
    }

    pub fn from_log(v: &[f64]) -> Self {
        KernelParams {
            lambda: v[0].exp(),
            eta: v[1].exp(),
            sigma_w_sq: v[2].exp(),
        }
    }

    /// Kernel value without dimension checks.
    #[inline]
    pub fn k(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.k_sq(sq_dist(a, b))
    }

    #[inline]
    pub fn k_sq(&self, r2: f64) -> f64 {
        self.lambda * (-r2 / (2.0 * self.eta)).exp()
    }

    /// `[k(z, c₁), …, k(z, c_N)]`
    pub fn k_vec(&self, z: &DVector<f64>, centers: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(centers.len(), centers.iter().map(|c| self.k(z, c)))
    }
}

#[inline]
pub fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn eval_kernel(za: &DVector<f64>, zb: &DVector<f64>, params: &KernelParams) -> Result<f64> {
    check_dim(za.len(), zb.len())?;
    if za.is_empty() {
        return Err(Error::input("kernel inputs must have dimension ≥ 1"));
    }
    Ok(params.k(za, zb))
}

fn check_points(a: &[DVector<f64>]) -> Result<usize> {
    let first = a.first().ok_or_else(|| Error::input("empty point list"))?;
    let d = first.len();
    for p in a {
        check_dim(d, p.len())?;
    }
    Ok(d)
}

/// Squared-distance matrix via `‖a‖²+‖b‖²−2aᵀb`, clamped at zero.
pub fn sq_dist_matrix(a: &[DVector<f64>], b: &[DVector<f64>]) -> DMatrix<f64> {
    let na: Vec<f64> = a.iter().map(|v| v.norm_squared()).collect();
    let nb: Vec<f64> = b.iter().map(|v| v.norm_squared()).collect();
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        (na[i] + nb[j] - 2.0 * a[i].dot(&b[j])).max(0.0)
    })
}

pub fn gram(a: &[DVector<f64>], b: &[DVector<f64>], params: &KernelParams) -> Result<DMatrix<f64>> {
    let da = check_points(a)?;
    let db = check_points(b)?;
    check_dim(da, db)?;
    Ok(gram_unchecked(a, b, params))
}

pub(crate) fn gram_unchecked(
    a: &[DVector<f64>],
    b: &[DVector<f64>],
    params: &KernelParams,
) -> DMatrix<f64> {
    sq_dist_matrix(a, b).map(|r2| params.k_sq(r2))
}

/// Derivatives of `K(A, A)` in log-parameterization:
/// `(∂K/∂log λ, ∂K/∂log η)`.
pub fn kernel_grad_hyper(
    a: &[DVector<f64>],
    params: &KernelParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_points(a)?;
    let d = sq_dist_matrix(a, a);
    let k = d.map(|r2| params.k_sq(r2));
    let dk_deta = k.zip_map(&d, |kv, r2| kv * r2 / (2.0 * params.eta));
    Ok((k, dk_deta))
}

/// `∂k(za, zb)/∂za = −(za−zb)/η · k(za, zb)`
pub fn kernel_grad_input(
    za: &DVector<f64>,
    zb: &DVector<f64>,
    params: &KernelParams,
) -> Result<DVector<f64>> {
    check_dim(za.len(), zb.len())?;
    let k = params.k(za, zb);
    Ok((za - zb) * (-k / params.eta))
}

/// Normalized frequency density of the kernel,
/// `(2πη)^{n/2}·exp(−2π²η‖s‖²)`: a zero-mean Gaussian with per-coordinate
/// variance `1/(4π²η)`.
pub fn spectral_density(s: &DVector<f64>, params: &KernelParams) -> f64 {
    let n = s.len() as f64;
    (2.0 * PI * params.eta).powf(n / 2.0) * (-2.0 * PI * PI * params.eta * s.norm_squared()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(lambda: f64, eta: f64) -> KernelParams {
        KernelParams::new(lambda, eta, 0.1).unwrap()
    }

    fn rand_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<DVector<f64>> {
        (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn eval_examples() {
        let a = DVector::from_vec(vec![0.3, -1.0]);
        assert_eq!(eval_kernel(&a, &a, &p(2.0, 0.7)).unwrap(), 2.0);
        // ‖za−zb‖² = 2
        let za = DVector::from_vec(vec![1.0, 0.0]);
        let zb = DVector::from_vec(vec![0.0, 1.0]);
        let v = eval_kernel(&za, &zb, &p(1.0, 1.0)).unwrap();
        assert!((v - 0.3678794).abs() < 1e-7);
        assert!(matches!(
            eval_kernel(&za, &DVector::zeros(3), &p(1.0, 1.0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gram_diagonal_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = rand_points(&mut rng, 20, 3);
        let params = p(1.7, 0.4);
        let g = gram(&pts, &pts, &params).unwrap();
        for i in 0..20 {
            assert_eq!(g[(i, i)], 1.7);
        }
        assert_eq!((&g - g.transpose()).amax(), 0.0);
        let eig = nalgebra::SymmetricEigen::new(g.clone());
        assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn gram_rejects_mixed_dimensions() {
        let a = vec![DVector::zeros(2)];
        let b = vec![DVector::zeros(3)];
        assert!(gram(&a, &b, &p(1.0, 1.0)).is_err());
        assert!(gram(&[], &a, &p(1.0, 1.0)).is_err());
    }

    #[test]
    fn hyper_gradients_match_finite_differences() {
        let a = vec![DVector::from_vec(vec![0.2, 0.1]), DVector::from_vec(vec![-0.5, 0.9])];
        let params = p(1.3, 0.6);
        let (dl, de) = kernel_grad_hyper(&a, &params).unwrap();
        assert_eq!(dl[(0, 0)], 1.3);
        assert_eq!(de[(1, 1)], 0.0);
        let h = 1e-6;
        let eval = |ll: f64, le: f64| {
            let q = KernelParams::new(ll.exp(), le.exp(), 0.1).unwrap();
            q.k(&a[0], &a[1])
        };
        let [ll, le, _] = params.to_log();
        let fd_l = (eval(ll + h, le) - eval(ll - h, le)) / (2.0 * h);
        let fd_e = (eval(ll, le + h) - eval(ll, le - h)) / (2.0 * h);
        assert!(((fd_l - dl[(0, 1)]) / dl[(0, 1)]).abs() < 1e-6);
        assert!(((fd_e - de[(0, 1)]) / de[(0, 1)]).abs() < 1e-6);
    }

    #[test]
    fn input_gradient_examples() {
        let params = p(0.9, 0.5);
        let za = DVector::from_vec(vec![0.4, -0.2, 1.0]);
        let zb = DVector::from_vec(vec![-0.1, 0.3, 0.7]);
        assert_eq!(kernel_grad_input(&za, &za, &params).unwrap(), DVector::zeros(3));
        let ga = kernel_grad_input(&za, &zb, &params).unwrap();
        let gb = kernel_grad_input(&zb, &za, &params).unwrap();
        assert!((&ga + &gb).amax() < 1e-15);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = za.clone();
            let mut dn = za.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (params.k(&up, &zb) - params.k(&dn, &zb)) / (2.0 * h);
            assert!(((fd - ga[i]) / ga[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn spectral_density_normalizes() {
        let params = p(1.0, 1.0);
        let s0 = spectral_density(&DVector::zeros(1), &params);
        assert!((s0 - (2.0 * PI).sqrt()).abs() < 1e-12);
        // trapezoid quadrature over [−10, 10]
        let n = 200_000;
        let h = 20.0 / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let s = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * spectral_density(&DVector::from_vec(vec![s]), &params);
        }
        assert!((total * h - 1.0).abs() < 1e-6);
        let s = DVector::from_vec(vec![0.3, -0.1]);
        assert_eq!(spectral_density(&s, &params), spectral_density(&(-&s), &params));
    }

    #[test]
    fn spectral_density_is_gaussian_with_expected_variance() {
        // log-density is quadratic with coefficient −1/(2σ²), σ² = 1/(4π²η)
        let params = p(1.0, 0.37);
        let s1 = DVector::from_vec(vec![0.2]);
        let coef = (spectral_density(&s1, &params) / spectral_density(&DVector::zeros(1), &params))
            .ln()
            / 0.04;
        let var = 1.0 / (4.0 * PI * PI * params.eta);
        assert!((coef + 1.0 / (2.0 * var)).abs() < 1e-10);
    }

    #[test]
    fn params_roundtrip_json() {
        let params = KernelParams::new(0.123456789012345, 3.5e-7, 0.0).unwrap();
        let s = serde_json::to_string(&params).unwrap();
        let back: KernelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(params, back);
        assert!(KernelParams::new(0.0, 1.0, 0.0).is_err());
        assert!(KernelParams::new(1.0, -1.0, 0.0).is_err());
        assert!(KernelParams::new(1.0, 1.0, -1e-3).is_err());
    }

    proptest! {
        #[test]
        fn kernel_bounded_and_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            lambda in 0.01f64..10.0,
            eta in 0.01f64..10.0,
        ) {
            let params = p(lambda, eta);
            let a = DVector::from_vec(a);
            let b = DVector::from_vec(b);
            let kab = eval_kernel(&a, &b, &params).unwrap();
            prop_assert!(kab >= 0.0 && kab <= lambda);
            prop_assert_eq!(kab, eval_kernel(&b, &a, &params).unwrap());
        }

        #[test]
        fn gram_min_eigenvalue_bound(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..25);
            let pts = rand_points(&mut rng, n, 2);
            let params = p(rng.random_range(0.1..5.0), rng.random_range(0.05..3.0));
            let g = gram(&pts, &pts, &params).unwrap();
            let eig = nalgebra::SymmetricEigen::new(g);
            prop_assert!(eig.eigenvalues.min() >= -1e-10 * params.lambda * n as f64);
        }
    }
}
