use detfun::functionals::random_field;
use detfun::noise::{CovarianceSpec, NoisePath, PathSpec};
use detfun::rds::{
    conjugate, integrate_sns_direct, integrate_transformed, radius_path, rhs_transformed, NseParams, StepOptions,
};
use detfun::spectral::{SpectralField, SpectralGrid};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forced(g: &SpectralGrid, nu: f64, kappa: f64) -> NseParams {
    let f = SpectralField::from_fn(g, |k| {
        if k == [1, 1] || k == [2, -1] {
            Complex64::new(0.4, -0.2)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    NseParams::new(nu, kappa, f).unwrap()
}

#[test]
fn noise_free_schemes_agree() {
    let g = SpectralGrid::new(4).unwrap();
    let p = forced(&g, 0.5, 1.0);
    let mut x0 = random_field(&g, &mut ChaCha8Rng::seed_from_u64(3));
    x0 = x0.scaled(2.0 / x0.norm_h());
    let dt = 1e-3;
    let path = NoisePath::zero(&g, dt, 1000).unwrap();
    let opts = StepOptions::new(1.0, dt);
    let a = integrate_transformed(&x0, &path, &p, opts).unwrap();
    let b = integrate_sns_direct(&x0, &path, &p, opts).unwrap();
    assert!(a.last().norm_h() > 0.1);
    assert!((a.last() - b.last()).norm_h() <= 1e-8 * a.last().norm_h());
}

#[test]
fn zero_noise_conjugation_is_the_identity() {
    let g = SpectralGrid::new(3).unwrap();
    let p = forced(&g, 1.0, 0.0);
    let x0 = random_field(&g, &mut ChaCha8Rng::seed_from_u64(8));
    let path = NoisePath::zero(&g, 0.01, 100).unwrap();
    let u = integrate_transformed(&x0, &path, &p, StepOptions { t_end: 1.0, dt: 0.01, save_every: 10 }).unwrap();
    let v = conjugate(&u, &path).unwrap();
    assert_eq!(u.snapshots, v.snapshots);
}

#[test]
fn rest_stays_at_rest() {
    let g = SpectralGrid::new(3).unwrap();
    let p = NseParams::unforced(&g, 1.0, 2.0).unwrap();
    let x0 = SpectralField::zeros(&g);
    let z = SpectralField::zeros(&g);
    assert!(rhs_transformed(&x0, &z, &p).unwrap().is_zero());
    let path = NoisePath::zero(&g, 0.01, 50).unwrap();
    let opts = StepOptions::new(0.5, 0.01);
    assert!(integrate_transformed(&x0, &path, &p, opts).unwrap().snapshots.iter().all(|s| s.is_zero()));
    assert!(integrate_sns_direct(&x0, &path, &p, opts).unwrap().snapshots.iter().all(|s| s.is_zero()));
}

#[test]
fn pullback_radius_forgets_its_start() {
    let g = SpectralGrid::new(3).unwrap();
    let p = forced(&g, 1.0, 3.0);
    let q = CovarianceSpec::power_law(&g, 0.02, 4.0).unwrap();
    let dt = 1e-2;
    let r0 = |burn: f64| {
        let spec = PathSpec { seed: 21, dt, n_steps: 10, burn_steps: (burn / dt).round() as usize };
        let path = NoisePath::generate(&q, &p.ou(), spec).unwrap();
        radius_path(&path, &p, 0.1).unwrap().r2[0]
    };
    let base = 10.0 / (p.nu * p.lambda1);
    let (a, b) = (r0(base), r0(2.0 * base));
    assert!(a > 0.0);
    assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}");
}
