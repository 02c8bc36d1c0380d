mod common;

use common::{check_image_gradient, random_image};
use preimage_forge::cnn::FeatureCode;
use preimage_forge::objectives::{actmax_term, inversion_term, ObjectiveSpec};
use preimage_forge::regularizers::*;
use preimage_forge::Image;
use proptest::prelude::*;

fn field(h: usize, w: usize, c: usize, seed: u64) -> Field {
    Field {
        dx: random_image(h, w, c, seed),
        dy: random_image(h, w, c, seed + 1),
    }
}

fn field_dot(a: &Field, b: &Field) -> f64 {
    a.dx.dot(&b.dx).unwrap() + a.dy.dot(&b.dy).unwrap()
}

#[test]
fn tv_gradient_matches_differences() {
    for (seed, eps) in [(1, 0.05), (2, 0.2), (3, 1.0)] {
        let u = random_image(9, 8, 2, seed);
        let (_, g) = tv(&u, eps).unwrap();
        let worst = check_image_gradient(|x| tv(x, eps).unwrap().0, &u, &g, 100, seed);
        assert!(worst <= 1e-6, "eps {eps}: {worst:e}");
    }
}

#[test]
fn dirichlet_gradient_matches_differences() {
    let u = random_image(10, 7, 3, 4);
    let (_, g) = dirichlet(&u).unwrap();
    let worst = check_image_gradient(|x| dirichlet(x).unwrap().0, &u, &g, 200, 5);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn weighted_spec_gradient_matches_differences() {
    let u = random_image(6, 6, 1, 6);
    let spec = RegularizerSpec::tv(0.3, 0.1);
    let (_, g) = spec.weighted(&u).unwrap().unwrap();
    let worst = check_image_gradient(|x| spec.weighted(x).unwrap().unwrap().0, &u, &g, 36, 7);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn tv_of_constants_has_exactly_zero_gradient() {
    for c in [0.0, 0.3, -7.25, 1e6] {
        let u = Image::filled(5, 7, 3, c).unwrap();
        let (_, g) = tv(&u, 1e-3).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn objective_cotangents_match_differences() {
    let target = FeatureCode::new(vec![0.3, -1.2, 2.0, 0.0, 0.7], 0);
    let x = FeatureCode::new(vec![1.1, -0.4, 1.5, 0.25, -0.6], 0);
    let specs = [
        ObjectiveSpec::inversion(target.clone(), 2, 1.7).unwrap(),
        ObjectiveSpec::inversion(target, 1, 0.9).unwrap(),
        ObjectiveSpec::activation_max(0, 3, 2.5).unwrap(),
    ];
    for spec in &specs {
        let f = |c: &FeatureCode| spec.evaluate(c).unwrap().0;
        let (_, cot) = spec.evaluate(&x).unwrap();
        for i in 0..x.len() {
            let h = 1e-6;
            let mut p = x.clone();
            let mut m = x.clone();
            p.values[i] += h;
            m.values[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let err = (fd - cot.values[i]).abs() / fd.abs().max(cot.values[i].abs()).max(1e-300);
            assert!(fd == cot.values[i] || err <= 1e-9, "{:?} [{i}]: {fd} vs {}", spec.kind, cot.values[i]);
        }
    }
}

#[test]
fn z_only_rescales_the_gradient() {
    let target = FeatureCode::new(vec![0.5, 0.25, -1.0], 0);
    let x = FeatureCode::new(vec![-0.3, 0.8, 0.1], 0);
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (n(a) * n(b))
    };
    for p in [1, 2] {
        let a = inversion_term(&x, &ObjectiveSpec::inversion(target.clone(), p, 1.0).unwrap()).unwrap().1;
        let b = inversion_term(&x, &ObjectiveSpec::inversion(target.clone(), p, 10.0).unwrap()).unwrap().1;
        assert!((cos(&a.values, &b.values) - 1.0).abs() <= 1e-12);
    }
    let a = actmax_term(&x, &ObjectiveSpec::activation_max(0, 1, 1.0).unwrap()).unwrap().1;
    let b = actmax_term(&x, &ObjectiveSpec::activation_max(0, 1, 10.0).unwrap()).unwrap().1;
    assert!((cos(&a.values, &b.values) - 1.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_the_negative_adjoint(h in 1usize..10, w in 1usize..10, c in 1usize..3, seed in any::<u64>()) {
        let u = random_image(h, w, c, seed);
        let v = field(h, w, c, seed.wrapping_add(7));
        let lhs = field_dot(&grad(&u), &v);
        let rhs = -u.dot(&div(&v).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn dirichlet_is_quadratic(seed in any::<u64>(), t in -3.0f64..3.0) {
        let u = random_image(6, 5, 1, seed);
        let (e, g) = dirichlet(&u).unwrap();
        let (et, _) = dirichlet(&u.scaled(t).unwrap()).unwrap();
        prop_assert!((et - t * t * e).abs() <= 1e-10 * (1.0 + e));
        // Euler's identity for a 2-homogeneous function: ⟨∇E(u), u⟩ = 2E(u).
        prop_assert!((g.dot(&u).unwrap() - 2.0 * e).abs() <= 1e-10 * (1.0 + e));
    }

    #[test]
    fn tv_is_bounded_by_its_relaxation(seed in any::<u64>(), eps in 1e-4f64..1.0) {
        let u = random_image(7, 7, 1, seed);
        let g = grad(&u);
        let plain: f64 = g.dx.as_slice().iter().zip(g.dy.as_slice())
            .map(|(a, b)| (a * a + b * b).sqrt()).sum();
        let (v, _) = tv(&u, eps).unwrap();
        prop_assert!(v >= plain && v <= plain + 49.0 * eps + 1e-12);
    }
}
