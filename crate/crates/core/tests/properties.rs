use advlab_core::attacks::{build_cover, AttackConfig, AttackMethod, Attacker};
use advlab_core::data::{make_holder_target, sample_regression};
use advlab_core::dist::{dp_sup_risk, random_instance, w1_discrete, w_inf_discrete, GammaInstance};
use advlab_core::experiments::verify::random_network;
use advlab_core::losses::{c_class, c_class_star, c_phi, cphi_star, CalibrationGrid, LossSpec};
use advlab_core::nn::{project_kappa, NormBudget};
use advlab_core::risk::{natural_zero_one, sandwich, zero_one_adversarial};
use advlab_core::util::{derived_rng, linf_distance};
use advlab_core::DiscreteDistribution;
use proptest::prelude::*;
use rand::Rng;

fn net_strategy() -> impl Strategy<Value = (u64, usize, usize, usize, f64)> {
    (any::<u64>(), 1usize..=3, 1usize..=12, 1usize..=4, 0.1f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kappa_dominates_differences((seed, d, w, l, s) in net_strategy(), a in prop::collection::vec(0.0f64..=1.0, 3), b in prop::collection::vec(0.0f64..=1.0, 3)) {
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let (x1, x2) = (&a[..d], &b[..d]);
        let gap = (net.eval(x1) - net.eval(x2)).abs();
        prop_assert!(gap <= net.kappa() * linf_distance(x1, x2) + 1e-9);
    }

    #[test]
    fn projection_idempotent_and_contracting((seed, d, w, l, s) in net_strategy(), k in 1.0f64..20.0) {
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let budget = NormBudget::new(k).unwrap();
        let once = project_kappa(&net, budget);
        let twice = project_kappa(&once, budget);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.kappa() <= net.kappa() + 1e-12);
        prop_assert!(once.kappa() <= k * (1.0 + 1e-9));
    }

    #[test]
    fn input_gradient_l1_below_kappa((seed, d, w, l, s) in net_strategy(), x in prop::collection::vec(0.0f64..=1.0, 3)) {
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let g = net.backward(&x[..d]).unwrap();
        let l1: f64 = g.input.iter().map(|v| v.abs()).sum();
        prop_assert!(l1 <= net.kappa() + 1e-9);
    }

    #[test]
    fn homogeneous_in_last_layer((seed, d, w, l, s) in net_strategy(), c in -5.0f64..5.0, x in prop::collection::vec(0.0f64..=1.0, 3)) {
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let mut scaled = net.clone();
        scaled.scale_output(c);
        let (u, v) = (net.eval(&x[..d]), scaled.eval(&x[..d]));
        prop_assert!((v - c * u).abs() <= 1e-12 * (1.0 + u.abs() * c.abs()));
    }

    #[test]
    fn lip1_certifies_losses(u1 in -3.0f64..3.0, u2 in -3.0f64..3.0, y in -1.0f64..=1.0, rho in 0.1f64..2.0) {
        let sy = if y < 0.0 { -1.0 } else { 1.0 };
        for (loss, label) in [
            (LossSpec::hinge(), sy),
            (LossSpec::rho_margin(rho).unwrap(), sy),
            (LossSpec::quadratic(3.0).unwrap(), y),
        ] {
            let gap = (loss.eval(u1, label) - loss.eval(u2, label)).abs();
            prop_assert!(gap <= loss.lip1().unwrap() * (u1 - u2).abs() + 1e-12);
        }
    }

    #[test]
    fn attacks_sound_and_dominant((seed, d, w, l, s) in net_strategy(), eps in 0.01f64..0.2, method in 0u8..3) {
        let d = d.min(2);
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let mut rng = derived_rng(seed, 1);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(eps..=1.0 - eps)).collect();
        let y = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let method = match method {
            0 => AttackMethod::Pgd { steps: 10, step_size: eps / 4.0, restarts: 2 },
            1 => AttackMethod::Cover { tau: eps / 3.0 },
            _ => AttackMethod::Brute { resolution: eps / 4.0 },
        };
        let attacker = Attacker::new(AttackConfig { eps, method, seed }, d).unwrap();
        let loss = LossSpec::hinge();
        let r = attacker.attack(&net, &loss, &x, y, 0).unwrap();
        prop_assert!(linf_distance(&r.x_adv, &x) <= eps + 1e-12);
        prop_assert_eq!(r.value, loss.eval(net.eval(&r.x_adv), y));
        prop_assert!(r.value >= r.clean - 1e-12);
    }

    #[test]
    fn cover_attack_monotone_in_eps((seed, d, w, l, s) in net_strategy(), k in 1usize..4) {
        // radii kτ and (k+1)τ share the lattice {jτ·2}
        let d = d.min(2);
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let tau = 0.01;
        let x = vec![0.5; d];
        let loss = LossSpec::hinge();
        let small = build_cover(2.0 * tau * k as f64, tau, d).unwrap();
        let large = build_cover(2.0 * tau * (k + 1) as f64, tau, d).unwrap();
        let a = advlab_core::attacks::attack_cover(&net, &loss, &x, 1.0, &small).unwrap().value;
        let b = advlab_core::attacks::attack_cover(&net, &loss, &x, 1.0, &large).unwrap().value;
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn sandwich_ordering((seed, d, w, l, s) in net_strategy(), eps in 0.01f64..0.2) {
        let d = d.min(2);
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let target = make_holder_target(d, 1.0, 3, seed).unwrap();
        let data = sample_regression(&target, 0.1, 12, eps, seed).unwrap();
        let reach = data.x.iter().map(|x| net.eval(x).abs()).fold(0.0, f64::max) + net.kappa() * eps;
        let loss = LossSpec::quadratic(reach + 1.0).unwrap();
        let r = sandwich(&net, &loss, &data, &AttackConfig::pgd_default(eps, seed)).unwrap();
        prop_assert!(r.natural <= r.adv_lower + 1e-9);
        prop_assert!(r.adv_lower <= r.adv_upper + 1e-9);
    }

    #[test]
    fn zero_one_at_zero_eps((seed, d, w, l, s) in net_strategy()) {
        let net = random_network(&mut derived_rng(seed, 0), d, w, l, s);
        let target = make_holder_target(d, 1.0, 3, seed).unwrap();
        let mut data = sample_regression(&target, 0.0, 20, 0.0, seed).unwrap();
        for y in &mut data.y {
            *y = if *y < 0.0 { -1.0 } else { 1.0 };
        }
        let adv = zero_one_adversarial(&net, &data, &AttackConfig::pgd_default(0.0, seed)).unwrap();
        prop_assert_eq!(adv, natural_zero_one(&net, &data).unwrap());
    }

    #[test]
    fn datasets_keep_balls_inside((seed, d) in (any::<u64>(), 1usize..=3), eps in 0.0f64..0.3) {
        let target = make_holder_target(d, 1.0, 4, seed).unwrap();
        let data = sample_regression(&target, 0.1, 50, eps, seed).unwrap();
        for x in &data.x {
            prop_assert!(x.iter().all(|&v| v - eps >= 0.0 && v + eps <= 1.0));
        }
    }

    #[test]
    fn holder_target_is_one_lipschitz(seed in any::<u64>(), d in 1usize..=3, pts in prop::collection::vec(0.0f64..=1.0, 6)) {
        let f = make_holder_target(d, 1.0, 6, seed).unwrap();
        let (a, b) = (&pts[..d], &pts[3..3 + d]);
        prop_assert!((f.eval(a) - f.eval(b)).abs() <= linf_distance(a, b) + 1e-6);
    }

    #[test]
    fn dp_sup_risk_nondecreasing_in_eps(seed in any::<u64>()) {
        let (inst, net) = random_instance(seed).unwrap();
        let loss = LossSpec::hinge();
        let pitch = inst.base.pitch();
        let lo = dp_sup_risk(&net, &loss, &GammaInstance::new(inst.base.clone(), pitch).unwrap()).unwrap().value;
        let hi = dp_sup_risk(&net, &loss, &GammaInstance::new(inst.base.clone(), 2.0 * pitch).unwrap()).unwrap().value;
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn w_inf_dominates_w1(seed in any::<u64>(), shift in prop::collection::vec(-3i64..=3, 4)) {
        let mut rng = derived_rng(seed, 0);
        let base: Vec<(Vec<i64>, f64)> = (0..4).map(|i| (vec![10 + 8 * i as i64 + rng.gen_range(0..3)], if rng.gen::<bool>() { 1.0 } else { -1.0 })).collect();
        let moved: Vec<(Vec<i64>, f64)> = base.iter().zip(&shift).map(|((x, y), s)| (vec![x[0] + s], *y)).collect();
        let p = DiscreteDistribution::empirical(1, 50, &base).unwrap();
        let q = DiscreteDistribution::empirical(1, 50, &moved).unwrap();
        prop_assert!(w_inf_discrete(&p, &q).unwrap() >= w1_discrete(&p, &q).unwrap() - 1e-12);
    }
}

#[test]
fn star_value_is_lower_envelope_and_class_gap_binary() {
    let grid = CalibrationGrid::standard();
    for loss in [LossSpec::hinge(), LossSpec::rho_margin(0.5).unwrap()] {
        for &eta in &grid.eta {
            let star = cphi_star(&loss, eta, &grid.alpha).unwrap();
            assert_eq!(c_class_star(eta), eta.min(1.0 - eta));
            for &f in &grid.f {
                assert!(c_phi(&loss, eta, f).unwrap() >= star - 1e-9);
                let gap = c_class(eta, f) - c_class_star(eta);
                assert!(gap == 0.0 || (gap - (2.0 * eta - 1.0).abs()).abs() < 1e-12);
            }
        }
    }
}
