use inozemtsev::dispersion::DispersionContext;
use inozemtsev::elliptic::C64;
use inozemtsev::stringfeas::{self, FeasStatus};
use inozemtsev::strings::{self, ExampleSolution, QString};
use std::f64::consts::PI;

// ∫ f over ℝ through θ = a·tan(u), midpoint rule in u
fn integrate_tan(f: impl Fn(f64) -> f64, a: f64, n: usize) -> f64 {
    let h = PI / n as f64;
    (0..n)
        .map(|i| {
            let u = -0.5 * PI + (i as f64 + 0.5) * h;
            let c = u.cos();
            f(a * u.tan()) * a / (c * c)
        })
        .sum::<f64>()
        * h
}

#[test]
fn cauchy_kernels_have_unit_mass() {
    for p in 1..=35 {
        let m = integrate_tan(|t| strings::kernel_p(p, t), p as f64, 20_000);
        assert!((m - 1.0).abs() < 1e-9, "P = {p}: {m}");
    }
}

// ∫ K_P(θ) cos(ωθ) dθ: Simpson over a whole number of periods, then the
// integration-by-parts tail −2K′(X)/ω² (sin ωX = 0 there)
fn cosine_transform(p: usize, w: f64) -> f64 {
    let periods = (2000.0 * w / (2.0 * PI)).ceil().max(1.0);
    let x = 2.0 * PI * periods / w;
    let n = 2 * ((x / 0.004) as usize / 2);
    let h = x / n as f64;
    let f = |t: f64| strings::kernel_p(p, t) * (w * t).cos();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    let pf = p as f64;
    let dk = -2.0 * pf * x / (PI * (pf * pf + x * x).powi(2));
    2.0 * s * h / 3.0 - 2.0 * dk / (w * w)
}

#[test]
fn kernel_transform_matches_quadrature() {
    for p in [1usize, 2, 5] {
        for i in 1..=20 {
            let w = 0.1 * i as f64;
            let q = cosine_transform(p, w);
            assert!((q - strings::kernel_p_hat(p, w)).abs() < 1e-8, "P = {p}, w = {w}: {q}");
        }
    }
}

#[test]
fn string_kernels_symmetric_with_expected_mass() {
    for p in 1..=8 {
        for q in 1..=8 {
            for t in [0.0, 0.3, 2.0, 11.0] {
                assert_eq!(strings::kernel_pq(p, q, t), strings::kernel_pq(q, p, t));
            }
            let want = 2.0 * p.min(q) as f64 - if p == q { 1.0 } else { 0.0 };
            assert_eq!(strings::string_kernel_mass(p, q), want);
            assert!((strings::string_kernel_hat(p, q, 0.0) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn large_kappa_strings_are_xxx_strings() {
    let ctx = DispersionContext::new(10.0, 1.0).unwrap();
    for q in 1..=6 {
        for t in [-3.0, -0.4, 0.0, 0.7, 5.0] {
            let qf = q as f64;
            let s = QString::new(q, t).unwrap();
            let e = strings::qstring_energy(&s, &ctx).unwrap();
            let dp = strings::qstring_momentum_derivative(&s, &ctx).unwrap().abs();
            let xxx = qf / (t * t + qf * qf / 4.0);
            assert!((e - 0.5 * xxx).abs() < 1e-4, "Q = {q}, θ = {t}: {e}");
            assert!((dp - xxx).abs() < 1e-4, "Q = {q}, θ = {t}: {dp}");
        }
    }
}

#[test]
fn string_momenta_closed_under_conjugation() {
    let ctx = DispersionContext::new(1.26, 1.0).unwrap();
    for q in 1..=7 {
        for t in [-2.0, 0.0, 0.15, 1.3] {
            let m = strings::qstring_momenta(&QString::new(q, t).unwrap(), &ctx).unwrap();
            let p = m.total_momentum();
            let e = m.total_energy(&ctx).unwrap();
            assert!(p.im.abs() < 1e-10 && e.im.abs() < 1e-10, "Q = {q}, θ = {t}");
            // even strings inside the band pair −π + iκ-type points instead
            if q % 2 == 1 || t.abs() > ctx.theta_crit() {
                for x in &m.momenta {
                    assert!(m.momenta.iter().any(|y| (to_strip(*y) - to_strip(x.conj())).norm() < 1e-9));
                }
            }
        }
    }
}

fn to_strip(p: C64) -> C64 {
    inozemtsev::dispersion::to_strip(p)
}

#[test]
fn rescaled_one_string_is_the_dispersion() {
    let ctx = DispersionContext::new(1.23, 1.0).unwrap();
    for i in 1..20 {
        let p = 0.3 * i as f64;
        let e = strings::rescaled_energy(1, p, &ctx).unwrap();
        assert!((e - ctx.epsilon(C64::new(p, 0.0)).unwrap().re).abs() < 1e-10);
    }
}

#[test]
fn binding_inequality_small_grid() {
    let ctx = DispersionContext::new(1.23, 1.0).unwrap();
    let ps: Vec<f64> = (1..=12).map(|i| 0.5 * i as f64).collect();
    for (m, p, margin) in strings::binding_margins(12, &ps, &ctx).unwrap() {
        assert!(margin >= -1e-12, "M = {m}, p = {p}: {margin}");
    }
}

#[test]
fn example_a_momenta_and_example_b_verdict() {
    let ctx = DispersionContext::new(1.26, 1.0).unwrap();
    let a = strings::build_example_solution(&ExampleSolution::ExampleA { theta_r: 1.4, theta_i: 1.89 }, &ctx).unwrap();
    for want in [C64::new(0.244, 2.175), C64::new(0.132, 4.761), C64::new(0.244, -0.345)] {
        assert!(a.momenta.iter().any(|p| (to_strip(*p) - want).norm() < 1e-3), "{want}");
    }
    let b = stringfeas::build_rate_system(&"1-/1+1-/1-/2+".parse().unwrap());
    assert_eq!(stringfeas::decide_feasibility(&b).status, FeasStatus::Infeasible);
}

#[test]
fn bound_part_decays_inside_the_band() {
    let (p1, p2) = (C64::new(0.4, 0.5), C64::new(0.4, -0.5));
    let k = 1.0;
    let v: Vec<f64> = (1..=6).map(|n| strings::two_particle_bound_part(p1, p2, n, k).unwrap()).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    let wide = C64::new(0.0, 2.5);
    let far = strings::two_particle_bound_part(wide, -wide, 8, k).unwrap();
    let near = strings::two_particle_bound_part(wide, -wide, 2, k).unwrap();
    assert!(far > near);
}

#[test]
fn large_theta_inversion_is_xxx_like() {
    let ctx = DispersionContext::new(1.0, 1.0).unwrap();
    let p = ctx.invert_phi_fundamental(C64::new(50.0, 0.0)).unwrap();
    let xxx = 2.0 * (1.0 / 100.0f64).atan();
    assert!(p.im.abs() < 1e-14 && (p.re / xxx - 1.0).abs() < 1e-2);
    // beyond the direct-evaluation range the pole expansion takes over
    for t in [1e7, -3e8, 1e9] {
        let theta = C64::new(t, -19.5);
        let p = ctx.invert_phi_fundamental(theta).unwrap();
        let back = ctx.invert_phi_fundamental(C64::new(1e5 * t.signum(), -19.5)).unwrap();
        assert!((p * t - back * 1e5 * t.signum()).norm() < 1e-3 * (back * 1e5).norm());
    }
}

#[test]
fn argument_principle_examples() {
    let ctx = DispersionContext::new(1.0, 1.0).unwrap();
    assert_eq!(ctx.argument_principle_count(C64::new(2.0, 3.0)).unwrap(), 0);
    let ctx = DispersionContext::new(1.26, 1.0).unwrap();
    if let Ok(n) = ctx.argument_principle_count(C64::new(0.1, 0.49)) {
        assert_eq!(n, 0);
    }
    assert!(ctx.argument_principle_count(C64::new(0.05, 0.5)).is_err());
}

#[test]
fn strip_edges_have_half_integer_imaginary_parts() {
    for k in [0.5, 1.26, 3.0] {
        let ctx = DispersionContext::new(k, 1.0).unwrap();
        for i in 0..30 {
            let x = -3.0 + 0.2 * i as f64 + 0.05;
            let up = ctx.phi(C64::new(x, k)).unwrap();
            let down = ctx.phi(C64::new(x, -k)).unwrap();
            assert!((up.im + 0.5).abs() < 1e-12 && (down.im - 0.5).abs() < 1e-12, "κ = {k}, x = {x}");
        }
    }
}
