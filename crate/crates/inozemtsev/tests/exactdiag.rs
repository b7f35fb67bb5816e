use inozemtsev::exactdiag::{self, ExactDiagError, PotentialKind, PotentialSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

const KINDS: [PotentialKind; 5] = [
    PotentialKind::Xxx,
    PotentialKind::Hs,
    PotentialKind::Elliptic(0.8),
    PotentialKind::Hyperbolic(0.5),
    PotentialKind::HyperbolicOpen(0.5),
];

// full 2^L matrix of (J/2) Σ_{j<k} V(k−j)(1 − P_jk), spins as bits
fn brute_force(spec: &PotentialSpec) -> Vec<f64> {
    let l = spec.values().len() + 1;
    let dim = 1usize << l;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..l {
        for k in j + 1..l {
            let w = 0.5 * spec.j * spec.value((k - j) as i64).unwrap();
            for s in 0..dim {
                let (a, b) = ((s >> j) & 1, (s >> k) & 1);
                if a != b {
                    let t = s ^ (1 << j) ^ (1 << k);
                    h[(s, s)] += w;
                    h[(t, s)] -= w;
                }
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn all_levels(spec: &PotentialSpec) -> Vec<f64> {
    let mut ev: Vec<f64> =
        exactdiag::full_spectrum(spec).unwrap().into_iter().flat_map(|s| s.eigenvalues).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn sectors_match_brute_force() {
    for kind in KINDS {
        let spec = PotentialSpec::new(kind, 6, 1.3).unwrap();
        let (a, b) = (all_levels(&spec), brute_force(&spec));
        assert_eq!(a.len(), 64);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-11, "{kind:?}: {x} vs {y}");
        }
    }
}

#[test]
fn ground_state_is_zero_and_spectrum_nonnegative() {
    for kind in KINDS {
        let spec = PotentialSpec::new(kind, 9, 1.0).unwrap();
        let sectors = exactdiag::full_spectrum(&spec).unwrap();
        assert_eq!(sectors[0].eigenvalues, vec![0.0]);
        assert_eq!(sectors.iter().map(|s| s.eigenvalues.len()).sum::<usize>(), 512);
        let min = sectors.iter().flat_map(|s| s.eigenvalues.iter()).fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min > -1e-11, "{kind:?}: {min}");
    }
}

#[test]
fn trace_matches_eigenvalue_sum() {
    for kind in KINDS {
        let spec = PotentialSpec::new(kind, 10, 1.0).unwrap();
        let sum: f64 = all_levels(&spec).iter().sum();
        assert!((sum / exactdiag::trace_h(&spec) - 1.0).abs() < 1e-8, "{kind:?}");
    }
}

#[test]
fn periodic_potentials_are_symmetric() {
    for kind in &KINDS[..4] {
        let spec = PotentialSpec::new(*kind, 11, 1.0).unwrap();
        for j in 1..11 {
            assert!((spec.value(j).unwrap() - spec.value(11 - j).unwrap()).abs() < 1e-12, "{kind:?}");
        }
    }
    let open = PotentialSpec::new(PotentialKind::HyperbolicOpen(0.5), 11, 1.0).unwrap();
    assert!(!open.kind.is_periodic());
    assert!(open.value(1).unwrap() > open.value(10).unwrap());
}

#[test]
fn elliptic_potential_limits() {
    let l = 10;
    let x = PotentialSpec::new(PotentialKind::Xxx, l, 1.0).unwrap();
    let e = PotentialSpec::new(PotentialKind::Elliptic(8.0), l, 1.0).unwrap();
    let worst = (1..l as i64).map(|j| (e.value(j).unwrap() - x.value(j).unwrap()).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
    let h = PotentialSpec::new(PotentialKind::Hs, l, 1.0).unwrap();
    let e = PotentialSpec::new(PotentialKind::Elliptic(0.01), l, 1.0).unwrap();
    // the constant term tends to π²/(3L²) − 2κ/L, leaving a uniform −2κ/L offset
    let shift = -2.0 * 0.01 / l as f64;
    let worst = (1..l as i64)
        .map(|j| (e.value(j).unwrap() - h.value(j).unwrap() - shift).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
    let hs2 = PotentialSpec::new(PotentialKind::Hs, 4, 1.0).unwrap().value(2).unwrap();
    assert!((hs2 - PI * PI / 16.0).abs() < 1e-15);
}

#[test]
fn two_site_closed_form() {
    let spec = PotentialSpec::new(PotentialKind::Xxx, 2, 1.0).unwrap();
    for t in [0.01, 0.5, 2.0, 50.0] {
        let f = exactdiag::free_energy_trace(&spec, t).unwrap();
        let want = -0.5 * t * (3.0 + (-1.0 / t).exp()).ln();
        assert!((f - want).abs() < 1e-12, "T = {t}");
    }
}

#[test]
fn high_temperature_limit_is_the_mean_energy() {
    // f + T log 2 → Tr H/(L·2^L), not zero: H is not traceless
    let spec = PotentialSpec::new(PotentialKind::Xxx, 8, 1.0).unwrap();
    let t = 1e5;
    let f = exactdiag::free_energy_trace(&spec, t).unwrap();
    let mean = exactdiag::trace_h(&spec) / (8.0 * 256.0);
    assert!((mean - 0.25).abs() < 1e-15);
    assert!((f + t * 2f64.ln() - mean).abs() < 1e-4);
}

#[test]
fn low_temperature_tends_to_ground_state() {
    let spec = PotentialSpec::new(PotentialKind::Hs, 8, 1.0).unwrap();
    // 9 degenerate ferromagnetic states: f → −(T/L) log 9
    let t = 1e-3;
    let f = exactdiag::free_energy_trace(&spec, t).unwrap();
    assert!((f + t * 9f64.ln() / 8.0).abs() < 1e-9, "{f}");
}

#[test]
fn stabilization_examples() {
    let s = exactdiag::stabilized_free_energy(PotentialKind::Xxx, 1.0, 5.0, 0.02, 4, 15).unwrap();
    assert!(s.stabilized && s.l_used <= 12, "{s:?}");
    let s = exactdiag::stabilized_free_energy(PotentialKind::Hs, 1.0, 10.0, 0.02, 4, 15).unwrap();
    assert!(s.stabilized && s.l_used <= 10, "{s:?}");
    let s = exactdiag::stabilized_free_energy(PotentialKind::Xxx, 1.0, 0.1, 0.02, 4, 12).unwrap();
    assert!(!s.stabilized, "{s:?}");
    assert_eq!(s.sequence.len(), 5);
}

#[test]
fn invalid_requests() {
    assert!(matches!(PotentialSpec::new(PotentialKind::Xxx, 1, 1.0), Err(ExactDiagError::Length(1))));
    assert!(PotentialSpec::new(PotentialKind::Xxx, 16, 1.0).is_err());
    assert!(PotentialSpec::new(PotentialKind::Elliptic(-1.0), 8, 1.0).is_err());
    let spec = PotentialSpec::new(PotentialKind::Xxx, 8, 1.0).unwrap();
    assert!(exactdiag::free_energy_trace(&spec, 0.0).is_err());
    assert!(exactdiag::build_sector(&spec, 9).is_err());
}

#[test]
fn spectrum_dump_layout() {
    let dir = std::env::temp_dir().join(format!("inozemtsev-ed-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("spec.bin");
    let spec = PotentialSpec::new(PotentialKind::Hs, 4, 1.0).unwrap();
    let sectors = exactdiag::full_spectrum(&spec).unwrap();
    exactdiag::write_spectrum_dump(&path, &spec, &sectors).unwrap();
    let b = std::fs::read(&path).unwrap();
    assert_eq!(&b[..8], b"INZSPECT");
    // header + (M, count) per sector + 16 eigenvalues
    assert_eq!(b.len(), 16 + 5 * 8 + 16 * 8);
    let big = PotentialSpec::new(PotentialKind::Hs, 9, 1.0).unwrap();
    assert!(exactdiag::write_spectrum_dump(&path, &big, &[]).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
