use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

fn central_difference(p: &dyn Potential, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (p.energy(&a) - p.energy(&b)) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// LJ configuration on a jittered cubic lattice, so no pair sits at the junction.
fn lattice_configuration(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let side = (n as f64).cbrt().ceil() as usize;
    let mut x = Vec::with_capacity(3 * n);
    for i in 0..n {
        let (a, b, c) = (i % side, (i / side) % side, i / (side * side));
        for v in [a, b, c] {
            x.push(1.1 * v as f64 + 0.15 * (r.random::<f64>() - 0.5));
        }
    }
    x
}

#[test]
fn gaussian_energy_and_gradient_examples() {
    let t = make_target(&TargetSpec::Gaussian { dim: 2, scale: 1.0 }).unwrap();
    assert_eq!(t.energy(&[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(t.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    let hot = t.tempered(2.0).unwrap();
    assert_eq!(hot.gradient(&[1.0, 2.0]).unwrap(), vec![0.5, 1.0]);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let t = make_target(&TargetSpec::Gaussian { dim: 2, scale: 1.0 }).unwrap();
    assert!(matches!(
        t.energy(&[1.0, 2.0, 3.0]),
        Err(Error::DimensionMismatch { expected: 2, got: 3 })
    ));
    assert!(t.gradient(&[1.0]).is_err());
}

#[test]
fn mog40_energy_at_a_component_mean_matches_direct_density() {
    let t = make_target(&TargetSpec::Mog40).unwrap();
    let p = &t.params().mog40;
    assert_eq!(p.means.len(), 40);
    assert!((p.variance - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
    let x = p.means[7].clone();
    // Direct linear-space mixture density.
    let dens: f64 = p
        .means
        .iter()
        .map(|m| {
            let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            (-0.5 * d2 / p.variance).exp() / (2.0 * std::f64::consts::PI * p.variance)
        })
        .sum::<f64>()
        / 40.0;
    let e = t.energy(&x).unwrap();
    assert!(e.is_finite());
    assert!((e + dens.ln()).abs() < 1e-10, "{e} vs {}", -dens.ln());
}

#[test]
fn shipped_mog40_means_regenerate_from_documented_seed() {
    let shipped = TargetParams::shipped().mog40;
    assert_eq!(shipped.seed, MOG40_SEED);
    assert_eq!(shipped, MixtureParams::generate(MOG40_SEED, 40, 40.0));
    assert!(shipped.means.iter().flatten().all(|v| v.abs() <= 40.0));
}

#[test]
fn parameter_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let params = TargetParams::shipped();
    params.save_dir(dir.path()).unwrap();
    let back = TargetParams::load_dir(dir.path()).unwrap();
    assert_eq!(params, back);
    for (a, b) in params.mog40.means.iter().flatten().zip(back.mog40.means.iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn make_target_dimensions() {
    let dim = |s: TargetSpec| make_target(&s).unwrap().dim();
    assert_eq!(dim(TargetSpec::Manywell { blocks: 16 }), 32);
    assert_eq!(dim(TargetSpec::Manywell { blocks: 4 }), 8);
    assert_eq!(dim(TargetSpec::Lj { particles: 13 }), 39);
    assert_eq!(dim(TargetSpec::Mog40), 2);
    assert!(make_target(&TargetSpec::Manywell { blocks: 0 }).is_err());
    assert!(make_target(&TargetSpec::Lj { particles: 0 }).is_err());
    assert!(matches!("banana:3".parse::<TargetSpec>(), Err(Error::UnknownTarget(_))));
    assert_eq!("manywell:4".parse::<TargetSpec>().unwrap(), TargetSpec::Manywell { blocks: 4 });
    assert_eq!(
        "gaussian:3:2.5".parse::<TargetSpec>().unwrap(),
        TargetSpec::Gaussian { dim: 3, scale: 2.5 }
    );
}

#[test]
fn target_spec_json_rejects_unknown_keys() {
    let ok: TargetSpec = serde_json::from_str(r#"{"name":"manywell","blocks":4}"#).unwrap();
    assert_eq!(ok, TargetSpec::Manywell { blocks: 4 });
    assert!(serde_json::from_str::<TargetSpec>(r#"{"name":"manywell","blocks":4,"x":1}"#).is_err());
}

/// Golden-section minimization on `[lo, hi]`.
fn minimize(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

#[test]
fn symmetric_double_well_has_equal_minima() {
    let p = DoubleWellParams { quartic: 1.0, quadratic: -6.0, linear: 0.0, harmonic: 0.5 };
    let (xl, el) = minimize(|x| p.well_energy(x), -4.0, 0.0);
    let (xr, er) = minimize(|x| p.well_energy(x), 0.0, 4.0);
    assert!((xl + xr).abs() < 1e-6);
    assert!((el - er).abs() < 1e-10);
    assert!((xr - 3f64.sqrt()).abs() < 1e-6);
}

#[test]
fn shipped_double_well_is_tilted_toward_positive_x() {
    let p = TargetParams::shipped().manywell;
    let (_, el) = minimize(|x| p.well_energy(x), -4.0, 0.0);
    let (_, er) = minimize(|x| p.well_energy(x), 0.0, 4.0);
    assert!(er < el);
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng(11);
    for spec in [
        TargetSpec::Gaussian { dim: 3, scale: 1.7 },
        TargetSpec::Mog40,
        TargetSpec::Manywell { blocks: 4 },
    ] {
        let t = make_target(&spec).unwrap();
        for _ in 0..20 {
            let scale = if spec == TargetSpec::Mog40 { 30.0 } else { 2.0 };
            let x: Vec<f64> = (0..t.dim()).map(|_| scale * (r.random::<f64>() - 0.5)).collect();
            let mut g = vec![0.0; t.dim()];
            t.potential().energy_and_gradient(&x, &mut g);
            let fd = central_difference(t.potential(), &x, 1e-5);
            assert!(max_rel_err(&g, &fd) < 1e-5, "{spec:?}: {g:?} vs {fd:?}");
        }
    }
}

#[test]
fn lj13_gradient_matches_central_differences() {
    let t = make_target(&TargetSpec::Lj { particles: 13 }).unwrap();
    for seed in 0..5 {
        let x = lattice_configuration(13, seed);
        let mut g = vec![0.0; 39];
        t.potential().energy_and_gradient(&x, &mut g);
        let fd = central_difference(t.potential(), &x, 1e-6);
        assert!(max_rel_err(&g, &fd) < 1e-5, "seed {seed}");
    }
    // Also inside the smoothed core.
    let mut x = lattice_configuration(13, 9);
    x[3] = x[0] + 0.3;
    x[4] = x[1];
    x[5] = x[2];
    let mut g = vec![0.0; 39];
    t.potential().energy_and_gradient(&x, &mut g);
    let fd = central_difference(t.potential(), &x, 1e-6);
    assert!(max_rel_err(&g, &fd) < 1e-5);
}

#[test]
fn lj_smoothing_is_c1_at_the_junction() {
    let lj = LennardJonesPotential::new(2, TargetParams::shipped().lj);
    let rc = lj.cutoff_radius();
    let h = 1e-7;
    let below = lj.pair_energy(rc - h);
    let above = lj.pair_energy(rc + h);
    let at = lj.pair_energy(rc);
    let jump = 2.0 * lj.pair_slope(rc).abs() * h;
    assert!((below - at).abs() < jump);
    assert!((above - at).abs() < jump);
    let left = (at - lj.pair_energy(rc - h)) / h;
    let right = (lj.pair_energy(rc + h) - at) / h;
    let slope = lj.pair_slope(rc);
    assert!((left - slope).abs() < 1e-4 * slope.abs(), "{left} vs {slope}");
    assert!((right - slope).abs() < 1e-4 * slope.abs(), "{right} vs {slope}");
    // Bounded, finite and monotone in the core.
    let mut prev = lj.pair_energy(0.0);
    assert!(prev.is_finite());
    for i in 1..=100 {
        let e = lj.pair_energy(rc * i as f64 / 100.0);
        assert!(e <= prev);
        prev = e;
    }
}

#[test]
fn lj_energy_finite_for_coincident_particles() {
    let t = make_target(&TargetSpec::Lj { particles: 13 }).unwrap();
    let x = vec![0.0; 39];
    let mut g = vec![0.0; 39];
    let e = t.potential().energy_and_gradient(&x, &mut g);
    assert!(e.is_finite());
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn counter_tracks_each_kind_of_call() {
    let t = make_target(&TargetSpec::Manywell { blocks: 2 }).unwrap();
    let x = [0.1, 0.2, 0.3, 0.4];
    let mut g = [0.0; 4];
    for _ in 0..5 {
        t.energy(&x).unwrap();
    }
    t.gradient(&x).unwrap();
    t.energy_and_gradient(&x, &mut g).unwrap();
    let s = t.calls();
    assert_eq!(s.energy_calls, 6);
    assert_eq!(s.gradient_calls, 2);
    assert_eq!(s.density_calls, 7);
    assert_eq!(s.total(), 8);
    let fresh = t.with_fresh_counter();
    fresh.energy(&x).unwrap();
    assert_eq!(t.calls().energy_calls, 6);
    assert_eq!(fresh.calls().energy_calls, 1);
}

#[test]
fn concurrent_energy_calls_are_counted_exactly() {
    let t = make_target(&TargetSpec::Gaussian { dim: 2, scale: 1.0 }).unwrap();
    let xs = Array2::from_shape_fn((5000, 2), |(i, j)| (i + j) as f64 * 1e-3);
    let e = t.energies(xs.view()).unwrap();
    assert_eq!(e.len(), 5000);
    assert_eq!(t.calls().energy_calls, 5000);
}

#[test]
fn gaussian_reference_covariance_is_identity() {
    let t = make_target(&TargetSpec::Gaussian { dim: 2, scale: 1.0 }).unwrap();
    let s = t.reference_sample(100_000, &mut rng(1)).unwrap();
    let n = s.nrows() as f64;
    for i in 0..2 {
        for j in 0..2 {
            let c: f64 = s.column(i).iter().zip(s.column(j)).map(|(a, b)| a * b).sum::<f64>() / n;
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 0.03, "cov[{i}][{j}] = {c}");
        }
    }
    assert_eq!(t.calls().total(), 0);
}

#[test]
fn mog40_reference_occupancy_is_uniform() {
    let t = make_target(&TargetSpec::Mog40).unwrap();
    let n = 80_000;
    let s = t.reference_sample(n, &mut rng(2)).unwrap();
    let means = &t.params().mog40.means;
    let mut counts = vec![0usize; 40];
    for row in s.outer_iter() {
        let k = (0..40)
            .min_by(|&a, &b| {
                let da: f64 = row.iter().zip(&means[a]).map(|(x, m)| (x - m).powi(2)).sum();
                let db: f64 = row.iter().zip(&means[b]).map(|(x, m)| (x - m).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        counts[k] += 1;
    }
    // Overlapping components blur nearest-mean assignment, so compare the
    // pooled chi-square statistic loosely and every cell against 5 sigma.
    let expect = n as f64 / 40.0;
    let sd = (expect * (1.0 - 1.0 / 40.0)).sqrt();
    let within = counts.iter().filter(|&&c| (c as f64 - expect).abs() < 5.0 * sd).count();
    assert!(within >= 36, "{counts:?}");
    assert_eq!(t.calls().total(), 0);
}

#[test]
fn manywell_reference_matches_density_on_a_grid() {
    let t = make_target(&TargetSpec::Manywell { blocks: 1 }).unwrap();
    let n = 200_000;
    let s = t.reference_sample(n, &mut rng(3)).unwrap();
    // 2D histogram on [-3.5, 3.5] x [-4, 4] against the normalized density.
    let (nx, ny) = (70, 40);
    let (x0, x1, y0, y1) = (-3.5, 3.5, -4.0, 4.0);
    let (dx, dy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
    let mut hist = vec![0.0; nx * ny];
    for row in s.outer_iter() {
        let i = ((row[0] - x0) / dx).floor();
        let j = ((row[1] - y0) / dy).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < ny {
            hist[i as usize * ny + j as usize] += 1.0 / n as f64;
        }
    }
    // Cell masses by midpoint quadrature on a 10x refined grid.
    let mut dens = vec![0.0; nx * ny];
    let sub = 10;
    for i in 0..nx {
        for j in 0..ny {
            let mut m = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = x0 + (i as f64 + (a as f64 + 0.5) / sub as f64) * dx;
                    let y = y0 + (j as f64 + (b as f64 + 0.5) / sub as f64) * dy;
                    m += (-t.potential().energy(&[x, y])).exp();
                }
            }
            dens[i * ny + j] = m;
        }
    }
    let z: f64 = dens.iter().sum();
    let tvd: f64 = hist.iter().zip(&dens).map(|(h, d)| (h - d / z).abs()).sum::<f64>() / 2.0;
    assert!(tvd < 0.05, "tvd = {tvd}");
}

#[test]
fn lj_has_no_reference_sampler() {
    let t = make_target(&TargetSpec::Lj { particles: 13 }).unwrap();
    assert!(matches!(t.reference_sample(3, &mut rng(0)), Err(Error::Unsupported(_))));
}

#[test]
fn non_positive_temperature_rejected() {
    let t = make_target(&TargetSpec::Mog40).unwrap();
    assert!(t.tempered(0.0).is_err());
    assert!(t.tempered(-1.0).is_err());
}

proptest! {
    #[test]
    fn tempered_gradient_times_temperature_is_base_gradient(
        x in prop::collection::vec(-3.0f64..3.0, 8),
        temp in 0.1f64..50.0,
    ) {
        let t = make_target(&TargetSpec::Manywell { blocks: 4 }).unwrap();
        let base = t.gradient(&x).unwrap();
        let hot = t.tempered(temp).unwrap();
        let g = hot.gradient(&x).unwrap();
        for (a, b) in g.iter().zip(&base) {
            prop_assert!((a * temp - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let e = hot.energy(&x).unwrap();
        prop_assert_eq!(e, t.energy(&x).unwrap() / temp);
    }

    #[test]
    fn score_rescaling_holds_at_zero_noise(
        x in prop::collection::vec(-30.0f64..30.0, 2),
        t0 in 0.5f64..5.0,
        t1 in 0.5f64..5.0,
    ) {
        let t = make_target(&TargetSpec::Mog40).unwrap();
        let s0: Vec<f64> = t.tempered(t0).unwrap().gradient(&x).unwrap();
        let s1: Vec<f64> = t.tempered(t1).unwrap().gradient(&x).unwrap();
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!((a * t0 - b * t1).abs() <= 1e-10 * (a * t0).abs().max(1.0));
        }
    }
}
