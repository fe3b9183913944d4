use approx::assert_relative_eq;
use elastorec::ops::levels::block_average;
use elastorec::ops::nufft::direct_dft;
use elastorec::ops::{build_level_plan, sense_adjoint, sense_forward, sense_normal, NufftPlan, SegmentMode};
use elastorec::simkit::make_spiral;
use elastorec::{Grid, C64};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_coords(rng: &mut ChaCha8Rng, grid: Grid, count: usize) -> Vec<[f64; 2]> {
    let k_max = grid.k_max();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = [rng.random_range(-k_max..k_max), rng.random_range(-k_max..k_max)];
        if k[0].hypot(k[1]) <= k_max {
            out.push(k);
        }
    }
    out
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn forward_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = Grid::new(16, 0.032);
    let coords = random_coords(&mut rng, grid, 100);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    let x = random_vec(&mut rng, 256);
    let fast = plan.forward(&x);
    let slow = direct_dft(grid, &coords, &x, plan.scale());
    let peak = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let worst = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / peak;
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = Grid::new(16, 0.032);
    let coords = random_coords(&mut rng, grid, 300);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    for _ in 0..5 {
        let x = random_vec(&mut rng, 256);
        let y = random_vec(&mut rng, 300);
        let fx = plan.forward(&x);
        let fhy = plan.adjoint(&y, None);
        let lhs = dot(&fx, &y);
        let rhs = dot(&x, &fhy);
        let rel = (lhs - rhs).norm() / (norm(&fx) * norm(&y));
        assert!(rel <= 1e-12, "adjoint residual {rel:e}");
    }
}

#[test]
fn centred_delta_gives_flat_samples() {
    let grid = Grid::new(16, 0.032);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords = random_coords(&mut rng, grid, 200);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    let mut x = vec![C64::default(); 256];
    x[8 * 16 + 8] = C64::new(1.0, 0.0);
    for y in plan.forward(&x) {
        assert!((y.norm() - plan.scale()).abs() / plan.scale() < 1e-3);
    }
}

#[test]
fn operators_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = Grid::new(16, 0.032);
    let coords = random_coords(&mut rng, grid, 120);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    let x = random_vec(&mut rng, 256);
    let y = random_vec(&mut rng, 256);
    let a = C64::new(0.3, -1.2);
    let b = C64::new(-2.0, 0.5);
    let mix: Vec<C64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    let lhs = plan.forward(&mix);
    let fx = plan.forward(&x);
    let fy = plan.forward(&y);
    let scale = norm(&lhs);
    for ((l, p), q) in lhs.iter().zip(&fx).zip(&fy) {
        assert!((l - (a * p + b * q)).norm() / scale < 1e-12);
    }
}

#[test]
fn out_of_disc_coordinate_is_rejected() {
    let grid = Grid::new(16, 0.032);
    let k = grid.k_max();
    assert!(NufftPlan::new(grid, &[[0.8 * k, 0.8 * k]]).is_err());
}

fn smooth_coils(nc: usize, n: usize) -> Array3<C64> {
    let mut m = Array3::from_shape_fn((nc, n, n), |(i, r, c)| {
        let th = i as f64;
        C64::new(1.0 + 0.3 * (th + r as f64 / n as f64).cos(), 0.2 * (c as f64 / n as f64 - th).sin())
    });
    elastorec::ops::levels::normalize_sos(&mut m);
    m
}

#[test]
fn single_flat_coil_is_plain_nufft() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = Grid::new(16, 0.032);
    let coords = random_coords(&mut rng, grid, 80);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    let coils = Array3::from_elem((1, 16, 16), C64::new(1.0, 0.0));
    let x = random_vec(&mut rng, 256);
    assert_eq!(sense_forward(&x, &coils, &plan)[0], plan.forward(&x));
}

#[test]
fn sense_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = Grid::new(16, 0.032);
    let coords = random_coords(&mut rng, grid, 150);
    let plan = NufftPlan::new(grid, &coords).unwrap();
    let coils = smooth_coils(4, 16);
    let x = random_vec(&mut rng, 256);
    let y: Vec<Vec<C64>> = (0..4).map(|_| random_vec(&mut rng, 150)).collect();
    let ax = sense_forward(&x, &coils, &plan);
    let ahy = sense_adjoint(&y, &coils, &plan, None);
    let lhs: C64 = ax.iter().zip(&y).map(|(a, b)| dot(a, b)).sum();
    let rhs = dot(&x, &ahy);
    let n_ax = ax.iter().map(|v| norm(v).powi(2)).sum::<f64>().sqrt();
    let n_y = y.iter().map(|v| norm(v).powi(2)).sum::<f64>().sqrt();
    assert!((lhs - rhs).norm() / (n_ax * n_y) <= 1e-12);
}

#[test]
fn cartesian_normal_operator_is_identity() {
    let grid = Grid::new(16, 0.032);
    let plan = NufftPlan::cartesian(grid).unwrap();
    let coils = smooth_coils(3, 16);
    // Dense oracle: E^H E from the explicit DFT matrix, column by column.
    let n = 256;
    let mut worst_dense = 0.0f64;
    let mut worst_fast = 0.0f64;
    for j in (0..n).step_by(17) {
        let mut e = vec![C64::default(); n];
        e[j] = C64::new(1.0, 0.0);
        let col = direct_dft(grid, plan.coords(), &e, plan.scale());
        let mut back = vec![C64::default(); n];
        for (s, k) in plan.coords().iter().enumerate() {
            for i in 0..n {
                let p = grid.position(i / 16, i % 16);
                let ph = 2.0 * std::f64::consts::PI * (k[0] * p[0] + k[1] * p[1]);
                back[i] += col[s] * C64::from_polar(plan.scale(), ph);
            }
        }
        let fast = sense_normal(&e, &coils, &plan);
        for i in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            worst_dense = worst_dense.max((back[i] - want).norm());
            worst_fast = worst_fast.max((fast[i] - want).norm());
        }
    }
    assert!(worst_dense < 1e-10, "dense oracle {worst_dense:e}");
    assert!(worst_fast < 1e-2, "normal operator {worst_fast:e}");
}

#[test]
fn level_plan_geometry() {
    let traj = make_spiral(5, 1536, 0.128, 64).unwrap();
    let coils = smooth_coils(4, 64);
    let arms = Array2::from_shape_fn((24, 1), |(t, _)| t % 5);
    let plan = build_level_plan(&traj, &arms, &coils, 3, SegmentMode::Nested).unwrap();
    assert_eq!(plan.level_sides(), vec![16, 32, 64]);
    let radii: Vec<f64> = plan.levels.iter().map(|l| l.radius).collect();
    for (r, want) in radii.iter().zip([62.5, 125.0, 250.0]) {
        assert_relative_eq!(*r, want, max_relative = 1e-12);
    }
    for g in 0..plan.groups.len() {
        for k in 0..2 {
            let inner = &plan.levels[k].indices[g];
            let outer = &plan.levels[k + 1].indices[g];
            assert!(inner.iter().all(|i| outer.contains(i)));
        }
        assert_eq!(plan.levels[2].indices[g].len(), 1536);
    }
    for level in &plan.levels {
        let (nc, h, w) = level.coils.dim();
        for r in 0..h {
            for c in 0..w {
                let sos: f64 = (0..nc).map(|i| level.coils[[i, r, c]].norm_sqr()).sum();
                assert!((sos - 1.0).abs() < 1e-6);
            }
        }
    }

    let single = build_level_plan(&traj, &arms, &coils, 1, SegmentMode::Nested).unwrap();
    assert_eq!(single.count(), 1);
    assert_eq!(single.levels[0].indices[0].len(), 1536);
}

#[test]
fn disjoint_segments_partition_samples() {
    let traj = make_spiral(5, 600, 0.128, 64).unwrap();
    let coils = smooth_coils(2, 64);
    let arms = Array2::from_shape_fn((5, 5), |(_, j)| j);
    let plan = build_level_plan(&traj, &arms, &coils, 3, SegmentMode::Disjoint).unwrap();
    let mut all: Vec<usize> = plan.levels.iter().flat_map(|l| l.indices[0].iter().copied()).collect();
    all.sort_unstable();
    assert_eq!(all, (0..3000).collect::<Vec<_>>());
}

#[test]
fn too_many_levels_is_reported() {
    // Three samples per arm at radii 0, 125 and 250 cycles/m leave the
    // (31.25, 62.5] annulus of a four-level plan empty.
    let traj = make_spiral(5, 3, 0.128, 64).unwrap();
    let coils = smooth_coils(1, 64);
    let arms = Array2::from_shape_fn((1, 1), |_| 0);
    match build_level_plan(&traj, &arms, &coils, 4, SegmentMode::Disjoint) {
        Err(elastorec::Error::EmptySegment { .. }) => {}
        other => panic!("expected empty segment error, got {other:?}"),
    }
}

#[test]
fn block_average_of_constant() {
    let x = vec![C64::new(2.0, -1.0); 64];
    assert!(block_average(&x, 8, 4).iter().all(|&z| z == C64::new(2.0, -1.0)));
}
