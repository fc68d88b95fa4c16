//! Slope sweeps, grid oracles and Monte Carlo bounds.
//!
//! With the default `parallel` feature each group has a `pool` variant on
//! rayon's global pool and a `one_thread` variant inside a single-thread
//! pool. Run with `--no-default-features` for the plain sequential build.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refine_rd::converse::{corollary_bounds, BoundSetup, Corollary};
use refine_rd::oracles::{brute_force_dual, brute_force_sr_dual};
use refine_rd::prob::{Matrix, Pmf};
use refine_rd::single::{sweep, RdProblem, RunOptions, SlopeGrid};
use refine_rd::successive::{sr_sweep, LagrangeTriple, SrProblem};

fn random_problem(nx: usize, ny: usize, seed: u64) -> RdProblem {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let px = Pmf::from_weights((0..nx).map(|_| r.gen_range(0.05..1.0)).collect()).unwrap();
    let d = Matrix::new(nx, ny, (0..nx * ny).map(|_| r.gen_range(0.0..2.0)).collect()).unwrap();
    RdProblem::new(px, d).unwrap()
}

fn binary_sr() -> SrProblem {
    SrProblem::new(
        Pmf::new(vec![0.35, 0.65]).unwrap(),
        Matrix::from_rows(vec![vec![0.0, 1.0], vec![0.6, 0.1]]).unwrap(),
        Matrix::hamming(2),
    )
    .unwrap()
}

/// Runs `f` on the global pool and, when available, in a one-thread pool.
fn variants<F: Fn() + Sync>(group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>, id: &str, f: F) {
    let label = if refine_rd::par::is_parallel() { "pool" } else { "sequential" };
    group.bench_function(BenchmarkId::new(id, label), |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function(BenchmarkId::new(id, "one_thread"), |b| b.iter(|| one.install(&f)));
    }
}

fn lambda_sweeps(c: &mut Criterion) {
    let mut g = c.benchmark_group("lambda_sweep");
    g.sample_size(10);
    let p = random_problem(16, 16, 1);
    let lambdas = SlopeGrid {
        lo: 0.2,
        hi: 20.0,
        count: 64,
        geometric: true,
    }
    .values()
    .unwrap();
    let opts = RunOptions {
        max_iters: 2_000,
        ..RunOptions::default()
    };
    variants(&mut g, "single_16x16_64", || {
        sweep(&p, &lambdas, &opts).unwrap();
    });
    let sr = binary_sr();
    let triples: Vec<_> = lambdas.iter().map(|&l| LagrangeTriple::new(0.8, 1.5, l).unwrap()).collect();
    variants(&mut g, "sr_binary_64", || {
        sr_sweep(&sr, &triples, &opts).unwrap();
    });
    g.finish();
}

fn grid_oracles(c: &mut Criterion) {
    let mut g = c.benchmark_group("grid_oracle");
    g.sample_size(10);
    let p = random_problem(3, 3, 2);
    variants(&mut g, "single_3x3_400", || {
        brute_force_dual(&p, 2.5, 400).unwrap();
    });
    let sr = binary_sr();
    let t = LagrangeTriple::new(0.8, 1.5, 2.5).unwrap();
    variants(&mut g, "sr_binary_40", || {
        brute_force_sr_dual(&sr, &t, 40).unwrap();
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    let px = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
    let fam = Corollary::One {
        j1: vec![1.2, 0.8, 0.4],
        j2: vec![2.0, 1.1, 0.5],
    };
    let setup = BoundSetup {
        exact_type_limit: 0.0,
        mc_samples: 200_000,
        seed: 3,
        ..BoundSetup::new(100, 60.0, 90.0)
    };
    variants(&mut g, "cor1_n100_200k", || {
        corollary_bounds(&px, &fam, &setup).unwrap();
    });
    g.finish();
}

criterion_group!(benches, lambda_sweeps, grid_oracles, monte_carlo);
criterion_main!(benches);
