use criterion::{criterion_group, criterion_main, Criterion};
use magnls_core::energy::{functional_j, magnetic_laplacian, LinkPhases, LinkRule};
use magnls_core::solver::{solve_ground_state, SolveOptions};
use magnls_core::{AnyPotential, ComplexField, ElectricPotential, GridSpec, MagneticPotential};
use num_complex::Complex64;

fn setup(m: usize) -> (GridSpec, LinkPhases, magnls_core::RealField, ComplexField) {
    let grid = GridSpec::new(2, 8.0, m).unwrap();
    let a = AnyPotential::Analytic(MagneticPotential::ConstantField {
        b12: 0.3,
        b13: 0.0,
        b23: 0.0,
    });
    let links = LinkPhases::build(&a, &grid, LinkRule::Midpoint);
    let v = ElectricPotential::Constant(1.0).sample(&grid);
    let u = ComplexField::from_fn(grid, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        Complex64::from_polar((-0.5 * r2).exp(), 0.2 * x[0])
    });
    (grid, links, v, u)
}

fn bench_energy(c: &mut Criterion) {
    let (_, links, v, u) = setup(129);
    c.bench_function("energy_129", |b| {
        b.iter(|| std::hint::black_box(functional_j(&u, &links, &v).j_av))
    });
}

fn bench_laplacian(c: &mut Criterion) {
    let (_, links, _, u) = setup(129);
    c.bench_function("laplacian_129", |b| {
        b.iter(|| std::hint::black_box(magnetic_laplacian(&u, &links)))
    });
}

fn bench_small_solve(c: &mut Criterion) {
    let grid = GridSpec::new(2, 6.0, 49).unwrap();
    let a = AnyPotential::Analytic(MagneticPotential::Zero);
    let v = ElectricPotential::Constant(1.0);
    let opts = SolveOptions {
        tol: 1e-5,
        restarts: 1,
        seed: 1,
        ..SolveOptions::default()
    };
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    group.bench_function("ground_state_49", |b| {
        b.iter(|| {
            std::hint::black_box(
                solve_ground_state(&a, &v, &grid, LinkRule::Midpoint, &opts).unwrap(),
            )
        })
    });
    group.finish();
}

criterion_group!(benches, bench_energy, bench_laplacian, bench_small_solve);
criterion_main!(benches);
