use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modlab::geometry::{rasterize, Continuum, Point, Shape};
use modlab::parallel::{self, Execution};
use modlab::{p_modulus, CurveFamily, SolverOptions};

/// Joining moduli of short facing segments in the unit square, one solve per
/// horizontal offset.
fn batch(exec: Execution, families: &[CurveFamily], opts: &SolverOptions) -> f64 {
    parallel::map(exec, families, |f| p_modulus(f, opts).expect("solve").value).iter().sum()
}

fn families(res: f64, count: usize) -> Vec<CurveFamily> {
    let dom = Arc::new(rasterize(&Shape::unit_square(), res).unwrap());
    (0..count)
        .map(|i| {
            let dx = 0.1 + 0.3 * i as f64 / count as f64;
            let e = Continuum::segment("E", Point::new2(0.5 - dx, 0.3), Point::new2(0.5 - dx, 0.7), 0.01).unwrap();
            let f = Continuum::segment("F", Point::new2(0.5 + dx, 0.3), Point::new2(0.5 + dx, 0.7), 0.01).unwrap();
            CurveFamily::joining(dom.clone(), &e, &f).unwrap()
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let opts = SolverOptions::default().with_tol(1e-2);
    let fams = families(24.0, 8);
    let mut group = c.benchmark_group("modulus_batch");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::new(name, fams.len()), &exec, |b, &exec| b.iter(|| batch(exec, &fams, &opts)));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
