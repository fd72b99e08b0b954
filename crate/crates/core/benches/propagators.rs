use std::f64::consts::PI;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fujita_core::group::{make_group, GroupKind, GroupModel, GroupSpec};
use fujita_core::heat::HeatSemigroup;
use fujita_core::par::{self, Mode};
use fujita_core::GridField;

fn model(kind: GroupKind, extent: Vec<f64>, points: Vec<usize>) -> Arc<GroupModel> {
    Arc::new(make_group(&GroupSpec::new(kind, extent, points)).unwrap())
}

fn propagate(c: &mut Criterion) {
    let h = 0.34;
    let cases = [
        (
            "spectral_torus_128x128",
            model(GroupKind::Torus, vec![2.0 * PI, 2.0 * PI], vec![128, 128]),
            0.5,
        ),
        (
            "stencil_heisenberg_32^3",
            model(
                GroupKind::Heisenberg1,
                vec![32.0 * h, 32.0 * h, 32.0 * 3.0 * h * h],
                vec![32, 32, 32],
            ),
            0.5,
        ),
    ];
    let mut group = c.benchmark_group("propagate");
    group.sample_size(10);
    for (name, g, t) in &cases {
        let sg = HeatSemigroup::for_model(g).unwrap();
        let u = GridField::from_fn(g, |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp());
        for (label, mode) in [("parallel", Mode::Parallel), ("sequential", Mode::Sequential)] {
            group.bench_with_input(BenchmarkId::new(*name, label), t, |b, &t| {
                par::set_mode(mode);
                b.iter(|| sg.apply_values(u.values(), t));
            });
        }
    }
    par::set_mode(Mode::Parallel);
    group.finish();
}

criterion_group!(benches, propagate);
criterion_main!(benches);
