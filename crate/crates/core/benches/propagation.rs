use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nnpoisson::config::RunConfig;
use nnpoisson::exec::Exec;
use nnpoisson::geometry::{collocation_grid, direction_pairs};
use nnpoisson::problems::{ResidualCost, SourceCache};
use nnpoisson::slotnet::{cost_gradient, forward, init_weights, EvalOptions, SlotSet};

/// Forward propagation and exact gradient of `e_4` on the 2D and 3D preset
/// grids, once on the rayon pool and once sequentially. Without the
/// `parallel` feature both variants run sequentially.
fn propagation(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagation");
    group.sample_size(10);
    for name in ["2d-nonlinear", "3d-linear"] {
        let cfg = RunConfig::preset(name).unwrap();
        let points = collocation_grid(&cfg.grid_spec());
        let dirs = direction_pairs(points.len(), cfg.spec.dim(), cfg.seeds.directions);
        let weights = init_weights::<f64>(&cfg.topology, cfg.seeds.weights);
        let slots = SlotSet::build(cfg.spec.dim(), 4);
        let sources = SourceCache::build(&cfg.spec, &points, &dirs);
        let cost = ResidualCost::new(cfg.spec, &slots, &points, &dirs, &sources).unwrap();
        for (label, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
            let opts = EvalOptions { exec, ..EvalOptions::default() };
            group.bench_with_input(BenchmarkId::new(format!("forward/{label}"), name), &opts, |b, &o| {
                b.iter(|| forward(&points, &dirs, &weights, &slots, o).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("gradient/{label}"), name), &opts, |b, &o| {
                b.iter(|| cost_gradient(&points, &dirs, &weights, &slots, &cost, o).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, propagation);
criterion_main!(benches);
