use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aisil::exec::map_mut;
use aisil::hmc::HmcConfig;
use aisil::simulate::simulate_sv;
use aisil::sv::{SvHmcKernel, SvModel, SvPgKernel, SvPrior, SvTheta};
use aisil::{init_cloud, run_aisil, EngineConfig, Execution, MoveKernel, Role, RngStream};

const HORIZON: usize = 200;
const CLOUD: usize = 64;

fn model() -> SvModel {
    let streams = RngStream::new(5);
    let (_, y) = simulate_sv(&SvTheta::new(-0.5, 0.97, 0.03), HORIZON, &mut streams.at(0, 0, 0, Role::Simulate));
    SvModel::new(y, SvPrior::default()).unwrap()
}

/// One move sweep over the whole cloud at a fixed temperature.
fn sweep<K: MoveKernel<SvModel>>(c: &mut Criterion, name: &str, kernel: &K) {
    let model = model();
    let streams = RngStream::new(9);
    let cloud = init_cloud(&model, CLOUD, &streams, 0, Execution::Sequential).unwrap();
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    for mode in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter_batched(
                || cloud.particles.clone(),
                |mut particles| {
                    map_mut(&mut particles, mode, |i, p| {
                        let mut rng = streams.at(0, i as u64, 1, Role::Move);
                        kernel.apply(&model, &mut p.theta, &mut p.state, 0.5, &mut rng).unwrap()
                    })
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn pg_sweep(c: &mut Criterion) {
    sweep(c, "pg_sweep", &SvPgKernel { particles: 50 });
}

fn hmc_sweep(c: &mut Criterion) {
    let config = HmcConfig { leapfrog_steps: 20, ..HmcConfig::default() };
    sweep(c, "hmc_sweep", &SvHmcKernel::new(config));
}

fn full_run(c: &mut Criterion) {
    let model = model();
    let streams = RngStream::new(3);
    let mut group = c.benchmark_group("aisil_pg_run");
    group.sample_size(10);
    for mode in [Execution::Sequential, Execution::Parallel] {
        let config = EngineConfig { repetitions: 2, execution: mode, ..EngineConfig::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &config, |b, config| {
            b.iter(|| {
                let mut kernel = SvPgKernel { particles: 30 };
                run_aisil(&model, &mut kernel, 32, config, &streams, 0).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, pg_sweep, hmc_sweep, full_run);
criterion_main!(benches);
