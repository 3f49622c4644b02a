use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use misogibbs::datagen::{generate_dataset, DatasetSpec};
use misogibbs::exec::Execution;
use misogibbs::prelude::*;
use misogibbs::{run_chains, scheme_rates, Gram};

fn dataset(n: usize) -> (PreparedProblem, StableSplineKernel, BlockDistribution) {
    let mut spec = DatasetSpec::example2_scaled(1);
    spec.n = n;
    let data = generate_dataset(&spec).unwrap();
    let problem = PreparedProblem::new(RegressionProblem::build(data.inputs, data.output, spec.p).unwrap());
    let kernel = StableSplineKernel::new(spec.alpha, spec.p).unwrap();
    let pairs = PairProbabilities::new(&CollinearityMatrix::from_inputs(problem.inputs()), 100.0).unwrap();
    let dist = BlockDistribution::new(&pairs, 10);
    (problem, kernel, dist)
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn gram(c: &mut Criterion) {
    let (problem, _, _) = dataset(10_000);
    let mut g = c.benchmark_group("gram");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| Gram::new(problem.problem(), exec))
        });
    }
    g.finish();
}

fn rates(c: &mut Criterion) {
    let (problem, kernel, dist) = dataset(2_000);
    let hyper = Hyperparameters::common(1.0, 1.0).unwrap();
    let mut g = c.benchmark_group("scheme_rates");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| scheme_rates(&problem, &kernel, &hyper, &dist, Some(100.0), exec).unwrap())
        });
    }
    g.finish();
}

fn chains(c: &mut Criterion) {
    let (problem, kernel, dist) = dataset(2_000);
    let configs: Vec<_> = (0..8)
        .map(|s| ChainConfig::new(SchemeId::Rsgsob, 20).with_n_ob(10).with_seed(s))
        .collect();
    let mut g = c.benchmark_group("run_chains");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_chains(&configs, &problem, &kernel, Some(&dist), exec))
        });
    }
    g.finish();
}

criterion_group!(benches, gram, rates, chains);
criterion_main!(benches);
