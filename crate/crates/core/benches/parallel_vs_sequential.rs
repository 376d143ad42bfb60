use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use neurodob::dob::DobDesign;
use neurodob::exec::{par_map, seq_map};
use neurodob::lqr::{design, LqrWeights};
use neurodob::neurodob::{CompensationLimits, FeatureVector, NeuroDob, DEFAULT_EPSILON1, N_FEATURES};
use neurodob::nn::{MlpModel, Standardizer, DEFAULT_DIMS};
use neurodob::rng;
use neurodob::road::builtin_maps;
use neurodob::sim::{run_scenario, Assets, ControllerStack, ScenarioConfig};
use neurodob::vehicle::{discrete_model, PlantConfig, VehicleParams};
use rand::Rng;

fn scenarios(c: &mut Criterion) {
    let v = VehicleParams::default();
    let m = discrete_model(&v).unwrap();
    let lqr = design(&m, &LqrWeights::default()).unwrap();
    let dob = DobDesign::new(&m, 2.0).unwrap();
    let model = MlpModel::new(&DEFAULT_DIMS, 0.0, &mut rng::stream(0, rng::NN_INIT)).unwrap();
    let nd = NeuroDob::new(model, Standardizer::identity(N_FEATURES), CompensationLimits::new(DEFAULT_EPSILON1).unwrap());
    let maps = builtin_maps();
    let assets = Assets {
        vehicle: &v,
        lqr: &lqr,
        dob: Some(&dob),
        neurodob: Some(&nd),
        map: &maps.map2,
    };
    let cfgs: Vec<ScenarioConfig> = (0..8)
        .map(|i| {
            let mut c = ScenarioConfig::new("map2", ControllerStack::ALL[i % ControllerStack::ALL.len()]);
            c.plant = PlantConfig::perturbed();
            c.duration = 20.0;
            c.run_index = i;
            c
        })
        .collect();

    let mut g = c.benchmark_group("scenario_batch");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", cfgs.len()), |b| {
        b.iter(|| par_map(&cfgs, |c| run_scenario(c, &assets).unwrap()))
    });
    g.bench_function(BenchmarkId::new("sequential", cfgs.len()), |b| {
        b.iter(|| seq_map(&cfgs, |c| run_scenario(c, &assets).unwrap()))
    });
    g.finish();

    let mut r = rng::stream(0, "bench.features");
    let chunks: Vec<Vec<FeatureVector>> = (0..16)
        .map(|_| {
            (0..4096)
                .map(|_| FeatureVector::from_array(std::array::from_fn(|_| r.random_range(-0.5..0.5))))
                .collect()
        })
        .collect();
    let eval = |chunk: &Vec<FeatureVector>| chunk.iter().map(|f| nd.compensate(f)).sum::<f64>();
    let mut g = c.benchmark_group("compensation_chunks");
    g.bench_function("parallel", |b| b.iter(|| par_map(&chunks, eval)));
    g.bench_function("sequential", |b| b.iter(|| seq_map(&chunks, eval)));
    g.finish();
}

criterion_group!(benches, scenarios);
criterion_main!(benches);
