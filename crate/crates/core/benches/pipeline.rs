use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;

use pafprint::channel::{ChannelConfig, ChannelKind};
use pafprint::exec::Exec;
use pafprint::features::FeatureMode;
use pafprint::modelgen::{generate_models, GeneratorSpec};
use pafprint::nn::{init_params, ConvNetConfig, Network};
use pafprint::rng::SimRng;
use pafprint::sigchain::{DataMode, PacketSpec};
use pafprint::trainer::{evaluate, network_spec, Architecture, SampleFactory, SampleStream};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn factory(kind: ChannelKind) -> SampleFactory {
    let mut rng = SimRng::seed_from_u64(1);
    let models = generate_models(&GeneratorSpec::default(), 5, &mut rng, Exec::Sequential).unwrap();
    let packet = PacketSpec { length_symbols: 2048, ..PacketSpec::default() };
    let channel = ChannelConfig { kind, ..ChannelConfig::awgn(20.0) };
    SampleFactory::new(models, packet, channel, FeatureMode::default())
        .unwrap()
        .with_data_mode(DataMode::Random)
}

fn batch_generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("batch_generation");
    g.sample_size(10);
    for kind in [ChannelKind::Awgn, ChannelKind::Dynamic] {
        let f = factory(kind);
        for (name, exec) in MODES {
            g.bench_function(BenchmarkId::new(name, kind.label()), |b| {
                let mut stream = SampleStream::new(&f, 7, &[256, 1, 1], exec);
                b.iter(|| stream.next_batch(32).unwrap());
            });
        }
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let f = factory(ChannelKind::Awgn);
    let spec = network_spec(Architecture::Conv, f.features(), 5, ConvNetConfig::default(), &Default::default()).unwrap();
    let net: Network<f32> = init_params(&spec, &mut SimRng::seed_from_u64(2)).unwrap();
    let (batch, labels) = SampleStream::new(&f, 3, &spec.input_shape, Exec::Parallel).next_batch(32).unwrap();
    let mut g = c.benchmark_group("loss_and_grad");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| net.loss_and_grad(&batch, &labels, exec).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| evaluate(&net, &f, 20, 11, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, batch_generation, gradients);
criterion_main!(benches);
