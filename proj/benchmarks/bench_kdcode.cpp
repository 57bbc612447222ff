#include <benchmark/benchmark.h>

#include <numeric>

#include "kdcode/baselines.hpp"
#include "kdcode/composer.hpp"
#include "kdcode/tasks.hpp"
#include "kdcode/trainer.hpp"

using namespace kdc;

namespace {

ComposerKind kind_of(std::int64_t v) { return static_cast<ComposerKind>(v); }

void BM_ComposeBatch(benchmark::State& state) {
    const auto kind = kind_of(state.range(0));
    const std::size_t n = 10000, k = 16, d = 8;
    Rng rng(1);
    ComposerSpec spec;
    spec.kind = kind;
    spec.hidden = 64;
    auto book = CodeBook::initialize(k, d, 32, 64, spec, rng);
    auto table = random_codes(n, k, d, 2);
    for (auto _ : state) benchmark::DoNotOptimize(compose_batch(table, book));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
    state.SetLabel(composer_name(kind));
}
BENCHMARK(BM_ComposeBatch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_ComposerForwardBackward(benchmark::State& state) {
    const auto kind = kind_of(state.range(0));
    const std::size_t batch = 64, k = 16, d = 8;
    Rng rng(3);
    ComposerSpec spec;
    spec.kind = kind;
    spec.hidden = 64;
    auto book = CodeBook::initialize(k, d, 32, 64, spec, rng);
    diff::Graph g;
    ComposerNet net(g, book);
    auto pi = g.parameter("pi", normal_tensor({batch, d, k}, 0, 1, rng));
    auto out = net.apply(g, g.straight_through(g.softmax(pi, 0.5)));
    auto loss = g.squared_error(out, g.constant(normal_tensor({batch, 64}, 0, 1, rng)));
    auto names = net.param_names();
    names.push_back("pi");
    diff::Feed feed;
    for (auto _ : state) {
        auto ev = g.evaluate(feed, loss);
        benchmark::DoNotOptimize(g.gradient(ev, loss, names));
    }
    state.SetLabel(composer_name(kind));
}
BENCHMARK(BM_ComposerForwardBackward)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_TrainEpochReconstruction(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto data = make_clustered_embeddings(n, 32, 20, 0.3, 4);
    for (auto _ : state) {
        state.PauseTiming();
        KdLayerConfig l;
        l.codes = {n, 16, 4, 32, false};
        l.out_dim = 32;
        KdEmbeddingLayer layer(l);
        ReconstructionTask task(data.vectors);
        TrainConfig tc;
        tc.epochs = 1;
        Trainer trainer(tc, layer, task);
        state.ResumeTiming();
        benchmark::DoNotOptimize(trainer.train_epoch());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_TrainEpochReconstruction)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
    auto x = make_clustered_embeddings(5000, 8, 32, 0.3, 5).vectors;
    const auto k = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        Rng rng(6);
        benchmark::DoNotOptimize(kmeans(x, k, rng));
    }
}
BENCHMARK(BM_KMeans)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_NnOverlap(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(7);
    auto a = normal_tensor({n, 32}, 0, 1, rng);
    auto b = normal_tensor({n, 32}, 0, 1, rng);
    for (auto _ : state) benchmark::DoNotOptimize(nn_overlap(a, b, 10));
}
BENCHMARK(BM_NnOverlap)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
