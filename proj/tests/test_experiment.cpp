#include <filesystem>
#include <unistd.h>

#include "doctest.h"
#include "kdcode/experiment.hpp"

using namespace kdc;

namespace {

ExperimentConfig small_reconstruction() {
    ExperimentConfig c;
    c.synthetic_vocab = 120;
    c.synthetic_dim = 8;
    c.synthetic_clusters = 6;
    c.way = 4;
    c.dims = 4;
    c.code_dim = 8;
    c.epochs = 3;
    c.lr = 0.01;
    c.encoder_hidden = 16;
    return c;
}

ExperimentConfig small_classification() {
    ExperimentConfig c;
    c.task = "classification";
    c.corpus_vocab = 150;
    c.corpus_documents = 200;
    c.corpus_dim = 8;
    c.way = 4;
    c.dims = 4;
    c.code_dim = 8;
    c.epochs = 3;
    c.lr = 0.03;
    c.pq_subspaces = 2;
    c.pq_centroids = 4;
    return c;
}

}  // namespace

TEST_CASE("ablation rows switch one trick at a time") {
    auto base = small_reconstruction();
    base.entropy_weight = 0.05;
    const auto rows = ablation_configs(base);
    REQUIRE(rows.size() == 6);
    REQUIRE(ablation_labels().size() == 6);
    CHECK(rows[0].relaxation == Relaxation::Continuous);
    CHECK(rows[0].schedule == ScheduleKind::Constant);
    CHECK(rows[0].entropy_weight == 0);
    CHECK(rows[0].guidance == GuidanceMode::None);
    CHECK(rows[1].relaxation == Relaxation::StraightThrough);
    CHECK(rows[1].schedule == ScheduleKind::Constant);
    CHECK(rows[2].schedule == ScheduleKind::Exponential);
    CHECK(rows[2].entropy_weight == 0);
    CHECK(rows[3].entropy_weight == 0.05);
    CHECK(rows[3].guidance == GuidanceMode::None);
    CHECK(rows[4].guidance == GuidanceMode::Pretrained);
    CHECK_FALSE(rows[4].autoencoder);
    CHECK(rows[5].guidance == GuidanceMode::Pretrained);
    CHECK(rows[5].autoencoder);
    for (const auto& r : rows) CHECK(r.seed == base.seed);
}

TEST_CASE("ablation runs every row") {
    const auto reports = ablation(small_reconstruction());
    REQUIRE(reports.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(reports[i].method == ablation_labels()[i]);
        CHECK(reports[i].reconstruction_error.has_value());
        CHECK_NOTHROW(check_accounting(reports[i]));
    }
}

TEST_CASE("every baseline reports consistent sizes") {
    auto cfg = small_reconstruction();
    cfg.lowrank_rank = 2;
    Dataset data = load_dataset(cfg);
    for (const auto& m : baseline_methods()) {
        CAPTURE(m);
        auto run = run_baseline(cfg, data, m);
        CHECK_NOTHROW(check_accounting(run.report));
        CHECK(run.report.reconstruction_error.has_value());
        CHECK(run.embeddings.shape() == Shape{120, 8});
    }
    CHECK(*run_baseline(cfg, data, "full").report.reconstruction_error == 0.0);
    CHECK_THROWS_AS(run_baseline(cfg, data, "svd"), Error);
}

TEST_CASE("classification inference needs only the code table and codebook") {
    auto cfg = small_classification();
    Dataset data = load_dataset(cfg);
    auto run = run_kd(cfg, data);
    REQUIRE(run.codes.has_value());
    REQUIRE(run.report.accuracy.has_value());
    CHECK_FALSE(run.head.empty());
    for (const auto& [name, value] : run.head) CHECK(name.rfind("task/", 0) == 0);
    const auto again = evaluate_artifacts(cfg, data, *run.codes, *run.codebook, run.head);
    CHECK(again.task_loss == run.report.task_loss);
    CHECK(again.accuracy == run.report.accuracy);
    CHECK(again.bits == run.report.bits);
}

TEST_CASE("classification baselines are trained on a frozen reconstruction") {
    auto cfg = small_classification();
    Dataset data = load_dataset(cfg);
    CHECK_FALSE(data.embeddings.has_value());
    auto full = run_baseline(cfg, data, "full");
    REQUIRE(data.embeddings.has_value());
    CHECK(*data.embeddings == full.embeddings);
    for (const char* m : {"pq", "scalar"}) {
        auto run = run_baseline(cfg, data, m);
        CHECK(run.report.accuracy.has_value());
        CHECK(run.report.reconstruction_error.has_value());
        CHECK_NOTHROW(check_accounting(run.report));
    }
}

TEST_CASE("sweep keeps finished runs when a value fails") {
    auto cfg = small_reconstruction();
    auto r = sweep(cfg, "D", {"4", "5", "1"});
    CHECK(r.reports.size() == 2);
    REQUIRE(r.error.has_value());
    CHECK(r.error->find("D=1") == 0);
    CHECK(r.reports[0].method.find("D=4") != std::string::npos);
    CHECK_THROWS_AS(sweep(cfg, "lr", {"0.1"}), Error);
}

TEST_CASE("primary metric") {
    RunReport r;
    r.method = "x";
    CHECK_THROWS_AS(primary_metric(r), Error);
    r.task_loss = 0.5;
    CHECK(primary_metric(r) == 0.5);
    r.reconstruction_error = 0.25;
    CHECK(primary_metric(r) == 0.25);
    r.accuracy = 0.9;
    CHECK(primary_metric(r) == doctest::Approx(0.1));
}

TEST_CASE("parameter files round trip exactly") {
    const auto path = (std::filesystem::temp_directory_path() / ("kdcode-params-" + std::to_string(::getpid()))).string();
    Rng rng(3);
    diff::ParamStore p{{"task/W", normal_tensor({3, 4}, 0, 1, rng)}, {"task/b", normal_tensor({4}, 0, 1, rng)}};
    save_params(path, p);
    CHECK(load_params(path) == p);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_params(path), Error);
}
