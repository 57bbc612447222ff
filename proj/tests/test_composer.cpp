#include <cmath>
#include <sstream>

#include "doctest.h"
#include "kdcode/baselines.hpp"
#include "kdcode/composer.hpp"
#include "oracles.hpp"

using namespace kdc;

namespace {

const ComposerKind kKinds[] = {ComposerKind::LinearSum, ComposerKind::LinearHidden, ComposerKind::Lstm};

// v = (sum_j W^j[c_j]) H for a linear-sum book, written out by hand.
Tensor linear_sum_oracle(const DiscreteCodeTable& t, const CodeBook& b) {
    Tensor out({t.vocab(), b.out_dim});
    for (std::size_t i = 0; i < t.vocab(); ++i) {
        Tensor s({1, b.code_dim});
        for (std::size_t j = 0; j < t.dims(); ++j)
            for (std::size_t c = 0; c < b.code_dim; ++c) s[c] += b.tables[j].at(t.digit(i, j), c);
        Tensor v = b.projection ? oracle::matmul(s, *b.projection) : s;
        for (std::size_t c = 0; c < b.out_dim; ++c) out.at(i, c) = v[c];
    }
    return out;
}

Tensor relaxed_selection(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
    return kernels::softmax(normal_tensor({n, d, k}, 0, 1, rng), 1.0);
}

}  // namespace

TEST_CASE("composer names") {
    for (auto k : kKinds) CHECK(parse_composer(composer_name(k)) == k);
    CHECK_THROWS_AS(parse_composer("gru"), Error);
}

TEST_CASE("parameter counts") {
    Rng rng(1);
    SUBCASE("linear-sum without projection has no composer parameters") {
        auto b = CodeBook::initialize(8, 4, 16, 16, {}, rng);
        CHECK_FALSE(b.projection.has_value());
        CHECK(b.composer_params() == 0);
        CHECK(b.param_count() == 8 * 4 * 16);
    }
    SUBCASE("linear-sum with projection") {
        auto b = CodeBook::initialize(8, 4, 6, 10, {}, rng);
        CHECK(b.composer_params() == 60);
    }
    SUBCASE("linear-hidden") {
        auto b = CodeBook::initialize(8, 4, 6, 10, {ComposerKind::LinearHidden, 5, false}, rng);
        CHECK(b.composer_params() == 6 * 5 + 5 + 5 * 10 + 10);
    }
    SUBCASE("lstm untied and tied") {
        auto u = CodeBook::initialize(8, 4, 6, 6, {ComposerKind::Lstm, 0, false}, rng);
        CHECK(u.composer_params() == 4 * (36 + 6));
        auto t = CodeBook::initialize(8, 4, 6, 6, {ComposerKind::Lstm, 0, true}, rng);
        CHECK(t.composer_params() == 3 * (36 + 6));
        auto p = CodeBook::initialize(8, 4, 6, 9, {ComposerKind::Lstm, 0, false}, rng);
        CHECK(p.composer_params() == 4 * (36 + 6) + 54);
    }
    SUBCASE("count without a book agrees with the book") {
        for (auto k : kKinds) {
            for (bool tied : {false, true}) {
                ComposerSpec s{k, 7, tied};
                auto b = CodeBook::initialize(4, 3, 5, 9, s, rng);
                CHECK(composer_param_count(5, 9, s) == b.composer_params());
            }
        }
    }
}

TEST_CASE("hard composition equals the linear-sum oracle") {
    Rng rng(2);
    for (std::size_t out : {6u, 9u}) {
        auto b = CodeBook::initialize(5, 3, 6, out, {}, rng);
        auto t = random_codes(40, 5, 3, 3);
        CHECK(oracle::max_abs_diff(compose_batch(t, b), linear_sum_oracle(t, b)) < 1e-12);
    }
}

TEST_CASE("graph composition is bit-identical to direct composition for one-hot codes") {
    Rng rng(3);
    for (auto kind : kKinds) {
        for (bool tied : {false, true}) {
            auto book = CodeBook::initialize(6, 4, 5, 7, {kind, 8, tied}, rng);
            auto table = random_codes(25, 6, 4, 11);
            diff::Graph g;
            ComposerNet net(g, book);
            auto sel = g.input("sel", {0, 4, 6});
            auto v = net.apply(g, sel);
            diff::Feed f;
            f.set("sel", table.one_hot());
            INFO(std::string(composer_name(kind)));
            CHECK(g.evaluate(f, v)[v] == compose_batch(table, book));
            std::vector<std::size_t> some{3, 0, 17};
            CHECK(compose_rows(table, some, book) == kernels::gather_rows(compose_batch(table, book), some));
        }
    }
}

TEST_CASE("direct composition of relaxed selections matches the graph") {
    Rng rng(4);
    for (auto kind : kKinds) {
        auto book = CodeBook::initialize(3, 2, 4, 4, {kind, 6, false}, rng);
        auto sel = relaxed_selection(1, 2, 3, rng);
        diff::Graph g;
        ComposerNet net(g, book);
        auto in = g.input("sel", {0, 2, 3});
        auto v = net.apply(g, in);
        diff::Feed f;
        f.set("sel", sel);
        auto direct = compose(sel.reshaped({2, 3}), book);
        CHECK(oracle::max_abs_diff(g.evaluate(f, v)[v], direct.reshaped({1, 4})) < 1e-12);
    }
    auto book = CodeBook::initialize(3, 2, 4, 4, {}, rng);
    CHECK_THROWS_AS(compose(Tensor({2, 3}, 0.2), book), Error);
}

TEST_CASE("finite differences through all three composers, 20 instances each") {
    for (auto kind : kKinds) {
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed + 100);
            auto book = CodeBook::initialize(3, 3, 4, 5, {kind, 6, seed % 2 == 1}, rng);
            diff::Graph g;
            ComposerNet net(g, book);
            auto logits = g.parameter("pi", normal_tensor({4, 3, 3}, 0, 1, rng));
            auto v = net.apply(g, g.softmax(logits, 0.9));
            auto loss = g.squared_error(v, g.constant(normal_tensor({4, 5}, 0, 1, rng)));
            for (const auto& [name, t] : g.params()) {
                worst = std::max(worst, g.finite_difference_check({}, loss, name, 1e-5));
            }
        }
        INFO(std::string(composer_name(kind)));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("read back copies trained values into the book") {
    Rng rng(5);
    auto book = CodeBook::initialize(3, 2, 4, 5, {ComposerKind::Lstm, 0, false}, rng);
    diff::Graph g;
    ComposerNet net(g, book);
    for (auto& [name, t] : g.params()) t.fill(0.5);
    CodeBook copy = book;
    net.read_back(g.params(), copy);
    CHECK(copy.tables[1] == Tensor({3, 4}, 0.5));
    CHECK(copy.param("U_t") == Tensor({4, 4}, 0.5));
    CHECK(*copy.projection == Tensor({4, 5}, 0.5));
}

TEST_CASE("factorization equivalence: linear-sum composition is B times C") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::uniform_int_distribution<std::size_t> nd(2, 100), kd(2, 8), dd(1, 4), wd(1, 6);
        const std::size_t n = nd(rng), k = kd(rng), d = dd(rng), w = wd(rng);
        auto table = random_codes(n, k, d, seed + 50);
        auto book = CodeBook::initialize(k, d, w, w, {}, rng);
        CHECK(factorization_equivalence_check(table, book) < 1e-10);
        auto b = binary_code_matrix(table);
        CHECK(b.shape() == Shape{n, k * d});
        CHECK(oracle::rank(b) <= k * d);
        CHECK(oracle::rank(oracle::matmul(b, stacked_code_embeddings(book))) <= k * d);
        CHECK(oracle::max_abs_diff(oracle::matmul(b, stacked_code_embeddings(book)), compose_batch(table, book)) < 1e-10);
    }
    Rng rng(0);
    auto hidden = CodeBook::initialize(2, 2, 3, 3, {ComposerKind::LinearHidden, 4, false}, rng);
    CHECK_THROWS_AS(factorization_equivalence_check(random_codes(4, 2, 2, 1), hidden), Error);
}

TEST_CASE("binary codebook round trip") {
    Rng rng(6);
    for (auto kind : kKinds) {
        for (bool tied : {false, true}) {
            auto book = CodeBook::initialize(4, 3, 5, 7, {kind, 6, tied}, rng);
            // float32 storage: use values exactly representable in single precision
            for (auto& t : book.tables)
                for (double& v : t.values()) v = static_cast<float>(v);
            if (book.projection)
                for (double& v : book.projection->values()) v = static_cast<float>(v);
            for (auto& [n, t] : book.theta)
                for (double& v : t.values()) v = static_cast<float>(v);
            std::stringstream ss;
            write_codebook(ss, book);
            CHECK(ss.str().substr(0, 4) == "KDCB");
            auto back = read_codebook(ss);
            CHECK(back.spec.kind == kind);
            CHECK(back.spec.lstm_tied_output_gate == tied);
            auto table = random_codes(10, 4, 3, 2);
            CHECK(compose_batch(table, back) == compose_batch(table, book));
        }
    }
    std::stringstream junk("XXXX1234");
    CHECK_THROWS_AS(read_codebook(junk), Error);
}
