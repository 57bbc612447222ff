#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kdcode/baselines.hpp"
#include "kdcode/codes.hpp"
#include "oracles.hpp"

using namespace kdc;

TEST_CASE("code configuration validation") {
    CHECK_NOTHROW(CodeConfig{16, 2, 4, 3, false}.validate());
    CHECK_THROWS_AS((CodeConfig{17, 2, 4, 3, false}.validate()), Error);
    CHECK_NOTHROW(CodeConfig{17, 2, 4, 3, true}.validate());
    CHECK_THROWS_AS((CodeConfig{4, 1, 4, 3, false}.validate()), Error);
    CHECK_THROWS_AS((CodeConfig{4, 2, 0, 3, false}.validate()), Error);
    CHECK_THROWS_AS((CodeConfig{4, 2, 2, 0, false}.validate()), Error);
}

TEST_CASE("tempering softmax") {
    SUBCASE("uniform logits give uniform probabilities at any temperature") {
        for (double tau : {0.01, 1.0, 50.0}) {
            for (double p : tempering_softmax(std::vector<double>{2, 2, 2, 2}, tau)) CHECK(p == doctest::Approx(0.25));
        }
    }
    SUBCASE("low temperature approaches the one-hot argmax") {
        auto p = tempering_softmax(std::vector<double>{0.1, 0.5, 0.3}, 1e-3);
        CHECK(p[1] > 1 - 1e-12);
    }
    SUBCASE("high temperature approaches uniform") {
        auto p = tempering_softmax(std::vector<double>{0.1, 0.5, 0.3}, 1e6);
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-5));
    }
    SUBCASE("matches the oracle") {
        std::vector<double> x{1.5, -0.2, 0.7, 3.1};
        auto p = tempering_softmax(x, 0.4);
        auto ref = oracle::softmax(x, 0.4);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    SUBCASE("non-positive temperature fails") {
        CHECK_THROWS_AS(tempering_softmax(std::vector<double>{1, 2}, 0.0), Error);
        CHECK_THROWS_AS(tempering_softmax(std::vector<double>{1, 2}, -1.0), Error);
    }
}

TEST_CASE("straight-through selection") {
    CHECK(straight_through(std::vector<double>{0.2, 0.5, 0.3}) == std::vector<double>{0, 1, 0});
    CHECK(straight_through(std::vector<double>{0.4, 0.4, 0.2}) == std::vector<double>{1, 0, 0});
}

TEST_CASE("entropy regularizer") {
    CHECK(entropy_regularizer(Tensor::matrix(2, 2, {1, 0, 0, 1})) == 0.0);
    CHECK(entropy_regularizer(Tensor::matrix(1, 4, {0.25, 0.25, 0.25, 0.25})) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("extract codes takes the per-row argmax") {
    CodeLogits l{Tensor({2, 2, 3}, std::vector<double>{0, 1, 0, 5, 1, 1, 2, 2, 0, -1, -3, -2})};
    auto t = extract_codes(l);
    CHECK(t.vocab() == 2);
    CHECK(t.digits() == std::vector<std::uint32_t>{1, 0, 0, 0});
    CHECK(t.render(0) == "1-0");
}

TEST_CASE("code table text round trip") {
    DiscreteCodeTable t(6, 3, {0, 5, 2, 1, 1, 4, 3, 0, 0}, {"the", "cat", "sat"});
    std::stringstream ss;
    write_code_table(ss, t);
    CHECK(ss.str().rfind("#kd K=6 D=3 N=3\n", 0) == 0);
    CHECK(ss.str().find("cat 1-1-4") != std::string::npos);
    CHECK(read_code_table(ss) == t);
}

TEST_CASE("code table rejects malformed input") {
    std::stringstream bad("#kd K=2 D=2 N=1\na 0-2\n");
    CHECK_THROWS_AS(read_code_table(bad), Error);
    CHECK_THROWS_AS(DiscreteCodeTable(2, 2, {0, 1, 0}), Error);
}

TEST_CASE("code space statistics") {
    DiscreteCodeTable t(2, 2, {0, 0, 0, 1, 0, 0, 1, 1});
    auto s = code_space_stats(t);
    CHECK(s.unique_codes == 3);
    CHECK(s.utilization == doctest::Approx(0.75));
    CHECK(s.collisions == 1);
}

TEST_CASE("code space size and minimum dimension") {
    CHECK(code_space_size(2, 10) == 1024.0);
    CHECK(min_dimension(10000, 32) == 3);
    CHECK(min_dimension(1024, 2) == 10);
    CHECK(min_dimension(1025, 2) == 11);
    CHECK(min_dimension(1, 2) == 1);
}

TEST_CASE("no-collision probability") {
    CHECK(no_collision_probability(1'000'000'000ull, 100, 10) == doctest::Approx(0.995).epsilon(0.001));
    CHECK(no_collision_probability(9, 2, 3) == 0.0);
    CHECK(no_collision_probability(1, 2, 3) == 1.0);
    // exact product, by hand: (1 - 1/8)(1 - 2/8)
    CHECK(no_collision_probability(3, 2, 3) == doctest::Approx(7.0 / 8 * 6.0 / 8));
    SUBCASE("product and approximation agree across the switch-over") {
        const double a = no_collision_probability(kExactCollisionLimit, 10, 16);
        const double b = no_collision_probability(kExactCollisionLimit + 1, 10, 16);
        CHECK(a == doctest::Approx(b).epsilon(1e-4));
    }
}

TEST_CASE("no-collision probability matches Monte Carlo") {
    const int trials = 20000;
    int clean = 0;
    for (int t = 0; t < trials; ++t) {
        auto table = random_codes(30, 4, 4, 1000 + t);
        if (code_space_stats(table).collisions == 0) ++clean;
    }
    const double p = no_collision_probability(30, 4, 4);
    const double se = std::sqrt(p * (1 - p) / trials);
    CHECK(std::abs(clean / double(trials) - p) < 3 * se);
}

TEST_CASE("bit accounting") {
    CHECK(bits_per_digit(2) == 1);
    CHECK(bits_per_digit(32) == 5);
    CHECK(bits_per_digit(6) == 3);
    CHECK(is_power_of_two(64));
    CHECK_FALSE(is_power_of_two(6));
    CHECK(full_layer_bits(10000, 200) == 64'000'000ull);
    CHECK(full_layer_bits(10000, 650) == 208'000'000ull);
    CHECK(full_layer_bits(10000, 1500) == 480'000'000ull);
    CHECK(full_layer_bits(10000, 200, FullBitsConvention::Text) == 32ull * 10000 * 201);
    CHECK(kd_layer_bits(10000, 32, 32, 0, 0) == 1'600'000ull);
    CHECK(kd_layer_bits(10, 4, 3, 5, 7) == 10 * 3 * 2 + 32 * (4 * 3 * 5 + 7));
    CHECK(embedding_params_count(4, 3, 5, 7) == 67);
}
