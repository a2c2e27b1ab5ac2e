#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "uniclass/data.hpp"

using namespace uniclass;

TEST_CASE("mixture generation is deterministic and validates sizes") {
    const Dataset a = generate_mixture(7, 4, 8, 100, 5.0, true);
    const Dataset b = generate_mixture(7, 4, 8, 100, 5.0, true);
    CHECK(a.points.data == b.points.data);
    CHECK(a.true_labels == b.true_labels);

    const Dataset c = generate_mixture(8, 4, 8, 100, 5.0, true);
    CHECK(a.points.data != c.points.data);

    CHECK_THROWS_AS(generate_mixture(1, 1, 8, 100, 5.0, true), ParameterError);
    CHECK_THROWS_AS(generate_mixture(1, 4, 8, 2, 5.0, true), ParameterError);
    CHECK_THROWS_AS(generate_mixture(1, 4, 8, 100, -1.0, true), ParameterError);
}

TEST_CASE("balanced generation fills every class") {
    const Dataset ds = generate_mixture(3, 5, 4, 103, 2.0, true);
    std::vector<std::size_t> counts(5, 0);
    for (Label l : ds.true_labels) counts[l]++;
    for (std::size_t c = 0; c < 5; ++c) CHECK(counts[c] >= 20);
}

TEST_CASE("well-separated mixture is solvable by the k-means oracle") {
    const Dataset ds = generate_mixture(42, 4, 16, 2000, 10.0, true);
    const Partition labels = oracles::kmeans(ds.points, 4, 11);
    CHECK(hungarian_acc(labels, ds.true_labels).acc >= 0.99);
}

TEST_CASE("zero separation makes classes indistinguishable") {
    const Dataset ds = generate_mixture(5, 4, 8, 400, 0.0, true);
    const Partition labels = oracles::kmeans(ds.points, 4, 11);
    CHECK(hungarian_acc(labels, ds.true_labels).acc < 0.5);  // chance is 0.25
}

TEST_CASE("augmentation identity and distinctness") {
    const std::vector<double> point{1.0, -2.0, 3.0, 0.5};
    AugmentParams zero{0.0, 0.0, 1.0};
    SplitMix64 rng(1);
    CHECK(augment(point, AugmentKind::Global, zero, rng) == point);
    CHECK(augment(point, AugmentKind::Local, zero, rng) == point);

    AugmentParams params{0.3, 0.3, 0.5};
    SplitMix64 r1(11), r2(12);
    const auto v1 = augment(point, AugmentKind::Global, params, r1);
    const auto v2 = augment(point, AugmentKind::Global, params, r2);
    CHECK(v1 != v2);
    CHECK(v1 != point);

    SplitMix64 r3(11);
    CHECK(augment(point, AugmentKind::Global, params, r3) == v1);  // same stream, same view
}

TEST_CASE("local views keep the requested fraction of coordinates") {
    const std::size_t dim = 16;
    std::vector<double> point(dim, 1.0);
    AugmentParams params{0.0, 0.0, 0.25};
    SplitMix64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = augment(point, AugmentKind::Local, params, rng);
        std::size_t kept = 0;
        for (double x : v) kept += x != 0.0 ? 1 : 0;
        CHECK(kept == 4);
    }
}

TEST_CASE("global augmentation noise magnitude matches its variance") {
    const std::size_t dim = 16;
    const double sigma = 0.7;
    std::vector<double> point(dim, 0.3);
    AugmentParams params{sigma, 0.0, 1.0};
    SplitMix64 rng(31);
    double total = 0.0;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const auto v = augment(point, AugmentKind::Global, params, rng);
        for (std::size_t c = 0; c < dim; ++c) total += (v[c] - point[c]) * (v[c] - point[c]);
    }
    const double expected = sigma * sigma * static_cast<double>(dim);
    CHECK(total / draws == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("NNQueue FIFO eviction and capacity bound") {
    NNQueue q(4, 2);
    CHECK(q.empty());
    auto unit = [](double angle) {
        return std::vector<double>{std::cos(angle), std::sin(angle)};
    };
    for (int i = 0; i < 6; ++i) q.push(unit(0.3 * i));
    CHECK(q.size() == 4);
    // The first two pushes are gone; the nearest match to angle 0 is now 0.6.
    const auto nn = q.nearest(unit(0.0));
    CHECK(nn[0] == doctest::Approx(std::cos(0.6)));
    CHECK(nn[1] == doctest::Approx(std::sin(0.6)));
}

TEST_CASE("NNQueue nearest: trivial cases and tie-breaking") {
    NNQueue q(8, 3);
    const std::vector<double> e1{1, 0, 0};
    const std::vector<double> e2{0, 1, 0};
    q.push(e1);
    q.push(e2);
    CHECK(q.nearest(e1) == e1);
    CHECK(q.nearest(e2) == e2);

    // Orthogonal queue entries tie on an equidistant query: earliest wins.
    const double inv = 1.0 / std::sqrt(2.0);
    CHECK(q.nearest(std::vector<double>{inv, inv, 0}) == e1);

    NNQueue empty_q(4, 3);
    CHECK(empty_q.nearest(e1) == e1);  // warm-up fallback

    CHECK_THROWS_AS(q.push(std::vector<double>{2, 0, 0}), ParameterError);
    CHECK_THROWS_AS(q.push(std::vector<double>{1, 0}), DimensionError);
}

TEST_CASE("NNQueue nearest equals exhaustive scan and returns stored vectors") {
    SplitMix64 rng(41);
    const std::size_t dim = 6;
    NNQueue q(64, dim);
    std::vector<std::vector<double>> pushed;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(dim);
        double n2 = 0.0;
        for (double& x : v) {
            x = rng.next_normal();
            n2 += x * x;
        }
        for (double& x : v) x /= std::sqrt(n2);
        q.push(v);
        pushed.push_back(std::move(v));
    }
    // Only the newest 64 survive.
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> query(dim);
        double n2 = 0.0;
        for (double& x : query) {
            x = rng.next_normal();
            n2 += x * x;
        }
        for (double& x : query) x /= std::sqrt(n2);

        double best = -2.0;
        std::size_t best_idx = 0;
        for (std::size_t i = 36; i < pushed.size(); ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < dim; ++c) dot += pushed[i][c] * query[c];
            if (dot > best) {
                best = dot;
                best_idx = i;
            }
        }
        const auto got = q.nearest(query);
        CHECK(got == pushed[best_idx]);
    }
}

TEST_CASE("dataset CSV round trip is exact") {
    const Dataset ds = generate_mixture(9, 3, 5, 50, 4.0, true);
    const auto path = std::filesystem::temp_directory_path() / "uniclass_data_test.csv";
    write_csv(ds, path);
    const Dataset back = read_csv(path);
    CHECK(back.points.rows == ds.points.rows);
    CHECK(back.points.cols == ds.points.cols);
    CHECK(back.points.data == ds.points.data);
    CHECK(back.true_labels == ds.true_labels);
    CHECK(back.k_true == ds.k_true);
    std::filesystem::remove(path);
}
