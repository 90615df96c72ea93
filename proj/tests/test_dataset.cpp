#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dptq/dataset.hpp"
#include "dptq/errors.hpp"

using namespace dptq;

TEST_CASE("dataset regenerates bitwise from the seed") {
    DatasetConfig cfg;
    cfg.seed = 7;
    cfg.train_size = 120;
    cfg.test_size = 60;
    auto a = make_dataset(cfg);
    auto b = make_dataset(cfg);
    CHECK(a.class_means == b.class_means);
    CHECK(a.train.x == b.train.x);
    CHECK(a.train.y == b.train.y);
    CHECK(a.test.x == b.test.x);

    cfg.seed = 8;
    auto c = make_dataset(cfg);
    CHECK(a.train.x != c.train.x);
}

TEST_CASE("labels are balanced and splits are distinct draws") {
    DatasetConfig cfg;
    cfg.num_classes = 5;
    cfg.train_size = 100;
    cfg.test_size = 50;
    auto ds = make_dataset(cfg);

    std::vector<int> counts(5, 0);
    for (int y : ds.train.y) ++counts[static_cast<std::size_t>(y)];
    for (int c : counts) CHECK(c == 20);

    // Same stream, consecutive blocks: the first test row must differ from
    // every train row even though both use label 0's mean.
    bool any_equal = false;
    for (int i = 0; i < ds.train.n; ++i) {
        bool eq = true;
        for (int j = 0; j < ds.train.d; ++j)
            if (ds.train.x[static_cast<std::size_t>(i * ds.train.d + j)] !=
                ds.test.x[static_cast<std::size_t>(j)]) {
                eq = false;
                break;
            }
        if (eq) any_equal = true;
    }
    CHECK_FALSE(any_equal);
}

TEST_CASE("batch materializes the requested rows") {
    DatasetConfig cfg;
    cfg.train_size = 10;
    cfg.test_size = 4;
    auto ds = make_dataset(cfg);

    Tensor b = ds.train.batch({3, 0, 7});
    REQUIRE(b.shape() == std::vector<std::int64_t>{3, cfg.input_dim});
    for (int j = 0; j < cfg.input_dim; ++j) {
        CHECK(b.data()[j] == ds.train.x[static_cast<std::size_t>(3 * cfg.input_dim + j)]);
        CHECK(b.data()[cfg.input_dim + j] == ds.train.x[static_cast<std::size_t>(j)]);
    }

    Tensor r = ds.train.row(7);
    CHECK(r.shape() == std::vector<std::int64_t>{1, cfg.input_dim});
    CHECK(r.data()[0] == ds.train.x[static_cast<std::size_t>(7 * cfg.input_dim)]);

    CHECK_THROWS_AS(ds.train.batch({10}), ContractError);
    CHECK_THROWS_AS(ds.train.batch({-1}), ContractError);
}

TEST_CASE("config validation") {
    DatasetConfig cfg;
    cfg.num_classes = 1;
    CHECK_THROWS_AS(make_dataset(cfg), ConfigError);
    cfg = {};
    cfg.noise_std = 0.0;
    CHECK_THROWS_AS(make_dataset(cfg), ConfigError);
    cfg = {};
    cfg.train_size = 0;
    CHECK_THROWS_AS(make_dataset(cfg), ConfigError);
}

TEST_CASE("noise_std controls cluster spread around the means") {
    DatasetConfig tight;
    tight.noise_std = 0.05;
    tight.train_size = 200;
    tight.test_size = 10;
    auto ds = make_dataset(tight);

    double worst = 0.0;
    for (int i = 0; i < ds.train.n; ++i) {
        const int y = ds.train.y[static_cast<std::size_t>(i)];
        for (int j = 0; j < ds.train.d; ++j) {
            const double dev = ds.train.x[static_cast<std::size_t>(i * ds.train.d + j)] -
                               ds.class_means[static_cast<std::size_t>(y * ds.train.d + j)];
            worst = std::max(worst, std::fabs(dev));
        }
    }
    // 6400 normal draws at sigma 0.05: staying under 6 sigma is essentially sure.
    CHECK(worst < 0.3);
}
