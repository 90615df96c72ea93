#pragma once

#include <cstdint>
#include <vector>

#include "dptq/rng.hpp"
#include "dptq/tensor.hpp"

namespace dptq {

// Class-conditional Gaussian mixture. Everything regenerates deterministically
// from the seed; train and test are drawn as disjoint consecutive blocks of
// the same stream. Difficulty is tuned through noise_std (cluster overlap).

struct DatasetConfig {
    std::uint64_t seed = 1;
    int num_classes = 10;
    int input_dim = 32;
    int train_size = 2000;
    int test_size = 2000;
    double mean_scale = 1.0;
    double noise_std = 1.0;
};

struct DataSplit {
    std::vector<double> x;  // [n x d] row-major
    std::vector<int> y;     // labels in [0, K)
    int n = 0;
    int d = 0;

    Tensor batch(const std::vector<int>& indices) const;
    Tensor row(int index) const;  // [1 x d]
};

struct SyntheticDataset {
    DatasetConfig cfg;
    std::vector<double> class_means;  // [K x d]
    DataSplit train;
    DataSplit test;
};

SyntheticDataset make_dataset(const DatasetConfig& cfg);

}  // namespace dptq
