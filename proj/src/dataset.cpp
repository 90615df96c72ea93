#include "dptq/dataset.hpp"

namespace dptq {

namespace {

DataSplit draw_split(Rng& rng, const DatasetConfig& cfg, const std::vector<double>& means,
                     int n) {
    DataSplit split;
    split.n = n;
    split.d = cfg.input_dim;
    split.x.resize(static_cast<std::size_t>(n) * cfg.input_dim);
    split.y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % cfg.num_classes;  // balanced; training shuffles anyway
        split.y[static_cast<std::size_t>(i)] = label;
        const double* mu = means.data() + static_cast<std::size_t>(label) * cfg.input_dim;
        double* row = split.x.data() + static_cast<std::size_t>(i) * cfg.input_dim;
        for (int j = 0; j < cfg.input_dim; ++j)
            row[j] = mu[j] + cfg.noise_std * normal_double(rng);
    }
    return split;
}

}  // namespace

Tensor DataSplit::batch(const std::vector<int>& indices) const {
    const std::int64_t b = static_cast<std::int64_t>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(b) * d);
    for (std::int64_t r = 0; r < b; ++r) {
        const int idx = indices[static_cast<std::size_t>(r)];
        if (idx < 0 || idx >= n) throw ContractError("DataSplit::batch: index out of range");
        const double* src = x.data() + static_cast<std::size_t>(idx) * d;
        std::copy(src, src + d, out.data() + static_cast<std::size_t>(r) * d);
    }
    return Tensor::from_data({b, d}, std::move(out));
}

Tensor DataSplit::row(int index) const {
    return batch({index});
}

SyntheticDataset make_dataset(const DatasetConfig& cfg) {
    if (cfg.num_classes < 2 || cfg.input_dim < 1 || cfg.train_size < 1 || cfg.test_size < 1)
        throw ConfigError("make_dataset: sizes must be positive and num_classes >= 2");
    if (!(cfg.noise_std > 0.0)) throw ConfigError("make_dataset: noise_std must be positive");

    SyntheticDataset ds;
    ds.cfg = cfg;

    Rng rng(derive_seed(cfg.seed, "dataset"));
    ds.class_means.resize(static_cast<std::size_t>(cfg.num_classes) * cfg.input_dim);
    for (auto& m : ds.class_means) m = cfg.mean_scale * normal_double(rng);

    ds.train = draw_split(rng, cfg, ds.class_means, cfg.train_size);
    ds.test = draw_split(rng, cfg, ds.class_means, cfg.test_size);
    return ds;
}

}  // namespace dptq
