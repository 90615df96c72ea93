#pragma once

#include <string>

#include "dptq/networks.hpp"

namespace dptq {

// Versioned container: 8-byte magic, u64 little-endian header length, JSON
// header (kind, spec, named array directory, rng state, provenance), then the
// flat float64 little-endian payload. load(save(net)) reproduces bitwise
// identical forwards. No timestamps anywhere, so identical inputs give
// identical files.

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'T', 'Q', 'C', 'K', 'P', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string stage;        // which pipeline stage produced the file
    std::string config_hash;  // hash of the effective config
    std::string rng_state;    // optional resume cursor
};

void save_classifier(const std::string& path, const ClassifierNet& net,
                     const CheckpointMeta& meta = {});
ClassifierNet load_classifier(const std::string& path, CheckpointMeta* meta = nullptr);

void save_policy(const std::string& path, const PolicyNet& net, const CheckpointMeta& meta = {});
PolicyNet load_policy(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace dptq
