#include "dptq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "dptq/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

namespace dptq {

namespace {

using nlohmann::json;

struct NamedArray {
    std::string name;
    std::vector<std::int64_t> shape;
    const Tensor* tensor;
};

void write_all(const std::string& path, const json& header,
               const std::vector<NamedArray>& arrays) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("checkpoint: cannot open " + path + " for writing");

    const std::string head = header.dump();
    const std::uint64_t head_len = head.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& a : arrays) {
        const auto span = a.tensor->data();
        out.write(reinterpret_cast<const char*>(span.data()),
                  static_cast<std::streamsize>(span.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("checkpoint: short write to " + path);
}

json array_directory(const std::vector<NamedArray>& arrays) {
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        const std::uint64_t count = static_cast<std::uint64_t>(a.tensor->numel());
        dir.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                       {"count", count}});
        offset += count;
    }
    return dir;
}

json meta_json(const CheckpointMeta& meta) {
    return {{"stage", meta.stage}, {"config_hash", meta.config_hash}};
}

struct LoadedFile {
    json header;
    std::vector<double> payload;
};

LoadedFile read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint: cannot open " + path);

    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ConfigError("checkpoint: " + path + " is not a checkpoint file");

    std::uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    if (!in || head_len == 0 || head_len > (1u << 24))
        throw ConfigError("checkpoint: corrupt header length in " + path);

    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw ConfigError("checkpoint: truncated header in " + path);

    LoadedFile file;
    try {
        file.header = json::parse(head);
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint: bad header JSON in " + path + ": " + e.what());
    }

    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() % sizeof(double) != 0)
        throw ConfigError("checkpoint: payload is not a whole number of float64 in " + path);
    file.payload.resize(raw.size() / sizeof(double));
    std::memcpy(file.payload.data(), raw.data(), raw.size());
    return file;
}

void check_kind(const json& header, const std::string& kind, const std::string& path) {
    if (header.value("format_version", -1) != kCheckpointVersion)
        throw ConfigError("checkpoint: unsupported format version in " + path);
    if (header.value("kind", std::string()) != kind)
        throw ConfigError("checkpoint: " + path + " holds a " +
                          header.value("kind", std::string("?")) + ", expected " + kind);
}

Tensor read_array(const LoadedFile& file, const json& entry, const std::string& path) {
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t count = entry.at("count").get<std::uint64_t>();
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (offset + count > file.payload.size())
        throw ConfigError("checkpoint: array past end of payload in " + path);
    std::vector<double> data(file.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                             file.payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
    Tensor t = Tensor::from_data(shape, std::move(data), true);
    if (static_cast<std::uint64_t>(t.numel()) != count)
        throw ConfigError("checkpoint: shape/count mismatch in " + path);
    return t;
}

void fill_meta(const json& header, CheckpointMeta* meta) {
    if (!meta) return;
    const json prov = header.value("provenance", json::object());
    meta->stage = prov.value("stage", std::string());
    meta->config_hash = prov.value("config_hash", std::string());
    meta->rng_state = header.value("rng_state", std::string());
}

template <typename Net>
std::vector<NamedArray> layer_arrays(const Net& net) {
    std::vector<NamedArray> arrays;
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        arrays.push_back({"weight" + std::to_string(i), net.weights[i].shape(), &net.weights[i]});
        arrays.push_back({"bias" + std::to_string(i), net.biases[i].shape(), &net.biases[i]});
    }
    return arrays;
}

template <typename Net>
void load_layers(Net& net, const LoadedFile& file, const std::string& path) {
    const json& dir = file.header.at("arrays");
    const std::size_t n_layers = dir.size() / 2;
    for (std::size_t i = 0; i < n_layers; ++i) {
        const json& w = dir.at(2 * i);
        const json& b = dir.at(2 * i + 1);
        if (w.at("name") != "weight" + std::to_string(i) ||
            b.at("name") != "bias" + std::to_string(i))
            throw ConfigError("checkpoint: unexpected array order in " + path);
        net.weights.push_back(read_array(file, w, path));
        net.biases.push_back(read_array(file, b, path));
    }
}

}  // namespace

void save_classifier(const std::string& path, const ClassifierNet& net,
                     const CheckpointMeta& meta) {
    const auto arrays = layer_arrays(net);
    json header = {{"format_version", kCheckpointVersion},
                   {"kind", "classifier"},
                   {"spec",
                    {{"input_dim", net.spec.input_dim},
                     {"num_classes", net.spec.num_classes},
                     {"hidden", net.spec.hidden}}},
                   {"arrays", array_directory(arrays)},
                   {"rng_state", meta.rng_state},
                   {"provenance", meta_json(meta)}};
    write_all(path, header, arrays);
}

ClassifierNet load_classifier(const std::string& path, CheckpointMeta* meta) {
    const LoadedFile file = read_all(path);
    check_kind(file.header, "classifier", path);
    ClassifierNet net;
    const json& spec = file.header.at("spec");
    net.spec.input_dim = spec.at("input_dim").get<int>();
    net.spec.num_classes = spec.at("num_classes").get<int>();
    net.spec.hidden = spec.at("hidden").get<std::vector<int>>();
    load_layers(net, file, path);
    if (net.weights.size() != net.spec.hidden.size() + 1)
        throw ConfigError("checkpoint: layer count does not match spec in " + path);
    fill_meta(file.header, meta);
    return net;
}

void save_policy(const std::string& path, const PolicyNet& net, const CheckpointMeta& meta) {
    const auto arrays = layer_arrays(net);
    json header = {{"format_version", kCheckpointVersion},
                   {"kind", "policy"},
                   {"spec",
                    {{"input_dim", net.spec.input_dim},
                     {"layers", net.spec.layers},
                     {"options", net.spec.options},
                     {"hidden", net.spec.hidden}}},
                   {"arrays", array_directory(arrays)},
                   {"rng_state", meta.rng_state},
                   {"provenance", meta_json(meta)}};
    write_all(path, header, arrays);
}

PolicyNet load_policy(const std::string& path, CheckpointMeta* meta) {
    const LoadedFile file = read_all(path);
    check_kind(file.header, "policy", path);
    PolicyNet net;
    const json& spec = file.header.at("spec");
    net.spec.input_dim = spec.at("input_dim").get<int>();
    net.spec.layers = spec.at("layers").get<int>();
    net.spec.options = spec.at("options").get<int>();
    net.spec.hidden = spec.at("hidden").get<std::vector<int>>();
    load_layers(net, file, path);
    if (net.weights.size() != net.spec.hidden.size() + 1)
        throw ConfigError("checkpoint: layer count does not match spec in " + path);
    fill_meta(file.header, meta);
    return net;
}

}  // namespace dptq
