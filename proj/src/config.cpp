#include "dptq/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dptq/errors.hpp"
#include "dptq/mckp.hpp"
#include "dptq/quantize.hpp"

namespace dptq {

namespace {

using nlohmann::json;

json rule_to_json(const ScaleRule& rule) {
    return {{"rule", rule.kind == ScaleRule::Kind::percentile ? "percentile" : "default"},
            {"percentile_q", rule.q}};
}

ScaleRule rule_from_json(const json& j) {
    ScaleRule rule;
    const std::string name = j.at("rule").get<std::string>();
    if (name == "percentile")
        rule.kind = ScaleRule::Kind::percentile;
    else if (name != "default")
        throw ConfigError("config: unknown scale rule '" + name + "'");
    rule.q = j.at("percentile_q").get<double>();
    return rule;
}

json to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"dataset",
         {{"num_classes", c.dataset.num_classes},
          {"input_dim", c.dataset.input_dim},
          {"train_size", c.dataset.train_size},
          {"test_size", c.dataset.test_size},
          {"mean_scale", c.dataset.mean_scale},
          {"noise_std", c.dataset.noise_std}}},
        {"network", {{"hidden", c.network.hidden}}},
        {"teacher",
         {{"epochs", c.teacher.epochs},
          {"batch_size", c.teacher.batch_size},
          {"lr_initial", c.teacher.lr_initial},
          {"momentum", c.teacher.momentum},
          {"weight_decay", c.teacher.weight_decay}}},
        {"kd",
         {{"tau", c.kd.tau},
          {"mixup_enabled", c.kd.mixup_enabled},
          {"epochs", c.kd.epochs},
          {"batch_size", c.kd.batch_size},
          {"lr_initial", c.kd.lr_initial},
          {"momentum", c.kd.momentum},
          {"weight_decay", c.kd.weight_decay}}},
        {"pair",
         {{"delta", c.pair.delta},
          {"alpha", c.pair.alpha},
          {"beta", c.pair.beta},
          {"tau", c.pair.tau},
          {"hinge_temperature", c.pair.hinge_temperature},
          {"options", c.pair.options},
          {"budget", c.pair.budget},
          {"profit_source",
           c.pair.profit_source == ProfitSource::softmax ? "softmax" : "logits"},
          {"weight_bits", c.pair.weight_bits},
          {"activation_rule", rule_to_json(c.pair.activation_rule)},
          {"policy_hidden", c.pair.policy_hidden},
          {"epochs", c.pair.epochs},
          {"batch_size", c.pair.batch_size},
          {"lr_initial", c.pair.lr_initial},
          {"momentum", c.pair.momentum},
          {"weight_decay", c.pair.weight_decay}}},
        {"analysis",
         {{"histogram_max_examples", c.analysis.histogram_max_examples},
          {"perturb_degrees", c.analysis.perturb_degrees},
          {"eval_batch_size", c.analysis.eval_batch_size}}},
    };
}

RunConfig from_json(const json& j) {
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();

    const json& d = j.at("dataset");
    c.dataset.num_classes = d.at("num_classes").get<int>();
    c.dataset.input_dim = d.at("input_dim").get<int>();
    c.dataset.train_size = d.at("train_size").get<int>();
    c.dataset.test_size = d.at("test_size").get<int>();
    c.dataset.mean_scale = d.at("mean_scale").get<double>();
    c.dataset.noise_std = d.at("noise_std").get<double>();

    c.network.hidden = j.at("network").at("hidden").get<std::vector<int>>();

    const json& t = j.at("teacher");
    c.teacher.epochs = t.at("epochs").get<int>();
    c.teacher.batch_size = t.at("batch_size").get<int>();
    c.teacher.lr_initial = t.at("lr_initial").get<double>();
    c.teacher.momentum = t.at("momentum").get<double>();
    c.teacher.weight_decay = t.at("weight_decay").get<double>();

    const json& k = j.at("kd");
    c.kd.tau = k.at("tau").get<double>();
    c.kd.mixup_enabled = k.at("mixup_enabled").get<bool>();
    c.kd.epochs = k.at("epochs").get<int>();
    c.kd.batch_size = k.at("batch_size").get<int>();
    c.kd.lr_initial = k.at("lr_initial").get<double>();
    c.kd.momentum = k.at("momentum").get<double>();
    c.kd.weight_decay = k.at("weight_decay").get<double>();

    const json& p = j.at("pair");
    c.pair.delta = p.at("delta").get<double>();
    c.pair.alpha = p.at("alpha").get<double>();
    c.pair.beta = p.at("beta").get<double>();
    c.pair.tau = p.at("tau").get<double>();
    c.pair.hinge_temperature = p.at("hinge_temperature").get<double>();
    c.pair.options = p.at("options").get<std::vector<int>>();
    c.pair.budget = p.at("budget").get<int>();
    const std::string source = p.at("profit_source").get<std::string>();
    if (source == "softmax")
        c.pair.profit_source = ProfitSource::softmax;
    else if (source == "logits")
        c.pair.profit_source = ProfitSource::logits;
    else
        throw ConfigError("config: unknown profit_source '" + source + "'");
    c.pair.weight_bits = p.at("weight_bits").get<int>();
    c.pair.activation_rule = rule_from_json(p.at("activation_rule"));
    c.pair.policy_hidden = p.at("policy_hidden").get<std::vector<int>>();
    c.pair.epochs = p.at("epochs").get<int>();
    c.pair.batch_size = p.at("batch_size").get<int>();
    c.pair.lr_initial = p.at("lr_initial").get<double>();
    c.pair.momentum = p.at("momentum").get<double>();
    c.pair.weight_decay = p.at("weight_decay").get<double>();

    const json& a = j.at("analysis");
    c.analysis.histogram_max_examples = a.at("histogram_max_examples").get<int>();
    c.analysis.perturb_degrees = a.at("perturb_degrees").get<std::vector<double>>();
    c.analysis.eval_batch_size = a.at("eval_batch_size").get<int>();

    // Dims the structs carry but the file does not: single source of truth.
    c.network.input_dim = c.dataset.input_dim;
    c.network.num_classes = c.dataset.num_classes;
    apply_seed(c, c.seed);
    return c;
}

json merge_into_defaults(const json& defaults, const json& user, const std::string& prefix) {
    json out = defaults;
    for (const auto& [key, value] : user.items()) {
        if (!defaults.contains(key))
            throw ConfigError("config: unknown key '" + prefix + key + "'");
        if (value.is_object() && defaults.at(key).is_object())
            out[key] = merge_into_defaults(defaults.at(key), value, prefix + key + ".");
        else
            out[key] = value;
    }
    return out;
}

}  // namespace

RunConfig default_config() {
    RunConfig c;
    apply_seed(c, c.seed);
    return c;
}

RunConfig parse_config(const std::string& json_text) {
    json user;
    try {
        user = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    if (!user.is_object()) throw ConfigError("config: top level must be an object");
    const json merged = merge_into_defaults(to_json(default_config()), user, "");
    RunConfig c;
    try {
        c = from_json(merged);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value: ") + e.what());
    }
    validate_config(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string dump_config(const RunConfig& cfg) {
    return to_json(cfg).dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = dump_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.dataset.seed = seed;
    cfg.teacher.seed = seed;
    cfg.kd.seed = seed;
    cfg.pair.seed = seed;
}

void validate_config(const RunConfig& cfg) {
    if (cfg.network.hidden.empty())
        throw ConfigError("config: network.hidden must list at least one layer");
    if (cfg.pair.options.empty()) throw ConfigError("config: pair.options must not be empty");
    if (!std::is_sorted(cfg.pair.options.begin(), cfg.pair.options.end()) ||
        std::adjacent_find(cfg.pair.options.begin(), cfg.pair.options.end()) !=
            cfg.pair.options.end())
        throw ConfigError("config: pair.options must be strictly increasing");
    for (int o : cfg.pair.options)
        if (o < kMinBitWidth || o > kMaxBitWidth)
            throw ConfigError("config: pair.options entries must lie in [" +
                              std::to_string(kMinBitWidth) + ", " +
                              std::to_string(kMaxBitWidth) + "]");

    const int layers = static_cast<int>(cfg.network.hidden.size());
    const auto [lo, hi] = feasible_budget_range(layers, cfg.pair.options);
    if (cfg.pair.budget < lo || cfg.pair.budget > hi)
        throw BudgetInfeasibleError("config: budget " + std::to_string(cfg.pair.budget) +
                                    " outside feasible range [" + std::to_string(lo) + ", " +
                                    std::to_string(hi) + "]");
}

}  // namespace dptq
