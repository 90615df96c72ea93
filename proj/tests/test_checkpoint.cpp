#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dptq/checkpoint.hpp"
#include "dptq/errors.hpp"
#include "dptq/ops.hpp"

using namespace dptq;

namespace {

std::string temp_path(const char* name) {
    return std::string("ckpt_test_") + name + ".bin";
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct FileGuard {
    std::string path;
    explicit FileGuard(std::string p) : path(std::move(p)) {}
    ~FileGuard() { std::remove(path.c_str()); }
};

ClassifierNet sample_classifier() {
    NetSpec s;
    s.input_dim = 5;
    s.num_classes = 4;
    s.hidden = {7, 6};
    Rng rng(404);
    return init_classifier(s, rng);
}

PolicyNet sample_policy() {
    PolicySpec s;
    s.input_dim = 5;
    s.layers = 2;
    s.options = 3;
    s.hidden = {9};
    Rng rng(405);
    return init_policy(s, rng);
}

}  // namespace

TEST_CASE("classifier round-trip preserves spec, parameters and forwards") {
    ClassifierNet net = sample_classifier();
    FileGuard f(temp_path("classifier"));
    CheckpointMeta meta;
    meta.stage = "distill";
    meta.config_hash = "00ff00ff00ff00ff";
    meta.rng_state = "cursor-7";
    save_classifier(f.path, net, meta);

    CheckpointMeta got;
    ClassifierNet back = load_classifier(f.path, &got);
    CHECK(got.stage == meta.stage);
    CHECK(got.config_hash == meta.config_hash);
    CHECK(got.rng_state == meta.rng_state);
    CHECK(back.spec.input_dim == net.spec.input_dim);
    CHECK(back.spec.num_classes == net.spec.num_classes);
    CHECK(back.spec.hidden == net.spec.hidden);

    REQUIRE(back.weights.size() == net.weights.size());
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        CHECK(std::equal(net.weights[i].data().begin(), net.weights[i].data().end(),
                         back.weights[i].data().begin()));
        CHECK(std::equal(net.biases[i].data().begin(), net.biases[i].data().end(),
                         back.biases[i].data().begin()));
        CHECK(back.weights[i].requires_grad());
        CHECK(back.biases[i].requires_grad());
    }

    Rng probe(17);
    std::vector<double> vals;
    for (int i = 0; i < 3 * 5; ++i) vals.push_back(normal_double(probe));
    Tensor x = Tensor::from_data({3, 5}, std::move(vals));
    NoGradGuard guard;
    Tensor a = forward_full_precision(net, x);
    Tensor b = forward_full_precision(back, x);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("policy round-trip is bitwise and meta defaults stay empty") {
    PolicyNet net = sample_policy();
    FileGuard f(temp_path("policy"));
    save_policy(f.path, net);

    CheckpointMeta got;
    PolicyNet back = load_policy(f.path, &got);
    CHECK(got.stage.empty());
    CHECK(got.config_hash.empty());
    CHECK(back.spec.input_dim == net.spec.input_dim);
    CHECK(back.spec.layers == net.spec.layers);
    CHECK(back.spec.options == net.spec.options);
    CHECK(back.spec.hidden == net.spec.hidden);
    REQUIRE(back.weights.size() == net.weights.size());
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        CHECK(std::equal(net.weights[i].data().begin(), net.weights[i].data().end(),
                         back.weights[i].data().begin()));
        CHECK(std::equal(net.biases[i].data().begin(), net.biases[i].data().end(),
                         back.biases[i].data().begin()));
        CHECK(back.weights[i].requires_grad());
    }

    Rng probe(18);
    std::vector<double> vals;
    for (int i = 0; i < 2 * 5; ++i) vals.push_back(normal_double(probe));
    Tensor x = Tensor::from_data({2, 5}, std::move(vals));
    NoGradGuard guard;
    Tensor a = policy_forward(net, x);
    Tensor b = policy_forward(back, x);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("saving the same network twice yields byte-identical files") {
    ClassifierNet net = sample_classifier();
    FileGuard f1(temp_path("bytes1"));
    FileGuard f2(temp_path("bytes2"));
    CheckpointMeta meta;
    meta.stage = "teacher";
    save_classifier(f1.path, net, meta);
    save_classifier(f2.path, net, meta);
    CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("kind and format are enforced on load") {
    FileGuard cf(temp_path("kind_classifier"));
    save_classifier(cf.path, sample_classifier());
    CHECK_THROWS_AS(load_policy(cf.path), ConfigError);

    FileGuard pf(temp_path("kind_policy"));
    save_policy(pf.path, sample_policy());
    CHECK_THROWS_AS(load_classifier(pf.path), ConfigError);
}

TEST_CASE("corrupt files are rejected with a config error") {
    FileGuard f(temp_path("corrupt"));
    save_classifier(f.path, sample_classifier());
    std::string bytes = slurp(f.path);

    // Wrong magic.
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream out(f.path, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        CHECK_THROWS_AS(load_classifier(f.path), ConfigError);
    }
    // Truncated payload.
    {
        std::ofstream out(f.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_classifier(f.path), ConfigError);
    }
    // Empty file.
    {
        std::ofstream out(f.path, std::ios::binary);
        out.close();
        CHECK_THROWS_AS(load_classifier(f.path), ConfigError);
    }
    // Missing file.
    CHECK_THROWS_AS(load_classifier("no_such_checkpoint.bin"), ConfigError);
}

TEST_CASE("header JSON corruption is caught") {
    FileGuard f(temp_path("badjson"));
    save_classifier(f.path, sample_classifier());
    std::string bytes = slurp(f.path);
    // The header begins right after magic + length; smash its first brace.
    bytes[16] = '?';
    std::ofstream out(f.path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_classifier(f.path), ConfigError);
}
