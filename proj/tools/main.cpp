// dptq: train and audit pairs of networks under dynamic post-training
// quantization with per-example bit-width policies.
//
// Verbs: train-teacher, distill, train-pair, analyze, reproduce-grid.
// Every command owns the run directory for its duration (lockfile), echoes
// the effective config, and is bitwise deterministic given config + seed.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dptq/analysis.hpp"
#include "dptq/checkpoint.hpp"
#include "dptq/config.hpp"
#include "dptq/errors.hpp"
#include "dptq/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dptq;

namespace {

// ---------------------------------------------------------------------------
// Run directory plumbing

struct RunDirLock {
    fs::path path;
    int fd = -1;

    explicit RunDirLock(const fs::path& dir) : path(dir / ".lock") {
        fs::create_directories(dir);
        fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw ConfigError("run directory " + dir.string() +
                              " is locked by another command (remove " + path.string() +
                              " if that command is gone)");
        const std::string pid = std::to_string(::getpid()) + "\n";
        (void)!::write(fd, pid.data(), pid.size());
    }
    ~RunDirLock() {
        if (fd >= 0) {
            ::close(fd);
            ::unlink(path.c_str());
        }
    }
    RunDirLock(const RunDirLock&) = delete;
    RunDirLock& operator=(const RunDirLock&) = delete;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
    write_text(dir / "config.json", dump_config(cfg));
}

std::ofstream open_metrics(const fs::path& dir, const std::string& stage) {
    fs::path p = dir / (stage + ".jsonl");
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    return out;
}

json record_to_json(const EpochRecord& r) {
    json j{{"stage", r.stage},
           {"epoch", r.epoch},
           {"lr", r.lr},
           {"loss_total", r.loss_total},
           {"loss_kd", r.loss_kd},
           {"loss_hinge", r.loss_hinge},
           {"fp_test_accuracy", r.fp_test_accuracy},
           {"budget_violations", r.budget_violations}};
    if (r.quantized_test_accuracy)
        j["quantized_test_accuracy"] = *r.quantized_test_accuracy;
    else
        j["quantized_test_accuracy"] = nullptr;
    return j;
}

MetricsSink jsonl_sink(std::ofstream& out, bool echo) {
    return [&out, echo](const EpochRecord& r) {
        const json j = record_to_json(r);
        out << j.dump() << "\n";
        if (echo && (r.epoch == 1 || r.epoch % 10 == 0))
            std::printf("  [%s %3d] loss %.4f  fp %.2f%s\n", r.stage.c_str(), r.epoch,
                        r.loss_total, r.fp_test_accuracy,
                        r.quantized_test_accuracy
                            ? ("  quant " + std::to_string(*r.quantized_test_accuracy)).c_str()
                            : "");
    };
}

// Loaded classifiers must match the architecture the config describes;
// anything else is a stale or foreign run directory.
void check_arch(const ClassifierNet& net, const RunConfig& cfg, const std::string& name) {
    if (net.spec.input_dim != cfg.network.input_dim ||
        net.spec.num_classes != cfg.network.num_classes || net.spec.hidden != cfg.network.hidden)
        throw ConfigError(name + ": checkpoint architecture does not match the config");
}

CheckpointMeta meta_for(const std::string& stage, const RunConfig& cfg) {
    CheckpointMeta m;
    m.stage = stage;
    m.config_hash = config_hash(cfg);
    return m;
}

QuantizeOptions quant_options(const RunConfig& cfg) {
    QuantizeOptions q;
    q.weight_bits = cfg.pair.weight_bits;
    q.options = cfg.pair.options;
    q.activation_rule = cfg.pair.activation_rule;
    return q;
}

// ---------------------------------------------------------------------------
// Stage commands

void cmd_train_teacher(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    std::ofstream metrics = open_metrics(dir, "teacher");
    ClassifierNet teacher = train_teacher(cfg.network, data, cfg.teacher, jsonl_sink(metrics, true));
    save_classifier((dir / "teacher.ckpt").string(), teacher, meta_for("teacher", cfg));
    const double acc = evaluate_accuracy(teacher, data.test, {}, cfg.analysis.eval_batch_size);
    std::printf("teacher: test accuracy %.2f, checkpoint %s\n", acc,
                (dir / "teacher.ckpt").c_str());
}

void cmd_distill(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    ClassifierNet teacher = load_classifier((dir / "teacher.ckpt").string());
    check_arch(teacher, cfg, "distill");
    BlackBoxHandle box(std::move(teacher));

    Rng init_rng(derive_seed(cfg.kd.seed, "distill-init"));
    ClassifierNet student0 = init_classifier(cfg.network, init_rng);
    std::ofstream metrics = open_metrics(dir, "distill");
    ClassifierNet f_n = distill_blackbox(box, student0, data, cfg.kd, jsonl_sink(metrics, true));
    save_classifier((dir / "fn.ckpt").string(), f_n, meta_for("distill", cfg));
    const double acc = evaluate_accuracy(f_n, data.test, {}, cfg.analysis.eval_batch_size);
    std::printf("distill: f_N test accuracy %.2f, checkpoint %s\n", acc, (dir / "fn.ckpt").c_str());
}

void cmd_train_pair(const RunConfig& cfg, const fs::path& dir, PairMode mode) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    ClassifierNet f_n = load_classifier((dir / "fn.ckpt").string());
    check_arch(f_n, cfg, "train-pair");

    PairTrainConfig pc = cfg.pair;
    pc.mode = mode;
    const std::string name = pair_mode_name(mode);
    std::ofstream metrics = open_metrics(dir, "pair_" + name);
    PairResult res = train_pair(f_n, data, pc, jsonl_sink(metrics, true));

    save_classifier((dir / ("student_" + name + ".ckpt")).string(), res.student,
                    meta_for("pair-" + name, cfg));
    save_policy((dir / ("policy_" + name + ".ckpt")).string(), res.policy,
                meta_for("pair-" + name, cfg));

    QuantEval qe;
    qe.mode = QuantMode::policy;
    qe.policy = &res.policy;
    qe.budget = pc.budget;
    qe.qopt = quant_options(cfg);
    const double fp = evaluate_accuracy(res.student, data.test, {}, cfg.analysis.eval_batch_size);
    const double q = evaluate_accuracy(res.student, data.test, qe, cfg.analysis.eval_batch_size);
    std::printf("pair-%s: fp %.2f, quantized %.2f, budget violations %lld\n", name.c_str(), fp, q,
                static_cast<long long>(res.budget_violations));
    if (res.budget_violations != 0)
        throw ContractError("train-pair: in-loop budget violations detected");
}

// ---------------------------------------------------------------------------
// Analyses

struct PairArtifacts {
    ClassifierNet f_n;
    ClassifierNet f_r;
    ClassifierNet f_d;
    PolicyNet pi_r;
    PolicyNet pi_d;
};

PairArtifacts load_artifacts(const RunConfig& cfg, const fs::path& dir) {
    PairArtifacts a{load_classifier((dir / "fn.ckpt").string()),
                    load_classifier((dir / "student_robust.ckpt").string()),
                    load_classifier((dir / "student_detrimental.ckpt").string()),
                    load_policy((dir / "policy_robust.ckpt").string()),
                    load_policy((dir / "policy_detrimental.ckpt").string())};
    check_arch(a.f_n, cfg, "analyze");
    check_arch(a.f_r, cfg, "analyze");
    check_arch(a.f_d, cfg, "analyze");
    return a;
}

std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void analyze_swap(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    PairArtifacts a = load_artifacts(cfg, dir);
    const std::uint64_t seed = derive_seed(cfg.seed, "analyze-swap");
    SwapMatrix m = policy_swap_matrix(a.f_n, a.f_r, a.f_d, a.pi_r, a.pi_d, data.test,
                                      quant_options(cfg), cfg.pair.budget, seed);

    const char* nets[3] = {"f_N", "f_R", "f_D"};
    std::string csv = "network,fp,pi_R,pi_D,random\n";
    for (int r = 0; r < 3; ++r) {
        csv += nets[r];
        csv += "," + csv_num(m.fp_accuracy[r]);
        for (int c = 0; c < 3; ++c) csv += "," + csv_num(m.accuracy[r][c]);
        csv += "\n";
    }
    write_text(dir / "swap.csv", csv);

    json j;
    for (int r = 0; r < 3; ++r) {
        j["fp"][nets[r]] = m.fp_accuracy[r];
        j["quantized"][nets[r]] = {{"pi_R", m.accuracy[r][0]},
                                   {"pi_D", m.accuracy[r][1]},
                                   {"random", m.accuracy[r][2]}};
    }
    j["swap_gain_f_D"] = m.accuracy[2][0] - m.accuracy[2][1];
    j["seed"] = seed;
    write_text(dir / "swap.json", j.dump(2) + "\n");

    std::printf("        %8s %8s %8s %8s\n", "fp", "pi_R", "pi_D", "random");
    for (int r = 0; r < 3; ++r)
        std::printf("%s  %8.2f %8.2f %8.2f %8.2f\n", nets[r], m.fp_accuracy[r], m.accuracy[r][0],
                    m.accuracy[r][1], m.accuracy[r][2]);
    std::printf("f_D regains %.2f points under pi_R\n", m.accuracy[2][0] - m.accuracy[2][1]);
}

void analyze_transitory(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    PairArtifacts a = load_artifacts(cfg, dir);
    TransitoryResult t =
        transitory_points(a.f_r, a.f_d, a.pi_d, data.test, quant_options(cfg), cfg.pair.budget);

    std::string csv = "index,label,pred_fr_fp,pred_fd_fp,pred_fd_q\n";
    for (int i : t.indices) {
        const std::size_t u = static_cast<std::size_t>(i);
        csv += std::to_string(i) + "," + std::to_string(data.test.y[u]) + "," +
               std::to_string(t.pred_fr_fp[u]) + "," + std::to_string(t.pred_fd_fp[u]) + "," +
               std::to_string(t.pred_fd_q[u]) + "\n";
    }
    write_text(dir / "transitory.csv", csv);

    json j{{"percentage", t.percentage},
           {"count", t.indices.size()},
           {"test_size", data.test.n}};
    write_text(dir / "transitory.json", j.dump(2) + "\n");
    std::printf("transitory points: %zu of %d test examples (%.2f%%)\n", t.indices.size(),
                data.test.n, t.percentage);
}

void analyze_sweep(const RunConfig& cfg, const fs::path& dir, int uniform_bits) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    PairArtifacts a = load_artifacts(cfg, dir);
    const int L = a.f_r.quantizable_layers();

    auto eval_for = [&](const PolicyNet& policy) {
        QuantEval e;
        if (uniform_bits > 0) {
            e.mode = QuantMode::fixed_gamma;
            e.gamma.assign(static_cast<std::size_t>(L), uniform_bits);
        } else {
            e.mode = QuantMode::policy;
            e.policy = &policy;
            e.budget = cfg.pair.budget;
        }
        e.qopt = quant_options(cfg);
        return e;
    };

    std::string csv = "pair,scheme,layer,train_accuracy,test_accuracy\n";
    json j;
    const char* schemes[3] = {"before", "after", "single"};
    const SweepScheme kinds[3] = {SweepScheme::before, SweepScheme::after, SweepScheme::single};
    struct Row {
        const char* pair;
        const ClassifierNet* net;
        const PolicyNet* policy;
    };
    const Row rows[2] = {{"robust", &a.f_r, &a.pi_r}, {"detrimental", &a.f_d, &a.pi_d}};

    for (const Row& row : rows) {
        QuantEval e = eval_for(*row.policy);
        QuantEval weights_only = e;
        weights_only.qopt.active_sites.assign(static_cast<std::size_t>(L), 0);
        const double base =
            evaluate_accuracy(*row.net, data.test, weights_only, cfg.analysis.eval_batch_size);
        j[row.pair]["weights_only_test_accuracy"] = base;
        double worst_single = 0.0;
        for (int k = 0; k < 3; ++k) {
            LayerSweepResult res =
                layer_sweep(*row.net, e, kinds[k], data, cfg.analysis.eval_batch_size);
            for (const LayerSweepRecord& rec : res.records) {
                csv += std::string(row.pair) + "," + schemes[k] + "," + std::to_string(rec.layer) +
                       "," + csv_num(rec.train_accuracy) + "," + csv_num(rec.test_accuracy) + "\n";
                j[row.pair][schemes[k]].push_back(
                    {{"layer", rec.layer},
                     {"train_accuracy", rec.train_accuracy},
                     {"test_accuracy", rec.test_accuracy}});
                if (kinds[k] == SweepScheme::single)
                    worst_single = std::max(worst_single, base - rec.test_accuracy);
            }
        }
        j[row.pair]["worst_single_drop"] = worst_single;
        std::printf("%s: weights-only %.2f, worst single-layer drop %.2f\n", row.pair, base,
                    worst_single);
    }
    j["gamma_source"] = uniform_bits > 0 ? json(uniform_bits) : json("policy");
    write_text(dir / "sweep.csv", csv);
    write_text(dir / "sweep.json", j.dump(2) + "\n");
}

void analyze_histograms(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    PairArtifacts a = load_artifacts(cfg, dir);

    std::string csv = "pair,layer,row,bin,lo,mass\n";
    json j;
    struct Row {
        const char* pair;
        const ClassifierNet* net;
        const PolicyNet* policy;
    };
    const Row rows[2] = {{"robust", &a.f_r, &a.pi_r}, {"detrimental", &a.f_d, &a.pi_d}};
    for (const Row& row : rows) {
        auto hists = activation_histograms(*row.net, *row.policy, data.test, quant_options(cfg),
                                           cfg.pair.budget, cfg.analysis.histogram_max_examples);
        // Per layer: fp row then q row; emit sparsity and the FP->Q delta.
        for (std::size_t i = 0; i + 1 < hists.size(); i += 2) {
            const ActivationHistogram& fp = hists[i];
            const ActivationHistogram& q = hists[i + 1];
            j[row.pair].push_back({{"layer", fp.layer},
                                   {"fp_sparsity", fp.sparsity},
                                   {"q_sparsity", q.sparsity},
                                   {"sparsity_delta", q.sparsity - fp.sparsity},
                                   {"fp_degenerate", fp.degenerate},
                                   {"q_degenerate", q.degenerate}});
        }
        for (const ActivationHistogram& h : hists) {
            for (int b = 0; b < kHistogramBins; ++b) {
                const double mass = h.normalized[static_cast<std::size_t>(b)];
                if (mass == 0.0) continue;  // sparse emission keeps the file sane
                csv += std::string(row.pair) + "," + std::to_string(h.layer) + "," +
                       (h.quantized ? "q" : "fp") + "," + std::to_string(b) + "," +
                       csv_num(kHistogramLo + b * kHistogramBinWidth) + "," + csv_num(mass) + "\n";
            }
        }
    }
    write_text(dir / "histograms.csv", csv);
    write_text(dir / "histograms.json", j.dump(2) + "\n");
    for (const auto& [pair, layers] : j.items())
        for (const auto& layer : layers)
            std::printf("%s layer %d: sparsity fp %.4f -> q %.4f (delta %+.4f)\n", pair.c_str(),
                        layer["layer"].get<int>(), layer["fp_sparsity"].get<double>(),
                        layer["q_sparsity"].get<double>(), layer["sparsity_delta"].get<double>());
}

void analyze_perturb(const RunConfig& cfg, const fs::path& dir) {
    SyntheticDataset data = make_dataset(cfg.dataset);
    PairArtifacts a = load_artifacts(cfg, dir);
    const std::vector<const ClassifierNet*> models = {&a.f_n, &a.f_r, &a.f_d};
    const char* names[3] = {"f_N", "f_R", "f_D"};
    const std::uint64_t seed = derive_seed(cfg.seed, "analyze-perturb");

    std::string csv = "kind,degree,model,accuracy\n";
    json j;
    for (PerturbKind kind :
         {PerturbKind::gaussian_noise, PerturbKind::feature_erasing, PerturbKind::scale_jitter,
          PerturbKind::contrast_jitter, PerturbKind::normalization_shift}) {
        PerturbationCurve c = perturbation_robustness(models, kind, cfg.analysis.perturb_degrees,
                                                      data, seed, cfg.analysis.eval_batch_size);
        for (std::size_t m = 0; m < models.size(); ++m) {
            for (std::size_t d = 0; d < c.degrees.size(); ++d)
                csv += std::string(perturb_kind_name(kind)) + "," + csv_num(c.degrees[d]) + "," +
                       names[m] + "," + csv_num(c.accuracy[m][d]) + "\n";
            j[perturb_kind_name(kind)][names[m]] = c.accuracy[m];
        }
    }
    j["degrees"] = cfg.analysis.perturb_degrees;
    j["seed"] = seed;
    write_text(dir / "perturb.csv", csv);
    write_text(dir / "perturb.json", j.dump(2) + "\n");
    std::printf("perturbation curves written for %zu kinds x %zu degrees\n", std::size_t{5},
                cfg.analysis.perturb_degrees.size());
}

// ---------------------------------------------------------------------------
// reproduce-grid: versions I/II/III x budgets A/B/C, Table-1-shaped CSV.

void cmd_reproduce_grid(const RunConfig& base, const fs::path& dir) {
    struct Version {
        const char* name;
        int lo;
        std::vector<int> budgets;
    };
    const std::vector<Version> versions = {
        {"I", 3, {32, 44, 56}}, {"II", 4, {40, 52, 64}}, {"III", 5, {48, 60, 72}}};

    SyntheticDataset data = make_dataset(base.dataset);
    std::printf("[grid] teacher...\n");
    ClassifierNet teacher = train_teacher(base.network, data, base.teacher);
    BlackBoxHandle box(teacher.clone());
    Rng init_rng(derive_seed(base.kd.seed, "distill-init"));
    ClassifierNet student0 = init_classifier(base.network, init_rng);
    std::printf("[grid] distill...\n");
    ClassifierNet f_n = distill_blackbox(box, student0, data, base.kd);

    std::string csv = "version,options_lo,options_hi,budget,fp_robust,delta_robust,fp_detrimental,delta_detrimental\n";
    json j;
    for (const Version& v : versions) {
        std::vector<int> options;
        for (int b = v.lo; b <= 10; ++b) options.push_back(b);
        for (int budget : v.budgets) {
            std::printf("[grid] version %s budget %d...\n", v.name, budget);
            PairTrainConfig pc = base.pair;
            pc.options = options;
            pc.budget = budget;

            QuantizeOptions q;
            q.weight_bits = pc.weight_bits;
            q.options = options;
            q.activation_rule = pc.activation_rule;

            double fp[2], delta[2];
            for (int m = 0; m < 2; ++m) {
                pc.mode = m == 0 ? PairMode::robust : PairMode::detrimental;
                PairResult res = train_pair(f_n, data, pc);
                QuantEval e;
                e.mode = QuantMode::policy;
                e.policy = &res.policy;
                e.budget = budget;
                e.qopt = q;
                fp[m] = evaluate_accuracy(res.student, data.test, {}, base.analysis.eval_batch_size);
                delta[m] = evaluate_accuracy(res.student, data.test, e,
                                             base.analysis.eval_batch_size) -
                           fp[m];
            }
            csv += std::string(v.name) + "," + std::to_string(v.lo) + ",10," +
                   std::to_string(budget) + "," + csv_num(fp[0]) + "," + csv_num(delta[0]) + "," +
                   csv_num(fp[1]) + "," + csv_num(delta[1]) + "\n";
            j.push_back({{"version", v.name},
                         {"options_lo", v.lo},
                         {"options_hi", 10},
                         {"budget", budget},
                         {"fp_robust", fp[0]},
                         {"delta_robust", delta[0]},
                         {"fp_detrimental", fp[1]},
                         {"delta_detrimental", delta[1]}});
            std::printf("  robust %.2f (%+.2f)   detrimental %.2f (%+.2f)\n", fp[0], delta[0],
                        fp[1], delta[1]);
        }
    }
    write_text(dir / "table1.csv", csv);
    write_text(dir / "table1.json", j.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic post-training quantization laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // --config/--seed/--out may follow the subcommand

    std::string config_path;
    std::string out_dir = "runs/default";
    std::optional<std::uint64_t> seed_override;
    app.add_option("--config", config_path, "config file (JSON); defaults apply when omitted");
    app.add_option("--seed", seed_override, "override the top-level seed");
    app.add_option("--out", out_dir, "run directory");

    CLI::App* c_teacher = app.add_subcommand("train-teacher", "train the black-box teacher");
    CLI::App* c_distill = app.add_subcommand("distill", "distill f_N from the teacher");
    CLI::App* c_pair = app.add_subcommand("train-pair", "train a student + policy pair");
    std::string mode_str = "robust";
    c_pair->add_option("--mode", mode_str, "robust|detrimental")
        ->check(CLI::IsMember({"robust", "detrimental"}));
    CLI::App* c_analyze = app.add_subcommand("analyze", "audit trained artifacts");
    std::string what;
    c_analyze->add_option("what", what, "swap|transitory|sweep|histograms|perturb")
        ->required()
        ->check(CLI::IsMember({"swap", "transitory", "sweep", "histograms", "perturb"}));
    int uniform_bits = 0;
    c_analyze->add_option("--uniform-bits", uniform_bits,
                          "sweep only: use this fixed width per layer instead of the policy");
    CLI::App* c_grid =
        app.add_subcommand("reproduce-grid", "run the versions x budgets grid, emit table1.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
        if (seed_override) apply_seed(cfg, *seed_override);
        validate_config(cfg);

        const fs::path dir(out_dir);
        RunDirLock lock(dir);
        echo_config(dir, cfg);

        if (c_teacher->parsed()) {
            cmd_train_teacher(cfg, dir);
        } else if (c_distill->parsed()) {
            cmd_distill(cfg, dir);
        } else if (c_pair->parsed()) {
            cmd_train_pair(cfg, dir,
                           mode_str == "robust" ? PairMode::robust : PairMode::detrimental);
        } else if (c_analyze->parsed()) {
            if (what == "swap") analyze_swap(cfg, dir);
            else if (what == "transitory") analyze_transitory(cfg, dir);
            else if (what == "sweep") analyze_sweep(cfg, dir, uniform_bits);
            else if (what == "histograms") analyze_histograms(cfg, dir);
            else analyze_perturb(cfg, dir);
        } else if (c_grid->parsed()) {
            cmd_reproduce_grid(cfg, dir);
        }
    } catch (const BudgetInfeasibleError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const TrainingDivergedError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
