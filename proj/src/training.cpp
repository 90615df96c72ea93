#include "dptq/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dptq/analysis.hpp"
#include "dptq/errors.hpp"
#include "dptq/losses.hpp"
#include "dptq/ops.hpp"

namespace dptq {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    if (momentum_ < 0.0 || weight_decay_ < 0.0)
        throw ConfigError("SgdOptimizer: momentum and weight decay must be nonnegative");
    for (const auto& p : params_) {
        if (!p.requires_grad())
            throw ContractError("SgdOptimizer: every parameter must require gradients");
        velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void SgdOptimizer::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto data = params_[i].mutable_data();
        auto grad = params_[i].grad();
        auto& v = velocity_[i];
        for (std::size_t e = 0; e < v.size(); ++e) {
            v[e] = momentum_ * v[e] + grad[e] + weight_decay_ * data[e];
            data[e] -= lr * v[e];
        }
    }
}

bool SgdOptimizer::params_finite() const {
    for (const auto& p : params_)
        for (double v : p.data())
            if (!std::isfinite(v)) return false;
    return true;
}

double cosine_lr(double lr_initial, int epoch, int total_epochs) {
    if (total_epochs < 1) throw ContractError("cosine_lr: total_epochs must be positive");
    if (epoch < 0 || epoch >= total_epochs) throw ContractError("cosine_lr: epoch out of range");
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return lr_initial * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

namespace {

void check_common(int epochs, int batch_size, double lr, double momentum, double wd,
                  const char* who) {
    if (epochs < 0) throw ConfigError(std::string(who) + ": epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError(std::string(who) + ": batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError(std::string(who) + ": lr_initial must be positive");
    if (momentum < 0.0 || wd < 0.0)
        throw ConfigError(std::string(who) + ": momentum and weight_decay must be nonnegative");
}

void require_finite(double v, const std::string& stage, int epoch, int step) {
    if (!std::isfinite(v))
        throw TrainingDivergedError(stage + ": non-finite loss at epoch " +
                                    std::to_string(epoch + 1) + ", step " +
                                    std::to_string(step + 1));
}

// The losses floor logs and clamp hinges, so a blown-up network can still
// report a finite loss; the parameters themselves are the reliable signal.
void require_params_finite(const SgdOptimizer& opt, const std::string& stage, int epoch,
                           int step) {
    if (!opt.params_finite())
        throw TrainingDivergedError(stage + ": parameters diverged at epoch " +
                                    std::to_string(epoch + 1) + ", step " +
                                    std::to_string(step + 1));
}

std::vector<int> shuffled_order(int n, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_indices(rng, order);
    return order;
}

std::vector<int> slice(const std::vector<int>& order, int begin, int end) {
    return {order.begin() + begin, order.begin() + end};
}

std::vector<int> labels_for(const DataSplit& split, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(split.y[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace

ClassifierNet train_teacher(const NetSpec& spec, const SyntheticDataset& data,
                            const TeacherConfig& cfg, const MetricsSink& sink) {
    check_common(cfg.epochs, cfg.batch_size, cfg.lr_initial, cfg.momentum, cfg.weight_decay,
                 "train_teacher");
    Rng init_rng(derive_seed(cfg.seed, "teacher-init"));
    ClassifierNet net = init_classifier(spec, init_rng);
    SgdOptimizer opt(net.parameters(), cfg.momentum, cfg.weight_decay);
    Rng batch_rng(derive_seed(cfg.seed, "teacher-batches"));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg.lr_initial, epoch, cfg.epochs);
        const std::vector<int> order = shuffled_order(data.train.n, batch_rng);
        double loss_sum = 0.0;
        int steps = 0;
        for (int begin = 0; begin < data.train.n; begin += cfg.batch_size) {
            const int end = std::min(data.train.n, begin + cfg.batch_size);
            const std::vector<int> idx = slice(order, begin, end);
            Tensor x = data.train.batch(idx);
            Tensor loss = cross_entropy(forward_full_precision(net, x), labels_for(data.train, idx));
            require_finite(loss.item(), "teacher", epoch, steps);
            opt.zero_grad();
            loss.backward();
            opt.step(lr);
            require_params_finite(opt, "teacher", epoch, steps);
            loss_sum += loss.item();
            ++steps;
        }
        if (sink) {
            EpochRecord rec;
            rec.stage = "teacher";
            rec.epoch = epoch + 1;
            rec.lr = lr;
            rec.loss_total = loss_sum / steps;
            rec.fp_test_accuracy = evaluate_accuracy(net, data.test, {});
            sink(rec);
        }
    }
    return net;
}

ClassifierNet distill_blackbox(const BlackBoxHandle& bb, const ClassifierNet& student_init,
                               const SyntheticDataset& data, const KDConfig& cfg,
                               const MetricsSink& sink) {
    if (!(cfg.tau > 0.0)) throw ConfigError("distill_blackbox: tau must be positive");
    check_common(cfg.epochs, cfg.batch_size, cfg.lr_initial, cfg.momentum, cfg.weight_decay,
                 "distill_blackbox");
    if (bb.input_dim() != student_init.spec.input_dim ||
        bb.num_classes() != student_init.spec.num_classes)
        throw ConfigError("distill_blackbox: teacher and student dimensions differ");

    ClassifierNet student = student_init.clone();
    student.set_trainable(true);
    SgdOptimizer opt(student.parameters(), cfg.momentum, cfg.weight_decay);
    Rng batch_rng(derive_seed(cfg.seed, "distill-batches"));
    Rng mix_rng(derive_seed(cfg.seed, "distill-mixup"));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg.lr_initial, epoch, cfg.epochs);
        const std::vector<int> order = shuffled_order(data.train.n, batch_rng);
        double loss_sum = 0.0;
        int steps = 0;
        for (int begin = 0; begin < data.train.n; begin += cfg.batch_size) {
            const int end = std::min(data.train.n, begin + cfg.batch_size);
            const std::vector<int> idx = slice(order, begin, end);
            Tensor x = data.train.batch(idx);
            if (cfg.mixup_enabled) {
                std::vector<int> partner = idx;
                shuffle_indices(mix_rng, partner);
                const double lambda = uniform_double(mix_rng);
                x = mixup(x, data.train.batch(partner), lambda);
            }
            Tensor p_teacher = reheat_softmax(bb.query(x), cfg.tau);
            Tensor p_student = softmax_with_temperature(forward_full_precision(student, x), cfg.tau);
            Tensor loss = kd_loss(p_teacher, p_student, cfg.tau);
            require_finite(loss.item(), "distill", epoch, steps);
            opt.zero_grad();
            loss.backward();
            opt.step(lr);
            require_params_finite(opt, "distill", epoch, steps);
            loss_sum += loss.item();
            ++steps;
        }
        if (sink) {
            EpochRecord rec;
            rec.stage = "distill";
            rec.epoch = epoch + 1;
            rec.lr = lr;
            rec.loss_total = loss_sum / steps;
            rec.loss_kd = loss_sum / steps;
            rec.fp_test_accuracy = evaluate_accuracy(student, data.test, {});
            sink(rec);
        }
    }
    return student;
}

const char* pair_mode_name(PairMode mode) {
    return mode == PairMode::robust ? "robust" : "detrimental";
}

PairResult train_pair(const ClassifierNet& f_n, const SyntheticDataset& data,
                      const PairTrainConfig& cfg, const MetricsSink& sink) {
    if (!(cfg.delta > 0.0)) throw ConfigError("train_pair: delta must be positive");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0)
        throw ConfigError("train_pair: alpha and beta must be nonnegative");
    if (!(cfg.tau > 0.0) || !(cfg.hinge_temperature > 0.0))
        throw ConfigError("train_pair: temperatures must be positive");
    if (cfg.options.empty()) throw ConfigError("train_pair: option list required");
    if (cfg.weight_bits < kMinBitWidth || cfg.weight_bits > kMaxBitWidth)
        throw ConfigError("train_pair: weight_bits outside supported range");
    check_common(cfg.epochs, cfg.batch_size, cfg.lr_initial, cfg.momentum, cfg.weight_decay,
                 "train_pair");

    const int L = f_n.quantizable_layers();
    const int O = static_cast<int>(cfg.options.size());
    const std::string stage = std::string("pair-") + pair_mode_name(cfg.mode);

    // Budget feasibility is established before any training state exists.
    {
        NoGradGuard guard;
        allocate_bitwidths(Tensor::zeros({L, O}), cfg.options, cfg.budget, cfg.profit_source);
    }

    ClassifierNet teacher = f_n.clone();
    teacher.set_trainable(false);
    ClassifierNet student = f_n.clone();
    student.set_trainable(true);

    PolicySpec pspec;
    pspec.input_dim = f_n.spec.input_dim;
    pspec.layers = L;
    pspec.options = O;
    pspec.hidden = cfg.policy_hidden;
    Rng policy_rng(derive_seed(cfg.seed, std::string("policy-") + pair_mode_name(cfg.mode)));
    PolicyNet policy = init_policy(pspec, policy_rng);

    std::vector<Tensor> params = student.parameters();
    for (const auto& p : policy.parameters()) params.push_back(p);
    SgdOptimizer opt(std::move(params), cfg.momentum, cfg.weight_decay);
    Rng batch_rng(derive_seed(cfg.seed, "pair-batches"));

    QuantizeOptions qopt;
    qopt.weight_bits = cfg.weight_bits;
    qopt.options = cfg.options;
    qopt.activation_rule = cfg.activation_rule;

    PairResult result{std::move(student), std::move(policy), 0};

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg.lr_initial, epoch, cfg.epochs);
        const std::vector<int> order = shuffled_order(data.train.n, batch_rng);
        double hinge_sum = 0.0, kd_sum = 0.0, total_sum = 0.0;
        int steps = 0;
        for (int begin = 0; begin < data.train.n; begin += cfg.batch_size) {
            const int end = std::min(data.train.n, begin + cfg.batch_size);
            Tensor x = data.train.batch(slice(order, begin, end));

            // Frozen teacher targets: argmax classes at temperature 1, the
            // retention distribution at tau.
            Tensor p_teacher_tau;
            std::vector<int> t_top, t_second;
            {
                NoGradGuard guard;
                Tensor t_logits = forward_full_precision(teacher, x);
                Tensor p1 = softmax_with_temperature(t_logits, 1.0);
                t_top = argmax_rows(p1);
                t_second = argmax_rows_excluding(p1, t_top);
                p_teacher_tau = softmax_with_temperature(t_logits, cfg.tau).detach();
            }

            Tensor pol = policy_forward(result.policy, x);
            std::vector<Allocation> allocs;
            allocs.reserve(static_cast<std::size_t>(end - begin));
            for (std::int64_t b = 0; b < x.dim(0); ++b) {
                Tensor logits = reshape(take_row(pol, b), {L, O});
                allocs.push_back(
                    allocate_bitwidths(logits, cfg.options, cfg.budget, cfg.profit_source));
                int total_width = 0;
                for (int g : allocs.back().gamma) total_width += g;
                if (total_width != cfg.budget) ++result.budget_violations;
            }

            Tensor q_logits = forward_quantized_coupled(result.student, x, allocs, qopt);
            Tensor p_hat = softmax_with_temperature(q_logits, cfg.hinge_temperature);
            Tensor hinge = cfg.mode == PairMode::robust
                               ? hinge_robust_batch(p_hat, t_top, t_second, cfg.delta)
                               : hinge_detrimental_batch(
                                     p_hat, t_top, argmax_rows_excluding(p_hat, t_top), cfg.delta);

            Tensor p_student_tau =
                softmax_with_temperature(forward_full_precision(result.student, x), cfg.tau);
            Tensor kd = kd_loss(p_teacher_tau, p_student_tau, cfg.tau);

            Tensor total = add(scale(hinge, cfg.alpha), scale(kd, cfg.beta));
            require_finite(total.item(), stage, epoch, steps);
            opt.zero_grad();
            total.backward();
            opt.step(lr);
            require_params_finite(opt, stage, epoch, steps);

            hinge_sum += hinge.item();
            kd_sum += kd.item();
            total_sum += total.item();
            ++steps;
        }
        if (sink) {
            EpochRecord rec;
            rec.stage = stage;
            rec.epoch = epoch + 1;
            rec.lr = lr;
            rec.loss_total = total_sum / steps;
            rec.loss_kd = kd_sum / steps;
            rec.loss_hinge = hinge_sum / steps;
            rec.fp_test_accuracy = evaluate_accuracy(result.student, data.test, {});
            QuantEval eval;
            eval.mode = QuantMode::policy;
            eval.policy = &result.policy;
            eval.budget = cfg.budget;
            eval.qopt = qopt;
            rec.quantized_test_accuracy = evaluate_accuracy(result.student, data.test, eval);
            rec.budget_violations = result.budget_violations;
            sink(rec);
        }
    }
    return result;
}

}  // namespace dptq
