#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dptq/dataset.hpp"
#include "dptq/mckp.hpp"
#include "dptq/networks.hpp"

namespace dptq {

// SGD with classic momentum; weight decay is folded into the gradient:
//   v <- momentum * v + (g + wd * p);  p <- p - lr * v
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay);

    void zero_grad();
    void step(double lr);
    bool params_finite() const;

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
    double weight_decay_;
};

// Half-period cosine: lr0 at epoch 0 decaying to ~0 at the final epoch.
double cosine_lr(double lr_initial, int epoch, int total_epochs);

struct EpochRecord {
    std::string stage;
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_kd = 0.0;
    double loss_hinge = 0.0;
    double fp_test_accuracy = 0.0;
    std::optional<double> quantized_test_accuracy;  // pair stage only
    long long budget_violations = 0;                // cumulative over the run
};

using MetricsSink = std::function<void(const EpochRecord&)>;

struct TeacherConfig {
    int epochs = 60;
    int batch_size = 128;
    double lr_initial = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
};

// Plain cross-entropy training of the network that later becomes the black
// box.
ClassifierNet train_teacher(const NetSpec& spec, const SyntheticDataset& data,
                            const TeacherConfig& cfg, const MetricsSink& sink = {});

struct KDConfig {
    double tau = 5.0;
    bool mixup_enabled = true;
    int epochs = 200;
    int batch_size = 128;
    double lr_initial = 0.02;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
};

// Stage A: query-only distillation. The student trains on kd_loss alone (no
// ground-truth term); each batch is mixed with a shuffled copy of itself at
// lambda ~ U(0,1) and the teacher is queried on the mixed input.
ClassifierNet distill_blackbox(const BlackBoxHandle& bb, const ClassifierNet& student_init,
                               const SyntheticDataset& data, const KDConfig& cfg,
                               const MetricsSink& sink = {});

enum class PairMode { robust, detrimental };

const char* pair_mode_name(PairMode mode);

struct PairTrainConfig {
    PairMode mode = PairMode::robust;
    double delta = 0.01;  // hinge margin
    double alpha = 1.0;   // hinge weight
    double beta = 50.0;   // KD retention weight
    double tau = 5.0;     // KD temperature
    // The hinges compare softened probabilities. At temperature 1 a trained
    // net is close to one-hot and the hinge gradient all but vanishes; 8
    // keeps the softmax in a responsive range.
    double hinge_temperature = 8.0;
    std::vector<int> options = {2, 3, 4, 5, 6, 7, 8, 9, 10};
    int budget = 36;
    ProfitSource profit_source = ProfitSource::softmax;
    int weight_bits = 16;
    ScaleRule activation_rule;
    std::vector<int> policy_hidden = {32, 32};
    int epochs = 250;
    int batch_size = 64;
    double lr_initial = 0.004;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
};

struct PairResult {
    ClassifierNet student;
    PolicyNet policy;
    long long budget_violations = 0;
};

// Stages B and C in one loop. Per step: the policy allocates each example's
// widths under the exact budget, the quantized student is scored by the
// mode's hinge against the frozen f_N's argmax classes, and the
// full-precision student is pulled toward f_N by kd_loss. One optimizer
// updates student and policy together; the policy only ever receives hinge
// gradient because the KD path never touches the selection.
PairResult train_pair(const ClassifierNet& f_n, const SyntheticDataset& data,
                      const PairTrainConfig& cfg, const MetricsSink& sink = {});

}  // namespace dptq
