#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dptq/errors.hpp"

namespace dptq {

// Reverse-mode tape over dense row-major float64 tensors. A Tensor is a
// shared handle; ops build tape links (parents + backward closure) only while
// grad mode is on and some input requires grad. backward() walks the graph
// once in reverse topological order. Each call propagates its own seed
// through per-call buffers and then adds the result into the persistent
// .grad, so two backward() calls without zero_grad() yield exactly 2x.

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Hands backward closures the per-call gradient buffer of a parent node.
class BackwardCtx {
  public:
    std::span<double> grad(const TensorImplPtr& p);

  private:
    friend class Tensor;
    std::unordered_map<TensorImpl*, std::vector<double>>* pending_ = nullptr;
};

// upstream points at this node's per-call gradient (numel doubles).
using BackwardFn = std::function<void(const double* upstream, BackwardCtx& ctx)>;

struct TensorImpl {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // persistent accumulator, sized lazily

    std::vector<TensorImplPtr> parents;
    BackwardFn backward_fn;
    const char* op = "leaf";

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return impl_->numel(); }

    std::span<const double> data() const { return impl_->data; }
    // In-place mutation is for leaves (parameters, data buffers); mutating an
    // interior node would desynchronize the stored backward closures.
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v);

    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    void backward();

    // Copy of the data with no tape history.
    Tensor detach() const;

    bool is_leaf() const { return impl_->backward_fn == nullptr; }
    TensorImplPtr impl() const { return impl_; }
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  private:
    TensorImplPtr impl_;
};

std::int64_t numel_of(const std::vector<std::int64_t>& shape);

// Helper used by every op to decide whether to record a node.
inline bool tape_should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace dptq
