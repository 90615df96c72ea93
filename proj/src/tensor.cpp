#include "dptq/tensor.hpp"

#include <unordered_set>

namespace dptq {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::span<double> BackwardCtx::grad(const TensorImplPtr& p) {
    auto& buf = (*pending_)[p.get()];
    if (buf.size() != p->data.size()) buf.assign(p->data.size(), 0.0);
    return buf;
}

std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    const std::int64_t n = numel_of(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<std::size_t>(n), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
    const std::int64_t n = numel_of(shape);
    if (n != static_cast<std::int64_t>(data.size()))
        throw DimensionError("data size does not match shape");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

std::span<double> Tensor::mutable_data() {
    if (!is_leaf()) throw ContractError("mutable_data on a tape interior node");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() requires a scalar tensor");
    return impl_->data[0];
}

void Tensor::set_requires_grad(bool v) {
    if (v && !is_leaf())
        throw ContractError("requires_grad can only be toggled on leaves");
    impl_->requires_grad = v;
}

std::span<const double> Tensor::grad() const {
    impl_->ensure_grad();
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::backward() {
    if (numel() != 1) throw ContractError("backward() requires a scalar loss");
    if (!impl_->requires_grad)
        throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS over grad-requiring parents; each node enters
    // the order exactly once even when shared by several consumers.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<TensorImpl*, std::vector<double>> pending;
    pending[impl_.get()] = {1.0};
    BackwardCtx ctx;
    ctx.pending_ = &pending;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        node->ensure_grad();
        auto pit = pending.find(node);
        if (pit == pending.end()) continue;  // reachable but received no contribution
        const std::vector<double>& up = pit->second;
        for (std::size_t i = 0; i < up.size(); ++i) node->grad[i] += up[i];
        if (node->backward_fn) node->backward_fn(up.data(), ctx);
        pending.erase(pit);  // references elsewhere stay valid, node buckets are stable
    }
}

}  // namespace dptq
