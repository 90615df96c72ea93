#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dptq/rng.hpp"
#include "dptq/tensor.hpp"

namespace dptq {

// Multiple-choice knapsack with an exact-total constraint: pick one option
// per layer maximizing total profit subject to sum(widths) == budget.

struct BudgetProblem {
    std::vector<std::vector<double>> profits;  // L rows of O finite values
    std::vector<int> widths;                   // O strictly increasing positives
    int budget = 0;
};

struct SelectionMatrix {
    int L = 0, O = 0;
    std::vector<std::uint8_t> onehot;  // L x O row-major, exactly one 1 per row
    std::vector<int> chosen;           // option index per layer

    std::uint8_t at(int l, int i) const { return onehot[static_cast<std::size_t>(l) * O + i]; }
};

struct MckpSolution {
    SelectionMatrix selection;
    std::vector<int> gamma;  // selected width per layer
    double profit = 0.0;     // layer-order (left-associated) sum of selected profits
};

// [L * min(widths), L * max(widths)]
std::pair<int, int> feasible_budget_range(int L, std::span<const int> widths);

// Exact DP, O(L * budget * O). Ties broken toward the smaller width at the
// earliest layer (lexicographically smallest gamma among optima). Throws
// BudgetInfeasibleError naming the feasible range when no selection hits the
// budget exactly.
MckpSolution solve_mckp_exact(const BudgetProblem& problem);

enum class ProfitSource { softmax, logits };

// The policy-to-quantizer bridge. Solves the MCKP over profits read from the
// policy head (row softmax by default, raw logits otherwise) and wraps the
// hard one-hot selection in a straight-through node: forward equals the
// selection exactly, backward treats it as p_pi.
struct Allocation {
    MckpSolution solution;
    std::vector<int> gamma;
    Tensor p_pi;                      // [L x O] tape tensor profits were read from
    Tensor differentiable_selection;  // [L x O] STE(onehot, p_pi)
};

Allocation allocate_bitwidths(const Tensor& policy_logits, std::span<const int> options,
                              int budget, ProfitSource source = ProfitSource::softmax);

// Uniform draw over every width vector with sum(gamma) == budget, via a
// count-table DP and weighted backtracking.
std::vector<int> sample_feasible_gamma(int L, std::span<const int> options, int budget, Rng& rng);

}  // namespace dptq
