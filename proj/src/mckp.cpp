#include "dptq/mckp.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dptq/errors.hpp"
#include "dptq/ops.hpp"

namespace dptq {

namespace {

void check_widths(std::span<const int> widths) {
    if (widths.empty()) throw ContractError("mckp: empty width list");
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] <= 0) throw ContractError("mckp: widths must be positive");
        if (i > 0 && widths[i] <= widths[i - 1])
            throw ContractError("mckp: widths must be strictly increasing");
    }
}

[[noreturn]] void throw_infeasible(int L, std::span<const int> widths, int budget) {
    const auto [lo, hi] = feasible_budget_range(L, widths);
    throw BudgetInfeasibleError("budget " + std::to_string(budget) +
                                " is not reachable exactly; feasible totals lie in [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

std::pair<int, int> feasible_budget_range(int L, std::span<const int> widths) {
    check_widths(widths);
    if (L <= 0) throw ContractError("mckp: layer count must be positive");
    return {L * widths.front(), L * widths.back()};
}

MckpSolution solve_mckp_exact(const BudgetProblem& problem) {
    const int L = static_cast<int>(problem.profits.size());
    const int O = static_cast<int>(problem.widths.size());
    check_widths(problem.widths);
    if (L <= 0) throw ContractError("mckp: layer count must be positive");
    for (const auto& row : problem.profits) {
        if (static_cast<int>(row.size()) != O)
            throw ContractError("mckp: profit row size does not match option count");
        for (double p : row)
            if (!std::isfinite(p)) throw ContractError("mckp: profits must be finite");
    }
    const int C = problem.budget;
    const auto [lo, hi] = feasible_budget_range(L, problem.widths);
    if (C < lo || C > hi) throw_infeasible(L, problem.widths, C);

    // suf[l][c]: best profit for layers l..L-1 using width total exactly c.
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> suf(static_cast<std::size_t>(L) + 1,
                                         std::vector<double>(static_cast<std::size_t>(C) + 1, ninf));
    suf[static_cast<std::size_t>(L)][0] = 0.0;
    for (int l = L - 1; l >= 0; --l) {
        auto& cur = suf[static_cast<std::size_t>(l)];
        const auto& nxt = suf[static_cast<std::size_t>(l) + 1];
        for (int c = 0; c <= C; ++c) {
            double best = ninf;
            for (int i = 0; i < O; ++i) {
                const int w = problem.widths[static_cast<std::size_t>(i)];
                if (w > c) break;  // widths ascend
                const double tail = nxt[static_cast<std::size_t>(c - w)];
                if (tail == ninf) continue;
                const double v = problem.profits[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] + tail;
                if (v > best) best = v;
            }
            cur[static_cast<std::size_t>(c)] = best;
        }
    }
    if (suf[0][static_cast<std::size_t>(C)] == ninf) throw_infeasible(L, problem.widths, C);

    // Greedy forward walk; taking the smallest option index that attains the
    // table value yields the lexicographically smallest optimal gamma.
    MckpSolution sol;
    sol.selection.L = L;
    sol.selection.O = O;
    sol.selection.onehot.assign(static_cast<std::size_t>(L) * O, 0);
    sol.selection.chosen.resize(static_cast<std::size_t>(L));
    sol.gamma.resize(static_cast<std::size_t>(L));
    int c = C;
    for (int l = 0; l < L; ++l) {
        const auto& nxt = suf[static_cast<std::size_t>(l) + 1];
        const double target = suf[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
        int pick = -1;
        for (int i = 0; i < O; ++i) {
            const int w = problem.widths[static_cast<std::size_t>(i)];
            if (w > c) break;
            const double tail = nxt[static_cast<std::size_t>(c - w)];
            if (tail == ninf) continue;
            if (problem.profits[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] + tail == target) {
                pick = i;
                break;
            }
        }
        if (pick < 0) throw ContractError("mckp: backtracking lost the optimum");  // unreachable
        sol.selection.chosen[static_cast<std::size_t>(l)] = pick;
        sol.selection.onehot[static_cast<std::size_t>(l) * O + pick] = 1;
        sol.gamma[static_cast<std::size_t>(l)] = problem.widths[static_cast<std::size_t>(pick)];
        c -= problem.widths[static_cast<std::size_t>(pick)];
    }

    double profit = 0.0;
    for (int l = 0; l < L; ++l)
        profit += problem.profits[static_cast<std::size_t>(l)]
                                 [static_cast<std::size_t>(sol.selection.chosen[static_cast<std::size_t>(l)])];
    sol.profit = profit;
    return sol;
}

Allocation allocate_bitwidths(const Tensor& policy_logits, std::span<const int> options,
                              int budget, ProfitSource source) {
    if (policy_logits.ndim() != 2)
        throw DimensionError("allocate_bitwidths: policy logits must be [L x O]");
    const int L = static_cast<int>(policy_logits.dim(0));
    const int O = static_cast<int>(policy_logits.dim(1));
    if (O != static_cast<int>(options.size()))
        throw DimensionError("allocate_bitwidths: option count does not match logits columns");

    Allocation alloc;
    alloc.p_pi = source == ProfitSource::softmax
                     ? softmax_with_temperature(policy_logits, 1.0)
                     : policy_logits;

    BudgetProblem problem;
    problem.widths.assign(options.begin(), options.end());
    problem.budget = budget;
    problem.profits.resize(static_cast<std::size_t>(L));
    const auto pd = alloc.p_pi.data();
    for (int l = 0; l < L; ++l)
        problem.profits[static_cast<std::size_t>(l)].assign(pd.begin() + l * O,
                                                            pd.begin() + (l + 1) * O);

    alloc.solution = solve_mckp_exact(problem);
    alloc.gamma = alloc.solution.gamma;

    std::vector<double> hard(alloc.solution.selection.onehot.begin(),
                             alloc.solution.selection.onehot.end());
    Tensor hard_t = Tensor::from_data({L, O}, std::move(hard));
    alloc.differentiable_selection = ste_passthrough(hard_t, alloc.p_pi);
    return alloc;
}

std::vector<int> sample_feasible_gamma(int L, std::span<const int> options, int budget,
                                       Rng& rng) {
    check_widths(options);
    const auto [lo, hi] = feasible_budget_range(L, options);
    if (budget < lo || budget > hi) throw_infeasible(L, options, budget);
    const int O = static_cast<int>(options.size());

    // Count table may overflow u64 past O^L ~ 2^63; desk scale stays far below.
    if (static_cast<double>(L) * std::log2(static_cast<double>(O) + 1.0) > 62.0)
        throw ContractError("sample_feasible_gamma: count table would overflow");

    const int C = budget;
    std::vector<std::vector<std::uint64_t>> ways(
        static_cast<std::size_t>(L) + 1, std::vector<std::uint64_t>(static_cast<std::size_t>(C) + 1, 0));
    ways[static_cast<std::size_t>(L)][0] = 1;
    for (int l = L - 1; l >= 0; --l)
        for (int c = 0; c <= C; ++c) {
            std::uint64_t acc = 0;
            for (int i = 0; i < O; ++i) {
                const int w = options[static_cast<std::size_t>(i)];
                if (w > c) break;
                acc += ways[static_cast<std::size_t>(l) + 1][static_cast<std::size_t>(c - w)];
            }
            ways[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)] = acc;
        }
    if (ways[0][static_cast<std::size_t>(C)] == 0) throw_infeasible(L, options, budget);

    std::vector<int> gamma(static_cast<std::size_t>(L));
    int c = C;
    for (int l = 0; l < L; ++l) {
        const auto& nxt = ways[static_cast<std::size_t>(l) + 1];
        std::uint64_t total = 0;
        for (int i = 0; i < O; ++i) {
            const int w = options[static_cast<std::size_t>(i)];
            if (w > c) break;
            total += nxt[static_cast<std::size_t>(c - w)];
        }
        std::uint64_t r = uniform_below(rng, total);
        for (int i = 0; i < O; ++i) {
            const int w = options[static_cast<std::size_t>(i)];
            if (w > c) break;
            const std::uint64_t cnt = nxt[static_cast<std::size_t>(c - w)];
            if (r < cnt) {
                gamma[static_cast<std::size_t>(l)] = w;
                c -= w;
                break;
            }
            r -= cnt;
        }
    }
    return gamma;
}

}  // namespace dptq
