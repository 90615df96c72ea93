#pragma once

#include <stdexcept>
#include <string>

namespace dptq {

// Exit-code mapping used by the CLI lives in tools/main.cpp:
//   ConfigError / DimensionError / ContractError -> 2
//   BudgetInfeasibleError                        -> 3
//   TrainingDivergedError                        -> 4

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BudgetInfeasibleError : std::runtime_error {
    explicit BudgetInfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingDivergedError : std::runtime_error {
    explicit TrainingDivergedError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dptq
