#pragma once

#include <string>
#include <vector>

namespace cgm::cli {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Deliberate estimator faults used to confirm that the battery catches them.
enum class Mutation { None, JmmdSign };

[[nodiscard]] Mutation parse_mutation(const std::string& name);

/// Exact-enumeration and gradient checks of the estimators. Deterministic.
[[nodiscard]] std::vector<CheckResult> run_verification(Mutation mutation = Mutation::None);

}  // namespace cgm::cli
