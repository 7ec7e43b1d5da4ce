#pragma once

#include "cgm/data.hpp"
#include "cgm/evalreport.hpp"
#include "cgm_cli/config.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>

namespace cgm::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitCheckFailed = 1,
    kExitConfig = 2,
    kExitNumeric = 3,
    kExitInternal = 4,
};

inline constexpr const char* kModelFile = "model.json";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kEvalReportFile = "eval_report.json";
inline constexpr const char* kVarbenchFile = "varbench.csv";
inline constexpr const char* kSynthFile = "synth.csv";

/// Normalized train/test split; `truth` is set for synthetic sources.
struct PreparedData {
    Dataset train;
    Dataset test;
    std::shared_ptr<const GroundTruth> truth;
};

[[nodiscard]] PreparedData prepare_data(const RunConfig& config);

/// Metric report plus conditional summaries at the configured probes.
[[nodiscard]] nlohmann::json build_report(const RunConfig& config, const ConditionalGenerator& gen,
                                          const PreparedData& data);

/// Runs `body`, mapping errors to exit codes: schema/config/parse/input -> 2,
/// numeric -> 3, anything else -> 4. The message goes to `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
int cmd_eval(const std::filesystem::path& config_path, const std::filesystem::path& model_path, std::ostream& out,
             std::ostream& err);
int cmd_verify(const std::string& mutation, std::ostream& out, std::ostream& err);
int cmd_varbench(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
/// Writes the raw (unnormalized) synthetic dataset; default path is out_dir/synth.csv.
int cmd_synth(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& output,
              std::ostream& out, std::ostream& err);

}  // namespace cgm::cli
