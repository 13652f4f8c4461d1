#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "octoforce/evaluator.hpp"
#include "octoforce/serialize.hpp"

namespace octoforce::cli {

// Everything a command may read from the run config. Unset sections keep
// their defaults; the arch section overlays the model's default schedule.
struct RunConfig {
  std::string model = "siamcnn";
  int threads = 1;
  PhantomSpec phantom;
  AcquisitionPlan plan;
  Json arch_overrides = Json::object();
  TrainConfig train;
  InputSpec input;
  SplitSpec split;
  EvalOptions eval;
};

// Reads `file` (empty: defaults), then applies "dotted.key=value" overrides.
// Values parse as JSON and fall back to plain strings.
RunConfig load_run_config(const std::string& file, const std::vector<std::string>& overrides);
RunConfig parse_run_config(const Json& j);

// Model's default schedule with the config's arch overrides applied.
ArchSpec resolve_arch(const RunConfig& config, ModelKind kind);

Json to_json(const RunConfig& config, const std::optional<ArchSpec>& resolved_arch = std::nullopt);

// Runs one command line. Returns the process exit code; diagnostics go to
// `err` as "error: <class>: <message>".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace octoforce::cli
