#pragma once

#include <optional>
#include <string>

#include "rmflow/config.hpp"
#include "rmflow/evalsuite.hpp"

namespace rmflow {

/// Command outcomes map one-to-one onto CLI exit codes.
enum class RunStatus : int {
  Ok = 0,
  VerifyFailed = 1,
  ConfigError = 2,
  Diverged = 3,
  Failure = 4
};

struct RunOutcome {
  RunStatus status = RunStatus::Ok;
  std::string summary_json;  // machine-readable result
  std::string message;       // human-readable detail on errors
};

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;  // RMFLOW_THREADS plumbs through here
};

RunConfig apply_overrides(RunConfig cfg, const RunOverrides& ov);

/// train: checkpoint (final + EMA), loss log, config echo, summary.
RunOutcome train_run(const RunConfig& cfg);

/// sample: CSV + JSON batch from a checkpoint.
RunOutcome sample_run(const RunConfig& cfg);

/// eval: MMD of a sample CSV against the configured reference dataset,
/// with the dataset noise floor for context.
RunOutcome eval_run(const RunConfig& cfg);

/// verify: self-contained certification battery; report JSON.
RunOutcome verify_run(const std::string& out_dir);

/// plot: orthographic 2-view SVG scatter of S^2 points.
RunOutcome plot_run(const RunConfig& cfg);

// -- helpers shared with tests ------------------------------------------

/// Builds the configured dataset. For helix the embedding is kept so
/// evaluation can project back.
struct BuiltDataset {
  Manifold manifold = Manifold::sphere(3);
  std::vector<double> rows;
  int dim = 0;
  long count = 0;
  std::optional<HelixDataset> helix;
  DataView view() const { return DataView{rows.data(), dim, count}; }
};
BuiltDataset build_dataset(const DatasetSpec& spec);

RewardFn make_reward(const RewardSpec& spec, int ambient_dim);

void write_csv_batch(const std::string& path, const DataView& batch);
std::vector<double> read_csv_batch(const std::string& path, int* dim,
                                   long* count);

/// Orthographic two-view scatter (pole view and equator view) of S^2
/// points; byte-deterministic for fixed input.
std::string render_sphere_svg(const DataView& points,
                              const std::string& provenance);

}  // namespace rmflow
