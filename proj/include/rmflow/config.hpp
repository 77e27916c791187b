#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmflow/inference.hpp"
#include "rmflow/training.hpp"

namespace rmflow {

/// Parse error or unknown-key rejection.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat TOML subset: [section] headers, key = value lines with string,
/// number or boolean values, # comments. Enough for human-diffable
/// presets; unknown keys are rejected when binding.
struct TomlValue {
  enum class Kind { String, Number, Boolean } kind = Kind::String;
  std::string str;
  double num = 0.0;
  bool boolean = false;
};

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

TomlTable parse_toml(const std::string& text);

struct ManifoldSpec {
  std::string kind = "sphere";  // euclidean | sphere | so3
  int dim = 3;                  // ambient dimension (ignored for so3)
  Manifold build() const;
};

struct DatasetSpec {
  std::string kind = "helix";  // helix | uniform_sphere | sphere_mixture
  long size = 4096;
  int ambient_dim = 3;  // D
  int turns = 3;
  double jitter = 0.01;
  int modes = 4;
  double spread = 0.3;
  std::uint64_t seed = 1234;
};

struct ModelSpec {
  int hidden_width = 256;
  int depth = 5;
  int embed_dim = 32;
  double omega = 0.02;
  std::string parameterization = "x1";
};

struct SampleSpec {
  std::string checkpoint;
  long count = 1024;
  int nfe = 1;
  double eta = 0.0;
  std::string guidance = "none";
  double lambda = 0.0;
};

struct EvalSpec {
  std::string samples;  // CSV path
  double kappa = 1.0;
  bool project_back = true;  // project to S^2 when the dataset embeds
};

struct PlotSpec {
  std::string samples;  // CSV path
  std::string embed;    // optional embed.json with U
  std::string out = "plot.svg";
};

struct RewardSpec {
  std::string kind = "sphere_pole";  // r(x) = x[axis]
  int axis = -1;                     // -1: last coordinate
};

/// Union of everything the CLI commands need; every field has a default
/// and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  int threads = 1;
  ManifoldSpec manifold;
  DatasetSpec dataset;
  ModelSpec model;
  ObjectiveConfig objective;
  SampleSpec sample;
  EvalSpec eval;
  PlotSpec plot;
  RewardSpec reward;
};

RunConfig parse_run_config(const std::string& text);

/// Canonical echo: fixed section/key order, full value set. Parsing the
/// echo reproduces the config exactly (round-trip fixed point).
std::string echo_run_config(const RunConfig& cfg);

/// Copy with location-dependent fields normalized (out_dir), so
/// provenance does not change when the same run lands elsewhere.
RunConfig portable_config(RunConfig cfg);

/// FNV-1a hash of the portable canonical echo, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

const char* to_string(TimeOrdering o);
TimeOrdering time_ordering_from_string(const std::string& s);

}  // namespace rmflow
