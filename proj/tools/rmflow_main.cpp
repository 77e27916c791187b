// rmflow command-line tool. Links the C API only; all heavy lifting
// lives behind librmflow.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rmflow.h"

namespace {

int exit_code(rmf_status st) {
  switch (st) {
    case RMF_OK:
      return 0;
    case RMF_ERR_VERIFY_FAILED:
      return 1;
    case RMF_ERR_CONFIG:
    case RMF_ERR_INVALID_ARGUMENT:
    case RMF_ERR_DOMAIN:
      return 2;
    case RMF_ERR_DIVERGED:
      return 3;
    default:
      return 1;
  }
}

bool read_file(const std::string& path, std::string& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  std::ostringstream s;
  s << f.rdbuf();
  out = s.str();
  return true;
}

struct CommonOpts {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "TOML config file");
  if (config_required) c->required();
  cmd->add_option("--out", o.out_dir, "output directory override");
  cmd->add_option("--seed", [&o](const CLI::results_t& r) {
    o.seed = std::stoull(r[0]);
    return true;
  }, "seed override");
  cmd->add_option("--threads", [&o](const CLI::results_t& r) {
    o.threads = std::stoi(r[0]);
    return true;
  }, "worker thread override");
}

using Workflow = rmf_status (*)(const char*, const char*, int, uint64_t, int,
                                char**);

int run(Workflow fn, const CommonOpts& o) {
  std::string config_text;
  if (!read_file(o.config, config_text)) {
    std::fprintf(stderr, "error: cannot read config file '%s'\n",
                 o.config.c_str());
    return 2;
  }
  char* summary = nullptr;
  const rmf_status st =
      fn(config_text.c_str(), o.out_dir.empty() ? nullptr : o.out_dir.c_str(),
         o.seed.has_value() ? 1 : 0, o.seed.value_or(0),
         o.threads.value_or(0), &summary);
  if (summary != nullptr) {
    std::printf("%s\n", summary);
    rmf_string_free(summary);
  }
  if (st != RMF_OK)
    std::fprintf(stderr, "error (%s): %s\n", rmf_status_name(st),
                 rmf_last_error());
  return exit_code(st);
}

int run_verify(const CommonOpts& o) {
  char* report = nullptr;
  const rmf_status st =
      rmf_verify_run(o.out_dir.empty() ? nullptr : o.out_dir.c_str(), &report);
  if (report != nullptr) {
    try {
      const nlohmann::json j = nlohmann::json::parse(report);
      for (const auto& c : j.at("checks"))
        std::printf("[%s] %-55s tol %.3e  measured %.6e\n",
                    c.at("pass").get<bool>() ? "PASS" : "FAIL",
                    c.at("name").get<std::string>().c_str(),
                    c.at("tolerance").get<double>(),
                    c.at("measured").get<double>());
      std::printf("verify: %s\n",
                  j.at("all_pass").get<bool>() ? "all checks passed"
                                               : "FAILED");
    } catch (...) {
      std::printf("%s\n", report);
    }
    rmf_string_free(report);
  }
  if (st != RMF_OK && st != RMF_ERR_VERIFY_FAILED)
    std::fprintf(stderr, "error (%s): %s\n", rmf_status_name(st),
                 rmf_last_error());
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rmflow: Riemannian flow-map training, sampling and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rmf_version()));

  CommonOpts train_o, sample_o, eval_o, plot_o, verify_o;
  auto* train = app.add_subcommand("train", "train a flow-map model");
  add_common(train, train_o, true);
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  add_common(sample, sample_o, true);
  auto* eval = app.add_subcommand("eval", "MMD of samples vs the reference");
  add_common(eval, eval_o, true);
  auto* plot = app.add_subcommand("plot", "SVG scatter of S^2 samples");
  add_common(plot, plot_o, true);
  auto* verify = app.add_subcommand("verify", "run the certification battery");
  add_common(verify, verify_o, false);

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return run(&rmf_train_run, train_o);
  if (sample->parsed()) return run(&rmf_sample_run, sample_o);
  if (eval->parsed()) return run(&rmf_eval_run, eval_o);
  if (plot->parsed()) return run(&rmf_plot_run, plot_o);
  if (verify->parsed()) return run_verify(verify_o);
  return 2;
}
