#include "rmflow/workflows.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rmflow {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

double now_sec() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int resolve_threads(const RunConfig& cfg) {
  if (const char* env = std::getenv("RMFLOW_THREADS")) {
    const int t = std::atoi(env);
    if (t >= 1) return t;
  }
  return cfg.threads;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

ordered_json provenance(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  return j;
}

RunOutcome failure(RunStatus st, const std::string& msg) {
  RunOutcome o;
  o.status = st;
  o.message = msg;
  ordered_json j;
  j["error"] = msg;
  o.summary_json = j.dump(2);
  return o;
}

}  // namespace

RunConfig apply_overrides(RunConfig cfg, const RunOverrides& ov) {
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.out_dir) cfg.out_dir = *ov.out_dir;
  if (ov.threads) cfg.threads = *ov.threads;
  return cfg;
}

BuiltDataset build_dataset(const DatasetSpec& spec) {
  BuiltDataset out;
  if (spec.kind == "helix") {
    HelixDataset h = make_helix(spec.ambient_dim, spec.size, spec.turns,
                                spec.jitter, spec.seed);
    out.manifold = h.manifold;
    out.rows = h.samples;
    out.dim = h.ambient_dim;
    out.count = h.n;
    out.helix = std::move(h);
    out.helix->samples.clear();  // rows hold the data
  } else if (spec.kind == "uniform_sphere") {
    out.manifold = Manifold::sphere(spec.ambient_dim);
    out.rows = uniform_sphere_dataset(spec.ambient_dim, spec.size, spec.seed);
    out.dim = spec.ambient_dim;
    out.count = spec.size;
  } else if (spec.kind == "sphere_mixture") {
    out.manifold = Manifold::sphere(spec.ambient_dim);
    out.rows = sphere_mixture_dataset(spec.ambient_dim, spec.size, spec.modes,
                                      spec.spread, spec.seed);
    out.dim = spec.ambient_dim;
    out.count = spec.size;
  } else {
    throw ConfigError("unknown dataset kind: " + spec.kind);
  }
  return out;
}

RewardFn make_reward(const RewardSpec& spec, int ambient_dim) {
  if (spec.kind == "sphere_pole") {
    int axis = spec.axis < 0 ? ambient_dim - 1 : spec.axis;
    if (axis >= ambient_dim)
      throw ConfigError("reward axis out of range");
    return [axis](std::span<const Var> x) { return x[static_cast<std::size_t>(axis)]; };
  }
  throw ConfigError("unknown reward kind: " + spec.kind);
}

// ---------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------

void write_csv_batch(const std::string& path, const DataView& batch) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (int j = 0; j < batch.dim; ++j) f << (j ? ",x" : "x") << j;
  f << "\n";
  char buf[40];
  for (long i = 0; i < batch.count; ++i) {
    const auto row = batch.row(i);
    for (int j = 0; j < batch.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", row[static_cast<std::size_t>(j)]);
      f << (j ? "," : "") << buf;
    }
    f << "\n";
  }
}

std::vector<double> read_csv_batch(const std::string& path, int* dim,
                                   long* count) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty CSV");
  int d = 1;
  for (char c : line)
    if (c == ',') ++d;
  std::vector<double> rows;
  long n = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    int got = 0;
    while (std::getline(ls, cell, ',')) {
      rows.push_back(std::strtod(cell.c_str(), nullptr));
      ++got;
    }
    if (got != d) throw std::runtime_error(path + ": ragged CSV row");
    ++n;
  }
  *dim = d;
  *count = n;
  return rows;
}

// ---------------------------------------------------------------------
// SVG scatter
// ---------------------------------------------------------------------

std::string render_sphere_svg(const DataView& points,
                              const std::string& provenance_note) {
  const int W = 840, H = 440, R = 180;
  const int cx1 = 220, cx2 = 620, cy = 220;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  s << "<!-- " << provenance_note << " -->\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  char buf[64];
  auto circle = [&](int cx, const char* label) {
    s << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << R
      << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << cx << "\" y=\"" << (cy + R + 28)
      << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"14\">"
      << label << "</text>\n";
  };
  circle(cx1, "pole view (+z)");
  circle(cx2, "equator view (+x)");
  auto dot = [&](double px, double py, int cx, bool front) {
    std::snprintf(buf, sizeof buf, "%.2f", cx + px * R);
    const std::string xs = buf;
    std::snprintf(buf, sizeof buf, "%.2f", cy - py * R);
    const std::string ys = buf;
    s << "<circle cx=\"" << xs << "\" cy=\"" << ys
      << "\" r=\"1.6\" fill=\"" << (front ? "#1f77b4" : "#bdd7ee")
      << "\"/>\n";
  };
  for (long i = 0; i < points.count; ++i) {
    const auto p = points.row(i);
    dot(p[0], p[1], cx1, p[2] >= 0.0);
    dot(p[1], p[2], cx2, p[0] >= 0.0);
  }
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

RunOutcome train_run(const RunConfig& cfg) {
  try {
    const double t0 = now_sec();
    BuiltDataset data = build_dataset(cfg.dataset);
    const Manifold requested = cfg.manifold.build();
    if (!(requested == data.manifold))
      throw ConfigError("manifold " + requested.describe() +
                        " does not match dataset manifold " +
                        data.manifold.describe());

    NetShape shape;
    shape.ambient_dim = data.manifold.ambient_dim();
    shape.hidden_width = cfg.model.hidden_width;
    shape.depth = cfg.model.depth;
    shape.embed_dim = cfg.model.embed_dim;
    const Parameterization p =
        parameterization_from_string(cfg.model.parameterization);

    TrainState st = make_train_state(data.manifold, shape, cfg.model.omega, p,
                                     cfg.objective.ema_decay, cfg.seed);
    const int threads = resolve_threads(cfg);

    const std::string log_path = out_path(cfg, "train.log");
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + log_path);
    char line[256];
    const auto on_step = [&](long k, const LossStats& ls) {
      std::snprintf(line, sizeof line,
                    "{\"step\":%ld,\"loss\":%.10g,\"residual_mean\":%.10g,"
                    "\"residual_var\":%.10g,\"residual_max\":%.10g,"
                    "\"skipped\":%ld}\n",
                    k, ls.loss, ls.residual_mean, ls.residual_var,
                    ls.residual_max, ls.skipped);
      log << line;
    };

    const TrainRunResult res =
        run_training(st, cfg.objective, data.view(), Rng(cfg.seed), threads, on_step);
    log.close();

    const std::string ckpt_path = out_path(cfg, "model.rmfckpt");
    const std::string ema_path = out_path(cfg, "model_ema.rmfckpt");
    Checkpoint ckpt{data.manifold, p, st.params, cfg.seed};
    save_checkpoint(ckpt_path, ckpt);
    Checkpoint ema = ckpt;
    ema.net.w = st.ema.shadow;
    save_checkpoint(ema_path, ema);

    write_text(out_path(cfg, "config_echo.toml"), echo_run_config(cfg));
    if (data.helix) {
      ordered_json e;
      e["ambient_dim"] = data.helix->ambient_dim;
      e["base_dim"] = 3;
      e["u"] = data.helix->embed;
      write_text(out_path(cfg, "embed.json"), e.dump());
    }

    const double total = static_cast<double>(res.steps_done) *
                         static_cast<double>(cfg.objective.batch_size);
    const double skip_rate =
        total > 0 ? static_cast<double>(res.total_skipped) / total : 0.0;

    ordered_json stats;
    stats["wallclock_sec"] = now_sec() - t0;
    stats["skip_rate"] = skip_rate;
    stats["threads"] = threads;
    write_text(out_path(cfg, "run_stats.json"), stats.dump(2));

    ordered_json j = provenance(cfg);
    j["checkpoint"] = ckpt_path;
    j["ema_checkpoint"] = ema_path;
    j["loss_log"] = log_path;
    j["steps"] = res.steps_done;
    j["final_loss"] = res.final_loss;
    j["skip_rate"] = skip_rate;
    j["diverged"] = res.diverged;
    RunOutcome o;
    o.status = res.diverged ? RunStatus::Diverged : RunStatus::Ok;
    o.summary_json = j.dump(2);
    if (res.diverged) o.message = "training diverged (non-finite loss)";
    return o;
  } catch (const ConfigError& e) {
    return failure(RunStatus::ConfigError, e.what());
  } catch (const std::exception& e) {
    return failure(RunStatus::Failure, e.what());
  }
}

// ---------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------

RunOutcome sample_run(const RunConfig& cfg) {
  try {
    const double t0 = now_sec();
    if (cfg.sample.checkpoint.empty())
      throw ConfigError("[sample] checkpoint is required");
    const Checkpoint ckpt = load_checkpoint(cfg.sample.checkpoint);
    const Manifold requested = cfg.manifold.build();
    if (!(requested == ckpt.manifold))
      throw ConfigError("requested manifold " + requested.describe() +
                        " does not match checkpoint manifold " +
                        ckpt.manifold.describe());

    SamplerConfig sc;
    sc.nfe = cfg.sample.nfe;
    sc.eta = cfg.sample.eta;
    sc.guidance = guidance_from_string(cfg.sample.guidance);
    sc.lambda = cfg.sample.lambda;
    sc.seed = cfg.seed;

    RewardFn reward;
    const RewardFn* reward_ptr = nullptr;
    if (sc.guidance != GuidanceMode::None && sc.lambda != 0.0) {
      reward = make_reward(cfg.reward, ckpt.manifold.ambient_dim());
      reward_ptr = &reward;
    }

    long aborted = 0;
    const std::vector<double> batch =
        sample_batch(ckpt.net, ckpt.parameterization, ckpt.manifold, sc,
                     cfg.sample.count, resolve_threads(cfg), reward_ptr, &aborted);
    const DataView view{batch.data(), ckpt.manifold.ambient_dim(),
                        cfg.sample.count};

    const std::string csv_path = out_path(cfg, "samples.csv");
    write_csv_batch(csv_path, view);

    ordered_json j = provenance(cfg);
    j["manifold"] = ckpt.manifold.describe();
    j["count"] = cfg.sample.count;
    j["nfe"] = sc.nfe;
    j["eta"] = sc.eta;
    j["guidance"] = to_string(sc.guidance);
    j["lambda"] = sc.lambda;
    j["aborted_trajectories"] = aborted;
    j["config"] = echo_run_config(portable_config(cfg));
    j["points"] = batch;
    const std::string json_path = out_path(cfg, "samples.json");
    write_text(json_path, j.dump());

    ordered_json stats;
    stats["wallclock_sec"] = now_sec() - t0;
    stats["nfe"] = sc.nfe;
    write_text(out_path(cfg, "run_stats.json"), stats.dump(2));

    ordered_json summary = provenance(cfg);
    summary["csv"] = csv_path;
    summary["json"] = json_path;
    summary["count"] = cfg.sample.count;
    summary["aborted_trajectories"] = aborted;
    RunOutcome o;
    o.summary_json = summary.dump(2);
    return o;
  } catch (const ConfigError& e) {
    return failure(RunStatus::ConfigError, e.what());
  } catch (const std::exception& e) {
    return failure(RunStatus::Failure, e.what());
  }
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

RunOutcome eval_run(const RunConfig& cfg) {
  try {
    const double t0 = now_sec();
    if (cfg.eval.samples.empty())
      throw ConfigError("[eval] samples is required");
    int dim = 0;
    long count = 0;
    std::vector<double> sample_rows =
        read_csv_batch(cfg.eval.samples, &dim, &count);
    BuiltDataset ref = build_dataset(cfg.dataset);
    if (dim != ref.dim)
      throw ConfigError("sample dimension " + std::to_string(dim) +
                        " does not match dataset dimension " +
                        std::to_string(ref.dim));

    Manifold space = ref.manifold;
    std::vector<double> a = std::move(sample_rows);
    std::vector<double> b = std::move(ref.rows);
    long bcount = ref.count;
    int cmp_dim = dim;
    const bool projected =
        ref.helix.has_value() && cfg.eval.project_back;
    if (projected) {
      a = project_back_batch(*ref.helix, DataView{a.data(), dim, count});
      b = project_back_batch(*ref.helix, DataView{b.data(), dim, bcount});
      cmp_dim = 3;
      space = Manifold::sphere(3);
    }
    const DataView av{a.data(), cmp_dim, count};
    const DataView bv{b.data(), cmp_dim, bcount};
    const double value = mmd(space, av, bv, cfg.eval.kappa);
    const double floor = dataset_noise_floor(space, bv, cfg.eval.kappa);

    ordered_json metrics;
    metrics["metrics"] = ordered_json::array();
    {
      ordered_json m1;
      m1["metric"] = "mmd";
      m1["value"] = value;
      m1["kappa"] = cfg.eval.kappa;
      m1["projected_back"] = projected;
      metrics["metrics"].push_back(m1);
      ordered_json m2;
      m2["metric"] = "noise_floor";
      m2["value"] = floor;
      m2["kappa"] = cfg.eval.kappa;
      metrics["metrics"].push_back(m2);
    }
    metrics["seed"] = cfg.seed;
    metrics["config_hash"] = config_hash(cfg);
    metrics["config"] = echo_run_config(portable_config(cfg));
    const std::string metrics_path = out_path(cfg, "metrics.json");
    write_text(metrics_path, metrics.dump(2));

    ordered_json stats;
    stats["wallclock_sec"] = now_sec() - t0;
    write_text(out_path(cfg, "run_stats.json"), stats.dump(2));

    ordered_json summary = provenance(cfg);
    summary["metrics"] = metrics_path;
    summary["mmd"] = value;
    summary["noise_floor"] = floor;
    RunOutcome o;
    o.summary_json = summary.dump(2);
    return o;
  } catch (const ConfigError& e) {
    return failure(RunStatus::ConfigError, e.what());
  } catch (const std::exception& e) {
    return failure(RunStatus::Failure, e.what());
  }
}

// ---------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------

RunOutcome verify_run(const std::string& out_dir) {
  try {
    const VerifyReport rep = run_verification();
    ordered_json j;
    j["all_pass"] = rep.all_pass;
    j["checks"] = ordered_json::array();
    for (const CheckResult& c : rep.checks) {
      ordered_json cj;
      cj["name"] = c.name;
      cj["tolerance"] = c.tolerance;
      cj["measured"] = c.measured;
      cj["pass"] = c.pass;
      j["checks"].push_back(cj);
    }
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_text((fs::path(out_dir) / "verify.json").string(), j.dump(2));
    }
    RunOutcome o;
    o.status = rep.all_pass ? RunStatus::Ok : RunStatus::VerifyFailed;
    o.summary_json = j.dump(2);
    if (!rep.all_pass) o.message = "verification failed";
    return o;
  } catch (const std::exception& e) {
    return failure(RunStatus::Failure, e.what());
  }
}

// ---------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------

RunOutcome plot_run(const RunConfig& cfg) {
  try {
    if (cfg.plot.samples.empty())
      throw ConfigError("[plot] samples is required");
    int dim = 0;
    long count = 0;
    std::vector<double> rows = read_csv_batch(cfg.plot.samples, &dim, &count);
    std::vector<double> pts;
    if (dim == 3) {
      pts = std::move(rows);
    } else {
      if (cfg.plot.embed.empty())
        throw ConfigError("plot: " + std::to_string(dim) +
                          "-dimensional samples need an embed file");
      const ordered_json e = ordered_json::parse(read_text(cfg.plot.embed));
      HelixDataset ds;
      ds.ambient_dim = e.at("ambient_dim").get<int>();
      ds.embed = e.at("u").get<std::vector<double>>();
      if (ds.ambient_dim != dim ||
          ds.embed.size() != static_cast<std::size_t>(dim) * 3)
        throw ConfigError("plot: embed file does not match sample dimension");
      pts = project_back_batch(ds, DataView{rows.data(), dim, count});
    }
    const std::string note =
        "seed=" + std::to_string(cfg.seed) + " config=" + config_hash(cfg);
    const std::string svg =
        render_sphere_svg(DataView{pts.data(), 3, count}, note);
    fs::path outp(cfg.plot.out);
    const std::string svg_path =
        outp.is_absolute() ? outp.string() : out_path(cfg, cfg.plot.out);
    write_text(svg_path, svg);
    ordered_json summary = provenance(cfg);
    summary["svg"] = svg_path;
    summary["points"] = count;
    RunOutcome o;
    o.summary_json = summary.dump(2);
    return o;
  } catch (const ConfigError& e) {
    return failure(RunStatus::ConfigError, e.what());
  } catch (const std::domain_error& e) {
    return failure(RunStatus::ConfigError, e.what());  // unprojectable input
  } catch (const std::exception& e) {
    return failure(RunStatus::Failure, e.what());
  }
}

}  // namespace rmflow
