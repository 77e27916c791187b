#include "rmflow/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace rmflow {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside strings
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": bad table header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty table name");
      out[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    TomlValue tv;
    if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated string");
      tv.kind = TomlValue::Kind::String;
      tv.str = val.substr(1, val.size() - 2);
    } else if (val == "true" || val == "false") {
      tv.kind = TomlValue::Kind::Boolean;
      tv.boolean = val == "true";
    } else {
      char* end = nullptr;
      tv.num = std::strtod(val.c_str(), &end);
      if (end == nullptr || *end != '\0')
        throw ConfigError("line " + std::to_string(lineno) + ": bad value '" + val + "'");
      tv.kind = TomlValue::Kind::Number;
    }
    out[section][key] = tv;
  }
  return out;
}

namespace {

class Binder {
 public:
  explicit Binder(const TomlTable& t) : table_(t) {}

  void section(const std::string& name) { current_ = name; }

  double num(const std::string& key, double dflt) {
    const TomlValue* v = find(key);
    if (!v) return dflt;
    if (v->kind != TomlValue::Kind::Number)
      throw ConfigError("[" + current_ + "] " + key + ": expected a number");
    return v->num;
  }
  long integer(const std::string& key, long dflt) {
    const double d = num(key, static_cast<double>(dflt));
    if (d != std::floor(d))
      throw ConfigError("[" + current_ + "] " + key + ": expected an integer");
    return static_cast<long>(d);
  }
  std::uint64_t uinteger(const std::string& key, std::uint64_t dflt) {
    const double d = num(key, static_cast<double>(dflt));
    if (d < 0 || d != std::floor(d))
      throw ConfigError("[" + current_ + "] " + key + ": expected a non-negative integer");
    return static_cast<std::uint64_t>(d);
  }
  bool boolean(const std::string& key, bool dflt) {
    const TomlValue* v = find(key);
    if (!v) return dflt;
    if (v->kind != TomlValue::Kind::Boolean)
      throw ConfigError("[" + current_ + "] " + key + ": expected true/false");
    return v->boolean;
  }
  std::string str(const std::string& key, const std::string& dflt) {
    const TomlValue* v = find(key);
    if (!v) return dflt;
    if (v->kind != TomlValue::Kind::String)
      throw ConfigError("[" + current_ + "] " + key + ": expected a string");
    return v->str;
  }

  /// Every key must have been consumed by one of the accessors above.
  void reject_unknown() const {
    for (const auto& [sec, kv] : table_) {
      if (!known_sections_.count(sec))
        throw ConfigError("unknown config section [" + sec + "]");
      for (const auto& [key, _] : kv)
        if (!consumed_.count(sec + "\x1f" + key))
          throw ConfigError("unknown key '" + key + "' in section [" + sec + "]");
    }
  }

 private:
  const TomlValue* find(const std::string& key) {
    known_sections_.insert(current_);
    consumed_.insert(current_ + "\x1f" + key);
    auto sit = table_.find(current_);
    if (sit == table_.end()) return nullptr;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    return &kit->second;
  }

  const TomlTable& table_;
  std::string current_;
  std::set<std::string> known_sections_;
  std::set<std::string> consumed_;
};

}  // namespace

const char* to_string(TimeOrdering o) {
  switch (o) {
    case TimeOrdering::Default:
      return "default";
    case TimeOrdering::ForceOrdered:
      return "ordered";
    case TimeOrdering::ForceUnordered:
      return "unordered";
  }
  return "?";
}

TimeOrdering time_ordering_from_string(const std::string& s) {
  if (s == "default") return TimeOrdering::Default;
  if (s == "ordered") return TimeOrdering::ForceOrdered;
  if (s == "unordered") return TimeOrdering::ForceUnordered;
  throw ConfigError("unknown time_ordering: " + s);
}

Manifold ManifoldSpec::build() const {
  if (kind == "euclidean") return Manifold::euclidean(dim);
  if (kind == "sphere") return Manifold::sphere(dim);
  if (kind == "so3") return Manifold::so3();
  throw ConfigError("unknown manifold kind: " + kind);
}

RunConfig parse_run_config(const std::string& text) {
  const TomlTable t = parse_toml(text);
  Binder b(t);
  RunConfig c;

  b.section("run");
  c.seed = b.uinteger("seed", c.seed);
  c.out_dir = b.str("out_dir", c.out_dir);
  c.threads = static_cast<int>(b.integer("threads", c.threads));

  b.section("manifold");
  c.manifold.kind = b.str("kind", c.manifold.kind);
  c.manifold.dim = static_cast<int>(b.integer("dim", c.manifold.dim));

  b.section("dataset");
  c.dataset.kind = b.str("kind", c.dataset.kind);
  c.dataset.size = b.integer("size", c.dataset.size);
  c.dataset.ambient_dim = static_cast<int>(b.integer("ambient_dim", c.dataset.ambient_dim));
  c.dataset.turns = static_cast<int>(b.integer("turns", c.dataset.turns));
  c.dataset.jitter = b.num("jitter", c.dataset.jitter);
  c.dataset.modes = static_cast<int>(b.integer("modes", c.dataset.modes));
  c.dataset.spread = b.num("spread", c.dataset.spread);
  c.dataset.seed = b.uinteger("seed", c.dataset.seed);

  b.section("model");
  c.model.hidden_width = static_cast<int>(b.integer("hidden_width", c.model.hidden_width));
  c.model.depth = static_cast<int>(b.integer("depth", c.model.depth));
  c.model.embed_dim = static_cast<int>(b.integer("embed_dim", c.model.embed_dim));
  c.model.omega = b.num("omega", c.model.omega);
  c.model.parameterization = b.str("parameterization", c.model.parameterization);

  b.section("objective");
  c.objective.objective = objective_from_string(b.str("objective", "semigroup"));
  c.objective.parameterization =
      parameterization_from_string(c.model.parameterization);
  c.objective.adaptive_p = b.num("adaptive_p", c.objective.adaptive_p);
  c.objective.adaptive_c = b.num("adaptive_c", c.objective.adaptive_c);
  c.objective.x1_eps = b.num("x1_eps", c.objective.x1_eps);
  c.objective.boundary_fraction = b.num("boundary_fraction", c.objective.boundary_fraction);
  c.objective.time_mu = b.num("time_mu", c.objective.time_mu);
  c.objective.time_sigma = b.num("time_sigma", c.objective.time_sigma);
  c.objective.cycle_weight = b.num("cycle_weight", c.objective.cycle_weight);
  c.objective.semigroup_interval_weighting =
      b.boolean("semigroup_interval_weighting", c.objective.semigroup_interval_weighting);
  c.objective.derivative_clip = b.num("derivative_clip", c.objective.derivative_clip);
  c.objective.time_ordering =
      time_ordering_from_string(b.str("time_ordering", "default"));

  b.section("optim");
  c.objective.learning_rate = b.num("learning_rate", c.objective.learning_rate);
  c.objective.grad_clip_norm = b.num("grad_clip_norm", c.objective.grad_clip_norm);
  c.objective.batch_size = static_cast<int>(b.integer("batch_size", c.objective.batch_size));
  c.objective.steps = b.integer("steps", c.objective.steps);
  c.objective.ema_decay = b.num("ema_decay", c.objective.ema_decay);

  b.section("sample");
  c.sample.checkpoint = b.str("checkpoint", c.sample.checkpoint);
  c.sample.count = b.integer("count", c.sample.count);
  c.sample.nfe = static_cast<int>(b.integer("nfe", c.sample.nfe));
  c.sample.eta = b.num("eta", c.sample.eta);
  c.sample.guidance = b.str("guidance", c.sample.guidance);
  c.sample.lambda = b.num("lambda", c.sample.lambda);

  b.section("eval");
  c.eval.samples = b.str("samples", c.eval.samples);
  c.eval.kappa = b.num("kappa", c.eval.kappa);
  c.eval.project_back = b.boolean("project_back", c.eval.project_back);

  b.section("plot");
  c.plot.samples = b.str("samples", c.plot.samples);
  c.plot.embed = b.str("embed", c.plot.embed);
  c.plot.out = b.str("out", c.plot.out);

  b.section("reward");
  c.reward.kind = b.str("kind", c.reward.kind);
  c.reward.axis = static_cast<int>(b.integer("axis", c.reward.axis));

  b.reject_unknown();

  // cheap structural validation
  if (c.objective.boundary_fraction < 0.0 || c.objective.boundary_fraction > 1.0)
    throw ConfigError("boundary_fraction must be in [0, 1]");
  if (c.objective.x1_eps <= 0.0 || c.objective.x1_eps >= 1.0)
    throw ConfigError("x1_eps must be in (0, 1)");
  if (c.objective.adaptive_p < 0.0)
    throw ConfigError("adaptive_p must be >= 0");
  if (c.objective.adaptive_c <= 0.0)
    throw ConfigError("adaptive_c must be > 0");
  if (c.sample.nfe < 1) throw ConfigError("nfe must be >= 1");
  if (c.sample.eta < 0.0 || c.sample.eta > 1.0)
    throw ConfigError("eta must be in [0, 1]");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  (void)guidance_from_string(c.sample.guidance);
  (void)c.manifold.build();
  return c;
}

namespace {

std::string fmt_num(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string echo_run_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[run]\n";
  o << "seed = " << c.seed << "\n";
  o << "out_dir = \"" << c.out_dir << "\"\n";
  o << "threads = " << c.threads << "\n";
  o << "\n[manifold]\n";
  o << "kind = \"" << c.manifold.kind << "\"\n";
  o << "dim = " << c.manifold.dim << "\n";
  o << "\n[dataset]\n";
  o << "kind = \"" << c.dataset.kind << "\"\n";
  o << "size = " << c.dataset.size << "\n";
  o << "ambient_dim = " << c.dataset.ambient_dim << "\n";
  o << "turns = " << c.dataset.turns << "\n";
  o << "jitter = " << fmt_num(c.dataset.jitter) << "\n";
  o << "modes = " << c.dataset.modes << "\n";
  o << "spread = " << fmt_num(c.dataset.spread) << "\n";
  o << "seed = " << c.dataset.seed << "\n";
  o << "\n[model]\n";
  o << "hidden_width = " << c.model.hidden_width << "\n";
  o << "depth = " << c.model.depth << "\n";
  o << "embed_dim = " << c.model.embed_dim << "\n";
  o << "omega = " << fmt_num(c.model.omega) << "\n";
  o << "parameterization = \"" << c.model.parameterization << "\"\n";
  o << "\n[objective]\n";
  o << "objective = \"" << to_string(c.objective.objective) << "\"\n";
  o << "adaptive_p = " << fmt_num(c.objective.adaptive_p) << "\n";
  o << "adaptive_c = " << fmt_num(c.objective.adaptive_c) << "\n";
  o << "x1_eps = " << fmt_num(c.objective.x1_eps) << "\n";
  o << "boundary_fraction = " << fmt_num(c.objective.boundary_fraction) << "\n";
  o << "time_mu = " << fmt_num(c.objective.time_mu) << "\n";
  o << "time_sigma = " << fmt_num(c.objective.time_sigma) << "\n";
  o << "cycle_weight = " << fmt_num(c.objective.cycle_weight) << "\n";
  o << "semigroup_interval_weighting = "
    << (c.objective.semigroup_interval_weighting ? "true" : "false") << "\n";
  o << "derivative_clip = " << fmt_num(c.objective.derivative_clip) << "\n";
  o << "time_ordering = \"" << to_string(c.objective.time_ordering) << "\"\n";
  o << "\n[optim]\n";
  o << "learning_rate = " << fmt_num(c.objective.learning_rate) << "\n";
  o << "grad_clip_norm = " << fmt_num(c.objective.grad_clip_norm) << "\n";
  o << "batch_size = " << c.objective.batch_size << "\n";
  o << "steps = " << c.objective.steps << "\n";
  o << "ema_decay = " << fmt_num(c.objective.ema_decay) << "\n";
  o << "\n[sample]\n";
  o << "checkpoint = \"" << c.sample.checkpoint << "\"\n";
  o << "count = " << c.sample.count << "\n";
  o << "nfe = " << c.sample.nfe << "\n";
  o << "eta = " << fmt_num(c.sample.eta) << "\n";
  o << "guidance = \"" << c.sample.guidance << "\"\n";
  o << "lambda = " << fmt_num(c.sample.lambda) << "\n";
  o << "\n[eval]\n";
  o << "samples = \"" << c.eval.samples << "\"\n";
  o << "kappa = " << fmt_num(c.eval.kappa) << "\n";
  o << "project_back = " << (c.eval.project_back ? "true" : "false") << "\n";
  o << "\n[plot]\n";
  o << "samples = \"" << c.plot.samples << "\"\n";
  o << "embed = \"" << c.plot.embed << "\"\n";
  o << "out = \"" << c.plot.out << "\"\n";
  o << "\n[reward]\n";
  o << "kind = \"" << c.reward.kind << "\"\n";
  o << "axis = " << c.reward.axis << "\n";
  return o.str();
}

RunConfig portable_config(RunConfig cfg) {
  // location-dependent fields must not leak into provenance, or reruns
  // into fresh directories could never be byte-identical
  cfg.out_dir = "out";
  cfg.sample.checkpoint.clear();
  cfg.eval.samples.clear();
  cfg.plot.samples.clear();
  cfg.plot.embed.clear();
  cfg.plot.out = "plot.svg";
  return cfg;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string s = echo_run_config(portable_config(cfg));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rmflow
