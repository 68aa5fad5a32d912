#pragma once

#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "d2r/data.hpp"
#include "d2r/evaluate.hpp"
#include "d2r/idx.hpp"
#include "d2r/train.hpp"

// Run configuration: an INI file. Every key is listed in kKnownKeys below and
// documented in configs/README.md; anything else is rejected.
//
//   [run]       id, seed
//   [dataset]   kind (two_moons | blobs | idx), n, noise, sigma, centers,
//               test_fraction, seed, images, labels, test_images,
//               test_labels, per_class_limit
//   [guide]     widths, seed
//   [target]    widths, seed
//   [train]     epochs, batch_size, lr, momentum, lr_schedule, lambda, alpha,
//               beta, generator, objective, epsilon, eta, iterations, init,
//               low, high, eval_iterations
//   [eval.NAME] generator, epsilon, eta, iterations, init, seed
//   [output]    metrics, checkpoint_dir
//
// D2R_SEED overrides run.seed; D2R_OUTPUT_DIR replaces the directory of both
// output paths.

namespace d2r {

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what) : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct DatasetConfig {
  std::string kind = "two_moons";
  std::size_t n = 2000;
  double noise = 0.1;
  double sigma = 0.05;
  std::vector<std::vector<double>> centers{{0.2, 0.2}, {0.8, 0.8}};
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t per_class_limit = 100;
};

struct OutputConfig {
  std::filesystem::path metrics = "metrics.csv";
  std::filesystem::path checkpoint_dir = "checkpoints";
};

struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelSpec guide{{2, 32, 2}, Activation::relu, 1};
  ModelSpec target{{2, 128, 128, 2}, Activation::relu, 2};
  TrainConfig train;
  std::vector<std::pair<std::string, EvalAttack>> eval;  // section name, attack
  OutputConfig output;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v) return std::nullopt;
  return std::string(v);
}

namespace detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"run", {"id", "seed"}},
      {"dataset",
       {"kind", "n", "noise", "sigma", "centers", "test_fraction", "seed", "images", "labels", "test_images",
        "test_labels", "per_class_limit"}},
      {"guide", {"widths", "seed"}},
      {"target", {"widths", "seed"}},
      {"train",
       {"epochs", "batch_size", "lr", "momentum", "lr_schedule", "lambda", "alpha", "beta", "generator", "objective",
        "epsilon", "eta", "iterations", "init", "low", "high", "eval_iterations"}},
      {"eval", {"generator", "epsilon", "eta", "iterations", "init", "seed"}},
      {"output", {"metrics", "checkpoint_dir"}},
  };
  return keys;
}

/// Typed lookups within one section; every failure names section.key.
class Section {
 public:
  Section(std::string name, const ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return it->second.data();
  }

  std::string key_name(const std::string& key) const { return name_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) const {
    const auto text = raw(key);
    if (!text) return;
    out = parse<T>(key, *text);
  }

  template <typename T>
  T parse(const std::string& key, const std::string& text) const {
    std::istringstream is(text);
    T value{};
    if constexpr (std::is_unsigned_v<T>) {
      if (text.find('-') != std::string::npos) throw ConfigError(key_name(key), "expected a non-negative integer");
    }
    is >> value;
    if (!is || !(is >> std::ws).eof()) throw ConfigError(key_name(key), "cannot parse '" + text + "'");
    return value;
  }

 private:
  std::string name_;
  const ptree* tree_;
};

template <>
inline std::string Section::parse<std::string>(const std::string&, const std::string& text) const {
  return text;
}

inline std::vector<std::size_t> parse_widths(const Section& s, const std::string& text) {
  std::istringstream is(text);
  std::vector<std::size_t> out;
  std::string tok;
  while (is >> tok) out.push_back(s.parse<std::size_t>("widths", tok));
  if (out.size() < 2) throw ConfigError(s.key_name("widths"), "need at least two widths");
  return out;
}

/// "e1:m1, e2:m2"
inline std::vector<LrMilestone> parse_schedule(const Section& s, const std::string& text) {
  std::vector<LrMilestone> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto colon = item.find(':');
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    if (colon == std::string::npos) throw ConfigError(s.key_name("lr_schedule"), "expected epoch:multiplier");
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t"), e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : v.substr(b, e - b + 1);
    };
    out.push_back({s.parse<std::size_t>("lr_schedule", trim(item.substr(0, colon))),
                   s.parse<double>("lr_schedule", trim(item.substr(colon + 1)))});
  }
  return out;
}

/// "x,y; x,y; ..."
inline std::vector<std::vector<double>> parse_centers(const Section& s, const std::string& text) {
  std::vector<std::vector<double>> out;
  std::istringstream is(text);
  std::string point;
  while (std::getline(is, point, ';')) {
    std::vector<double> c;
    std::istringstream ps(point);
    std::string coord;
    while (std::getline(ps, coord, ',')) {
      if (coord.find_first_not_of(" \t") == std::string::npos) continue;
      c.push_back(s.parse<double>("centers", coord.substr(coord.find_first_not_of(" \t"))));
    }
    if (!c.empty()) out.push_back(std::move(c));
  }
  return out;
}

inline Generator read_generator(const Section& s, const std::string& fallback_name) {
  const std::string name = s.raw("generator").value_or(fallback_name);
  const auto g = parse_generator(name);
  if (!g) throw ConfigError(s.key_name("generator"), "unknown generator '" + name + "'");
  return *g;
}

inline void read_attack(const Section& s, AttackConfig& a) {
  s.read("epsilon", a.epsilon);
  s.read("eta", a.eta);
  s.read("iterations", a.iterations);
  if (auto init = s.raw("init")) {
    const auto mode = parse_init_mode(*init);
    if (!mode) throw ConfigError(s.key_name("init"), "unknown init mode '" + *init + "'");
    a.init = *mode;
  }
}

/// Section names in the order their headers appear in the file.
inline std::vector<std::string> section_headers(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t");
    const auto e = line.find_last_not_of(" \t\r");
    if (b == std::string::npos || line[b] != '[' || line[e] != ']') continue;
    std::string name = line.substr(b + 1, e - b - 1);
    const auto nb = name.find_first_not_of(" \t"), ne = name.find_last_not_of(" \t");
    out.push_back(nb == std::string::npos ? std::string{} : name.substr(nb, ne - nb + 1));
  }
  return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.empty() || p.is_absolute() ? p : base / p;
}

}  // namespace detail

/// Parses and validates a run configuration. Relative paths resolve against
/// the directory holding the file.
inline RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env = process_env) {
  using detail::ptree;
  if (!std::filesystem::exists(path)) throw ConfigError("config", "file not found: " + path.string());
  ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config", std::string("parse error in ") + path.string() + ": " + e.message());
  }

  const auto& known = detail::known_keys();
  std::map<std::string, const ptree*> sections;
  RunConfig cfg;
  std::vector<std::pair<std::string, const ptree*>> eval_sections;
  for (const auto& [name, tree] : root) {
    if (tree.empty() && !tree.data().empty()) throw ConfigError(name, "key outside of any section");
    const bool is_eval = name.rfind("eval.", 0) == 0 && name.size() > 5;
    const std::string kind = is_eval ? "eval" : name;
    const auto allowed = known.find(kind);
    if (allowed == known.end()) throw ConfigError(name, "unknown section");
    for (const auto& [key, _] : tree) {
      if (!allowed->second.contains(key)) throw ConfigError(name + "." + key, "unknown key");
    }
    if (!is_eval) sections[name] = &tree;
  }
  // The INI reader drops sections without keys, so an empty [eval.NAME] is
  // recovered from the raw headers, which also fix the order of evaluations.
  static const ptree empty_section;
  for (const std::string& name : detail::section_headers(path)) {
    const bool is_eval = name.rfind("eval.", 0) == 0 && name.size() > 5;
    if (!is_eval && !known.contains(name)) throw ConfigError(name, "unknown section");
    if (!is_eval) continue;
    const auto it = root.find(name);
    const ptree* tree = it == root.not_found() ? &empty_section : &it->second;
    if (std::none_of(eval_sections.begin(), eval_sections.end(), [&](const auto& e) { return e.first == name; })) {
      eval_sections.emplace_back(name, tree);
    }
  }
  auto section = [&](const std::string& name) {
    const auto it = sections.find(name);
    return detail::Section(name, it == sections.end() ? nullptr : it->second);
  };
  const auto base = std::filesystem::absolute(path).parent_path();

  const auto run = section("run");
  run.read("id", cfg.run_id);
  run.read("seed", cfg.seed);
  if (auto s = env("D2R_SEED")) cfg.seed = run.parse<std::uint64_t>("seed (D2R_SEED)", *s);
  if (cfg.run_id.empty() || cfg.run_id.find_first_of(",\n\r\"") != std::string::npos) {
    throw ConfigError("run.id", "must be non-empty and free of commas, quotes and newlines");
  }

  const auto ds = section("dataset");
  auto& d = cfg.dataset;
  d.seed = cfg.seed;
  ds.read("kind", d.kind);
  ds.read("n", d.n);
  ds.read("noise", d.noise);
  ds.read("sigma", d.sigma);
  if (auto c = ds.raw("centers")) d.centers = detail::parse_centers(ds, *c);
  ds.read("test_fraction", d.test_fraction);
  ds.read("seed", d.seed);
  ds.read("per_class_limit", d.per_class_limit);
  for (auto [key, member] : {std::pair{"images", &d.images}, std::pair{"labels", &d.labels},
                             std::pair{"test_images", &d.test_images}, std::pair{"test_labels", &d.test_labels}}) {
    if (auto p = ds.raw(key)) *member = detail::resolve(base, *p);
  }
  if (d.kind != "two_moons" && d.kind != "blobs" && d.kind != "idx") {
    throw ConfigError("dataset.kind", "unknown dataset kind '" + d.kind + "'");
  }
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) {
    throw ConfigError("dataset.test_fraction", "must lie strictly between 0 and 1");
  }
  if (d.kind == "idx") {
    for (auto [key, p] : {std::pair{"dataset.images", &d.images}, std::pair{"dataset.labels", &d.labels}}) {
      if (p->empty()) throw ConfigError(key, "required for idx datasets");
    }
    if (d.test_images.empty() != d.test_labels.empty()) {
      throw ConfigError("dataset.test_images", "test_images and test_labels must be given together");
    }
    for (auto [key, p] : {std::pair{"dataset.images", &d.images}, std::pair{"dataset.labels", &d.labels},
                          std::pair{"dataset.test_images", &d.test_images},
                          std::pair{"dataset.test_labels", &d.test_labels}}) {
      if (!p->empty() && !std::filesystem::exists(*p)) throw ConfigError(key, "file not found: " + p->string());
    }
  }

  cfg.guide.init_seed = cfg.seed + 1;
  cfg.target.init_seed = cfg.seed + 2;
  for (auto [name, spec] : {std::pair{"guide", &cfg.guide}, std::pair{"target", &cfg.target}}) {
    const auto s = section(name);
    if (auto w = s.raw("widths")) spec->layer_widths = detail::parse_widths(s, *w);
    s.read("seed", spec->init_seed);
    for (std::size_t w : spec->layer_widths) {
      if (w == 0) throw ConfigError(s.key_name("widths"), "widths must be positive");
    }
  }

  const auto tr = section("train");
  auto& t = cfg.train;
  t.seed = cfg.seed;
  t.attack.seed = cfg.seed;
  tr.read("epochs", t.epochs);
  tr.read("batch_size", t.batch_size);
  tr.read("lr", t.lr);
  tr.read("momentum", t.momentum);
  tr.read("lambda", t.weights.lambda);
  tr.read("alpha", t.weights.alpha);
  tr.read("beta", t.weights.beta);
  t.generator = detail::read_generator(tr, "cag");
  if (t.generator == Generator::fgsm) throw ConfigError("train.generator", "must be pgd, trades or cag");
  if (auto o = tr.raw("objective")) {
    const auto obj = parse_objective(*o);
    if (!obj) throw ConfigError("train.objective", "unknown objective '" + *o + "'");
    t.objective = *obj;
  }
  detail::read_attack(tr, t.attack);
  tr.read("low", t.attack.low);
  tr.read("high", t.attack.high);
  tr.read("eval_iterations", t.eval_iterations);
  if (auto sched = tr.raw("lr_schedule")) {
    t.lr_schedule = detail::parse_schedule(tr, *sched);
  } else {
    t.lr_schedule = default_lr_schedule(t.epochs);
  }
  try {
    if (t.batch_size == 0) throw Error("batch_size must be positive");
    t.validate(std::numeric_limits<std::size_t>::max());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("train", e.what());
  }

  for (const auto& [name, tree] : eval_sections) {
    const detail::Section s(name, tree);
    // Unset keys inherit from the per-epoch robustness attack, so an
    // [eval.pgd20] section reproduces the numbers logged during training.
    EvalAttack a{detail::read_generator(s, "pgd"), epoch_eval_attack(t).config};
    if (a.generator == Generator::cag) throw ConfigError(s.key_name("generator"), "cag is not an evaluation attack");
    detail::read_attack(s, a.config);
    s.read("seed", a.config.seed);
    try {
      if (a.generator == Generator::fgsm) {
        if (!(a.config.epsilon >= 0.0)) throw Error("epsilon must be non-negative");
      } else {
        a.config.validate();
      }
    } catch (const Error& e) {
      throw ConfigError(name, e.what());
    }
    cfg.eval.emplace_back(name.substr(5), a);
  }

  const auto out = section("output");
  std::string metrics = cfg.output.metrics.string(), ckpt = cfg.output.checkpoint_dir.string();
  out.read("metrics", metrics);
  out.read("checkpoint_dir", ckpt);
  cfg.output.metrics = detail::resolve(base, metrics);
  cfg.output.checkpoint_dir = detail::resolve(base, ckpt);
  if (auto dir = env("D2R_OUTPUT_DIR")) {
    cfg.output.metrics = std::filesystem::path(*dir) / cfg.output.metrics.filename();
    cfg.output.checkpoint_dir = std::filesystem::path(*dir) / cfg.output.checkpoint_dir.filename();
  }
  return cfg;
}

/// Materialises the configured dataset as a train/test split.
inline DataSplit build_dataset(const DatasetConfig& d) {
  if (d.kind == "two_moons") return split_dataset(make_two_moons(d.n, d.noise, d.seed), d.test_fraction, d.seed);
  if (d.kind == "blobs") return split_dataset(make_blobs(d.n, d.centers, d.sigma, d.seed), d.test_fraction, d.seed);
  Dataset train = load_idx_subset(d.images, d.labels, d.per_class_limit);
  if (d.test_images.empty()) return split_dataset(train, d.test_fraction, d.seed);
  Dataset test = load_idx_subset(d.test_images, d.test_labels, d.per_class_limit);
  test.class_count = train.class_count = std::max(train.class_count, test.class_count);
  return {std::move(train), std::move(test)};
}

}  // namespace d2r
