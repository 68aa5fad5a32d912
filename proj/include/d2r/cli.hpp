#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "d2r/checkpoint.hpp"
#include "d2r/config.hpp"
#include "d2r/gradcheck_suite.hpp"
#include "d2r/metrics.hpp"

// Subcommand bodies. Each returns a process exit code and never throws.

namespace d2r::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kConfig = 2, kCheckpoint = 3 };

/// Number of test samples whose class probabilities are exported after training.
inline constexpr std::size_t kProbabilitySamples = 8;

/// Sidecar holding per-class probabilities next to a metrics file.
inline std::filesystem::path probabilities_path(const std::filesystem::path& metrics) {
  return metrics.parent_path() / (metrics.stem().string() + ".probs.csv");
}

namespace detail {

inline void require_dims(const ModelSpec& spec, const DataSplit& data, const char* who) {
  if (spec.input_dim() != data.train.dim() || spec.class_count() != data.train.class_count) {
    throw ConfigError(who, "widths " + std::to_string(spec.input_dim()) + "→" + std::to_string(spec.class_count()) +
                               " do not match the dataset (" + std::to_string(data.train.dim()) + " features, " +
                               std::to_string(data.train.class_count) + " classes)");
  }
}

inline std::vector<double> softmax_row(const Tensor& logits, std::size_t r) {
  std::vector<double> p(logits.cols());
  double mx = logits.at(r, 0);
  for (std::size_t k = 1; k < p.size(); ++k) mx = std::max(mx, logits.at(r, k));
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += p[k] = std::exp(logits.at(r, k) - mx);
  for (double& v : p) v /= s;
  return p;
}

/// Per-class softmax outputs of both models on the first test samples, on
/// clean inputs and on PGD inputs crafted against the target.
inline void write_probabilities(const std::filesystem::path& path, const std::string& run_id,
                                const TrainResult& result, const Dataset& test, const EvalAttack& attack) {
  const std::size_t n = std::min(kProbabilitySamples, test.size());
  const Tensor x = test.x.rows_slice(0, n);
  const std::span<const int> y(test.y.data(), n);
  const Tensor x_adv = pgd(result.target, x, y, attack.config).x_adv;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string());
  out << "run_id,sample,label,role,input,class,probability\n";
  for (const auto& [role, model] : {std::pair{"guide", &result.guide}, std::pair{"target", &result.target}}) {
    for (const auto& [input, xs] : {std::pair{"clean", &x}, std::pair{"adversarial", &x_adv}}) {
      const Tensor logits = predict_logits(*model, *xs);
      for (std::size_t i = 0; i < n; ++i) {
        const auto p = softmax_row(logits, i);
        for (std::size_t k = 0; k < p.size(); ++k) {
          out << run_id << ',' << i << ',' << y[i] << ',' << role << ',' << input << ',' << k << ','
              << format_double(p[k]) << '\n';
        }
      }
    }
  }
}

inline std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

/// Writes every file to a temporary name first and renames them only once all
/// writes succeeded.
inline void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  std::vector<std::filesystem::path> temps;
  try {
    for (const auto& [path, content] : files) {
      auto tmp = path;
      tmp += ".tmp";
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("cannot open " + tmp.string());
      temps.push_back(tmp);
      out << content;
      if (!out) throw Error("write failed for " + tmp.string());
    }
  } catch (...) {
    for (const auto& t : temps) std::filesystem::remove(t);
    throw;
  }
  for (std::size_t i = 0; i < files.size(); ++i) std::filesystem::rename(temps[i], files[i].first);
}

}  // namespace detail

/// `train`: runs the configured training, writes the metrics CSV (replacing
/// any previous file), the final and best checkpoints of both models, and the
/// probability sidecar.
inline int run_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err,
                     const EnvLookup& env = process_env) {
  RunConfig cfg;
  DataSplit data;
  try {
    cfg = load_run_config(config_path, env);
    data = build_dataset(cfg.dataset);
    detail::require_dims(cfg.guide, data, "guide.widths");
    detail::require_dims(cfg.target, data, "target.widths");
    if (cfg.train.batch_size > data.train.size()) throw ConfigError("train.batch_size", "exceeds the training set size");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error loading data: " << e.what() << '\n';
    return kRuntime;
  }

  try {
    std::filesystem::create_directories(cfg.output.checkpoint_dir);
    MetricsWriter metrics(cfg.output.metrics, MetricsWriter::Mode::truncate);
    const EvalAttack robust = epoch_eval_attack(cfg.train);
    const TrainResult result = train(cfg.guide, cfg.target, data, cfg.train, [&](const EpochRecord& rec) {
      metrics.write(epoch_rows(cfg.run_id, rec, robust));
      out << "epoch " << rec.epoch << " loss " << format_double(rec.mean_loss.total) << " target clean "
          << rec.target.clean << " robust " << rec.target.robust << " guide clean " << rec.guide.clean << '\n';
    });
    const auto& dir = cfg.output.checkpoint_dir;
    save_checkpoint(result.guide, dir / "final_guide.ckpt");
    save_checkpoint(result.target, dir / "final_target.ckpt");
    save_checkpoint(result.best_guide, dir / "best_guide.ckpt");
    save_checkpoint(result.best_target, dir / "best_target.ckpt");
    detail::write_probabilities(probabilities_path(cfg.output.metrics), cfg.run_id, result, data.test, robust);
    out << "wrote " << cfg.output.metrics.string() << '\n';
    return kOk;
  } catch (const std::exception& e) {
    err << "training failed: " << e.what() << '\n';
    return kRuntime;
  }
}

/// `evaluate`: clean accuracy plus every [eval.*] attack for the model in
/// `checkpoint_path`, appended to the metrics file with epoch −1.
inline int run_evaluate(const std::filesystem::path& config_path, const std::filesystem::path& checkpoint_path,
                        std::ostream& out, std::ostream& err, const EnvLookup& env = process_env) {
  RunConfig cfg;
  DataSplit data;
  try {
    cfg = load_run_config(config_path, env);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  }
  ModelState model;
  try {
    model = load_checkpoint(checkpoint_path);
  } catch (const CheckpointError& e) {
    err << e.what() << " (" << checkpoint_path.string() << ")\n";
    return kCheckpoint;
  }
  try {
    data = build_dataset(cfg.dataset);
    detail::require_dims(model.spec, data, "checkpoint");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error loading data: " << e.what() << '\n';
    return kRuntime;
  }
  try {
    const std::string role = to_string(model.role);
    std::vector<MetricsRow> rows{{cfg.run_id, -1, role, "clean_acc", evaluate(model, data.test, std::nullopt), {}, {}}};
    for (const auto& [name, attack] : cfg.eval) {
      const int iters = attack.generator == Generator::fgsm ? 1 : attack.config.iterations;
      rows.push_back({cfg.run_id, -1, role, robust_metric_name(attack), evaluate(model, data.test, attack),
                      attack.config.epsilon, iters});
    }
    MetricsWriter metrics(cfg.output.metrics, MetricsWriter::Mode::append);
    metrics.write(rows);
    for (const auto& r : rows) out << r.role << ' ' << r.metric << ' ' << format_double(r.value) << '\n';
    return kOk;
  } catch (const std::exception& e) {
    err << "evaluation failed: " << e.what() << '\n';
    return kRuntime;
  }
}

/// `attack`: crafts adversarial versions of the test split against a
/// checkpoint and writes them as CSV: sample,label,x0..,adv0..
inline int run_attack(const std::filesystem::path& config_path, const std::filesystem::path& checkpoint_path,
                      const std::string& generator_name, const std::filesystem::path& out_csv,
                      const std::filesystem::path& guide_checkpoint, std::ostream& out, std::ostream& err,
                      const EnvLookup& env = process_env) {
  RunConfig cfg;
  DataSplit data;
  const auto generator = parse_generator(generator_name);
  if (!generator) {
    err << "config error: generator: unknown generator '" << generator_name << "'\n";
    return kConfig;
  }
  if (*generator == Generator::cag && guide_checkpoint.empty()) {
    err << "config error: guide: cag generation needs --guide\n";
    return kConfig;
  }
  try {
    cfg = load_run_config(config_path, env);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  }
  ModelState target, guide;
  try {
    target = load_checkpoint(checkpoint_path);
    if (!guide_checkpoint.empty()) guide = load_checkpoint(guide_checkpoint);
  } catch (const CheckpointError& e) {
    err << e.what() << '\n';
    return kCheckpoint;
  }
  try {
    data = build_dataset(cfg.dataset);
    detail::require_dims(target.spec, data, "checkpoint");
    if (!guide_checkpoint.empty()) detail::require_dims(guide.spec, data, "guide");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error loading data: " << e.what() << '\n';
    return kRuntime;
  }
  try {
    const Dataset& test = data.test;
    const AdvBatch adv =
        generate(*generator, guide_checkpoint.empty() ? nullptr : &guide, target, test.x, test.y, cfg.train.attack);
    std::ofstream csv(out_csv, std::ios::trunc);
    if (!csv) throw Error("cannot open " + out_csv.string());
    csv << "sample,label";
    for (std::size_t a = 0; a < test.dim(); ++a) csv << ",x" << a;
    for (std::size_t a = 0; a < test.dim(); ++a) csv << ",adv" << a;
    csv << '\n';
    for (std::size_t i = 0; i < test.size(); ++i) {
      csv << i << ',' << test.y[i];
      for (std::size_t a = 0; a < test.dim(); ++a) csv << ',' << format_double(adv.x_clean.at(i, a));
      for (std::size_t a = 0; a < test.dim(); ++a) csv << ',' << format_double(adv.x_adv.at(i, a));
      csv << '\n';
    }
    if (!csv) throw Error("write failed for " + out_csv.string());
    const std::size_t correct = count_correct(target, adv.x_adv, test.y);
    out << to_string(*generator) << " accuracy on adversarial inputs "
        << static_cast<double>(correct) / static_cast<double>(test.size()) << '\n';
    return kOk;
  } catch (const std::exception& e) {
    err << "attack failed: " << e.what() << '\n';
    return kRuntime;
  }
}

/// `gradcheck`: the full gradient-check suite; exit 0 iff every check passes.
inline int run_gradcheck(std::ostream& out, std::ostream& err, const std::string& fault_op = {}) {
  try {
    const SuiteResult result = run_gradient_checks(out, fault_op);
    out << "worst relative error " << std::scientific << std::setprecision(3) << result.worst_rel_error
        << std::defaultfloat << '\n';
    if (result.pass) return kOk;
    err << "gradient check failed:";
    for (const auto& name : result.failed) err << ' ' << name;
    err << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    err << "gradient check aborted: " << e.what() << '\n';
    return kRuntime;
  }
}

/// `export-plots`: per-run robustness curves (curve_<run>.csv), a joint
/// comparison of all runs (comparison.csv) and, when a probability sidecar
/// exists, probabilities.csv. Nothing is written unless all inputs parse.
inline int run_export_plots(const std::filesystem::path& metrics_path, const std::filesystem::path& out_dir,
                            std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  try {
    const auto rows = read_metrics(metrics_path);

    struct EpochValues {
      std::map<std::string, double> values;  // role/metric → value
    };
    std::vector<std::string> runs;
    std::map<std::string, std::map<long, EpochValues>> by_run;
    std::map<std::string, std::string> robust_name;
    for (const auto& r : rows) {
      if (r.epoch < 0) continue;
      if (!by_run.contains(r.run_id)) runs.push_back(r.run_id);
      by_run[r.run_id][r.epoch].values[r.role + "/" + r.metric] = r.value;
      if (r.role == "target" && r.metric.rfind("robust_acc@", 0) == 0) robust_name[r.run_id] = r.metric;
    }
    if (runs.empty()) throw MetricsError("metrics file holds no training epochs");

    auto get = [](const EpochValues& e, const std::string& key) -> std::string {
      const auto it = e.values.find(key);
      return it == e.values.end() ? std::string{} : format_double(it->second);
    };
    std::ostringstream comparison;
    comparison << "run_id,final_epoch,target_clean_acc,target_robust_acc,best_target_robust_acc,best_epoch,"
                  "guide_clean_acc,guide_robust_acc,gap_sign_fraction\n";
    for (const auto& run : runs) {
      const std::string robust = robust_name.count(run) ? robust_name[run] : "robust_acc@pgd20";
      std::ostringstream curve;
      curve << "epoch,guide_clean_acc,guide_robust_acc,target_clean_acc,target_robust_acc,gap_sign_fraction,"
               "loss_total\n";
      double best = -1.0;
      long best_epoch = -1;
      for (const auto& [epoch, e] : by_run[run]) {
        curve << epoch << ',' << get(e, "guide/clean_acc") << ',' << get(e, "guide/" + robust) << ','
              << get(e, "target/clean_acc") << ',' << get(e, "target/" + robust) << ','
              << get(e, "joint/gap_sign_fraction") << ',' << get(e, "joint/loss_total") << '\n';
        const auto it = e.values.find("target/" + robust);
        if (it != e.values.end() && it->second > best) {
          best = it->second;
          best_epoch = epoch;
        }
      }
      files.emplace_back(out_dir / ("curve_" + detail::safe_name(run) + ".csv"), curve.str());
      const auto& [final_epoch, last] = *by_run[run].rbegin();
      comparison << run << ',' << final_epoch << ',' << get(last, "target/clean_acc") << ','
                 << get(last, "target/" + robust) << ',' << (best_epoch >= 0 ? format_double(best) : "") << ','
                 << (best_epoch >= 0 ? std::to_string(best_epoch) : "") << ',' << get(last, "guide/clean_acc")
                 << ',' << get(last, "guide/" + robust) << ',' << get(last, "joint/gap_sign_fraction") << '\n';
    }
    files.emplace_back(out_dir / "comparison.csv", comparison.str());

    const auto probs = probabilities_path(metrics_path);
    if (std::filesystem::exists(probs)) {
      std::ifstream in(probs);
      std::ostringstream content;
      content << in.rdbuf();
      files.emplace_back(out_dir / "probabilities.csv", content.str());
    }
  } catch (const std::exception& e) {
    err << "export failed: " << e.what() << '\n';
    return kRuntime;
  }
  try {
    std::filesystem::create_directories(out_dir);
    detail::write_files_atomically(files);
  } catch (const std::exception& e) {
    err << "export failed: " << e.what() << '\n';
    return kRuntime;
  }
  for (const auto& [path, _] : files) out << "wrote " << path.string() << '\n';
  return kOk;
}

}  // namespace d2r::cli
