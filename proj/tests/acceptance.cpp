// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "d2r/d2r.hpp"

namespace fs = std::filesystem;
using namespace d2r;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int shell_exit(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return Tensor::matrix(r, c, v);
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> y(n);
  for (int& v : y) v = u(rng);
  return y;
}

/// Environment for one run: a fixed seed and a private output directory.
EnvLookup run_env(std::uint64_t seed, const fs::path& out_dir) {
  return [seed, out_dir](const char* name) -> std::optional<std::string> {
    if (std::string(name) == "D2R_SEED") return std::to_string(seed);
    if (std::string(name) == "D2R_OUTPUT_DIR") return out_dir.string();
    return std::nullopt;
  };
}

struct RunSummary {
  double target_clean = 0.0;
  double target_robust = 0.0;
  double gap_fraction_sum = 0.0;
  std::size_t epochs = 0;
};

RunSummary summarize(const fs::path& metrics) {
  RunSummary s;
  long last = -1;
  for (const auto& r : read_metrics(metrics)) last = std::max(last, r.epoch);
  for (const auto& r : read_metrics(metrics)) {
    if (r.role == "joint" && r.metric == "gap_sign_fraction") {
      s.gap_fraction_sum += r.value;
      ++s.epochs;
    }
    if (r.epoch != last || r.role != "target") continue;
    if (r.metric == "clean_acc") s.target_clean = r.value;
    if (r.metric == "robust_acc@pgd20") s.target_robust = r.value;
  }
  return s;
}

// 1 ─ gradient correctness through the CLI.
Outcome gradient_correctness(const std::string& cli) {
  const auto t0 = Clock::now();
  const int code = shell_exit(cli + " gradcheck > gradcheck_report.txt 2>&1");
  const double secs = seconds_since(t0);
  std::ostringstream sink;
  const SuiteResult r = run_gradient_checks(sink);
  const bool pass = code == 0 && r.pass && r.worst_rel_error < 1e-4 && secs < 60.0;
  return {pass, "exit " + std::to_string(code) + ", worst rel err " + fmt(r.worst_rel_error, 3) + ", " +
                    fmt(secs, 3) + " s"};
}

// 2 ─ loss identities.
Outcome loss_identities() {
  std::mt19937_64 rng(2);
  double worst_reduction = 0.0, worst_recompose = 0.0, min_kl = 1.0, worst_self = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t b = 1 + rng() % 8, k = 2 + rng() % 5;
    const auto y = random_labels(rng, b, static_cast<int>(k));
    Tape t;
    const Var g = t.constant(random_matrix(rng, b, k, -5, 5));
    const Var tc = t.constant(random_matrix(rng, b, k, -5, 5));
    const Var ta = t.constant(random_matrix(rng, b, k, -5, 5));
    const LossBreakdown plain = d2r_loss(g, tc, ta, y, {1.0, 0.0, 0.0}).breakdown;
    const double ce_mse = cross_entropy(g, y).value().item() + mse_logits(g, ta).value().item();
    worst_reduction = std::max(worst_reduction, std::abs(plain.total - ce_mse));
    std::uniform_real_distribution<double> w(0.0, 40.0);
    const LossWeights lw{w(rng), w(rng), w(rng)};
    const LossBreakdown full = d2r_loss(g, tc, ta, y, lw).breakdown;
    const double recomposed = lw.lambda * full.ce + full.mse + lw.alpha * full.kl_adv + lw.beta * full.skl_gap;
    worst_recompose = std::max(worst_recompose, std::abs(full.total - recomposed));
    min_kl = std::min({min_kl, kl_divergence(g, ta).value().item(), kl_divergence(ta, g).value().item()});
    worst_self = std::max({worst_self, std::abs(kl_divergence(g, g).value().item()),
                           std::abs(symmetric_kl_gap(g, g).value.value().item())});
  }
  Tape t;
  const Var p = t.constant(Tensor::matrix({{std::log(0.5), std::log(0.5)}}));
  const Var q = t.constant(Tensor::matrix({{std::log(0.25), std::log(0.75)}}));
  const double witness = symmetric_kl_gap(p, q).value.value().item();
  const bool pass = worst_reduction <= 1e-12 && worst_recompose <= 1e-12 && min_kl >= -1e-12 && worst_self <= 1e-12 &&
                    std::abs(witness - 0.013029) <= 1e-6;
  return {pass, "reduction " + fmt(worst_reduction, 2) + ", recompose " + fmt(worst_recompose, 2) + ", min KL " +
                    fmt(min_kl, 3) + ", KL(p,p) " + fmt(worst_self, 2) + ", gap witness " + fmt(witness, 7)};
}

// 3 ─ attack invariants.
Outcome attack_invariants() {
  const auto t0 = Clock::now();
  const ModelState guide = init_model({{4, 8, 3}, Activation::relu, 31}, Role::guide);
  const ModelState target = init_model({{4, 16, 16, 3}, Activation::relu, 32}, Role::target);
  std::mt19937_64 rng(3);
  std::size_t ball = 0, box = 0, fgsm_mismatch = 0, cag_mismatch = 0;
  for (int batch = 0; batch < 1000; ++batch) {
    Tensor x = random_matrix(rng, 8, 4, 0.0, 1.0);
    // Pin a few coordinates to the box edges so projection onto [0,1] binds.
    x[0] = 0.0;
    x[5] = 1.0;
    const auto y = random_labels(rng, 8, 3);
    std::uniform_real_distribution<double> eps_dist(0.005, 0.2);
    const double eps = eps_dist(rng);
    const AttackConfig c{eps, eps / 4.0, 5, batch % 2 ? InitMode::zero : InitMode::uniform_random, 0.0, 1.0,
                         static_cast<std::uint64_t>(batch)};
    for (Generator gen : {Generator::fgsm, Generator::pgd, Generator::trades, Generator::cag}) {
      const Tensor adv = generate(gen, &guide, target, x, y, c).x_adv;
      if (max_abs_diff(adv, x) > eps + 1e-9) ++ball;
      for (double v : adv.data()) box += (v < 0.0 || v > 1.0) ? 1 : 0;
    }
    const AttackConfig one{eps, eps, 1, InitMode::zero, 0.0, 1.0, 0};
    if (fgsm(target, x, y, one).x_adv.values() != pgd(target, x, y, one).x_adv.values()) ++fgsm_mismatch;
    if (cag_gen(target, target, x, c).x_adv.values() != trades_gen(target, x, c).x_adv.values()) ++cag_mismatch;
  }
  const double secs = seconds_since(t0);
  const bool pass = ball == 0 && box == 0 && fgsm_mismatch == 0 && cag_mismatch == 0 && secs < 60.0;
  return {pass, "ball violations " + std::to_string(ball) + ", box violations " + std::to_string(box) +
                    ", fgsm≠pgd1 " + std::to_string(fgsm_mismatch) + ", cag≠trades " + std::to_string(cag_mismatch) +
                    ", " + fmt(secs, 3) + " s"};
}

// 4 ─ CAG ascent.
Outcome cag_ascent() {
  const ModelState guide = init_model({{2, 32, 2}, Activation::relu, 41}, Role::guide);
  const ModelState target = init_model({{2, 64, 64, 2}, Activation::relu, 42}, Role::target);
  int ascended = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(trial));
    const Tensor x = random_matrix(rng, 16, 2, 0.0, 1.0);
    const AttackConfig c{0.1, 0.02, 10, InitMode::uniform_random, 0.0, 1.0, static_cast<std::uint64_t>(trial)};
    const double initial = cag_objective(guide, target, x, detail::initial_point(x, c));
    const double final_kl = cag_objective(guide, target, x, cag_gen(guide, target, x, c).x_adv);
    ascended += final_kl >= initial ? 1 : 0;
  }
  return {ascended >= 90, std::to_string(ascended) + "/100 trials ascended"};
}

// 5 and 6 ─ desk-scale robustness and the dynamic gap sign.
struct DeskResult {
  Outcome robustness;
  Outcome gap_sign;
};

DeskResult desk_scale(const fs::path& configs, const fs::path& work) {
  const auto t0 = Clock::now();
  std::map<std::string, std::vector<RunSummary>> by_method;
  std::ostringstream log;
  bool ok = true;
  for (const std::string method : {"d2r_cag", "pgd_at"}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      const fs::path out = work / "desk" / (method + "_seed" + std::to_string(seed));
      std::ostringstream sink;
      const int code = cli::run_train(configs / ("two_moons_" + method + ".ini"), sink, log, run_env(seed, out));
      if (code != cli::kOk) {
        ok = false;
        continue;
      }
      by_method[method].push_back(summarize(out / "metrics.csv"));
    }
  }
  const double secs = seconds_since(t0);
  auto mean = [](const std::vector<RunSummary>& runs, double RunSummary::*field) {
    double s = 0.0;
    for (const auto& r : runs) s += r.*field;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  };
  const auto& d2r = by_method["d2r_cag"];
  const auto& base = by_method["pgd_at"];
  ok = ok && d2r.size() == 3 && base.size() == 3;
  const double d2r_robust = mean(d2r, &RunSummary::target_robust);
  const double d2r_clean = mean(d2r, &RunSummary::target_clean);
  const double base_robust = mean(base, &RunSummary::target_robust);
  const bool robust_pass = ok && d2r_robust >= base_robust - 0.02 && d2r_clean >= 0.85 && secs < 300.0;

  double fraction_sum = 0.0;
  std::size_t epochs = 0;
  for (const auto& r : d2r) {
    fraction_sum += r.gap_fraction_sum;
    epochs += r.epochs;
  }
  // Every epoch has the same number of steps, so the epoch mean is the run-level fraction.
  const double fraction = epochs ? fraction_sum / static_cast<double>(epochs) : 0.0;
  const bool sign_pass = ok && fraction > 0.05 && fraction < 0.95;

  std::string seeds;
  for (std::size_t i = 0; i < d2r.size() && i < base.size(); ++i) {
    seeds += " | seed " + std::to_string(i) + ": d2r " + fmt(d2r[i].target_robust) + " pgd_at " +
             fmt(base[i].target_robust);
  }
  return {{robust_pass, "D2R-CAG robust " + fmt(d2r_robust) + " clean " + fmt(d2r_clean) + " vs PGD-AT robust " +
                            fmt(base_robust) + " (margin " + fmt(100.0 * (d2r_robust - base_robust), 3) + " pp), " +
                            fmt(secs, 4) + " s" + seeds + (ok ? "" : " | run failed: " + log.str())},
          {sign_pass, "positive-gap fraction " + fmt(fraction) + " over " + std::to_string(epochs) + " epochs"}};
}

// 7 ─ ablation grid and the comparison file.
Outcome ablation(const fs::path& configs, const fs::path& work) {
  const fs::path dir = work / "ablation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string combined;
  std::set<std::string> metric_sets;
  bool ok = true;
  for (const char* name : {"ablation_a0_b0", "ablation_a3_b0", "ablation_a3_b5"}) {
    std::ostringstream sink, err;
    const fs::path out = dir / name;
    if (cli::run_train(configs / (std::string(name) + ".ini"), sink, err, run_env(0, out)) != cli::kOk) {
      ok = false;
      continue;
    }
    std::string text = slurp(out / "metrics.csv");
    std::string keys;
    for (const auto& r : read_metrics(out / "metrics.csv")) keys += r.role + "/" + r.metric + ";";
    metric_sets.insert(keys);
    combined += combined.empty() ? text : text.substr(text.find('\n') + 1);
  }
  std::ofstream(dir / "combined.csv", std::ios::trunc) << combined;
  std::ostringstream sink, err;
  const int code = cli::run_export_plots(dir / "combined.csv", dir / "plots", sink, err);
  const std::string cmp = slurp(dir / "plots" / "comparison.csv");
  const auto lines = std::count(cmp.begin(), cmp.end(), '\n');
  const bool pass = ok && code == cli::kOk && metric_sets.size() == 1 && lines == 4 &&
                    fs::exists(dir / "plots" / "curve_ablation_a3_b5.csv");
  return {pass, "3 runs, export exit " + std::to_string(code) + ", comparison rows " + std::to_string(lines - 1) +
                    ", identical metric sets " + (metric_sets.size() == 1 ? "yes" : "no")};
}

// 8 ─ determinism of train and evaluate.
Outcome determinism(const fs::path& configs, const fs::path& work) {
  const fs::path cfg = configs / "ablation_a3_b5.ini";
  std::vector<std::string> train_files, eval_files;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path out = work / "determinism" / ("rep" + std::to_string(rep));
    fs::remove_all(out);
    std::ostringstream sink, err;
    if (cli::run_train(cfg, sink, err, run_env(7, out)) != cli::kOk) return {false, "train failed: " + err.str()};
    train_files.push_back(slurp(out / "metrics.csv"));
    const fs::path eval_cfg = work / "determinism" / "eval.ini";
    std::ofstream(eval_cfg, std::ios::trunc) << slurp(cfg) << "\n[eval.pgd20]\n[eval.fgsm]\ngenerator = fgsm\n";
    if (cli::run_evaluate(eval_cfg, out / "checkpoints" / "final_target.ckpt", sink, err, run_env(7, out)) !=
        cli::kOk) {
      return {false, "evaluate failed: " + err.str()};
    }
    eval_files.push_back(slurp(out / "metrics.csv"));
  }
  const bool pass = train_files[0] == train_files[1] && eval_files[0] == eval_files[1] && !train_files[0].empty();
  return {pass, std::string("train metrics ") + (train_files[0] == train_files[1] ? "identical" : "differ") +
                    ", evaluate metrics " + (eval_files[0] == eval_files[1] ? "identical" : "differ") + " (" +
                    std::to_string(eval_files[0].size()) + " bytes)"};
}

// 9 ─ checkpoint integrity.
Outcome checkpoint_integrity(const std::string& cli_path, const fs::path& configs, const fs::path& work) {
  const fs::path run = work / "desk" / "d2r_cag_seed0";
  const fs::path ckpt = run / "checkpoints" / "final_target.ckpt";
  if (!fs::exists(ckpt)) return {false, "missing checkpoint " + ckpt.string()};
  const ModelState loaded = load_checkpoint(ckpt);
  const fs::path copy = work / "roundtrip.ckpt";
  save_checkpoint(loaded, copy);
  const ModelState again = load_checkpoint(copy);
  std::mt19937_64 rng(9);
  const Tensor x = random_matrix(rng, 64, 2, 0.0, 1.0);
  const bool bitwise = predict_logits(loaded, x).values() == predict_logits(again, x).values() &&
                       slurp(ckpt) == slurp(copy);

  std::string bytes = slurp(ckpt);
  bytes[bytes.size() / 2] ^= 0x40;
  const fs::path corrupt = work / "corrupt.ckpt";
  std::ofstream(corrupt, std::ios::binary | std::ios::trunc) << bytes;
  std::string truncated = slurp(ckpt);
  truncated.resize(truncated.size() / 3);
  const fs::path cut = work / "truncated.ckpt";
  std::ofstream(cut, std::ios::binary | std::ios::trunc) << truncated;
  const std::string cfg = (configs / "two_moons_d2r_cag.ini").string();
  const std::string env = "D2R_OUTPUT_DIR=" + (work / "integrity").string() + " ";
  const int corrupt_code = shell_exit(env + cli_path + " evaluate " + cfg + " " + corrupt.string() + " > /dev/null 2>&1");
  const int cut_code = shell_exit(env + cli_path + " evaluate " + cfg + " " + cut.string() + " > /dev/null 2>&1");
  const bool pass = bitwise && corrupt_code == cli::kCheckpoint && cut_code == cli::kCheckpoint;
  return {pass, std::string("round trip ") + (bitwise ? "bitwise equal" : "differs") + ", corrupted exit " +
                    std::to_string(corrupt_code) + ", truncated exit " + std::to_string(cut_code)};
}

}  // namespace

int main() {
  const std::string cli_path = D2R_CLI_PATH;
  const fs::path configs = D2R_CONFIG_DIR;
  const fs::path work = fs::absolute("acceptance_work");
  fs::remove_all(work);
  fs::create_directories(work);

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  DeskResult desk;
  criteria.emplace_back("gradient correctness", [&] { return gradient_correctness(cli_path); });
  criteria.emplace_back("loss identities", [] { return loss_identities(); });
  criteria.emplace_back("attack invariants", [] { return attack_invariants(); });
  criteria.emplace_back("CAG ascent", [] { return cag_ascent(); });
  criteria.emplace_back("desk-scale robustness", [&] {
    desk = desk_scale(configs, work);
    return desk.robustness;
  });
  criteria.emplace_back("dynamic gap sign", [&] { return desk.gap_sign; });
  criteria.emplace_back("ablation comparison", [&] { return ablation(configs, work); });
  criteria.emplace_back("determinism", [&] { return determinism(configs, work); });
  criteria.emplace_back("checkpoint integrity", [&] { return checkpoint_integrity(cli_path, configs, work); });

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
