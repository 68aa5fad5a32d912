#include <gtest/gtest.h>

#include "d2r/config.hpp"
#include "test_util.hpp"

using namespace d2r;
using d2r::testing::no_env;

namespace {

std::string key_of(const std::filesystem::path& p, const EnvLookup& env = no_env) {
  try {
    load_run_config(p, env);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

}  // namespace

class Config : public d2r::testing::ScratchDir {};

TEST_F(Config, DefaultsFollowSeedConventions) {
  const RunConfig c = load_run_config(write("a.ini", "[run]\nid = demo\nseed = 10\n"), no_env);
  EXPECT_EQ(c.run_id, "demo");
  EXPECT_EQ(c.dataset.seed, 10u);
  EXPECT_EQ(c.guide.init_seed, 11u);
  EXPECT_EQ(c.target.init_seed, 12u);
  EXPECT_EQ(c.train.seed, 10u);
  EXPECT_EQ(c.guide.layer_widths, (std::vector<std::size_t>{2, 32, 2}));
  EXPECT_EQ(c.target.layer_widths, (std::vector<std::size_t>{2, 128, 128, 2}));
  EXPECT_EQ(c.train.lr_schedule, default_lr_schedule(c.train.epochs));
  EXPECT_EQ(c.output.metrics, dir / "metrics.csv");
  EXPECT_TRUE(c.eval.empty());
}

TEST_F(Config, ParsesEverySection) {
  const auto p = write("full.ini", R"([run]
id = full
seed = 3
[dataset]
kind = blobs
n = 300
sigma = 0.2
centers = 0,0; 3,3; 0,3
test_fraction = 0.25
[guide]
widths = 2 8 3
[target]
widths = 2 16 16 3
seed = 77
[train]
epochs = 12
batch_size = 64
lr = 0.05
momentum = 0.8
lr_schedule = 4:0.5, 8:0.2
lambda = 2
alpha = 30
beta = 20
generator = trades
epsilon = 0.05
eta = 0.01
iterations = 7
init = zero
eval_iterations = 5
[eval.pgd20]
[eval.fgsm]
generator = fgsm
epsilon = 0.02
[output]
metrics = out/m.csv
checkpoint_dir = out/ckpt
)");
  const RunConfig c = load_run_config(p, no_env);
  EXPECT_EQ(c.dataset.kind, "blobs");
  EXPECT_EQ(c.dataset.centers.size(), 3u);
  EXPECT_EQ(c.target.init_seed, 77u);
  EXPECT_EQ(c.train.lr_schedule, (std::vector<LrMilestone>{{4, 0.5}, {8, 0.2}}));
  EXPECT_EQ(c.train.weights.lambda, 2.0);
  EXPECT_EQ(c.train.generator, Generator::trades);
  EXPECT_EQ(c.train.attack.init, InitMode::zero);
  ASSERT_EQ(c.eval.size(), 2u);
  // Unset eval keys inherit the per-epoch robustness attack.
  const EvalAttack& pgd = c.eval[0].second;
  EXPECT_EQ(c.eval[0].first, "pgd20");
  EXPECT_EQ(pgd.config.epsilon, 0.05);
  EXPECT_EQ(pgd.config.iterations, 5);
  EXPECT_EQ(pgd.config.init, InitMode::uniform_random);
  EXPECT_EQ(pgd.config.seed, epoch_eval_attack(c.train).config.seed);
  EXPECT_EQ(c.eval[1].second.generator, Generator::fgsm);
  EXPECT_EQ(c.eval[1].second.config.epsilon, 0.02);
  EXPECT_EQ(c.output.checkpoint_dir, dir / "out/ckpt");
  EXPECT_EQ(build_dataset(c.dataset).test.size(), 75u);
}

TEST_F(Config, ErrorsNameTheOffendingKey) {
  EXPECT_EQ(key_of(dir / "missing.ini"), "config");
  EXPECT_EQ(key_of(write("a.ini", "[train]\ngenerator = cw\n")), "train.generator");
  EXPECT_EQ(key_of(write("b.ini", "[train]\nlearning_rate = 1\n")), "train.learning_rate");
  EXPECT_EQ(key_of(write("c.ini", "[trian]\nlr = 1\n")), "trian");
  EXPECT_EQ(key_of(write("d.ini", "[train]\nepochs = -3\n")), "train.epochs");
  EXPECT_EQ(key_of(write("e.ini", "[train]\nlr = fast\n")), "train.lr");
  EXPECT_EQ(key_of(write("f.ini", "[guide]\nwidths = 2\n")), "guide.widths");
  EXPECT_EQ(key_of(write("g.ini", "[dataset]\nkind = spirals\n")), "dataset.kind");
  EXPECT_EQ(key_of(write("h.ini", "[eval.x]\ngenerator = cag\n")), "eval.x.generator");
  EXPECT_EQ(key_of(write("i.ini", "[train]\nlr_schedule = 5:0.1, 5:0.1\n")), "train");
  EXPECT_EQ(key_of(write("j.ini", "[train]\ngenerator = fgsm\n")), "train.generator");
  EXPECT_EQ(key_of(write("k.ini", "[dataset]\nkind = idx\n")), "dataset.images");
  EXPECT_EQ(key_of(write("l.ini", "[run]\nid = a,b\n")), "run.id");
}

TEST_F(Config, EnvironmentOverridesSeedAndOutputDirectory) {
  const auto p = write("a.ini", "[run]\nseed = 1\n[output]\nmetrics = sub/m.csv\n");
  const EnvLookup env = [&](const char* name) -> std::optional<std::string> {
    if (std::string(name) == "D2R_SEED") return "42";
    if (std::string(name) == "D2R_OUTPUT_DIR") return (dir / "elsewhere").string();
    return std::nullopt;
  };
  const RunConfig c = load_run_config(p, env);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.target.init_seed, 44u);
  EXPECT_EQ(c.output.metrics, dir / "elsewhere" / "m.csv");
  EXPECT_EQ(c.output.checkpoint_dir, dir / "elsewhere" / "checkpoints");
  const EnvLookup bad = [](const char* name) -> std::optional<std::string> {
    if (std::string(name) == "D2R_SEED") return "abc";
    return std::nullopt;
  };
  EXPECT_THROW(load_run_config(p, bad), ConfigError);
}
