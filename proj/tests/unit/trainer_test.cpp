#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fedepth/nn/errors.hpp"
#include "fedepth/nn/network.hpp"
#include "fedepth/trainer/trainer.hpp"

namespace fedepth {
namespace {

Dataset mixture(std::size_t per_class, std::uint64_t seed = 11) {
  GaussianMixtureOptions o;
  o.classes = 4;
  o.dims = 16;
  o.train_per_class = per_class;
  o.test_per_class = 1;
  o.seed = seed;
  return make_gaussian_mixture(o).train;
}

LocalTrainConfig config(std::size_t epochs) {
  LocalTrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.sgd.lr = 0.05;
  c.sgd.momentum = 0.9;
  c.seed = 5;
  return c;
}

DecompositionPlan plan_of(std::size_t blocks, std::size_t skipped, std::vector<BlockRange> groups) {
  DecompositionPlan p;
  p.num_blocks = blocks;
  p.skipped_prefix = skipped;
  p.groups = std::move(groups);
  return p;
}

double max_abs_diff(const Weights& a, const Weights& b) {
  double d = 0;
  auto cmp = [&](const Tensor<float>& x, const Tensor<float>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) d = std::max(d, std::abs(double(x[i]) - double(y[i])));
  };
  for (std::size_t j = 0; j < a.body.size(); ++j)
    for (std::size_t t = 0; t < a.body[j].size(); ++t) cmp(a.body[j][t], b.body[j][t]);
  for (std::size_t t = 0; t < a.head.size(); ++t) cmp(a.head[t], b.head[t]);
  return d;
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("fedepth_trainer_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

TEST(SplitEpochs, RemainderGoesToLaterGroups) {
  EXPECT_EQ(split_epochs(10, 3), (std::vector<std::size_t>{3, 3, 4}));
  EXPECT_EQ(split_epochs(11, 3), (std::vector<std::size_t>{3, 4, 4}));
  EXPECT_EQ(split_epochs(6, 1), (std::vector<std::size_t>{6}));
  EXPECT_EQ(split_epochs(2, 3), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_THROW(split_epochs(5, 0), UsageError);
}

TEST(EpochOrder, PermutationDependsOnEpoch) {
  auto a = epoch_order(50, 1, 0), b = epoch_order(50, 1, 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, epoch_order(50, 1, 0));
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], i);
}

TEST(ClientUpdate, SingleGroupMatchesWholeModelTraining) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 1);
  const Dataset d = mixture(25);
  const auto cfg = config(3);
  auto depth = client_update(g, w0, whole_model_plan(3), d, cfg);
  auto whole = train_whole_model(g, w0, d, cfg);
  EXPECT_LE(max_abs_diff(depth.weights, whole.weights), 1e-6);
  EXPECT_GT(max_abs_diff(depth.weights, w0), 1e-3);
  EXPECT_EQ(depth.steps, whole.steps);
}

TEST(ClientUpdate, SkippedPrefixIsBitIdentical) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 2);
  const Dataset d = mixture(20);
  auto r = client_update(g, w0, plan_of(3, 1, {{1, 2}, {2, 3}}), d, config(4));
  EXPECT_EQ(r.weights.body[0], w0.body[0]);
  EXPECT_NE(r.weights.body[1], w0.body[1]);
  EXPECT_NE(r.weights.body[2], w0.body[2]);
}

TEST(ClientUpdate, BufferingGivesIdenticalWeights) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 3);
  const Dataset d = mixture(20);
  auto cfg = config(3);
  const auto plan = plan_of(3, 0, {{0, 1}, {1, 2}, {2, 3}});
  auto plain = client_update(g, w0, plan, d, cfg);
  cfg.buffer_activations = true;
  auto buffered = client_update(g, w0, plan, d, cfg);
  EXPECT_EQ(plain.weights, buffered.weights);
}

TEST(ClientUpdate, EarlierGroupsStayFrozen) {
  // Group one gets one epoch in both runs; group two trains one or two.
  // Block 0 must not see the extra epoch.
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 4);
  const Dataset d = mixture(20);
  const auto plan = plan_of(3, 0, {{0, 1}, {1, 3}});
  auto two = client_update(g, w0, plan, d, config(2));
  auto three = client_update(g, w0, plan, d, config(3));
  EXPECT_NE(two.weights.body[0], w0.body[0]);
  EXPECT_EQ(two.weights.body[0], three.weights.body[0]);
  EXPECT_NE(two.weights.body[1], three.weights.body[1]);
  ASSERT_EQ(three.log.size(), 3u);
  EXPECT_EQ(three.log[0].group, 0u);
  EXPECT_EQ(three.log[1].group, 1u);
  EXPECT_EQ(three.log[2].epoch, 2u);
}

TEST(ClientUpdate, StepCountMatchesWholeModelAndVisitsFewerParameters) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 6);
  const Dataset d = mixture(25);  // 100 samples, 7 minibatches of 16
  const auto cfg = config(6);
  auto depth = client_update(g, w0, plan_of(3, 0, {{0, 1}, {1, 2}, {2, 3}}), d, cfg);
  auto whole = train_whole_model(g, w0, d, cfg);
  EXPECT_EQ(depth.steps, 6u * 7u);
  EXPECT_EQ(depth.steps, whole.steps);
  EXPECT_LT(depth.parameter_visits, whole.parameter_visits);
  EXPECT_LT(depth.peak_memory_mb, whole.peak_memory_mb);
}

TEST(ClientUpdate, BudgetIsEnforced) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 7);
  auto cfg = config(1);
  cfg.budget_mb = 1e-6;
  EXPECT_THROW(client_update(g, w0, whole_model_plan(3), mixture(5), cfg), BudgetError);
}

TEST(ClientUpdate, RejectsMismatchedPlanAndEmptyShard) {
  const BlockGraph g = make_mlp(16, {12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 8);
  EXPECT_THROW(client_update(g, w0, whole_model_plan(3), mixture(5), config(1)), StructuralError);
  Dataset empty;
  empty.classes = 4;
  EXPECT_THROW(client_update(g, w0, whole_model_plan(2), empty, config(1)), UsageError);
}

TEST(ClientUpdate, AuxiliaryHeadsOnConvolutionalModel) {
  const BlockGraph g = make_preresnet20(3, 4, 8, 4, 2);
  const Weights w0 = init_weights<float>(g, 9);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> normal;
  Dataset d;
  d.classes = 4;
  d.x = Tensor<float>(TensorShape{24, 3, 8, 8});
  for (auto& v : d.x.values()) v = normal(rng);
  for (std::size_t i = 0; i < 24; ++i) d.y.push_back(static_cast<int>(i % 4));
  auto cfg = config(3);
  cfg.batch_size = 8;
  cfg.sgd.lr = 0.01;
  const auto plan = plan_of(9, 0, {{0, 3}, {3, 6}, {6, 9}});
  for (auto s : {HeadStrategy::Auxiliary, HeadStrategy::SkipConnection}) {
    cfg.head_strategy = s;
    auto r = client_update(g, w0, plan, d, cfg);
    ASSERT_EQ(r.log.size(), 3u);
    for (const auto& rec : r.log) EXPECT_TRUE(std::isfinite(rec.loss));
    EXPECT_TRUE(r.weights.all_finite());
    // The shared head only trains in the last group under auxiliary heads.
    EXPECT_NE(r.weights.head, w0.head);
  }
}

TEST(Baseline, ScaledModelTrainsAndIsSmaller) {
  const BlockGraph g = make_mlp(16, {32, 32}, 4);
  const BlockGraph half = width_scale(g, 0.5);
  EXPECT_LT(half.parameter_count(), g.parameter_count());
  const Weights w0 = init_weights<float>(half, 10);
  auto r = baseline_update(half, w0, mixture(50), config(5));
  ASSERT_EQ(r.log.size(), 5u);
  EXPECT_LT(r.log.back().loss, r.log.front().loss);
}

TEST(Mkd, SingleStudentEqualsPlainTraining) {
  const BlockGraph g = make_mlp(16, {12, 12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 11);
  const Dataset d = mixture(20);
  const auto cfg = config(3);
  MkdConfig m;
  m.students = 1;
  EXPECT_EQ(mkd_update(g, w0, whole_model_plan(3), d, cfg, m).weights, train_whole_model(g, w0, d, cfg).weights);
  m.depthwise = {true};
  const auto plan = plan_of(3, 0, {{0, 1}, {1, 3}});
  EXPECT_EQ(mkd_update(g, w0, plan, d, cfg, m).weights, client_update(g, w0, plan, d, cfg).weights);
}

TEST(Mkd, IdenticalStudentsStayIdentical) {
  const BlockGraph g = make_mlp(16, {12, 12}, 4);
  const Weights w0 = init_weights<float>(g, 12);
  const Dataset d = mixture(20);
  const auto cfg = config(3);
  MkdConfig m;
  m.students = 3;
  m.init = StudentInit::Global;
  auto r = mkd_update(g, w0, whole_model_plan(2), d, cfg, m);
  for (const auto& rec : r.log) EXPECT_EQ(rec.kl, 0.0);
  EXPECT_EQ(r.weights, train_whole_model(g, w0, d, cfg).weights);
}

TEST(Mkd, DifferentStudentsMoveTogether) {
  const BlockGraph g = make_mlp(16, {24, 24}, 4);
  const Weights w0 = init_weights<float>(g, 13);
  const Dataset d = mixture(50);
  auto cfg = config(8);
  cfg.sgd.lr = 0.02;
  MkdConfig m;
  m.students = 2;
  m.init = StudentInit::Fresh;
  auto r = mkd_update(g, w0, whole_model_plan(2), d, cfg, m);
  ASSERT_EQ(r.log.size(), 8u);
  EXPECT_GT(r.log.front().kl, 0.0);
  EXPECT_LT(r.log.back().kl, r.log.front().kl);
}

TEST(Mkd, Validation) {
  const BlockGraph g = make_mlp(16, {12}, 4);
  const Weights w0 = init_weights<float>(g, 14);
  MkdConfig m;
  m.students = 0;
  EXPECT_THROW(mkd_update(g, w0, whole_model_plan(1), mixture(5), config(1), m), UsageError);
  m.students = 2;
  m.upload = 2;
  EXPECT_THROW(mkd_update(g, w0, whole_model_plan(1), mixture(5), config(1), m), UsageError);
  m.upload = 0;
  auto cfg = config(1);
  const double one = estimate_model_cost(g, cfg.batch_size, 4).total_mb();
  cfg.budget_mb = 1.5 * one;  // one student fits, two do not
  EXPECT_THROW(mkd_update(g, w0, whole_model_plan(1), mixture(5), cfg, m), BudgetError);
}

TEST(DepthwiseInference, MatchesInMemoryForward) {
  const BlockGraph g = make_mlp(16, {12, 10, 12, 8, 12, 12, 9, 12, 12}, 4);
  const Weights w = init_weights<float>(g, 15);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> normal;
  Tensor<float> x(TensorShape{1000, 16});
  for (auto& v : x.values()) v = normal(rng);
  TempDir dir;
  auto r = depthwise_inference(g, w, x, dir.path());
  EXPECT_EQ(r.logits, forward(g, w, x));
  EXPECT_EQ(r.spill_writes, 9u);
  EXPECT_EQ(r.spill_reads, 8u);
  EXPECT_GT(r.spill_bytes, 0u);
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(DepthwiseInference, SingleBlockWritesOnce) {
  const BlockGraph g = make_mlp(16, {12}, 4);
  const Weights w = init_weights<float>(g, 16);
  Tensor<float> x(TensorShape{5, 16}, std::vector<float>(80, 0.5f));
  TempDir dir;
  auto r = depthwise_inference(g, w, x, dir.path());
  EXPECT_EQ(r.spill_writes, 1u);
  EXPECT_EQ(r.spill_reads, 0u);
  EXPECT_EQ(r.logits, forward(g, w, x));
}

TEST(Spill, RoundTripAndCorruption) {
  TempDir dir;
  const auto path = dir.path() / "z.spill";
  Tensor<float> z(TensorShape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  write_spill(path, 4, z);
  EXPECT_EQ(read_spill(path, 4), z);
  EXPECT_THROW(read_spill(path, 3), IntegrityError);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(30);
    f.put('\x7f');
  }
  EXPECT_THROW(read_spill(path, 4), IntegrityError);
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(read_spill(path, 4), IntegrityError);
  EXPECT_THROW(read_spill(dir.path() / "missing", 0), IoError);
}

TEST(TrainRecord, JsonLine) {
  TrainRecord r{1, 3, 0.5, 0.1, 2.25, 0.0};
  auto j = nlohmann::json::parse(train_record_json(r, 7, 2));
  EXPECT_EQ(j["round"], 7);
  EXPECT_EQ(j["client"], 2);
  EXPECT_EQ(j["group"], 1);
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_EQ(j["loss"], 0.5);
  EXPECT_EQ(j["peak_memory_mb"], 2.25);
}

}  // namespace
}  // namespace fedepth
