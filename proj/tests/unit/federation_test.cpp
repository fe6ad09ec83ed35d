#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fedepth/data/partition.hpp"
#include "fedepth/federation/federation.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {
namespace {

using W64 = ModelWeights<double>;

W64 scalar_model(double v) {
  W64 w;
  w.body.push_back({Tensor<double>(TensorShape{1}, std::vector<double>{v})});
  return w;
}

W64 random_model(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  W64 w;
  w.body.resize(2);
  w.body[0].push_back(Tensor<double>(TensorShape{3, 4}));
  w.body[1].push_back(Tensor<double>(TensorShape{5}));
  w.head.push_back(Tensor<double>(TensorShape{2, 5}));
  for (auto* t : {&w.body[0][0], &w.body[1][0], &w.head[0]})
    for (auto& v : t->values()) v = normal(rng);
  return w;
}

template <class F>
void each_value(const W64& w, F&& f) {
  std::size_t flat = 0;
  for (const auto& b : w.body)
    for (const auto& t : b)
      for (double v : t.values()) f(flat++, v);
  for (const auto& t : w.head)
    for (double v : t.values()) f(flat++, v);
}

std::vector<double> flatten(const W64& w) {
  std::vector<double> out;
  each_value(w, [&](std::size_t, double v) { out.push_back(v); });
  return out;
}

TEST(Sampling, SizesAndDeterminism) {
  EXPECT_EQ(sample_clients(100, 0.1, 1).size(), 10u);
  EXPECT_EQ(sample_clients(20, 0.5, 1).size(), 10u);
  EXPECT_EQ(sample_clients(7, 0.3, 1).size(), 3u);
  EXPECT_EQ(sample_clients(3, 0.01, 1).size(), 1u);
  auto all = sample_clients(6, 1.0, 9);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(sample_clients(100, 0.1, 42), sample_clients(100, 0.1, 42));
  EXPECT_NE(sample_clients(100, 0.1, 42), sample_clients(100, 0.1, 43));
  auto s = sample_clients(100, 0.37, 5);
  EXPECT_TRUE(std::adjacent_find(s.begin(), s.end()) == s.end());
}

TEST(Sampling, RoughlyUniform) {
  std::vector<int> hits(10, 0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed)
    for (auto k : sample_clients(10, 0.3, seed)) ++hits[k];
  // Expected 1500 per client, binomial sd about 32.
  for (int h : hits) EXPECT_NEAR(h, 1500, 160);
}

TEST(Aggregate, HandExamples) {
  std::vector<W64> one{scalar_model(1.25)};
  const double p1[] = {0.3};
  EXPECT_EQ(aggregate<double>(one, p1), one[0]);

  std::vector<W64> two{scalar_model(0.0), scalar_model(2.0)};
  const double p2[] = {0.5, 0.5};
  EXPECT_NEAR(aggregate<double>(two, p2).body[0][0][0], 1.0, 1e-12);

  std::vector<W64> three{scalar_model(6), scalar_model(3), scalar_model(1)};
  const double p3[] = {1, 2, 3};
  EXPECT_NEAR(aggregate<double>(three, p3).body[0][0][0], 2.5, 1e-12);
}

TEST(Aggregate, ConvexCombinationBounds) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + trial % 6;
    std::vector<W64> ups;
    std::vector<double> p;
    for (std::size_t i = 0; i < k; ++i) {
      ups.push_back(random_model(rng));
      p.push_back(u(rng));
    }
    const auto agg = flatten(aggregate<double>(ups, p));
    std::vector<std::vector<double>> flat;
    for (const auto& w : ups) flat.push_back(flatten(w));
    for (std::size_t e = 0; e < agg.size(); ++e) {
      double lo = flat[0][e], hi = flat[0][e];
      for (const auto& f : flat) {
        lo = std::min(lo, f[e]);
        hi = std::max(hi, f[e]);
      }
      EXPECT_GE(agg[e], lo - 1e-12);
      EXPECT_LE(agg[e], hi + 1e-12);
    }
  }
}

TEST(Aggregate, IdenticalUpdatesAreAFixedPoint) {
  std::mt19937_64 rng(8);
  const W64 w = random_model(rng);
  std::vector<W64> ups(4, w);
  const double p[] = {0.1, 0.2, 0.3, 0.4};
  const auto a = flatten(aggregate<double>(ups, p)), b = flatten(w);
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_NEAR(a[e], b[e], 1e-12);
}

TEST(Aggregate, CoefficientsRenormalise) {
  // Coefficients sum to one: aggregating constant-one models gives one, and
  // rescaling every p leaves the result unchanged.
  std::mt19937_64 rng(9);
  std::vector<W64> ones(5, scalar_model(1.0)), ups;
  std::vector<double> p{0.01, 0.02, 0.05, 0.03, 0.04}, p_scaled;
  for (double v : p) p_scaled.push_back(v * 37.0);
  EXPECT_NEAR(aggregate<double>(ones, p).body[0][0][0], 1.0, 1e-12);
  for (int i = 0; i < 5; ++i) ups.push_back(random_model(rng));
  const auto a = flatten(aggregate<double>(ups, p)), b = flatten(aggregate<double>(ups, p_scaled));
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_NEAR(a[e], b[e], 1e-12);
}

TEST(Aggregate, ScaleEquivariance) {
  std::mt19937_64 rng(10);
  std::vector<W64> ups, scaled;
  const double c = -2.75;
  for (int i = 0; i < 4; ++i) {
    ups.push_back(random_model(rng));
    W64 s = ups.back();
    for (auto* t : {&s.body[0][0], &s.body[1][0], &s.head[0]})
      for (auto& v : t->values()) v *= c;
    scaled.push_back(std::move(s));
  }
  const double p[] = {0.4, 0.1, 0.3, 0.2};
  const auto a = flatten(aggregate<double>(ups, p)), b = flatten(aggregate<double>(scaled, p));
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_NEAR(b[e], c * a[e], 1e-12);
}

TEST(Aggregate, Errors) {
  std::vector<W64> none;
  EXPECT_THROW(aggregate<double>(none, {}), UsageError);
  std::mt19937_64 rng(11);
  std::vector<W64> ups{random_model(rng), random_model(rng)};
  ups[1].body[1][0] = Tensor<double>(TensorShape{6});
  const double p[] = {0.5, 0.5};
  EXPECT_THROW(aggregate<double>(ups, p), StructuralError);
  const double bad[] = {0.5, 0.0};
  ups[1] = ups[0];
  EXPECT_THROW(aggregate<double>(ups, bad), UsageError);
}

struct Fixture {
  BlockGraph graph = make_mlp(16, {12, 12, 12}, 4);
  Dataset test;
  std::vector<ClientState> clients;
  LocalTrainConfig local;
  Weights w0;
};

Fixture make_setup(std::size_t k, std::uint64_t seed = 3) {
  Fixture s;
  GaussianMixtureOptions o;
  o.classes = 4;
  o.dims = 16;
  o.train_per_class = 30 * k;
  o.test_per_class = 100;
  o.seed = seed;
  auto split = make_gaussian_mixture(o);
  s.test = split.test;
  PartitionSpec ps;
  ps.family = PartitionFamily::DirichletBalanced;
  ps.lambda = 1.0;
  ps.clients = k;
  ps.seed = seed;
  auto part = partition(split.train.y, split.train.classes, ps);
  for (std::size_t i = 0; i < k; ++i) {
    ClientState c;
    c.id = i;
    c.shard = subset(split.train, part.shards[i].indices);
    c.plan = i % 2 ? DecompositionPlan{3, 0, {{0, 1}, {1, 3}}} : whole_model_plan(3);
    c.group = i % 2 ? "j2" : "j1";
    s.clients.push_back(std::move(c));
  }
  assign_sample_weights(s.clients);
  s.local.epochs = 2;
  s.local.batch_size = 16;
  s.local.sgd.lr = 0.05;
  s.local.sgd.momentum = 0.9;
  s.w0 = init_weights<float>(s.graph, seed);
  return s;
}

TEST(Run, SingleClientRoundEqualsClientUpdate) {
  Fixture s = make_setup(1);
  FederationConfig fc;
  fc.seed = 4;
  auto r = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test);
  auto cfg = s.local;
  cfg.seed = derive_seed(fc.seed, {0xc1, 0, 0});
  auto direct = client_update(s.graph, s.w0, s.clients[0].plan, s.clients[0].shard, cfg);
  EXPECT_EQ(r.weights, direct.weights);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].round, 0u);
  EXPECT_EQ(r.records[1].round, 1u);
}

TEST(Run, WorkerCountDoesNotChangeResults) {
  Fixture s = make_setup(6);
  FederationConfig fc;
  fc.clients = 6;
  fc.participation = 0.5;
  fc.rounds = 3;
  fc.seed = 5;
  auto serial = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test);
  fc.workers = 3;
  auto parallel = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test);
  EXPECT_EQ(serial.weights, parallel.weights);
  for (std::size_t t = 0; t < serial.records.size(); ++t) {
    EXPECT_EQ(serial.records[t].sampled, parallel.records[t].sampled);
    EXPECT_EQ(serial.records[t].sampled.size(), t == 0 ? 0u : 3u);
  }
}

TEST(Run, DropTolerantModeSkipsFailedClients) {
  Fixture s = make_setup(4);
  s.clients[2].budget_mb = 1e-9;
  FederationConfig fc;
  fc.clients = 4;
  fc.rounds = 2;
  EXPECT_THROW(run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test), BudgetError);
  fc.drop_tolerant = true;
  auto r = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[1].aggregated, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_FALSE(r.records[1].clients[2].ok);
  EXPECT_NE(r.records[1].clients[2].error.find("budget"), std::string::npos);
}

TEST(Run, ResumeContinuesExactly) {
  Fixture s = make_setup(4);
  FederationConfig fc;
  fc.clients = 4;
  fc.participation = 0.5;
  fc.rounds = 4;
  fc.cosine_rounds = true;
  std::vector<Weights> seen;
  RunHooks hooks;
  hooks.on_record = [&](const RoundRecord&, const Weights& w) { seen.push_back(w); };
  auto full = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test, 0, hooks);
  ASSERT_EQ(seen.size(), 5u);
  auto resumed = run_federation(s.graph, fc, s.clients, s.local, seen[2], s.test, 2);
  EXPECT_EQ(resumed.weights, full.weights);
  ASSERT_EQ(resumed.records.size(), 2u);
  EXPECT_EQ(resumed.records[0].round, 3u);
  EXPECT_LT(full.records[4].lr, full.records[1].lr);
}

TEST(Run, AccuracyImprovesOverRounds) {
  Fixture s = make_setup(20);
  FederationConfig fc;
  fc.clients = 20;
  fc.participation = 0.5;
  fc.rounds = 5;
  fc.seed = 6;
  auto r = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test);
  EXPECT_GT(r.records.back().eval->global_accuracy, r.records.front().eval->global_accuracy + 0.1);
}

TEST(Run, MetricsCsvHasOneRowPerRecord) {
  Fixture s = make_setup(4);
  FederationConfig fc;
  fc.clients = 4;
  fc.rounds = 3;
  fc.eval_every = 2;
  const auto groups = client_groups(s.clients);
  EXPECT_EQ(groups, (std::vector<std::string>{"j1", "j2"}));
  std::ostringstream csv;
  write_metrics_header(csv, groups);
  RunHooks hooks;
  hooks.on_record = [&](const RoundRecord& r, const Weights&) { write_metrics_row(csv, r, s.clients, groups); };
  auto r = run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test, 0, hooks);
  std::istringstream in(csv.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "round,global_acc,fairness,participants,dropped,mean_loss,peak_memory_mb,acc_j1,acc_j2");
  EXPECT_EQ(lines[1].substr(0, 2), "0,");
  EXPECT_EQ(lines[2].substr(0, 4), "1,,,");  // round 1 not evaluated
  EXPECT_EQ(lines[4].substr(0, 2), "3,");
  EXPECT_FALSE(r.records[1].eval.has_value());
  EXPECT_TRUE(r.records[3].eval.has_value());
}

TEST(Run, RejectsBadConfigs) {
  Fixture s = make_setup(2);
  FederationConfig fc;
  fc.clients = 3;
  EXPECT_THROW(run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test), UsageError);
  fc.clients = 2;
  fc.participation = 0.0;
  EXPECT_THROW(run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test), UsageError);
  fc.participation = 1.0;
  s.clients[1].plan = whole_model_plan(2);
  EXPECT_THROW(run_federation(s.graph, fc, s.clients, s.local, s.w0, s.test), StructuralError);
}

}  // namespace
}  // namespace fedepth
