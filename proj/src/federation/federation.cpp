#include "fedepth/federation/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "fedepth/nn/network.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {

void FederationConfig::validate() const {
  if (clients == 0) throw UsageError("federation needs at least one client");
  if (!(participation > 0.0 && participation <= 1.0)) throw UsageError("participation must be in (0, 1]");
  if (rounds == 0) throw UsageError("federation needs at least one round");
  if (eval_every == 0) throw UsageError("evaluation cadence must be positive");
  if (workers == 0) throw UsageError("need at least one worker");
}

std::size_t sample_size(std::size_t clients, double participation) {
  // Guard against gamma*K landing a rounding error above an integer.
  const double exact = participation * static_cast<double>(clients);
  const auto n = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(n, 1, clients);
}

std::vector<std::size_t> sample_clients(std::size_t clients, double participation, std::uint64_t seed) {
  if (clients == 0) throw UsageError("no clients to sample");
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(sample_size(clients, participation));
  std::sort(ids.begin(), ids.end());
  return ids;
}

template <class T>
ModelWeights<T> aggregate(std::span<const ModelWeights<T>> updates, std::span<const double> weights) {
  if (updates.empty()) throw UsageError("nothing to aggregate");
  if (weights.size() != updates.size()) throw UsageError("one aggregation weight per update is required");
  double total = 0;
  for (double p : weights) {
    if (!(p > 0.0) || !std::isfinite(p)) throw UsageError("aggregation weights must be positive");
    total += p;
  }
  const ModelWeights<T>& first = updates.front();
  auto same_shapes = [](const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(a[i].shape() == b[i].shape())) return false;
    }
    return true;
  };
  for (std::size_t k = 1; k < updates.size(); ++k) {
    bool ok = updates[k].body.size() == first.body.size() && same_shapes(updates[k].head, first.head);
    for (std::size_t j = 0; ok && j < first.body.size(); ++j) ok = same_shapes(updates[k].body[j], first.body[j]);
    if (!ok) throw StructuralError("update " + std::to_string(k) + " has different shapes from update 0");
  }
  std::vector<double> coef(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) coef[k] = weights[k] / total;

  auto mix = [&](auto&& tensor_of) {
    const Tensor<T>& shape = tensor_of(first);
    std::vector<double> acc(shape.size(), 0.0);
    for (std::size_t k = 0; k < updates.size(); ++k) {
      const Tensor<T>& t = tensor_of(updates[k]);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += coef[k] * static_cast<double>(t[i]);
    }
    Tensor<T> out(shape.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
    return out;
  };
  ModelWeights<T> out;
  out.body.resize(first.body.size());
  for (std::size_t j = 0; j < first.body.size(); ++j) {
    for (std::size_t t = 0; t < first.body[j].size(); ++t) {
      out.body[j].push_back(mix([&](const ModelWeights<T>& w) -> const Tensor<T>& { return w.body[j][t]; }));
    }
  }
  for (std::size_t t = 0; t < first.head.size(); ++t) {
    out.head.push_back(mix([&](const ModelWeights<T>& w) -> const Tensor<T>& { return w.head[t]; }));
  }
  return out;
}

template ModelWeights<float> aggregate<float>(std::span<const ModelWeights<float>>, std::span<const double>);
template ModelWeights<double> aggregate<double>(std::span<const ModelWeights<double>>, std::span<const double>);

std::string_view trainer_kind_name(TrainerKind k) {
  switch (k) {
    case TrainerKind::FeDepth: return "fedepth";
    case TrainerKind::FeDepthPartial: return "fedepth-partial";
    case TrainerKind::Mkd: return "mkd";
    case TrainerKind::Baseline: return "baseline";
  }
  return "unknown";
}

TrainerKind parse_trainer_kind(std::string_view name) {
  for (auto k : {TrainerKind::FeDepth, TrainerKind::FeDepthPartial, TrainerKind::Mkd, TrainerKind::Baseline}) {
    if (name == trainer_kind_name(k)) return k;
  }
  throw UsageError("unknown trainer kind '" + std::string(name) + "' (fedepth, fedepth-partial, mkd, baseline)");
}

void assign_sample_weights(std::vector<ClientState>& clients) {
  double total = 0;
  for (const auto& c : clients) total += static_cast<double>(c.shard.size());
  if (total == 0) throw UsageError("clients hold no samples");
  for (auto& c : clients) {
    if (c.shard.size() == 0) throw UsageError("client " + std::to_string(c.id) + " holds no samples");
    c.weight = static_cast<double>(c.shard.size()) / total;
    c.histogram.assign(c.shard.classes, 0);
    for (int y : c.shard.y) ++c.histogram.at(static_cast<std::size_t>(y));
  }
}

EvalReport evaluate(const BlockGraph& graph, const Weights& weights, const Dataset& test,
                    const std::vector<ClientState>& clients, std::size_t round) {
  if (test.size() == 0) throw UsageError("empty test set");
  constexpr std::size_t kChunk = 1024;
  Tensor<float> logits(TensorShape{test.size(), graph.num_classes()});
  for (std::size_t begin = 0; begin < test.size(); begin += kChunk) {
    std::vector<std::size_t> rows(std::min(kChunk, test.size() - begin));
    std::iota(rows.begin(), rows.end(), begin);
    const Tensor<float> out = forward(graph, weights, gather_rows(test.x, rows));
    std::copy(out.data(), out.data() + out.size(), logits.data() + begin * graph.num_classes());
  }
  EvalReport r;
  r.round = round;
  r.global_accuracy = top1_accuracy(logits, test.y);
  const auto pc = per_class_accuracy(logits, test.y, graph.num_classes());
  for (const auto& c : clients) r.client_accuracy.push_back(client_weighted_accuracy(pc, c.histogram));
  r.fairness = r.client_accuracy.size() >= 2 ? fairness_std(r.client_accuracy) : 0.0;
  return r;
}

RunResult run_federation(const BlockGraph& graph, const FederationConfig& config, const std::vector<ClientState>& clients,
                         const LocalTrainConfig& local, const Weights& start, const Dataset& test,
                         std::size_t first_round, const RunHooks& hooks) {
  config.validate();
  if (clients.size() != config.clients) {
    throw UsageError("federation expects " + std::to_string(config.clients) + " clients, got " +
                     std::to_string(clients.size()));
  }
  if (first_round >= config.rounds) throw UsageError("resume round is past the last round");
  start.check_matches(graph);
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const ClientState& c = clients[k];
    if (c.id != k) throw UsageError("client ids must equal their position");
    if (c.kind != TrainerKind::Baseline) {
      if (c.plan.num_blocks != graph.num_blocks()) {
        throw StructuralError("client " + std::to_string(c.id) + " plan does not match the model");
      }
      c.plan.validate();
    }
  }

  RunResult result;
  result.weights = start;
  auto emit = [&](RoundRecord rec) {
    if (hooks.on_record) hooks.on_record(rec, result.weights);
    result.records.push_back(std::move(rec));
  };
  if (first_round == 0) {
    RoundRecord r0;
    r0.eval = evaluate(graph, result.weights, test, clients, 0);
    emit(std::move(r0));
  }

  for (std::size_t t = first_round; t < config.rounds; ++t) {
    RoundRecord rec;
    rec.round = t + 1;
    rec.sampled = sample_clients(config.clients, config.participation, derive_seed(config.seed, {0x5a, t}));
    LocalTrainConfig cfg = local;
    if (config.cosine_rounds) cfg.sgd.lr = cosine_lr(local.sgd.lr, t, config.rounds);
    rec.lr = cfg.sgd.lr;

    const Weights& snapshot = result.weights;
    const std::size_t n = rec.sampled.size();
    std::vector<ClientOutcome> outcomes(n);
    std::vector<std::optional<Weights>> uploads(n);
    std::vector<std::exception_ptr> failures(n);
    auto work = [&](std::size_t i) {
      const ClientState& c = clients[rec.sampled[i]];
      LocalTrainConfig mine = cfg;
      mine.seed = derive_seed(config.seed, {0xc1, t, c.id});
      try {
        mine.budget_mb = c.budget_mb;
        LocalResult r;
        switch (c.kind) {
          case TrainerKind::FeDepth:
          case TrainerKind::FeDepthPartial: r = client_update(graph, snapshot, c.plan, c.shard, mine); break;
          case TrainerKind::Mkd: r = mkd_update(graph, snapshot, c.plan, c.shard, mine, c.mkd); break;
          case TrainerKind::Baseline: r = train_whole_model(graph, snapshot, c.shard, mine); break;
        }
        ClientOutcome& o = outcomes[i];
        o.client = c.id;
        o.ok = true;
        o.steps = r.steps;
        o.final_loss = r.log.empty() ? 0.0 : r.log.back().loss;
        o.peak_memory_mb = r.peak_memory_mb;
        o.log = std::move(r.log);
        uploads[i] = std::move(r.weights);
      } catch (const std::exception& e) {
        outcomes[i].client = c.id;
        outcomes[i].ok = false;
        outcomes[i].error = e.what();
        failures[i] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(config.workers, n);
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < n; i += workers) work(i);
        });
      }
      for (auto& th : pool) th.join();
    }

    std::vector<Weights> accepted;
    std::vector<double> p;
    for (std::size_t i = 0; i < n; ++i) {
      if (!outcomes[i].ok) {
        if (!config.drop_tolerant) std::rethrow_exception(failures[i]);
        continue;
      }
      rec.aggregated.push_back(rec.sampled[i]);
      accepted.push_back(std::move(*uploads[i]));
      p.push_back(clients[rec.sampled[i]].weight);
    }
    // With every client dropped the global model carries over unchanged.
    if (!accepted.empty()) result.weights = aggregate<float>(accepted, p);
    rec.clients = std::move(outcomes);
    if ((t + 1) % config.eval_every == 0 || t + 1 == config.rounds) {
      rec.eval = evaluate(graph, result.weights, test, clients, t + 1);
    }
    emit(std::move(rec));
  }
  return result;
}

std::vector<std::string> client_groups(const std::vector<ClientState>& clients) {
  std::vector<std::string> groups;
  for (const auto& c : clients) {
    if (std::find(groups.begin(), groups.end(), c.group) == groups.end()) groups.push_back(c.group);
  }
  return groups;
}

void write_metrics_header(std::ostream& out, const std::vector<std::string>& groups) {
  out << "round,global_acc,fairness,participants,dropped,mean_loss,peak_memory_mb";
  for (const auto& g : groups) out << ",acc_" << (g.empty() ? "all" : g);
  out << '\n';
}

void write_metrics_row(std::ostream& out, const RoundRecord& r, const std::vector<ClientState>& clients,
                       const std::vector<std::string>& groups) {
  double loss = 0, peak = 0;
  std::size_t ok = 0;
  for (const auto& c : r.clients) {
    if (!c.ok) continue;
    loss += c.final_loss;
    peak = std::max(peak, c.peak_memory_mb);
    ++ok;
  }
  const auto old = out.precision(8);
  out << r.round << ',';
  if (r.eval) out << r.eval->global_accuracy << ',' << r.eval->fairness;
  else out << ',';
  out << ',' << r.sampled.size() << ',' << (r.clients.size() - ok) << ',';
  if (ok) out << loss / static_cast<double>(ok);
  out << ',' << peak;
  for (const auto& g : groups) {
    out << ',';
    if (!r.eval) continue;
    double acc = 0;
    std::size_t members = 0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      if (clients[k].group != g) continue;
      acc += r.eval->client_accuracy[k];
      ++members;
    }
    if (members) out << acc / static_cast<double>(members);
  }
  out << '\n';
  out.precision(old);
}

}  // namespace fedepth
