#include "fedepth/data/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "fedepth/nn/errors.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {

std::string_view partition_family_name(PartitionFamily f) {
  switch (f) {
    case PartitionFamily::DirichletBalanced:
      return "dirichlet-balanced";
    case PartitionFamily::DirichletUnbalanced:
      return "dirichlet-unbalanced";
    case PartitionFamily::Pathological:
      break;
  }
  return "pathological";
}

PartitionFamily parse_partition_family(std::string_view name) {
  for (auto f : {PartitionFamily::DirichletBalanced, PartitionFamily::DirichletUnbalanced, PartitionFamily::Pathological}) {
    if (partition_family_name(f) == name) return f;
  }
  throw UsageError("unknown partition family '" + std::string(name) + "'");
}

namespace {

using ClassIndex = std::vector<std::vector<std::size_t>>;

// Indices per class, shuffled, after the stratified holdout.
ClassIndex split_by_class(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec,
                          std::mt19937_64& rng, std::vector<std::size_t>& holdout) {
  if (spec.clients < 1) throw UsageError("partition needs at least one client");
  if (!(spec.train_fraction > 0.0) || spec.train_fraction > 1.0) throw UsageError("train_fraction must lie in (0, 1]");
  ClassIndex by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw UsageError("label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto keep = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(idx.size())));
    holdout.insert(holdout.end(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end());
    idx.resize(keep);
  }
  std::sort(holdout.begin(), holdout.end());
  return by_class;
}

std::vector<Shard> make_shards(std::vector<std::vector<std::size_t>> assigned, std::span<const int> labels,
                               std::size_t classes) {
  std::vector<Shard> shards(assigned.size());
  for (std::size_t k = 0; k < assigned.size(); ++k) {
    shards[k].client = k;
    shards[k].indices = std::move(assigned[k]);
    std::sort(shards[k].indices.begin(), shards[k].indices.end());
    shards[k].histogram.assign(classes, 0);
    for (std::size_t i : shards[k].indices) ++shards[k].histogram[static_cast<std::size_t>(labels[i])];
  }
  return shards;
}

void rebalance(std::vector<std::vector<std::size_t>>& assigned, std::span<const int> labels, std::size_t classes) {
  const std::size_t k_total = assigned.size();
  std::size_t n = 0;
  for (const auto& a : assigned) n += a.size();
  std::vector<std::size_t> quota(k_total, n / k_total);
  for (std::size_t k = 0; k < n % k_total; ++k) ++quota[k];

  // Per client, per class index stacks.
  std::vector<ClassIndex> held(k_total, ClassIndex(classes));
  for (std::size_t k = 0; k < k_total; ++k) {
    for (std::size_t i : assigned[k]) held[k][static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::size_t donor = 0;
  for (std::size_t r = 0; r < k_total; ++r) {
    while (assigned[r].size() < quota[r]) {
      while (assigned[donor].size() <= quota[donor]) ++donor;
      auto& stacks = held[donor];
      std::size_t c = 0;
      for (std::size_t j = 1; j < classes; ++j) {
        if (stacks[j].size() > stacks[c].size()) c = j;
      }
      const std::size_t idx = stacks[c].back();
      stacks[c].pop_back();
      auto& from = assigned[donor];
      from.erase(std::find(from.begin(), from.end(), idx));
      assigned[r].push_back(idx);
    }
  }
}

}  // namespace

Partition partition_dirichlet(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec) {
  if (spec.family == PartitionFamily::Pathological) throw UsageError("not a Dirichlet partition spec");
  if (!(spec.lambda > 0.0)) throw UsageError("Dirichlet concentration must be positive");
  std::mt19937_64 rng(derive_seed(spec.seed, {0xd1}));
  Partition out;
  const ClassIndex by_class = split_by_class(labels, classes, spec, rng, out.holdout);
  std::size_t n = 0;
  for (const auto& idx : by_class) n += idx.size();
  const std::size_t k_total = spec.clients;
  const double cap = static_cast<double>(n) / static_cast<double>(k_total);
  const std::size_t min_size = std::min<std::size_t>(10, n / k_total);

  std::vector<std::vector<std::size_t>> assigned;
  std::gamma_distribution<double> gamma(spec.lambda, 1.0);
  for (int attempt = 0;; ++attempt) {
    assigned.assign(k_total, {});
    for (const auto& idx : by_class) {
      if (idx.empty()) continue;
      std::vector<double> p(k_total);
      for (auto& v : p) v = gamma(rng);
      double sum = 0;
      for (std::size_t k = 0; k < k_total; ++k) {
        if (static_cast<double>(assigned[k].size()) >= cap) p[k] = 0.0;
        sum += p[k];
      }
      if (!(sum > 0.0)) {
        // Every client is at capacity or the draw underflowed: spread evenly.
        std::fill(p.begin(), p.end(), 1.0);
        sum = static_cast<double>(k_total);
      }
      double acc = 0;
      std::size_t begin = 0;
      for (std::size_t k = 0; k < k_total; ++k) {
        acc += p[k] / sum;
        const std::size_t end =
            k + 1 == k_total ? idx.size() : std::min(idx.size(), static_cast<std::size_t>(acc * static_cast<double>(idx.size())));
        for (std::size_t i = begin; i < std::max(begin, end); ++i) assigned[k].push_back(idx[i]);
        begin = std::max(begin, end);
      }
    }
    std::size_t smallest = n;
    for (const auto& a : assigned) smallest = std::min(smallest, a.size());
    if (smallest >= min_size || attempt >= 1000) break;
  }
  if (spec.family == PartitionFamily::DirichletBalanced) rebalance(assigned, labels, classes);
  out.shards = make_shards(std::move(assigned), labels, classes);
  return out;
}

Partition partition_pathological(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec) {
  const std::size_t lam = spec.labels_per_client;
  const std::size_t k_total = spec.clients;
  if (lam < 1 || lam > classes) throw UsageError("labels per client must lie in [1, classes]");
  if (k_total * lam < classes) {
    throw UsageError("pathological partition: " + std::to_string(k_total) + " clients x " + std::to_string(lam) +
                     " labels cannot cover " + std::to_string(classes) + " classes");
  }
  std::mt19937_64 rng(derive_seed(spec.seed, {0xb2}));
  Partition out;
  const ClassIndex by_class = split_by_class(labels, classes, spec, rng, out.holdout);

  // Slot budget per class: shuffled order, the first (K*Lambda mod C) classes take one more.
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> remaining(classes, k_total * lam / classes);
  for (std::size_t i = 0; i < (k_total * lam) % classes; ++i) ++remaining[order[i]];

  // Each client takes the Lambda classes with the most remaining slots,
  // ties broken by a fresh random priority, which keeps the assignment feasible.
  std::vector<std::vector<std::size_t>> holders(classes);
  std::vector<std::size_t> priority(classes);
  for (std::size_t k = 0; k < k_total; ++k) {
    std::iota(priority.begin(), priority.end(), 0);
    std::shuffle(priority.begin(), priority.end(), rng);
    std::vector<std::size_t> ranked(priority);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return remaining[a] > remaining[b]; });
    for (std::size_t i = 0; i < lam; ++i) {
      --remaining[ranked[i]];
      holders[ranked[i]].push_back(k);
    }
  }

  std::vector<std::vector<std::size_t>> assigned(k_total);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& idx = by_class[c];
    const std::size_t h = holders[c].size();
    std::size_t begin = 0;
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t count = idx.size() / h + (i < idx.size() % h ? 1 : 0);
      auto& dst = assigned[holders[c][i]];
      dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(begin),
                 idx.begin() + static_cast<std::ptrdiff_t>(begin + count));
      begin += count;
    }
  }
  out.shards = make_shards(std::move(assigned), labels, classes);
  return out;
}

Partition partition(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec) {
  return spec.family == PartitionFamily::Pathological ? partition_pathological(labels, classes, spec)
                                                      : partition_dirichlet(labels, classes, spec);
}

nlohmann::json shards_to_json(const std::vector<Shard>& shards) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& s : shards) clients.push_back({{"client", s.client}, {"indices", s.indices}});
  return {{"version", 1}, {"clients", clients}};
}

std::vector<Shard> shards_from_json(const nlohmann::json& j, std::span<const int> labels, std::size_t classes) {
  try {
    if (j.value("version", 1) != 1) throw StructuralError("unsupported shard file version");
    std::vector<std::vector<std::size_t>> assigned;
    std::vector<bool> seen(labels.size(), false);
    for (const auto& c : j.at("clients")) {
      const auto client = c.at("client").get<std::size_t>();
      if (client != assigned.size()) throw StructuralError("shard clients must be listed in order");
      auto indices = c.at("indices").get<std::vector<std::size_t>>();
      for (std::size_t i : indices) {
        if (i >= labels.size()) throw StructuralError("shard index out of range");
        if (seen[i]) throw StructuralError("sample " + std::to_string(i) + " assigned twice");
        seen[i] = true;
      }
      assigned.push_back(std::move(indices));
    }
    return make_shards(std::move(assigned), labels, classes);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed shard file: ") + e.what());
  }
}

void write_label_histogram_csv(std::ostream& out, const std::vector<Shard>& shards) {
  out << "client,class,count\n";
  for (const auto& s : shards) {
    for (std::size_t c = 0; c < s.histogram.size(); ++c) {
      if (s.histogram[c] > 0) out << s.client << ',' << c << ',' << s.histogram[c] << '\n';
    }
  }
}

}  // namespace fedepth
