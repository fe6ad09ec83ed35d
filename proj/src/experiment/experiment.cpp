#include "fedepth/experiment/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "fedepth/nn/serialize.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were read so that leftovers
// can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Section() = default;

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }
  bool has(const std::string& name) {
    seen_.insert(name);
    return j_.contains(name) && !j_.at(name).is_null();
  }

  template <class V>
  void read(const std::string& name, V& out) {
    if (!has(name)) return;
    const json& v = j_.at(name);
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError(key(name), "expected true or false");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<V>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<V> && v.get<std::int64_t>() < 0)) {
          throw ConfigError(key(name), "expected a non-negative integer");
        }
        out = v.get<V>();
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError(key(name), "expected a number");
        out = v.get<V>();
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError(key(name), "expected a string");
        out = v.get<std::string>();
      } else {
        out = v.get<V>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(key(name), e.what());
    }
  }

  template <class V>
  void read(const std::string& name, std::optional<V>& out) {
    if (!has(name)) return;
    V v{};
    read(name, v);
    out = v;
  }

  // Parses a named enum through `parse`, mapping errors to ConfigError.
  template <class E, class P>
  void read_enum(const std::string& name, E& out, P parse) {
    std::string s;
    read(name, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(key(name), e.what());
    }
  }

  Section child(const std::string& name) {
    seen_.insert(name);
    static const json empty = json::object();
    return Section(j_.contains(name) ? j_.at(name) : empty, key(name));
  }

  const json& raw(const std::string& name) {
    seen_.insert(name);
    return j_.at(name);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(key(k), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  int version = 1;
  root.read("version", version);
  require(version == 1, "version", "unsupported config version " + std::to_string(version));
  root.read("seed", c.seed);

  {
    Section d = root.child("dataset");
    d.read("name", c.dataset);
    require(c.dataset == "synthetic-gaussian-mixture" || c.dataset == "small-image-set", d.key("name"),
            "unknown dataset '" + c.dataset + "' (synthetic-gaussian-mixture, small-image-set)");
    d.read("classes", c.mixture.classes);
    d.read("dims", c.mixture.dims);
    d.read("clusters_per_class", c.mixture.clusters_per_class);
    d.read("separation", c.mixture.separation);
    d.read("train_per_class", c.mixture.train_per_class);
    d.read("test_per_class", c.mixture.test_per_class);
    std::string path;
    d.read("path", path);
    c.images.directory = path;
    d.read("max_train", c.images.max_train);
    d.read("max_test", c.images.max_test);
    require(c.mixture.classes >= 2, d.key("classes"), "need at least two classes");
    require(c.mixture.dims >= 1, d.key("dims"), "must be positive");
    require(c.mixture.clusters_per_class >= 1, d.key("clusters_per_class"), "must be positive");
    require(c.mixture.train_per_class >= 1 && c.mixture.test_per_class >= 1, d.key("train_per_class"),
            "sample counts must be positive");
    require(c.dataset != "small-image-set" || !path.empty(), d.key("path"),
            "small-image-set needs dataset.path pointing at the extracted cifar-10-batches-bin directory");
    d.finish();
  }
  {
    Section m = root.child("model");
    m.read("arch", c.model.arch);
    require(c.model.arch == "mlp" || c.model.arch == "preresnet20" || c.model.arch == "spec", m.key("arch"),
            "unknown architecture '" + c.model.arch + "' (mlp, preresnet20, spec)");
    if (m.has("hidden")) {
      const json& h = m.raw("hidden");
      require(h.is_array() && !h.empty(), m.key("hidden"), "expected a non-empty list of widths");
      c.model.hidden.clear();
      for (const auto& v : h) {
        require(v.is_number_integer() && v.get<std::int64_t>() > 0, m.key("hidden"), "widths must be positive integers");
        c.model.hidden.push_back(v.get<std::size_t>());
      }
    }
    m.read("base_width", c.model.base_width);
    m.read("norm_groups", c.model.norm_groups);
    std::string spec;
    m.read("spec", spec);
    c.model.spec = spec;
    m.read("width_ratio", c.model.width_ratio);
    require(c.model.width_ratio > 0 && c.model.width_ratio <= 1, m.key("width_ratio"), "must be in (0, 1]");
    require(c.model.arch != "spec" || !spec.empty(), m.key("spec"), "arch 'spec' needs a model-spec file");
    m.finish();
  }
  {
    Section p = root.child("partition");
    p.read_enum("family", c.partition.family, parse_partition_family);
    p.read("lambda", c.partition.lambda);
    p.read("labels_per_client", c.partition.labels_per_client);
    p.read("train_fraction", c.partition.train_fraction);
    require(c.partition.lambda > 0, p.key("lambda"), "must be positive");
    require(c.partition.train_fraction > 0 && c.partition.train_fraction <= 1, p.key("train_fraction"),
            "must be in (0, 1]");
    p.finish();
  }
  {
    Section f = root.child("federation");
    auto& fc = c.federation;
    f.read("clients", fc.clients);
    f.read("participation", fc.participation);
    f.read("rounds", fc.rounds);
    f.read("eval_every", fc.eval_every);
    f.read("drop_tolerant", fc.drop_tolerant);
    f.read("workers", fc.workers);
    f.read("cosine_rounds", fc.cosine_rounds);
    require(fc.clients >= 1, f.key("clients"), "need at least one client");
    require(fc.participation > 0 && fc.participation <= 1, f.key("participation"), "must be in (0, 1]");
    require(fc.rounds >= 1, f.key("rounds"), "need at least one round");
    require(fc.eval_every >= 1, f.key("eval_every"), "must be positive");
    require(fc.workers >= 1, f.key("workers"), "must be positive");
    f.finish();
  }
  {
    Section l = root.child("local");
    auto& lc = c.local;
    l.read("epochs", lc.epochs);
    l.read("batch_size", lc.batch_size);
    l.read("lr", lc.sgd.lr);
    l.read("momentum", lc.sgd.momentum);
    l.read("weight_decay", lc.sgd.weight_decay);
    l.read("buffer_activations", lc.buffer_activations);
    l.read_enum("head_strategy", lc.head_strategy, parse_head_strategy);
    require(lc.epochs >= 1, l.key("epochs"), "must be positive");
    require(lc.batch_size >= 1, l.key("batch_size"), "must be positive");
    require(lc.sgd.lr > 0, l.key("lr"), "must be positive");
    require(lc.sgd.momentum >= 0 && lc.sgd.momentum < 1, l.key("momentum"), "must be in [0, 1)");
    require(lc.sgd.weight_decay >= 0, l.key("weight_decay"), "must be non-negative");
    l.finish();
  }
  if (root.has("budgets")) {
    const json& b = root.raw("budgets");
    require(b.is_array(), "budgets", "expected a list of budget groups");
    for (std::size_t i = 0; i < b.size(); ++i) {
      Section g(b[i], "budgets[" + std::to_string(i) + "]");
      BudgetGroupConfig bg;
      bg.name = "g" + std::to_string(i + 1);
      g.read("name", bg.name);
      g.read("capacity_mb", bg.capacity_mb);
      g.read("width_ratio", bg.width_ratio);
      g.read("model_multiple", bg.model_multiple);
      g.read("target_groups", bg.target_groups);
      g.read_enum("scenario", bg.scenario, parse_scenario);
      g.read_enum("trainer", bg.trainer, parse_trainer_kind);
      g.read("students", bg.students);
      const int given = bg.capacity_mb.has_value() + bg.width_ratio.has_value() + bg.model_multiple.has_value() +
                        bg.target_groups.has_value();
      require(given <= 1, g.key("capacity_mb"),
              "give at most one of capacity_mb, width_ratio, model_multiple, target_groups");
      require(!bg.model_multiple || *bg.model_multiple > 0, g.key("model_multiple"), "must be positive");
      require(!bg.capacity_mb || *bg.capacity_mb > 0, g.key("capacity_mb"), "must be positive");
      require(!bg.width_ratio || (*bg.width_ratio > 0 && *bg.width_ratio <= 1), g.key("width_ratio"),
              "must be in (0, 1]");
      require(!bg.target_groups || *bg.target_groups >= 1, g.key("target_groups"), "must be positive");
      require(bg.students >= 1, g.key("students"), "must be positive");
      g.finish();
      c.budgets.push_back(std::move(bg));
    }
  }
  {
    Section s = root.child("skip");
    s.read("fraction", c.skip_fraction);
    s.read("blocks", c.skip_blocks);
    require(c.skip_fraction >= 0 && c.skip_fraction <= 1, s.key("fraction"), "must be in [0, 1]");
    require(c.skip_blocks >= 1, s.key("blocks"), "must be positive");
    s.finish();
  }
  {
    Section m = root.child("mkd");
    m.read("distillation_weight", c.mkd.distillation_weight);
    m.read("perturbation", c.mkd.perturbation);
    m.read("mixed", c.mkd_mixed);
    m.read_enum("init", c.mkd.init, [](std::string_view s) {
      if (s == "global") return StudentInit::Global;
      if (s == "perturbed") return StudentInit::Perturbed;
      if (s == "fresh") return StudentInit::Fresh;
      throw UsageError("unknown student init '" + std::string(s) + "' (global, perturbed, fresh)");
    });
    require(c.mkd.distillation_weight >= 0, m.key("distillation_weight"), "must be non-negative");
    m.finish();
  }
  root.read("checkpoint_every", c.checkpoint_every);
  root.read("probe_size", c.probe_size);
  require(c.probe_size >= 2, "probe_size", "need at least two probe samples");
  root.finish();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = 1;
  j["seed"] = c.seed;
  j["dataset"] = {{"name", c.dataset},
                  {"classes", c.mixture.classes},
                  {"dims", c.mixture.dims},
                  {"clusters_per_class", c.mixture.clusters_per_class},
                  {"separation", c.mixture.separation},
                  {"train_per_class", c.mixture.train_per_class},
                  {"test_per_class", c.mixture.test_per_class},
                  {"path", c.images.directory.string()},
                  {"max_train", c.images.max_train},
                  {"max_test", c.images.max_test}};
  j["model"] = {{"arch", c.model.arch},
                {"hidden", c.model.hidden},
                {"base_width", c.model.base_width},
                {"norm_groups", c.model.norm_groups},
                {"spec", c.model.spec.string()},
                {"width_ratio", c.model.width_ratio}};
  j["partition"] = {{"family", partition_family_name(c.partition.family)},
                    {"lambda", c.partition.lambda},
                    {"labels_per_client", c.partition.labels_per_client},
                    {"train_fraction", c.partition.train_fraction}};
  const auto& f = c.federation;
  j["federation"] = {{"clients", f.clients},     {"participation", f.participation},
                     {"rounds", f.rounds},       {"eval_every", f.eval_every},
                     {"drop_tolerant", f.drop_tolerant}, {"workers", f.workers},
                     {"cosine_rounds", f.cosine_rounds}};
  const auto& l = c.local;
  j["local"] = {{"epochs", l.epochs},
                {"batch_size", l.batch_size},
                {"lr", l.sgd.lr},
                {"momentum", l.sgd.momentum},
                {"weight_decay", l.sgd.weight_decay},
                {"buffer_activations", l.buffer_activations},
                {"head_strategy", head_strategy_name(l.head_strategy)}};
  j["budgets"] = json::array();
  for (const auto& b : c.budgets) {
    json g{{"name", b.name},
           {"scenario", scenario_name(b.scenario)},
           {"trainer", trainer_kind_name(b.trainer)},
           {"students", b.students}};
    if (b.capacity_mb) g["capacity_mb"] = *b.capacity_mb;
    if (b.width_ratio) g["width_ratio"] = *b.width_ratio;
    if (b.model_multiple) g["model_multiple"] = *b.model_multiple;
    if (b.target_groups) g["target_groups"] = *b.target_groups;
    j["budgets"].push_back(g);
  }
  j["skip"] = {{"fraction", c.skip_fraction}, {"blocks", c.skip_blocks}};
  const char* init = c.mkd.init == StudentInit::Global ? "global" : c.mkd.init == StudentInit::Fresh ? "fresh" : "perturbed";
  j["mkd"] = {{"distillation_weight", c.mkd.distillation_weight}, {"perturbation", c.mkd.perturbation}, {"init", init},
               {"mixed", c.mkd_mixed}};
  j["checkpoint_every"] = c.checkpoint_every;
  j["probe_size"] = c.probe_size;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError(key, "'" + part + "' is not inside an object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

BlockGraph build_model(const ModelConfig& m, const TensorShape& input, std::size_t classes) {
  BlockGraph g;
  if (m.arch == "mlp") {
    if (input.rank() != 1) throw ConfigError("model.arch", "mlp needs flat inputs, dataset gives " + input.to_string());
    g = make_mlp(input[0], m.hidden, classes);
  } else if (m.arch == "preresnet20") {
    if (input.rank() != 3 || input[1] != input[2]) {
      throw ConfigError("model.arch", "preresnet20 needs square images, dataset gives " + input.to_string());
    }
    g = make_preresnet20(input[0], classes, input[1], m.base_width, m.norm_groups);
  } else {
    g = load_graph(m.spec);
    if (!(g.input_shape() == input) || g.num_classes() != classes) {
      throw ConfigError("model.spec", "model does not match the dataset's input shape or class count");
    }
  }
  return g;
}

std::optional<double> capacity_for_groups(const BlockGraph& graph, std::size_t groups, std::size_t batch,
                                          HeadStrategy strategy) {
  std::vector<double> candidates;
  for (std::size_t a = 0; a < graph.num_blocks(); ++a) {
    for (std::size_t b = a + 1; b <= graph.num_blocks(); ++b) {
      candidates.push_back(estimate_training_unit_cost(graph, a, b, batch, sizeof(float), strategy).total_mb());
    }
  }
  std::sort(candidates.begin(), candidates.end());
  for (double cap : candidates) {
    try {
      const auto plan = decompose(graph, MemoryBudget(cap), batch, sizeof(float), strategy);
      if (plan.skipped_prefix == 0 && plan.num_groups() == groups) return cap;
    } catch (const BudgetError&) {
    }
  }
  return std::nullopt;
}

DecompositionPlan decompose_skipping(const BlockGraph& graph, std::size_t skip, const MemoryBudget& budget,
                                     std::size_t batch, HeadStrategy strategy) {
  if (skip >= graph.num_blocks()) throw UsageError("cannot skip every block");
  return decompose(
      graph.num_blocks(),
      [&](std::size_t a, std::size_t b) {
        if (a < skip) return std::numeric_limits<double>::infinity();
        return estimate_training_unit_cost(graph, a, b, batch, sizeof(float), strategy).total_mb();
      },
      budget);
}

Experiment build_experiment(const ExperimentConfig& config) {
  Experiment e;
  e.config = config;
  e.config.federation.seed = derive_seed(config.seed, {0xfed});
  const auto& c = e.config;
  GaussianMixtureOptions mixture = c.mixture;
  mixture.seed = derive_seed(c.seed, {0xda7a});
  e.data = load_dataset(c.dataset, mixture, c.images);

  e.full_graph = build_model(c.model, e.data.train.sample_shape(), e.data.train.classes);
  e.graph = c.model.width_ratio == 1.0 ? e.full_graph : width_scale(e.full_graph, c.model.width_ratio);
  e.initial = init_weights<float>(e.graph, derive_seed(c.seed, {0x1417}));

  PartitionSpec ps = c.partition;
  ps.clients = c.federation.clients;
  ps.seed = derive_seed(c.seed, {0x9a27});
  e.partition = partition(e.data.train.y, e.data.train.classes, ps);

  // Clients forced to skip leading blocks: a seeded subset of the given share.
  std::vector<bool> skipping(ps.clients, false);
  if (c.skip_fraction > 0) {
    std::vector<std::size_t> ids(ps.clients);
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng(derive_seed(c.seed, {0x5c1b}));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(c.skip_fraction * static_cast<double>(ps.clients)));
    for (std::size_t i = 0; i < n; ++i) skipping[ids[i]] = true;
  }

  const std::size_t batch = c.local.batch_size;
  const HeadStrategy strategy = c.local.head_strategy;
  for (std::size_t k = 0; k < ps.clients; ++k) {
    ClientState cs;
    cs.id = k;
    cs.shard = subset(e.data.train, e.partition.shards[k].indices);
    if (cs.shard.size() == 0) throw ConfigError("federation.clients", "client " + std::to_string(k) + " received no samples");
    if (c.budgets.empty()) {
      cs.kind = TrainerKind::FeDepth;
      cs.plan = whole_model_plan(e.graph.num_blocks());
      cs.group = "all";
      e.budgets.emplace_back(std::numeric_limits<double>::infinity());
    } else {
      const std::size_t gi = k % c.budgets.size();
      const BudgetGroupConfig& bg = c.budgets[gi];
      const std::string key = "budgets[" + std::to_string(gi) + "]";
      double capacity = std::numeric_limits<double>::infinity();
      double ratio = 1.0;
      if (bg.capacity_mb) {
        capacity = *bg.capacity_mb;
      } else if (bg.width_ratio) {
        ratio = *bg.width_ratio;
        capacity = estimate_model_cost(width_scale(e.full_graph, ratio), batch, sizeof(float)).total_mb();
      } else if (bg.model_multiple) {
        ratio = *bg.model_multiple;
        capacity = ratio * estimate_model_cost(e.graph, batch, sizeof(float)).total_mb();
      } else if (bg.target_groups) {
        auto cap = capacity_for_groups(e.graph, *bg.target_groups, batch, strategy);
        if (!cap) {
          throw ConfigError(key + ".target_groups",
                            "no budget splits this model into exactly " + std::to_string(*bg.target_groups) + " groups");
        }
        capacity = *cap;
      }
      const MemoryBudget budget(capacity, bg.scenario, ratio);
      e.budgets.push_back(budget);
      cs.group = bg.name;
      cs.kind = bg.trainer;
      if (std::isfinite(capacity)) cs.budget_mb = capacity;
      try {
        switch (bg.trainer) {
          case TrainerKind::FeDepth:
          case TrainerKind::FeDepthPartial:
            cs.plan = decompose(e.graph, budget, batch, sizeof(float), strategy);
            if (cs.plan.skipped_prefix > 0) cs.kind = TrainerKind::FeDepthPartial;
            break;
          case TrainerKind::Mkd:
            cs.plan = whole_model_plan(e.graph.num_blocks());
            cs.mkd = c.mkd;
            cs.mkd.students = bg.students;
            cs.mkd.upload = 0;
            if (c.mkd_mixed) {
              // Student 0 (uploaded) trains plainly; the others depth-wise on
              // an even share of the budget.
              cs.plan = decompose(e.graph, MemoryBudget(capacity / static_cast<double>(bg.students)), batch,
                                  sizeof(float), strategy);
              cs.mkd.depthwise.assign(bg.students, true);
              cs.mkd.depthwise[0] = false;
            }
            break;
          case TrainerKind::Baseline: cs.plan = whole_model_plan(e.graph.num_blocks()); break;
        }
      } catch (const BudgetError& err) {
        throw ConfigError(key, std::string("budget too small for this model: ") + err.what());
      }
    }
    if (skipping[k] && cs.kind != TrainerKind::Baseline) {
      if (cs.kind == TrainerKind::Mkd) throw ConfigError("skip.fraction", "distillation clients cannot skip blocks");
      try {
        cs.plan = decompose_skipping(e.graph, std::max(c.skip_blocks, cs.plan.skipped_prefix), e.budgets.back(), batch,
                                     strategy);
      } catch (const std::exception& err) {
        throw ConfigError("skip.blocks", err.what());
      }
      cs.kind = TrainerKind::FeDepthPartial;
    }
    e.clients.push_back(std::move(cs));
  }
  assign_sample_weights(e.clients);
  return e;
}

}  // namespace fedepth
