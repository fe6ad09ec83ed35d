// fedepth: command-line driver for experiments and their artefacts.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "fedepth/analysis/similarity.hpp"
#include "fedepth/experiment/experiment.hpp"
#include "fedepth/kernels/kernels.hpp"
#include "fedepth/nn/serialize.hpp"
#include "fedepth/util/rng.hpp"

namespace fs = std::filesystem;
using namespace fedepth;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "fedepth-out";
};

ExperimentConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw IoError("cannot read config " + c.config);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
    }
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  if (c.seed) j["seed"] = *c.seed;
  return config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Keeps the header and the rows whose leading integer (CSV) or "round" field
// (JSON lines) is at most `last`.
std::string truncate_rows(const std::string& text, std::size_t last, bool json_lines) {
  std::istringstream in(text);
  std::string line, out;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t round;
    if (json_lines) {
      round = json::parse(line).at("round").get<std::size_t>();
    } else if (first) {
      out += line + '\n';
      first = false;
      continue;
    } else {
      round = std::stoul(line.substr(0, line.find(',')));
    }
    if (round <= last) out += line + '\n';
  }
  return out;
}

std::string plan_table(const Experiment& e) {
  std::ostringstream out;
  out << "# model blocks: " << e.graph.num_blocks() << ", parameters: " << e.graph.parameter_count() << '\n';
  out << "client,group,trainer,capacity_mb,skipped_prefix,groups,plan\n";
  for (std::size_t k = 0; k < e.clients.size(); ++k) {
    const auto& c = e.clients[k];
    out << c.id << ',' << c.group << ',' << trainer_kind_name(c.kind) << ',';
    if (c.budget_mb) out << std::setprecision(6) << *c.budget_mb;
    else out << "inf";
    out << ',' << c.plan.skipped_prefix << ',' << c.plan.num_groups() << ",\"" << c.plan.to_string() << "\"\n";
  }
  return out.str();
}

int cmd_run(const Common& common, std::optional<std::size_t> rounds, bool resume, std::optional<std::size_t> workers) {
  ExperimentConfig cfg = resolve(common);
  if (rounds) {
    if (*rounds == 0) throw ConfigError("federation.rounds", "need at least one round");
    cfg.federation.rounds = *rounds;
  }
  if (workers) cfg.federation.workers = std::max<std::size_t>(1, *workers);
  const fs::path out = common.out_dir;
  fs::create_directories(out / "checkpoints");
  const Experiment e = build_experiment(cfg);

  std::size_t first_round = 0;
  Weights start = e.initial;
  if (resume) {
    const fs::path state_path = out / "state.json";
    if (!fs::exists(state_path)) throw IoError("nothing to resume: " + state_path.string() + " does not exist");
    const json state = json::parse(read_text(state_path));
    if (state.at("config") != config_to_json(cfg)) {
      throw ConfigError("<root>", "config differs from the run being resumed in " + out.string());
    }
    first_round = state.at("round").get<std::size_t>();
    if (first_round >= cfg.federation.rounds) {
      std::cout << "run already complete (" << first_round << " rounds)\n";
      return 0;
    }
    start = load_checkpoint<float>(out / state.at("checkpoint").get<std::string>());
    write_text(out / "metrics.csv", truncate_rows(read_text(out / "metrics.csv"), first_round, false));
    write_text(out / "train_log.jsonl", truncate_rows(read_text(out / "train_log.jsonl"), first_round, true));
  } else {
    write_text(out / "config.json", config_to_json(cfg).dump(2) + '\n');
    write_text(out / "plan.txt", plan_table(e));
    std::ostringstream mem, shards, hist;
    write_memcost_csv(mem, e.graph, cfg.local.batch_size);
    write_text(out / "memcost.csv", mem.str());
    write_text(out / "shards.json", shards_to_json(e.partition.shards).dump() + '\n');
    write_label_histogram_csv(hist, e.partition.shards);
    write_text(out / "label_histogram.csv", hist.str());
    std::ostringstream header;
    write_metrics_header(header, client_groups(e.clients));
    write_text(out / "metrics.csv", header.str());
    write_text(out / "train_log.jsonl", "");
  }

  const auto groups = client_groups(e.clients);
  std::ofstream metrics(out / "metrics.csv", std::ios::app);
  std::ofstream log(out / "train_log.jsonl", std::ios::app);
  if (!metrics || !log) throw IoError("cannot append to outputs in " + out.string());
  auto checkpoint = [&](std::size_t round, const Weights& w) {
    char name[32];
    std::snprintf(name, sizeof name, "round_%04zu.bin", round);
    const fs::path rel = fs::path("checkpoints") / name;
    save_checkpoint(out / rel, w);
    metrics.flush();
    log.flush();
    json state{{"version", 1}, {"round", round}, {"checkpoint", rel.string()}, {"config", config_to_json(cfg)}};
    write_text(out / "state.json.tmp", state.dump(2) + '\n');
    fs::rename(out / "state.json.tmp", out / "state.json");
  };
  RunHooks hooks;
  hooks.on_record = [&](const RoundRecord& r, const Weights& w) {
    write_metrics_row(metrics, r, e.clients, groups);
    for (const auto& c : r.clients) {
      for (const auto& rec : c.log) log << train_record_json(rec, r.round, c.client) << '\n';
      if (!c.ok) std::cerr << "round " << r.round << ": dropped client " << c.client << ": " << c.error << '\n';
    }
    if (r.eval) {
      std::cout << "round " << std::setw(4) << r.round << "  acc " << std::fixed << std::setprecision(4)
                << r.eval->global_accuracy << "  fairness " << r.eval->fairness << std::defaultfloat << '\n';
    }
    const bool periodic = cfg.checkpoint_every > 0 && r.round % cfg.checkpoint_every == 0;
    if (r.round > 0 && (periodic || r.round == cfg.federation.rounds)) checkpoint(r.round, w);
  };
  const RunResult result = run_federation(e.graph, e.config.federation, e.clients, cfg.local, start, e.data.test,
                                          first_round, hooks);
  save_checkpoint(out / "final.bin", result.weights);
  const auto& last = result.records.back();
  std::cout << "done: " << cfg.federation.rounds << " rounds, final accuracy " << last.eval->global_accuracy
            << ", fairness " << last.eval->fairness << ", kernels " << kernels::isa_name(kernels::detect_isa())
            << "\noutputs in " << out.string() << '\n';
  return 0;
}

int cmd_plan(const Common& common, bool write) {
  const Experiment e = build_experiment(resolve(common));
  const std::string table = plan_table(e);
  std::cout << table;
  if (write) {
    fs::create_directories(common.out_dir);
    write_text(fs::path(common.out_dir) / "plan.txt", table);
  }
  return 0;
}

int cmd_memcost(const Common& common, std::optional<std::size_t> batch) {
  const ExperimentConfig cfg = resolve(common);
  GaussianMixtureOptions m = cfg.mixture;
  TensorShape input{m.dims};
  std::size_t classes = m.classes;
  if (cfg.dataset == "small-image-set") {
    input = TensorShape{3, 32, 32};
    classes = 10;
  }
  BlockGraph g = build_model(cfg.model, input, classes);
  if (cfg.model.width_ratio != 1.0) g = width_scale(g, cfg.model.width_ratio);
  std::ostringstream csv;
  write_memcost_csv(csv, g, batch.value_or(cfg.local.batch_size));
  std::cout << csv.str();
  fs::create_directories(common.out_dir);
  write_text(fs::path(common.out_dir) / "memcost.csv", csv.str());
  return 0;
}

int cmd_partition(const Common& common) {
  const ExperimentConfig cfg = resolve(common);
  GaussianMixtureOptions mixture = cfg.mixture;
  mixture.seed = derive_seed(cfg.seed, {0xda7a});
  const DatasetSplit data = load_dataset(cfg.dataset, mixture, cfg.images);
  PartitionSpec ps = cfg.partition;
  ps.clients = cfg.federation.clients;
  ps.seed = derive_seed(cfg.seed, {0x9a27});
  const Partition p = partition(data.train.y, data.train.classes, ps);
  fs::create_directories(common.out_dir);
  write_text(fs::path(common.out_dir) / "shards.json", shards_to_json(p.shards).dump() + '\n');
  std::ostringstream hist;
  write_label_histogram_csv(hist, p.shards);
  write_text(fs::path(common.out_dir) / "label_histogram.csv", hist.str());
  double mean = 0;
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& s : p.shards) {
    mean += static_cast<double>(s.indices.size());
    lo = std::min(lo, s.indices.size());
    hi = std::max(hi, s.indices.size());
  }
  mean /= static_cast<double>(p.shards.size());
  std::cout << p.shards.size() << " shards (" << partition_family_name(ps.family) << "), sizes mean " << mean
            << " min " << lo << " max " << hi << ", holdout " << p.holdout.size() << "\nwrote "
            << (fs::path(common.out_dir) / "shards.json").string() << '\n';
  return 0;
}

int cmd_similarity(const Common& common, const std::string& a, const std::string& b) {
  const ExperimentConfig cfg = resolve(common);
  const Experiment e = build_experiment(cfg);
  const Weights wa = load_checkpoint<float>(a), wb = load_checkpoint<float>(b);
  const std::size_t n = std::min(cfg.probe_size, e.data.test.size());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  const auto sims = compare_blocks(e.graph, wa, wb, gather_rows(e.data.test.x, rows));
  std::ostringstream csv;
  write_similarity_csv(csv, sims);
  std::cout << csv.str();
  fs::create_directories(common.out_dir);
  write_text(fs::path(common.out_dir) / "similarity.csv", csv.str());
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool out_dir = true) {
  sub->add_option("--config", c.config, "experiment config (JSON)");
  sub->add_option("--override", c.overrides, "key=value, dotted keys, repeatable")->take_all();
  sub->add_option("--seed", c.seed, "master seed");
  if (out_dir) sub->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-adaptive depth-wise federated learning simulator"};
  app.require_subcommand(1);
  Common common;
  std::optional<std::size_t> rounds, batch, workers;
  bool resume = false, write_plan = false;
  std::string ckpt_a, ckpt_b;

  auto* run = app.add_subcommand("run", "run a federated experiment");
  add_common(run, common);
  run->add_option("--rounds", rounds, "override federation.rounds");
  run->add_option("--workers", workers, "parallel client updates per round");
  run->add_flag("--resume", resume, "continue from the last checkpoint in --out-dir");

  auto* plan = app.add_subcommand("plan", "print every client's decomposition plan");
  add_common(plan, common);
  plan->add_flag("--write", write_plan, "also write plan.txt to --out-dir");

  auto* mem = app.add_subcommand("memcost", "per-block memory cost table");
  add_common(mem, common);
  mem->add_option("--batch", batch, "batch size (default local.batch_size)");

  auto* part = app.add_subcommand("partition", "emit client shards");
  add_common(part, common);

  auto* sim = app.add_subcommand("similarity", "per-block CKA/CCA between two checkpoints");
  add_common(sim, common);
  sim->add_option("--a", ckpt_a, "first checkpoint")->required()->check(CLI::ExistingFile);
  sim->add_option("--b", ckpt_b, "second checkpoint")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(common, rounds, resume, workers);
    if (plan->parsed()) return cmd_plan(common, write_plan);
    if (mem->parsed()) return cmd_memcost(common, batch);
    if (part->parsed()) return cmd_partition(common);
    if (sim->parsed()) return cmd_similarity(common, ckpt_a, ckpt_b);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
