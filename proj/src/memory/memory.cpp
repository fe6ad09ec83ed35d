#include "fedepth/memory/memory.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "fedepth/nn/errors.hpp"

namespace fedepth {

MemoryCost& MemoryCost::operator+=(const MemoryCost& o) {
  params_mb += o.params_mb;
  activations_mb += o.activations_mb;
  grads_mb += o.grads_mb;
  optimizer_mb += o.optimizer_mb;
  return *this;
}

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Fair:
      return "fair";
    case Scenario::Lack:
      return "lack";
    case Scenario::Surplus:
      return "surplus";
    case Scenario::Custom:
      break;
  }
  return "custom";
}

Scenario parse_scenario(std::string_view name) {
  for (Scenario s : {Scenario::Fair, Scenario::Lack, Scenario::Surplus, Scenario::Custom}) {
    if (scenario_name(s) == name) return s;
  }
  throw UsageError("unknown budget scenario '" + std::string(name) + "'");
}

MemoryBudget::MemoryBudget(double capacity, Scenario s, double r) : capacity_mb(capacity), scenario(s), ratio(r) {
  if (!(capacity > 0.0)) throw UsageError("memory budget must be positive");
}

bool fits(double total_mb, const MemoryBudget& budget) { return total_mb <= budget.capacity_mb; }
bool fits(const MemoryCost& cost, const MemoryBudget& budget) { return fits(cost.total_mb(), budget); }

MemoryCost estimate_layers_cost(const Block& layers, const TensorShape& input, std::size_t batch,
                                std::size_t bytes_per_element) {
  if (batch == 0) throw UsageError("batch size must be positive");
  const double scale = static_cast<double>(bytes_per_element) / kBytesPerMB;
  std::size_t params = 0, stored = 0, largest = 0;
  TensorShape current = input;
  for (const auto& l : layers.layers) {
    for (const auto& s : l.parameter_shapes()) params += s.numel();
    current = layer_output_shape(l, current);
    stored += current.numel();
    largest = std::max(largest, current.numel());
  }
  MemoryCost c;
  c.params_mb = static_cast<double>(params) * scale;
  c.activations_mb = static_cast<double>(stored * batch) * scale;
  c.grads_mb = static_cast<double>(params + largest * batch) * scale;
  c.optimizer_mb = c.params_mb;
  return c;
}

MemoryCost estimate_block_cost(const BlockGraph& graph, std::size_t j, std::size_t batch,
                               std::size_t bytes_per_element) {
  if (j >= graph.num_blocks()) throw UsageError("block index out of range");
  return estimate_layers_cost(graph.block(j), graph.block_input_shape(j), batch, bytes_per_element);
}

std::vector<MemoryCost> estimate_block_costs(const BlockGraph& graph, std::size_t batch,
                                             std::size_t bytes_per_element) {
  std::vector<MemoryCost> out;
  for (std::size_t j = 0; j < graph.num_blocks(); ++j) out.push_back(estimate_block_cost(graph, j, batch, bytes_per_element));
  return out;
}

MemoryCost estimate_unit_overhead(const BlockGraph& graph, std::size_t first, std::size_t last, std::size_t batch,
                                  std::size_t bytes_per_element, HeadStrategy strategy) {
  if (first >= last || last > graph.num_blocks()) throw UsageError("invalid block group");
  const double scale = static_cast<double>(bytes_per_element) / kBytesPerMB;
  MemoryCost c;
  c.activations_mb = static_cast<double>(graph.block_input_shape(first).numel() * batch) * scale;
  if (last < graph.num_blocks() && strategy == HeadStrategy::Auxiliary) {
    c += estimate_layers_cost(auxiliary_head(graph, last - 1), graph.block_output_shape(last - 1), batch,
                              bytes_per_element);
    return c;
  }
  if (!(graph.block_output_shape(last - 1) == graph.head_input_shape())) {
    c.activations_mb += static_cast<double>(graph.head_input_shape().numel() * batch) * scale;
  }
  c += estimate_layers_cost(graph.head(), graph.head_input_shape(), batch, bytes_per_element);
  return c;
}

MemoryCost estimate_training_unit_cost(const BlockGraph& graph, std::size_t first, std::size_t last,
                                       std::size_t batch, std::size_t bytes_per_element, HeadStrategy strategy) {
  MemoryCost c = estimate_unit_overhead(graph, first, last, batch, bytes_per_element, strategy);
  for (std::size_t j = first; j < last; ++j) c += estimate_block_cost(graph, j, batch, bytes_per_element);
  return c;
}

MemoryCost estimate_model_cost(const BlockGraph& graph, std::size_t batch, std::size_t bytes_per_element) {
  return estimate_training_unit_cost(graph, 0, graph.num_blocks(), batch, bytes_per_element);
}

void write_memcost_csv(std::ostream& out, const BlockGraph& graph, std::size_t batch,
                       std::size_t bytes_per_element) {
  auto row = [&](const std::string& name, const MemoryCost& c, double unit) {
    out << name << ',' << c.params_mb << ',' << c.activations_mb << ',' << c.grads_mb << ',' << c.optimizer_mb << ','
        << c.total_mb() << ',' << unit << '\n';
  };
  const auto old_precision = out.precision(10);
  out << "block,params_mb,activations_mb,grads_mb,optimizer_mb,total_mb,unit_total_mb\n";
  for (std::size_t j = 0; j < graph.num_blocks(); ++j) {
    row(std::to_string(j + 1), estimate_block_cost(graph, j, batch, bytes_per_element),
        estimate_training_unit_cost(graph, j, j + 1, batch, bytes_per_element).total_mb());
  }
  const MemoryCost model = estimate_model_cost(graph, batch, bytes_per_element);
  row("model", model, model.total_mb());
  out.precision(old_precision);
}

namespace {

// Block index ranges of the five reference groups.
constexpr std::array<std::pair<std::size_t, std::size_t>, 5> kGroups = {{{0, 3}, {3, 4}, {4, 6}, {6, 7}, {7, 9}}};

}  // namespace

ReferenceCalibration evaluate_reference(std::size_t batch, std::size_t bytes_per_element) {
  const BlockGraph graph = make_preresnet20(3, 10);
  const auto costs = estimate_block_costs(graph, batch, bytes_per_element);
  ReferenceCalibration r;
  r.batch = batch;
  for (std::size_t g = 0; g < kGroups.size(); ++g) {
    double sum = 0;
    for (std::size_t j = kGroups[g].first; j < kGroups[g].second; ++j) sum += costs[j].total_mb();
    r.group_mb[g] = sum / static_cast<double>(kGroups[g].second - kGroups[g].first);
  }
  for (std::size_t g = 1; g < kGroups.size(); ++g) {
    r.ratios[g - 1] = r.group_mb[g] / r.group_mb[0];
    r.reference_ratios[g - 1] = kReferenceGroupCostMB[g] / kReferenceGroupCostMB[0];
    r.max_relative_error = std::max(r.max_relative_error,
                                    std::abs(r.ratios[g - 1] - r.reference_ratios[g - 1]) / r.reference_ratios[g - 1]);
  }
  r.ordering_holds = true;
  for (std::size_t g = 0; g + 1 < kGroups.size(); ++g) {
    double smallest = costs[kGroups[g].first].total_mb();
    for (std::size_t j = kGroups[g].first; j < kGroups[g].second; ++j) smallest = std::min(smallest, costs[j].total_mb());
    for (std::size_t j = kGroups[g + 1].first; j < kGroups[g + 1].second; ++j) {
      if (!(costs[j].total_mb() < smallest)) r.ordering_holds = false;
    }
  }
  return r;
}

ReferenceCalibration calibrate_reference(std::size_t max_batch, std::size_t bytes_per_element) {
  ReferenceCalibration best = evaluate_reference(1, bytes_per_element);
  for (std::size_t b = 2; b <= max_batch; ++b) {
    ReferenceCalibration r = evaluate_reference(b, bytes_per_element);
    if (r.max_relative_error < best.max_relative_error) best = r;
  }
  return best;
}

}  // namespace fedepth
