#include "fedepth/decomposition/plan.hpp"

#include <sstream>

#include "fedepth/nn/errors.hpp"

namespace fedepth {

void DecompositionPlan::validate() const {
  if (num_blocks == 0) throw StructuralError("plan covers no blocks");
  if (skipped_prefix >= num_blocks) throw StructuralError("plan skips every block");
  std::size_t next = skipped_prefix;
  for (const auto& g : groups) {
    if (g.first != next || g.last <= g.first) throw StructuralError("plan groups are not contiguous: " + to_string());
    next = g.last;
  }
  if (next != num_blocks) throw StructuralError("plan does not cover every block: " + to_string());
}

std::string DecompositionPlan::to_string() const {
  std::ostringstream out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (g) out << ',';
    out << '[';
    for (std::size_t j = groups[g].first; j < groups[g].last; ++j) out << (j > groups[g].first ? "," : "") << j + 1;
    out << ']';
  }
  return out.str();
}

DecompositionPlan decompose(std::size_t num_blocks, const GroupCost& cost, const MemoryBudget& budget) {
  if (num_blocks == 0) throw UsageError("nothing to decompose");
  DecompositionPlan plan;
  plan.num_blocks = num_blocks;
  while (plan.skipped_prefix < num_blocks && !fits(cost(plan.skipped_prefix, plan.skipped_prefix + 1), budget)) {
    ++plan.skipped_prefix;
  }
  if (plan.skipped_prefix == num_blocks) {
    throw BudgetError("budget of " + std::to_string(budget.capacity_mb) + " MB cannot train any block");
  }
  std::size_t start = plan.skipped_prefix;
  while (start < num_blocks) {
    if (!fits(cost(start, start + 1), budget)) {
      throw BudgetError("block " + std::to_string(start + 1) + " does not fit a budget of " +
                        std::to_string(budget.capacity_mb) + " MB");
    }
    std::size_t end = start + 1;
    while (end < num_blocks && fits(cost(start, end + 1), budget)) ++end;
    plan.groups.push_back({start, end});
    start = end;
  }
  return plan;
}

DecompositionPlan decompose(std::span<const double> block_costs_mb, const MemoryBudget& budget) {
  return decompose(
      block_costs_mb.size(),
      [&](std::size_t first, std::size_t last) {
        double sum = 0;
        for (std::size_t j = first; j < last; ++j) sum += block_costs_mb[j];
        return sum;
      },
      budget);
}

DecompositionPlan decompose(const BlockGraph& graph, const MemoryBudget& budget, std::size_t batch,
                            std::size_t bytes_per_element, HeadStrategy strategy) {
  const auto blocks = estimate_block_costs(graph, batch, bytes_per_element);
  return decompose(
      graph.num_blocks(),
      [&](std::size_t first, std::size_t last) {
        MemoryCost c = estimate_unit_overhead(graph, first, last, batch, bytes_per_element, strategy);
        for (std::size_t j = first; j < last; ++j) c += blocks[j];
        return c.total_mb();
      },
      budget);
}

DecompositionPlan preresnet20_reference_plan() {
  DecompositionPlan plan;
  plan.num_blocks = 9;
  plan.groups = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 6}, {6, 9}};
  return plan;
}

DecompositionPlan whole_model_plan(std::size_t num_blocks) {
  DecompositionPlan plan;
  plan.num_blocks = num_blocks;
  plan.groups = {{0, num_blocks}};
  return plan;
}

nlohmann::json plan_to_json(const DecompositionPlan& plan) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : plan.groups) {
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t j = g.first; j < g.last; ++j) members.push_back(j + 1);
    groups.push_back(members);
  }
  return {{"version", 1},
          {"num_blocks", plan.num_blocks},
          {"skipped_prefix", plan.skipped_prefix},
          {"groups", groups}};
}

DecompositionPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (j.value("version", 1) != 1) throw StructuralError("unsupported plan version");
    DecompositionPlan plan;
    plan.num_blocks = j.at("num_blocks").get<std::size_t>();
    plan.skipped_prefix = j.value("skipped_prefix", std::size_t{0});
    for (const auto& g : j.at("groups")) {
      const auto members = g.get<std::vector<std::size_t>>();
      if (members.empty() || members.front() == 0) throw StructuralError("plan group must list 1-based blocks");
      for (std::size_t i = 1; i < members.size(); ++i) {
        if (members[i] != members[i - 1] + 1) throw StructuralError("plan group is not contiguous");
      }
      plan.groups.push_back({members.front() - 1, members.back()});
    }
    plan.validate();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed plan: ") + e.what());
  }
}

}  // namespace fedepth
