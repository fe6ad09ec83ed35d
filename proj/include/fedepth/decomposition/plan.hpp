#pragma once
// Memory-adaptive grouping of blocks into sequential training units.
//
// Block indices are 0-based and ranges half-open in code; text output uses
// 1-based inclusive block numbers.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedepth/memory/memory.hpp"

namespace fedepth {

struct BlockRange {
  std::size_t first = 0;
  std::size_t last = 0;  // exclusive
  std::size_t size() const { return last - first; }
  friend bool operator==(const BlockRange&, const BlockRange&) = default;
};

struct DecompositionPlan {
  std::size_t num_blocks = 0;
  std::size_t skipped_prefix = 0;
  std::vector<BlockRange> groups;

  std::size_t num_groups() const { return groups.size(); }
  /// Throws StructuralError unless the groups are contiguous, ordered and
  /// cover exactly blocks skipped_prefix..num_blocks-1.
  void validate() const;
  /// "[1],[2,3],[4,5,6]" (1-based block numbers).
  std::string to_string() const;

  friend bool operator==(const DecompositionPlan&, const DecompositionPlan&) = default;
};

/// Cost in MB of training blocks [first, last) as one unit.
using GroupCost = std::function<double(std::size_t first, std::size_t last)>;

/// Greedy left-to-right packing: a group is extended while its joint cost
/// fits (inclusive). Leading blocks whose singleton cost exceeds the budget
/// are skipped. Throws BudgetError when every block is skipped or when a block
/// after the first trained one cannot fit on its own.
DecompositionPlan decompose(std::size_t num_blocks, const GroupCost& cost, const MemoryBudget& budget);

/// Additive costs: a group costs the sum of its members.
DecompositionPlan decompose(std::span<const double> block_costs_mb, const MemoryBudget& budget);

/// Groups priced with estimate_training_unit_cost.
DecompositionPlan decompose(const BlockGraph& graph, const MemoryBudget& budget, std::size_t batch,
                            std::size_t bytes_per_element = 4, HeadStrategy strategy = HeadStrategy::SkipConnection);

/// The 6-group plan for the 9-block reference ResNet at the 1/6-width budget:
/// [1],[2],[3],[4],[5,6],[7,8,9].
DecompositionPlan preresnet20_reference_plan();

/// Single group over all blocks.
DecompositionPlan whole_model_plan(std::size_t num_blocks);

nlohmann::json plan_to_json(const DecompositionPlan& plan);
/// Throws StructuralError on malformed input.
DecompositionPlan plan_from_json(const nlohmann::json& j);

}  // namespace fedepth
