#pragma once
// Training-memory accounting.
//
// Rule: every layer output is stored once per batch; gradients are one copy
// of the parameters plus the largest single layer output of the block (one
// activation gradient in flight); momentum is one more parameter copy. A
// training unit (a contiguous block group) additionally pays for its buffered
// input activation, the adapter output feeding the head, and the head itself.
// Unit cost is therefore exactly the sum of its block costs plus that
// overhead.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "fedepth/nn/graph.hpp"

namespace fedepth {

inline constexpr double kBytesPerMB = 1024.0 * 1024.0;

struct MemoryCost {
  double params_mb = 0;
  double activations_mb = 0;
  double grads_mb = 0;
  double optimizer_mb = 0;

  double total_mb() const { return params_mb + activations_mb + grads_mb + optimizer_mb; }
  MemoryCost& operator+=(const MemoryCost& o);
  friend MemoryCost operator+(MemoryCost a, const MemoryCost& b) { return a += b; }
};

enum class Scenario { Fair, Lack, Surplus, Custom };
std::string_view scenario_name(Scenario s);
Scenario parse_scenario(std::string_view name);

struct MemoryBudget {
  double capacity_mb = 0;
  Scenario scenario = Scenario::Custom;
  double ratio = 1.0;  // width-equivalent ratio, for reporting

  /// Throws UsageError unless capacity_mb > 0.
  MemoryBudget(double capacity, Scenario s = Scenario::Custom, double r = 1.0);
};

bool fits(double total_mb, const MemoryBudget& budget);
bool fits(const MemoryCost& cost, const MemoryBudget& budget);

/// Cost of training a standalone layer list on inputs of the given per-sample shape.
MemoryCost estimate_layers_cost(const Block& layers, const TensorShape& input, std::size_t batch,
                                std::size_t bytes_per_element = 4);

MemoryCost estimate_block_cost(const BlockGraph& graph, std::size_t j, std::size_t batch,
                               std::size_t bytes_per_element = 4);
std::vector<MemoryCost> estimate_block_costs(const BlockGraph& graph, std::size_t batch,
                                             std::size_t bytes_per_element = 4);

/// Everything a unit over blocks [first, last) pays besides its blocks.
MemoryCost estimate_unit_overhead(const BlockGraph& graph, std::size_t first, std::size_t last, std::size_t batch,
                                  std::size_t bytes_per_element = 4,
                                  HeadStrategy strategy = HeadStrategy::SkipConnection);

/// Cost of training blocks [first, last) jointly with the head.
MemoryCost estimate_training_unit_cost(const BlockGraph& graph, std::size_t first, std::size_t last,
                                       std::size_t batch, std::size_t bytes_per_element = 4,
                                       HeadStrategy strategy = HeadStrategy::SkipConnection);

/// Whole-model training cost (the unit covering every block).
MemoryCost estimate_model_cost(const BlockGraph& graph, std::size_t batch, std::size_t bytes_per_element = 4);

/// CSV: block,params_mb,activations_mb,grads_mb,optimizer_mb,total_mb,unit_total_mb
/// with a final "model" row for the whole network.
void write_memcost_csv(std::ostream& out, const BlockGraph& graph, std::size_t batch,
                       std::size_t bytes_per_element = 4);

// Reference per-block costs (MB) of the 9-block pre-activation ResNet-20 at
// full width, grouped as B1-3, B4, B5-6, B7, B8-9.
inline constexpr std::array<double, 5> kReferenceGroupCostMB = {20.02, 14.05, 10.07, 7.21, 5.28};
inline constexpr std::array<double, 9> kReferenceBlockCostMB = {20.02, 20.02, 20.02, 14.05, 10.07,
                                                                10.07, 7.21,  5.28,  5.28};
// Reference whole-model costs for width ratios 1/8, 1/6, 1/3, 1/2, 1.
inline constexpr std::array<double, 5> kReferenceWidthRatio = {1.0 / 8, 1.0 / 6, 1.0 / 3, 1.0 / 2, 1.0};
inline constexpr std::array<double, 5> kReferenceWidthCostMB = {14.51, 19.34, 38.68, 58.02, 116.04};

struct ReferenceCalibration {
  std::size_t batch = 0;
  std::array<double, 5> group_mb{};         // our estimate, group means
  std::array<double, 4> ratios{};           // group g+1 over group 0
  std::array<double, 4> reference_ratios{};
  double max_relative_error = 0;
  bool ordering_holds = false;  // every block of a group exceeds every block of the next
};

/// Evaluates the estimator on make_preresnet20(3, 10) at one batch size.
ReferenceCalibration evaluate_reference(std::size_t batch, std::size_t bytes_per_element = 4);
/// Smallest max relative ratio error over batch sizes 1..max_batch.
ReferenceCalibration calibrate_reference(std::size_t max_batch = 256, std::size_t bytes_per_element = 4);

}  // namespace fedepth
