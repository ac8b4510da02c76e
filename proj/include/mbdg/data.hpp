#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mbdg/diffcore.hpp"

namespace mbdg {

struct LabeledExample {
  Vector x;
  std::size_t y = 0;
  int env = 0;
};

/// Per-domain sample; every example carries the dataset's env id.
struct EnvironmentDataset {
  int env = 0;
  std::vector<LabeledExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

/// Rows of `inputs` stacked into a matrix; all rows must share a dimension.
Matrix stack_rows(std::span<const Vector> inputs);

}  // namespace mbdg
