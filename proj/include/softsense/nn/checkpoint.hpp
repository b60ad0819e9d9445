#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softsense/dataset.hpp"
#include "softsense/nn/tape.hpp"

namespace softsense::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Contents of an SSM1 parameter file.
struct Checkpoint {
  std::string descriptor;  // architecture, UTF-8
  data::NormStats stats;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of every parameter in registration order.
Checkpoint snapshot(const ParameterSet<float>& params, std::string descriptor, const data::NormStats& stats);

/// Copies tensors into `params` by name; names and shapes must match exactly.
void restore(ParameterSet<float>& params, const Checkpoint& ckpt);

}  // namespace softsense::nn
