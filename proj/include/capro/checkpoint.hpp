#pragma once

#include <filesystem>
#include <optional>

#include "capro/linalg.hpp"
#include "capro/model.hpp"

namespace capro {

struct Checkpoint {
  ModelParams params;
  /// Visual prototypes, when the run got far enough to have them.
  std::optional<Matrix> prototypes;

  bool operator==(const Checkpoint&) const = default;
};

/// "CAPM", u32 version, then named f64 tensors until end of file. Each tensor
/// is u32 name length, name bytes, u64 rank, u64 dims[rank], f64 values.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws DataError naming the byte offset of the first malformed field.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace capro
