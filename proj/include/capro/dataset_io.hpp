#pragma once

#include <filesystem>
#include <optional>

#include "capro/align.hpp"
#include "capro/linalg.hpp"
#include "capro/synth.hpp"
#include "capro/types.hpp"

namespace capro {

/// Dense f32 matrix file: "CAPD", u32 version, u64 rows, u64 cols, then
/// rows*cols little-endian floats in row-major order.
void write_matrix_file(const std::filesystem::path& path, const Matrix& m);
/// Throws DataError naming the byte offset of the first malformed field.
Matrix read_matrix_file(const std::filesystem::path& path);

struct LoadedDataset {
  Dataset dataset;
  TextualPrototypes prototypes;
  std::optional<GeneratorSpec> generator;
};

/// Writes manifest.json, inputs.capd, texts.capd and prototypes.capd into
/// `dir`. Rows run over train instances then test instances.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   const TextualPrototypes& prototypes,
                   const std::optional<GeneratorSpec>& generator = std::nullopt);

LoadedDataset read_dataset(const std::filesystem::path& dir);

/// Writes `contents` to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace capro
