#pragma once

#include <filesystem>
#include <string_view>

#include "krigscd/grid.hpp"

namespace krigscd {

enum class FieldFormat { pgm, csv, raw_f64 };

FieldFormat parse_field_format(std::string_view name);
std::string_view to_string(FieldFormat format);
// Guesses the format from the file extension (.pgm, .csv, .raw/.f64).
FieldFormat format_from_extension(const std::filesystem::path& path);

inline constexpr std::uint32_t kRawMagic = 0x4B534344;  // "KSCD"
inline constexpr std::uint32_t kRawVersion = 1;

// Affine map onto [0,255] with round-half-away-from-zero; a degenerate range maps to 0.
Grid quantize(const Grid& values, ValueRange range);
inline Grid quantize(const Grid& values) { return quantize(values, {values.minCoeff(), values.maxCoeff()}); }
Grid dequantize(const Grid& levels, ValueRange range);

Field quantize_field(const Field& field);
Field dequantize_field(const Field& levels, ValueRange range, std::string units = {});

// Sidecar for PGM fields: "<name>.range.json" next to "<name>.pgm".
std::filesystem::path range_sidecar_path(const std::filesystem::path& pgm_path);

Field read_field(const std::filesystem::path& path, FieldFormat format);
inline Field read_field(const std::filesystem::path& path) { return read_field(path, format_from_extension(path)); }
void write_field(const Field& field, const std::filesystem::path& path, FieldFormat format);
inline void write_field(const Field& field, const std::filesystem::path& path) {
  write_field(field, path, format_from_extension(path));
}

// Masks are P5 PGM with 255 = known, 0 = unknown. Any nonzero byte reads as known.
ObservationMask read_mask(const std::filesystem::path& path);
void write_mask(const ObservationMask& mask, const std::filesystem::path& path);

// Low-level 8-bit PGM access.
GridT<std::uint8_t> read_pgm(const std::filesystem::path& path);
void write_pgm(const GridT<std::uint8_t>& bytes, const std::filesystem::path& path);

// Writes through a sibling temporary and renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace krigscd
