#include "krigscd/field_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace krigscd {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "field_core";

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

void require_finite(const Grid& values, const fs::path& path) {
  if (!values.allFinite()) throw DataError(kModule, "non-finite value in " + path.string());
}

Field read_csv(const fs::path& path) {
  std::istringstream in(read_all(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      const char* begin = cell.c_str();
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      while (end && *end && std::isspace(static_cast<unsigned char>(*end))) ++end;
      if (end == begin || (end && *end != '\0'))
        throw FormatError(kModule, "malformed CSV cell '" + cell + "' in " + path.string());
      if (!std::isfinite(v)) throw DataError(kModule, "non-finite CSV value in " + path.string());
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(kModule, "ragged CSV rows in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(kModule, "empty CSV " + path.string());
  Grid values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) values(r, c) = rows[r][c];
  return Field(std::move(values));
}

std::string format_csv(const Grid& values) {
  std::string out;
  char buf[40];
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out.push_back(',');
      std::snprintf(buf, sizeof buf, "%.17g", values(r, c));
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

Field read_raw(const fs::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 16) throw FormatError(kModule, "raw-f64 header truncated in " + path.string());
  if (get_le<std::uint32_t>(bytes, 0) != kRawMagic) throw FormatError(kModule, "bad raw-f64 magic in " + path.string());
  if (get_le<std::uint32_t>(bytes, 4) != kRawVersion)
    throw FormatError(kModule, "unsupported raw-f64 version in " + path.string());
  const std::uint32_t height = get_le<std::uint32_t>(bytes, 8);
  const std::uint32_t width = get_le<std::uint32_t>(bytes, 12);
  if (height == 0 || width == 0) throw FormatError(kModule, "empty raw-f64 grid in " + path.string());
  const std::size_t expected = 16 + std::size_t{height} * width * sizeof(double);
  if (bytes.size() != expected) throw FormatError(kModule, "raw-f64 payload size mismatch in " + path.string());
  Grid values(height, width);
  for (std::size_t i = 0; i < std::size_t{height} * width; ++i)
    values.data()[i] = get_le<double>(bytes, 16 + i * sizeof(double));
  require_finite(values, path);
  return Field(std::move(values));
}

std::string format_raw(const Grid& values) {
  std::string out;
  out.reserve(16 + values.size() * sizeof(double));
  put_le(out, kRawMagic);
  put_le(out, kRawVersion);
  put_le(out, static_cast<std::uint32_t>(values.rows()));
  put_le(out, static_cast<std::uint32_t>(values.cols()));
  for (Eigen::Index i = 0; i < values.size(); ++i) put_le(out, values.data()[i]);
  return out;
}

// Reads the next whitespace-delimited PGM header token, skipping '#' comments.
std::string next_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
  return bytes.substr(start, pos - start);
}

long parse_header_int(const std::string& token, const fs::path& path) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](unsigned char ch) { return std::isdigit(ch); }))
    throw FormatError(kModule, "malformed PGM header in " + path.string());
  return std::stol(token);
}

}  // namespace

void require_same_shape(GridShape a, GridShape b, const char* module) {
  if (!(a == b))
    throw DataError(module, "shape mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width));
}

FieldFormat parse_field_format(std::string_view name) {
  if (name == "pgm") return FieldFormat::pgm;
  if (name == "csv") return FieldFormat::csv;
  if (name == "raw-f64" || name == "raw") return FieldFormat::raw_f64;
  throw ConfigError(kModule, "unknown field format '" + std::string(name) + "'");
}

std::string_view to_string(FieldFormat format) {
  switch (format) {
    case FieldFormat::pgm: return "pgm";
    case FieldFormat::csv: return "csv";
    case FieldFormat::raw_f64: return "raw-f64";
  }
  return "?";
}

FieldFormat format_from_extension(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return FieldFormat::pgm;
  if (ext == ".csv") return FieldFormat::csv;
  if (ext == ".raw" || ext == ".f64") return FieldFormat::raw_f64;
  throw ConfigError(kModule, "cannot infer field format from '" + path.string() + "'");
}

Grid quantize(const Grid& values, ValueRange range) {
  if (!(range.max > range.min)) return Grid::Zero(values.rows(), values.cols());
  const double scale = 255.0 / (range.max - range.min);
  return values.unaryExpr([&](double v) { return std::clamp(std::round((v - range.min) * scale), 0.0, 255.0); });
}

Grid dequantize(const Grid& levels, ValueRange range) {
  const double step = (range.max - range.min) / 255.0;
  return (levels.array() * step + range.min).matrix();
}

Field quantize_field(const Field& field) {
  Field out(quantize(field.values), field.units);
  out.georef = field.georef;
  return out;
}

Field dequantize_field(const Field& levels, ValueRange range, std::string units) {
  Field out(dequantize(levels.values, range), std::move(units));
  out.georef = levels.georef;
  return out;
}

fs::path range_sidecar_path(const fs::path& pgm_path) {
  fs::path p = pgm_path;
  p.replace_extension(".range.json");
  return p;
}

GridT<std::uint8_t> read_pgm(const fs::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P5") throw FormatError(kModule, "not a binary P5 PGM: " + path.string());
  const long width = parse_header_int(next_token(bytes, pos), path);
  const long height = parse_header_int(next_token(bytes, pos), path);
  const long maxval = parse_header_int(next_token(bytes, pos), path);
  if (maxval != 255) throw FormatError(kModule, "PGM maxval must be 255 in " + path.string());
  if (width <= 0 || height <= 0) throw FormatError(kModule, "empty PGM in " + path.string());
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError(kModule, "malformed PGM header in " + path.string());
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos != count) throw FormatError(kModule, "PGM payload size mismatch in " + path.string());
  GridT<std::uint8_t> out(height, width);
  std::memcpy(out.data(), bytes.data() + pos, count);
  return out;
}

void write_pgm(const GridT<std::uint8_t>& bytes, const fs::path& path) {
  std::string out = "P5\n" + std::to_string(bytes.cols()) + " " + std::to_string(bytes.rows()) + "\n255\n";
  out.append(reinterpret_cast<const char*>(bytes.data()), static_cast<std::size_t>(bytes.size()));
  write_file_atomic(path, out);
}

Field read_field(const fs::path& path, FieldFormat format) {
  switch (format) {
    case FieldFormat::csv: return read_csv(path);
    case FieldFormat::raw_f64: return read_raw(path);
    case FieldFormat::pgm: {
      const Grid levels = read_pgm(path).cast<double>();
      ValueRange range{0.0, 255.0};
      std::string units;
      const fs::path sidecar = range_sidecar_path(path);
      if (fs::exists(sidecar)) {
        try {
          const auto j = nlohmann::json::parse(read_all(sidecar));
          range = {j.at("min").get<double>(), j.at("max").get<double>()};
          units = j.value("units", std::string{});
        } catch (const nlohmann::json::exception& e) {
          throw FormatError(kModule, "malformed range sidecar " + sidecar.string() + ": " + e.what());
        }
      }
      return Field(dequantize(levels, range), units);
    }
  }
  throw ConfigError(kModule, "unsupported format");
}

void write_field(const Field& field, const fs::path& path, FieldFormat format) {
  switch (format) {
    case FieldFormat::csv: write_file_atomic(path, format_csv(field.values)); return;
    case FieldFormat::raw_f64: write_file_atomic(path, format_raw(field.values)); return;
    case FieldFormat::pgm: {
      const ValueRange range = field.range();
      write_pgm(quantize(field.values, range).cast<std::uint8_t>(), path);
      nlohmann::ordered_json j;
      j["min"] = range.min;
      j["max"] = range.max;
      j["units"] = field.units;
      write_file_atomic(range_sidecar_path(path), j.dump(2) + "\n");
      return;
    }
  }
}

ObservationMask read_mask(const fs::path& path) {
  return ObservationMask(read_pgm(path).array() != 0);
}

void write_mask(const ObservationMask& mask, const fs::path& path) {
  write_pgm((mask.known.cast<std::uint8_t>() * std::uint8_t{255}).matrix(), path);
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(kModule, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(kModule, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError(kModule, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

ObservationSet collect_observations(const Grid& values, const MaskGrid& known) {
  ObservationSet obs;
  const Eigen::Index n = known.count();
  obs.coords.resize(n, 2);
  obs.values.resize(n);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < known.rows(); ++r)
    for (Eigen::Index c = 0; c < known.cols(); ++c)
      if (known(r, c)) {
        obs.coords(k, 0) = static_cast<double>(r);
        obs.coords(k, 1) = static_cast<double>(c);
        obs.values(k) = values(r, c);
        ++k;
      }
  return obs;
}

ObservationSet apply_mask(const Field& field, const ObservationMask& mask) {
  require_same_shape(field.shape(), mask.shape(), "maskgen");
  if (mask.known_count() == 0) throw InsufficientDataError("maskgen", "mask has no known pixels");
  return collect_observations(field.values, mask.known);
}

}  // namespace krigscd
