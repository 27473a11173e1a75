#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace scenewatch {

// Shortest decimal form that round-trips to the same double ("inf"/"-inf"/"nan"
// for non-finite). Used for every CSV/JSON number the pipeline writes, so
// outputs are byte-stable and lose no precision.
std::string format_double(double value);

// Inverse of format_double; accepts "inf"/"+inf"/"-inf"/"nan".
double parse_double(const std::string& text);

// Minimal CSV support: quotes are not needed by any of our schemas, so a
// field must not contain commas or newlines.
std::vector<std::string> split_csv_line(const std::string& line);
std::string join_csv(std::span<const std::string> fields);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// SHA-256 of a byte string / file, lowercase hex.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::filesystem::path& path);

// Population mean / standard deviation (1/N convention).
double mean_of(std::span<const double> xs);
double population_std(std::span<const double> xs);

// Runs fn(i) for i in [0, n) on up to `threads` workers with contiguous
// chunks. fn must only write to index-addressed slots.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// Dense row-major matrix of doubles; rows are observations.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
};

}  // namespace scenewatch
