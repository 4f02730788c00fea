#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qhconv/kernel_shapes.hpp"

namespace qhconv {

/// Per-pixel coverage probability on a width x height grid (row-major).
struct CoverageMatrix {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int row, int col) const { return values[row * width + col]; }

  static CoverageMatrix from_footprint(const Footprint& fp);
};

struct RFStats {
  int depth = 0;
  int num_configs = 0;
  double mean_d = 0.0;
  double var_d = 0.0;  // population variance over the configurations
  CoverageMatrix mean_coverage;
  /// One configuration's coverage, kept for the side-by-side figure.
  CoverageMatrix example_coverage;
  std::uint64_t seed = 0;
};

/// Squared Frobenius distance normalized by the number of pixels.
double rf_distance(const CoverageMatrix& mean, const CoverageMatrix& single);

/// Seed of configuration k in a run seeded with `seed` (splitmix64 mix).
std::uint64_t config_seed(std::uint64_t seed, std::uint64_t k);

/// Monte Carlo over random QH pattern sequences of the given depth.
/// Configurations may be spread over `threads` workers; the result does not
/// depend on the worker count.
RFStats simulate_rf(int depth, int num_configs, std::uint64_t seed,
                    int threads = 1);

/// Tab-separated summary record: depth, K, mean_d, var_d, seed.
std::string format_rf_record(const RFStats& stats);
std::string rf_record_header();

/// Writes the mean coverage as a grayscale image (white = always covered),
/// upscaled by `scale` per cell. Format follows the extension (.png/.pgm).
void emit_coverage_image(const CoverageMatrix& coverage,
                         const std::filesystem::path& path, int scale = 1);
void emit_coverage_image(const RFStats& stats,
                         const std::filesystem::path& path, int scale = 1);

}  // namespace qhconv
