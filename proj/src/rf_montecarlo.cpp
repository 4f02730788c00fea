#include "qhconv/rf_montecarlo.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "qhconv/image_io.hpp"
#include "qhconv/numeric.hpp"

namespace qhconv {

CoverageMatrix CoverageMatrix::from_footprint(const Footprint& fp) {
  CoverageMatrix m;
  m.width = m.height = fp.extent;
  m.values.assign(fp.covered.begin(), fp.covered.end());
  return m;
}

double rf_distance(const CoverageMatrix& mean, const CoverageMatrix& single) {
  if (mean.width != single.width || mean.height != single.height ||
      mean.values.size() != single.values.size())
    throw std::invalid_argument("rf_distance: dimension mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < mean.values.size(); ++i) {
    const double d = mean.values[i] - single.values[i];
    sum += d * d;
  }
  return sum / (static_cast<double>(mean.width) * mean.height);
}

std::uint64_t config_seed(std::uint64_t seed, std::uint64_t k) {
  return splitmix64(seed ^ splitmix64(k + 0x51ED270B27AC5A4DULL));
}

namespace {

Footprint config_footprint(int depth, std::uint64_t seed) {
  const auto seq = sample_pattern_sequence(depth, seed);
  std::vector<KernelMask> masks;
  masks.reserve(seq.patterns.size());
  for (auto p : seq.patterns) masks.push_back(make_mask(ShapeKind::QH, p, 3));
  return compose_rf(masks);
}

}  // namespace

RFStats simulate_rf(int depth, int num_configs, std::uint64_t seed,
                    int threads) {
  if (depth < 1) throw std::invalid_argument("simulate_rf: depth must be >= 1");
  if (num_configs < 2)
    throw std::invalid_argument("simulate_rf: need at least 2 configurations");
  threads = std::max(1, threads);

  const int extent = 2 * depth + 1;
  const std::size_t cells = static_cast<std::size_t>(extent) * extent;
  const auto K = static_cast<std::size_t>(num_configs);

  // Footprints are stored as bits per configuration; coverage counts are
  // integers, so the mean matrix is exact and order-free.
  std::vector<std::uint8_t> footprints(K * cells);
  parallel_for(K, threads, [&](std::size_t k) {
    const auto fp = config_footprint(depth, config_seed(seed, k));
    std::copy(fp.covered.begin(), fp.covered.end(),
              footprints.begin() + static_cast<std::ptrdiff_t>(k * cells));
  });

  std::vector<std::uint64_t> counts(cells, 0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < cells; ++i) counts[i] += footprints[k * cells + i];

  RFStats stats;
  stats.depth = depth;
  stats.num_configs = num_configs;
  stats.seed = seed;
  stats.mean_coverage.width = stats.mean_coverage.height = extent;
  stats.mean_coverage.values.resize(cells);
  for (std::size_t i = 0; i < cells; ++i)
    stats.mean_coverage.values[i] =
        static_cast<double>(counts[i]) / static_cast<double>(K);

  std::vector<double> d(K);
  parallel_for(K, threads, [&](std::size_t k) {
    CoverageMatrix single;
    single.width = single.height = extent;
    single.values.assign(footprints.begin() + static_cast<std::ptrdiff_t>(k * cells),
                         footprints.begin() + static_cast<std::ptrdiff_t>((k + 1) * cells));
    d[k] = rf_distance(stats.mean_coverage, single);
  });

  stats.mean_d = stable_sum(d) / static_cast<double>(K);
  std::vector<double> sq(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double c = d[k] - stats.mean_d;
    sq[k] = c * c;
  }
  stats.var_d = stable_sum(sq) / static_cast<double>(K);

  stats.example_coverage.width = stats.example_coverage.height = extent;
  stats.example_coverage.values.assign(footprints.begin(),
                                       footprints.begin() + static_cast<std::ptrdiff_t>(cells));
  return stats;
}

std::string rf_record_header() { return "depth\tK\tmean_d\tvar_d\tseed"; }

std::string format_rf_record(const RFStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d\t%d\t%.9g\t%.9g\t%llu", s.depth,
                s.num_configs, s.mean_d, s.var_d,
                static_cast<unsigned long long>(s.seed));
  return buf;
}

void emit_coverage_image(const CoverageMatrix& coverage,
                         const std::filesystem::path& path, int scale) {
  if (scale < 1) throw std::invalid_argument("image scale must be >= 1");
  Image img(coverage.width * scale, coverage.height * scale, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(coverage.at(y / scale, x / scale), 0.0, 1.0);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  write_image(img, path);
}

void emit_coverage_image(const RFStats& stats, const std::filesystem::path& path,
                         int scale) {
  emit_coverage_image(stats.mean_coverage, path, scale);
}

}  // namespace qhconv
