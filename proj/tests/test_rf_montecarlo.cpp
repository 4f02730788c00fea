#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "qhconv/image_io.hpp"
#include "qhconv/rf_montecarlo.hpp"

using namespace qhconv;

namespace {

CoverageMatrix constant(int w, int h, double v) {
  return {w, h, std::vector<double>(static_cast<std::size_t>(w) * h, v)};
}

CoverageMatrix random_matrix(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CoverageMatrix m = constant(w, h, 0.0);
  for (auto& v : m.values) v = u(rng);
  return m;
}

}  // namespace

TEST_CASE("rf_distance hand values") {
  const auto a = constant(2, 2, 0.5), b = constant(2, 2, 1.0);
  CHECK(rf_distance(a, a) == 0.0);
  CHECK(rf_distance(a, b) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(rf_distance(a, constant(3, 2, 1.0)), std::invalid_argument);
}

TEST_CASE("rf_distance matches elementwise oracle and is symmetric") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const int w = 1 + static_cast<int>(rng() % 19), h = 1 + static_cast<int>(rng() % 19);
    const auto a = random_matrix(w, h, rng), b = random_matrix(w, h, rng);
    double s = 0.0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double d = a.at(r, c) - b.at(r, c);
        s += d * d;
      }
    CHECK(std::abs(rf_distance(a, b) - s / (w * h)) < 1e-12);
    CHECK(rf_distance(a, b) == doctest::Approx(rf_distance(b, a)).epsilon(1e-14));
    CHECK(rf_distance(a, b) > 0.0);
  }
}

TEST_CASE("depth-1 simulation sees only seven-cell masks") {
  const auto s = simulate_rf(1, 400, 5);
  CHECK(s.mean_coverage.width == 3);
  double total = 0.0;
  for (double v : s.mean_coverage.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    total += v;
  }
  CHECK(total == doctest::Approx(7.0));
  CHECK(s.mean_coverage.at(1, 1) == 1.0);
  std::size_t ones = 0;
  for (double v : s.example_coverage.values) {
    CHECK((v == 0.0 || v == 1.0));
    ones += v == 1.0;
  }
  CHECK(ones == 7);
  CHECK(s.mean_d > 0.0);
  CHECK(s.var_d >= 0.0);
}

TEST_CASE("simulate_rf rejects bad arguments") {
  CHECK_THROWS_AS(simulate_rf(0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(simulate_rf(3, 1, 1), std::invalid_argument);
}

TEST_CASE("simulate_rf is deterministic and independent of the worker count") {
  const auto a = simulate_rf(5, 600, 42, 1);
  const auto b = simulate_rf(5, 600, 42, 1);
  const auto c = simulate_rf(5, 600, 42, 3);
  CHECK(a.mean_d == b.mean_d);
  CHECK(std::abs(a.mean_d - c.mean_d) < 1e-12);
  CHECK(std::abs(a.var_d - c.var_d) < 1e-12);
  CHECK(a.mean_coverage.values == c.mean_coverage.values);
}

TEST_CASE("doubling K stays inside the law-of-large-numbers band") {
  for (int depth : {3, 7}) {
    const auto k1 = simulate_rf(depth, 2000, 9);
    const auto k2 = simulate_rf(depth, 4000, 9);
    CHECK(std::abs(k1.mean_d - k2.mean_d) < 3 * std::sqrt(k1.var_d / 2000));
  }
}

TEST_CASE("record format") {
  const auto s = simulate_rf(3, 50, 7);
  const auto rec = format_rf_record(s);
  CHECK(std::count(rec.begin(), rec.end(), '\t') == 4);
  CHECK(rec.rfind("3\t50\t", 0) == 0);
  CHECK(rf_record_header() == "depth\tK\tmean_d\tvar_d\tseed");
}

TEST_CASE("coverage images") {
  const auto dir = std::filesystem::temp_directory_path() / "qhconv_rf_test";
  std::filesystem::create_directories(dir);

  emit_coverage_image(constant(5, 5, 1.0), dir / "white.pgm");
  const auto white = read_image(dir / "white.pgm");
  CHECK(std::all_of(white.pixels.begin(), white.pixels.end(), [](auto p) { return p == 255; }));

  const auto single = simulate_rf(2, 2, 1);
  emit_coverage_image(single.example_coverage, dir / "single.png", 3);
  const auto bin = read_image(dir / "single.png");
  CHECK(bin.width == 15);
  CHECK(std::all_of(bin.pixels.begin(), bin.pixels.end(),
                    [](auto p) { return p == 0 || p == 255; }));

  const auto deep = simulate_rf(9, 5000, 3);
  emit_coverage_image(deep, dir / "deep.png");
  const auto img = read_image(dir / "deep.png");
  CHECK(img.width == 19);
  CHECK(img.height == 19);
  bool gray = false;
  for (auto p : img.pixels) gray = gray || (p > 0 && p < 255);
  CHECK(gray);
  CHECK_THROWS(emit_coverage_image(deep, dir / "x.bogus"));
  std::filesystem::remove_all(dir);
}
