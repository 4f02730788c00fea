#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qhconv/kernel_shapes.hpp"

using namespace qhconv;

namespace {

const Pattern kPatterns[] = {Pattern::U, Pattern::R, Pattern::D, Pattern::L};

std::vector<KernelMask> qh_list(const std::vector<Pattern>& ps) {
  std::vector<KernelMask> out;
  for (auto p : ps) out.push_back(make_mask(ShapeKind::QH, p, 3));
  return out;
}

bool matches_oracle(const std::vector<KernelMask>& masks) {
  const auto fp = compose_rf(masks);
  const auto cells = oracle::dilate(masks);
  const int half = fp.extent / 2;
  std::size_t n = 0;
  for (int r = 0; r < fp.extent; ++r)
    for (int c = 0; c < fp.extent; ++c) {
      const bool want = cells.count({r - half, c - half}) > 0;
      if (fp.at(r, c) != want) return false;
      n += want;
    }
  return n == cells.size();
}

bool eight_connected(const Footprint& fp) {
  const int e = fp.extent;
  std::vector<std::uint8_t> seen(fp.covered.size(), 0);
  std::vector<int> stack{(e / 2) * e + e / 2};
  seen[stack[0]] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    ++reached;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int r = p / e + dy, c = p % e + dx;
        if (r < 0 || c < 0 || r >= e || c >= e) continue;
        if (fp.at(r, c) && !seen[r * e + c]) {
          seen[r * e + c] = 1;
          stack.push_back(r * e + c);
        }
      }
  }
  return reached == fp.count();
}

}  // namespace

TEST_CASE("square masks are full") {
  CHECK(make_mask(ShapeKind::Square, std::nullopt, 3).count() == 9);
  CHECK(mask_weight_count(make_mask(ShapeKind::Square, std::nullopt, 5)) == 25);
}

TEST_CASE("QH masks: seven cells, all edges, two corners") {
  CHECK(make_mask(ShapeKind::QH, Pattern::U, 3).to_art() == "###\n###\n.#.\n");
  for (auto p : kPatterns) {
    const auto m = make_mask(ShapeKind::QH, p, 3);
    CHECK(m.count() == 7);
    CHECK(mask_weight_count(m) == 7);
    CHECK(m.contains({0, 0}));
    for (Offset e : {Offset{-1, 0}, Offset{1, 0}, Offset{0, -1}, Offset{0, 1}})
      CHECK(m.contains(e));
    int corners = 0;
    for (int dy : {-1, 1})
      for (int dx : {-1, 1}) corners += m.contains({dy, dx});
    CHECK(corners == 2);
  }
}

TEST_CASE("QH R/D/L are successive clockwise rotations of U") {
  auto m = make_mask(ShapeKind::QH, Pattern::U, 3);
  for (auto p : {Pattern::R, Pattern::D, Pattern::L}) {
    m = rot90(m);
    CHECK(m == make_mask(ShapeKind::QH, p, 3));
    CHECK(m.pattern() == p);
  }
  // clockwise: the full top row moves to the right column
  CHECK(make_mask(ShapeKind::QH, Pattern::R, 3).to_art() == ".##\n###\n.##\n");
}

TEST_CASE("rot90 four times is the identity") {
  for (auto kind : {ShapeKind::QH, ShapeKind::UB, ShapeKind::DIA})
    for (auto p : kPatterns) {
      const auto m = make_mask(kind, p, 3);
      CHECK(rot90(rot90(rot90(rot90(m)))) == m);
    }
  const auto fk = make_mask(ShapeKind::FK, std::nullopt, 3, 11);
  CHECK(rot90(rot90(rot90(rot90(fk)))) == fk);
}

TEST_CASE("FK masks drop two seeded non-center cells") {
  const auto m = make_mask(ShapeKind::FK, std::nullopt, 3, 7);
  CHECK(m.count() == 7);
  CHECK(m.contains({0, 0}));
  std::vector<Offset> removed;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (!m.contains({dy, dx})) removed.push_back({dy, dx});
  REQUIRE(removed.size() == 2);
  CHECK(removed[0] != removed[1]);
  CHECK(make_mask(ShapeKind::FK, std::nullopt, 3, 7) == m);

  std::set<std::vector<Offset>> distinct;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto f = make_mask(ShapeKind::FK, std::nullopt, 3, s);
    CHECK(f.count() == 7);
    CHECK(f.contains({0, 0}));
    distinct.insert(f.cells());
  }
  // 28 possible pairs; 200 seeds should hit most of them
  CHECK(distinct.size() >= 20);
}

TEST_CASE("UB and DIA reference shapes") {
  for (auto p : kPatterns) {
    const auto ub = make_mask(ShapeKind::UB, p, 3);
    const auto dia = make_mask(ShapeKind::DIA, p, 3);
    CHECK(ub.count() == 7);
    CHECK(dia.count() == 7);
    std::vector<Offset> gone_ub, gone_dia;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!ub.contains({dy, dx})) gone_ub.push_back({dy, dx});
        if (!dia.contains({dy, dx})) gone_dia.push_back({dy, dx});
      }
    REQUIRE(gone_ub.size() == 2);
    REQUIRE(gone_dia.size() == 2);
    // UB: one corner plus an edge cell next to it
    const auto corner = std::find_if(gone_ub.begin(), gone_ub.end(),
                                     [](Offset o) { return o.dy != 0 && o.dx != 0; });
    REQUIRE(corner != gone_ub.end());
    const Offset other = gone_ub[corner == gone_ub.begin() ? 1 : 0];
    CHECK(std::abs(other.dy) + std::abs(other.dx) == 1);
    CHECK(std::abs(other.dy - corner->dy) + std::abs(other.dx - corner->dx) == 1);
    // DIA: opposite corners
    CHECK(gone_dia[0].dy == -gone_dia[1].dy);
    CHECK(gone_dia[0].dx == -gone_dia[1].dx);
    CHECK(gone_dia[0].dy != 0);
    CHECK(gone_dia[0].dx != 0);
  }
}

TEST_CASE("make_mask argument errors") {
  CHECK_THROWS_AS(make_mask(ShapeKind::Square, std::nullopt, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(ShapeKind::Square, std::nullopt, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(ShapeKind::QH, std::nullopt, 3), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(ShapeKind::UB, std::nullopt, 3), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(ShapeKind::FK, std::nullopt, 3), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(ShapeKind::QH, Pattern::U, 5), std::invalid_argument);
}

TEST_CASE("pattern sequences are deterministic and uniform") {
  const auto a = sample_pattern_sequence(4, 99), b = sample_pattern_sequence(4, 99);
  CHECK(a.patterns == b.patterns);
  CHECK(sample_pattern_sequence(1, 5).depth() == 1);
  CHECK_THROWS_AS(sample_pattern_sequence(0, 1), std::invalid_argument);

  const int n = 100000;
  const auto s = sample_pattern_sequence(n, 2024);
  std::array<int, 4> counts{};
  for (auto p : s.patterns) ++counts[static_cast<int>(p)];
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) CHECK(std::abs(c - n * 0.25) < 4 * sigma);
}

TEST_CASE("compose_rf of squares covers the full grid") {
  for (int L = 1; L <= 6; ++L) {
    std::vector<KernelMask> sq(L, make_mask(ShapeKind::Square, std::nullopt, 3));
    const auto fp = compose_rf(sq);
    CHECK(fp.extent == 2 * L + 1);
    CHECK(fp.count() == static_cast<std::size_t>(fp.extent * fp.extent));
  }
}

TEST_CASE("compose_rf matches brute-force dilation") {
  CHECK(matches_oracle(qh_list({Pattern::U, Pattern::D})));
  // exhaustive up to depth 4
  for (int L = 1; L <= 4; ++L) {
    const int total = 1 << (2 * L);
    for (int code = 0; code < total; ++code) {
      std::vector<Pattern> ps;
      for (int i = 0; i < L; ++i) ps.push_back(kPatterns[(code >> (2 * i)) & 3]);
      REQUIRE(matches_oracle(qh_list(ps)));
    }
  }
  std::mt19937_64 rng(17);
  for (int t = 0; t < 1000; ++t) {
    const int L = 1 + static_cast<int>(rng() % 9);
    const auto seq = sample_pattern_sequence(L, rng());
    const auto masks = qh_list(seq.patterns);
    const auto fp = compose_rf(masks);
    REQUIRE(matches_oracle(masks));
    CHECK(fp.extent == 2 * L + 1);
    CHECK(fp.at(L, L));
    CHECK(eight_connected(fp));
  }
}

TEST_CASE("compose_rf is permutation invariant") {
  const auto four = qh_list({Pattern::U, Pattern::R, Pattern::D, Pattern::L});
  auto perm = four;
  const auto ref = compose_rf(four);
  std::sort(perm.begin(), perm.end(), [](const auto& a, const auto& b) {
    return *a.pattern() < *b.pattern();
  });
  do {
    CHECK(compose_rf(perm) == ref);
  } while (std::next_permutation(perm.begin(), perm.end(), [](const auto& a, const auto& b) {
    return *a.pattern() < *b.pattern();
  }));

  std::mt19937_64 rng(3);
  const auto masks = qh_list(sample_pattern_sequence(9, 4).patterns);
  const auto base = compose_rf(masks);
  for (int t = 0; t < 1000; ++t) {
    auto shuffled = masks;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    REQUIRE(compose_rf(shuffled) == base);
  }
}

TEST_CASE("compose_rf errors") {
  CHECK_THROWS_AS(compose_rf({}), std::invalid_argument);
  CHECK_THROWS_AS(compose_rf({make_mask(ShapeKind::Square, std::nullopt, 3),
                              make_mask(ShapeKind::Square, std::nullopt, 5)}),
                  std::invalid_argument);
}
