#include <doctest.h>

#include <filesystem>

#include "qhconv/container.hpp"
#include "qhconv/errors.hpp"

using namespace qhconv;

TEST_CASE("container round-trip is bitwise") {
  Container c;
  c.digest = 0x1234567890ABCDEFULL;
  c.set_meta("k", "v");
  c.set_meta("k", "w");
  c.set_meta("empty", "");
  const std::vector<float> f{1.5f, -0.0f, 3e-38f};
  const std::vector<std::uint8_t> u{1, 2, 3, 4, 5, 6};
  c.arrays.push_back(NamedArray::from<float>("f", DType::F32, {3}, f));
  c.arrays.push_back(NamedArray::from<std::uint8_t>("u", DType::U8, {2, 3}, u));
  const auto bytes = c.serialize();
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "QHCONTNR");
  const auto back = Container::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.get_meta("k") == "w");
  CHECK(back.meta.size() == 2);
  CHECK(back.array("f").as<float>() == f);
  CHECK(back.array("u").shape == std::vector<std::uint64_t>{2, 3});
  CHECK(back.find("nope") == nullptr);
  CHECK_THROWS_AS(back.array("nope"), IoError);
}

TEST_CASE("corrupt containers are rejected") {
  Container c;
  c.arrays.push_back(NamedArray::from<double>("d", DType::F64, {2}, std::vector<double>{1, 2}));
  auto bytes = c.serialize();
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Container::deserialize(bad), IoError);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(Container::deserialize(cut), IoError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(Container::deserialize(extra), IoError);
  CHECK_THROWS_AS(Container::load("/nonexistent/file.qhc"), IoError);
  CHECK_THROWS_AS(NamedArray::from<float>("x", DType::F32, {3}, std::vector<float>{1}),
                  std::invalid_argument);
}
