#include <fstream>
#include <iterator>

#include "doctest.h"
#include "tpn/container.hpp"

using namespace tpn;

namespace {

Container sample() {
  Container c;
  c.add("a", {2, 3}, {0.f, 1.f, 2.f, 3.f, 4.f, 5.f});
  c.add("b", {1}, {-1.5f});
  c.metadata["model"] = "test";
  c.metadata["z"] = "1";
  return c;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename Model>
void check_model_roundtrip(const Model& m) {
  const Container c = to_container(m);
  const auto bytes = serialize(c);
  const AnyModel back = model_from_container(deserialize(bytes));
  REQUIRE(std::holds_alternative<Model>(back));
  CHECK(serialize(to_container(std::get<Model>(back))) == bytes);
}

}  // namespace

TEST_CASE("container roundtrip") {
  const Container c = sample();
  const auto bytes = serialize(c);
  CHECK(deserialize(bytes) == c);
  CHECK(serialize(deserialize(bytes)) == bytes);
  CHECK(c.tensor("a").dims == std::vector<std::uint32_t>{2, 3});
  CHECK(c.meta("model") == "test");
  CHECK_THROWS_AS(c.tensor("missing"), FormatError);
}

TEST_CASE("golden file") {
  const auto golden = read_bytes(std::filesystem::path(TPN_TEST_DATA) / "golden.tpn");
  REQUIRE(!golden.empty());
  CHECK(serialize(sample()) == golden);
  // git hash-object of the body without its 20-byte trailer
  CHECK(content_hash(sample()) == "649ac29f379176df7623d894ebfb75bb7bda51d9");
}

TEST_CASE("file write and read") {
  const auto path = std::filesystem::temp_directory_path() / "tpn_container_test.tpn";
  write_container(path, sample());
  CHECK(read_container(path) == sample());
  std::filesystem::remove(path);
  CHECK_THROWS(read_container(path));
}

TEST_CASE("corrupt containers are rejected") {
  const auto good = serialize(sample());
  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize(bad), doctest::Contains("magic"), FormatError);

  bad = good;
  bad[4] = 2;
  CHECK_THROWS_WITH_AS(deserialize(bad), doctest::Contains("version"), FormatError);

  for (std::size_t i : {std::size_t{20}, good.size() / 2, good.size() - 1}) {
    bad = good;
    bad[i] ^= 0x01;
    CHECK_THROWS_AS(deserialize(bad), FormatError);
  }
  bad = good;
  bad.resize(good.size() - 5);
  CHECK_THROWS_AS(deserialize(bad), FormatError);
  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(deserialize(bad), FormatError);
  CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>{}), FormatError);
}

TEST_CASE("models roundtrip through containers") {
  Rng rng(1);
  check_model_roundtrip(DictionaryXd::random(16, 32, rng));
  check_model_roundtrip(PsdModelXd::random(16, 32, EncoderFlavor::DoubleTanh, rng));
  check_model_roundtrip(PsdModelXd::random(9, 4, EncoderFlavor::Tanh, rng));
  check_model_roundtrip(LocalNet::create({20, 20, 6, 6, Density::over(1), Density::over(1), 5, 5},
                                         EncoderFlavor::DoubleTanh, rng));
  check_model_roundtrip(LocalNet::create({12, 16, 4, 4, Density::over(2), Density::under(2), 0, 0},
                                         EncoderFlavor::Tanh, rng));
  check_model_roundtrip(TpnModelXd::random(16, 8, 4, 3, rng));

  const auto dict = DictionaryXd::random(5, 3, rng);
  const auto back = dictionary_from_container(to_container(dict));
  CHECK((back.columns - dict.columns.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(psd_from_container(to_container(dict)), FormatError);
}
