#include <gtest/gtest.h>

#include <regex>

#include "bdl/model_io.hpp"

using namespace bdl;

namespace {

Network random_net(const NetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return init(cfg, rng);
}

template <class E>
std::string thrown(const std::string& text) {
  try {
    deserialize(text);
  } catch (const E& e) {
    return e.what();
  } catch (const std::exception& e) {
    ADD_FAILURE() << "wrong exception type: " << e.what();
    return {};
  }
  ADD_FAILURE() << "nothing thrown";
  return {};
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ModelIo, RoundTripIsBitwise) {
  const Network net = random_net(NetConfig::desk(), 11);
  const std::string text = serialize(net);
  const Network back = deserialize(text);
  EXPECT_EQ(back.config, net.config);
  std::vector<double> a, b;
  net.params.for_each([&](const std::string&, const Tensor& t) { a.insert(a.end(), t.values().begin(), t.values().end()); });
  back.params.for_each([&](const std::string&, const Tensor& t) { b.insert(b.end(), t.values().begin(), t.values().end()); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize(back), text);
  EXPECT_EQ(digest(back), digest(net));
}

TEST(ModelIo, CanonicalLayout) {
  const Network net = random_net(NetConfig::desk(), 1);
  const std::string text = serialize(net);
  EXPECT_EQ(text.rfind("{\"config\":{\"c2_kernel\":5,\"c2_maps\":8,", 0), 0u);
  EXPECT_NE(text.find(",\"format_version\":1,\"layers\":[\n{\"name\":\"c2.weight\",\"shape\":[8,10,5,5]"),
            std::string::npos);
  EXPECT_EQ(text.substr(text.size() - 4), "\n]}\n");
  // every value is written as %.16e
  const std::regex number(R"([-0-9][0-9.e+-]*)");
  const std::regex canonical(R"(-?[0-9]\.[0-9]{16}e[+-][0-9]{2,3})");
  std::size_t checked = 0;
  for (auto pos = text.find("\"values\":"); pos != std::string::npos; pos = text.find("\"values\":", pos + 1)) {
    const auto end = text.find('}', pos);
    const std::string body = text.substr(pos + 9, end - pos - 9);
    for (std::sregex_iterator it(body.begin(), body.end(), number), stop; it != stop; ++it, ++checked)
      ASSERT_TRUE(std::regex_match(it->str(), canonical)) << it->str();
  }
  EXPECT_EQ(checked, param_count(net.config).total());
}

TEST(ModelIo, DigestTracksEveryParameter) {
  Network net = random_net(NetConfig::desk(), 2);
  const std::string d = digest(net);
  net.params.fc_bias[0] = std::nextafter(net.params.fc_bias[0], 1.0);
  EXPECT_NE(digest(net), d);
}

TEST(ModelIo, SaveAndLoadFile) {
  const Network net = random_net(NetConfig::desk(), 3);
  const std::string path = (std::filesystem::temp_directory_path() / "bdl_test_model.json").string();
  save(net, path);
  EXPECT_EQ(digest(load(path)), digest(net));
  std::filesystem::remove(path);
  EXPECT_THROW(load(path), Error);
}

TEST(ModelIo, RejectsCorruptFiles) {
  const std::string text = serialize(random_net(NetConfig::desk(), 4));
  EXPECT_NE(thrown<ModelFormatError>(text.substr(0, text.size() / 2)).find("not valid JSON"), std::string::npos);
  EXPECT_NE(thrown<ModelFormatError>("{\"config\":{}}").find("must contain"), std::string::npos);
  EXPECT_NE(thrown<ModelFormatError>(replace_once(text, "\"c2_maps\":8", "\"c2_mapz\":8")).find("unknown key"),
            std::string::npos);
  EXPECT_NE(thrown<ModelFormatError>(replace_once(text, "\"name\":\"c2.bias\"", "\"name\":\"c2.bios\"")).find("c2.bios"),
            std::string::npos);
  EXPECT_NE(thrown<ModelFormatError>(replace_once(text, "\n]}\n", ",\n{\"name\":\"x\"}\n]}\n")).find("extra"),
            std::string::npos);
}

TEST(ModelIo, RejectsOtherVersions) {
  const std::string text = serialize(random_net(NetConfig::desk(), 5));
  EXPECT_NE(thrown<ModelVersionError>(replace_once(text, "\"format_version\":1", "\"format_version\":2"))
                .find("format_version 2"),
            std::string::npos);
}

TEST(ModelIo, RejectsShapeMismatch) {
  const std::string text = serialize(random_net(NetConfig::desk(), 6));
  EXPECT_NE(thrown<ModelShapeError>(replace_once(text, "\"shape\":[8,10,5,5]", "\"shape\":[8,10,5,4]"))
                .find("does not match config"),
            std::string::npos);
  // declared shape fine but one value missing
  const auto bias = text.find("{\"name\":\"c2.bias\",\"shape\":[8],\"values\":[");
  ASSERT_NE(bias, std::string::npos);
  const auto first = text.find('[', text.find("\"values\"", bias)) + 1;
  std::string cut = text;
  cut.erase(first, text.find(',', first) + 1 - first);
  EXPECT_NE(thrown<ModelShapeError>(cut).find("c2.bias"), std::string::npos);
}

TEST(ModelIo, RejectsNonNumericValues) {
  const std::string text = serialize(random_net(NetConfig::desk(), 7));
  const auto bias = text.find("{\"name\":\"fc.bias\",\"shape\":[1],\"values\":[");
  ASSERT_NE(bias, std::string::npos);
  const auto start = text.find('[', text.find("\"values\"", bias)) + 1;
  std::string bad = text;
  bad.replace(start, text.find(']', start) - start, "\"x\"");
  EXPECT_NE(thrown<ModelFormatError>(bad).find("non-numeric"), std::string::npos);
}

TEST(NetConfigJson, RoundTripAndPartialDefaults) {
  const NetConfig full = NetConfig::full();
  EXPECT_EQ(config_from_json(config_to_json(full)), full);
  const NetConfig desk = NetConfig::desk();
  const NetConfig mixed = config_from_json(nlohmann::json{{"c2_maps", 12}}, &desk);
  EXPECT_EQ(mixed.c2_maps, 12u);
  EXPECT_EQ(mixed.window_h, desk.window_h);
  EXPECT_THROW(config_from_json(nlohmann::json{{"c2_maps", 12}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"c2_maps", -1}}, &desk), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"c4_bank", {{{"count", 1}, {"kh", 3}}}}}, &desk), Error);
}
