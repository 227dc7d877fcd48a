#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ubnn/interchange.hpp"

namespace ubnn {
namespace {

namespace ic = interchange;

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

Error schema_error(const ic::json& doc) {
  try {
    ic::from_json(doc);
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "accepted";
  return Error(ErrorCode::kIo, "");
}

TEST(Base64, KnownVectors) {
  EXPECT_EQ(ic::base64_encode(bytes_of("")), "");
  EXPECT_EQ(ic::base64_encode(bytes_of("f")), "Zg==");
  EXPECT_EQ(ic::base64_encode(bytes_of("fo")), "Zm8=");
  EXPECT_EQ(ic::base64_encode(bytes_of("foo")), "Zm9v");
  EXPECT_EQ(ic::base64_encode(bytes_of("foobar")), "Zm9vYmFy");
  EXPECT_EQ(ic::base64_decode("Zm9vYg==", "$"), bytes_of("foob"));
  EXPECT_EQ(ic::encode_words(std::vector<Word>{0x04030201u}), "AQIDBA==");
}

TEST(Base64, RoundTrip) {
  random::Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::uint8_t> b(rng() % 40);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng());
    ASSERT_EQ(ic::base64_decode(ic::base64_encode(b), "$"), b);
  }
}

TEST(Base64, RejectsMalformed) {
  for (const char* bad : {"Zg=", "Zg=A", "Z===", "Zm9v!A==", "Zg==Zg=="}) {
    EXPECT_THROW(ic::base64_decode(bad, "$"), Error) << bad;
  }
  EXPECT_THROW(ic::decode_words("Zg==", "$"), Error);
}

TEST(ModelJson, RoundTrip) {
  random::Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto net = testing::random_network(rng);
    const auto doc = ic::network_to_json(net);
    const auto text = doc.dump();
    const auto back = ic::network_from_json(ic::parse(text));
    ASSERT_EQ(back, net);
    ASSERT_EQ(ic::network_to_json(back).dump(), text);
  }
}

TEST(ModelJson, ConvertThenLoadEqualsDirect) {
  random::Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto net = testing::random_network(rng);
    const auto doc = ic::parse(ic::network_to_json(net).dump());
    const auto bytes = ic::to_binary(ic::from_json(doc));
    const Engine direct(ic::network_from_json(doc));
    const Engine loaded(deserialize(bytes));
    for (int k = 0; k < 20; ++k) {
      const auto row = random::input_row(rng, net.input);
      const auto x = make_input(net.input, row);
      const auto a = direct.run(x);
      const auto b = loaded.run(x);
      ASSERT_EQ(a.scores, b.scores);
      ASSERT_EQ(a.prediction, b.prediction);
    }
    // Converting twice gives identical bytes.
    ASSERT_EQ(ic::to_binary(ic::from_json(doc)), bytes);
  }
}

TEST(ModelJson, NonPowerOfTwoChannelsNamesField) {
  random::Rng rng(4);
  auto doc = ic::network_to_json(testing::walk_min(rng));
  doc["layers"][0]["c_out"] = 3;
  const auto e = schema_error(doc);
  EXPECT_EQ(e.code(), ErrorCode::kSchema);
  EXPECT_NE(std::string(e.what()).find("$.layers[0].c_out"), std::string::npos) << e.what();
}

TEST(ModelJson, SchemaErrorsCarryPaths) {
  random::Rng rng(5);
  const auto good = ic::network_to_json(testing::walk_min(rng));
  struct Case {
    std::function<void(ic::json&)> mutate;
    const char* path;
  };
  const std::vector<Case> cases{
      {[](ic::json& d) { d.erase("n_classes"); }, "$.n_classes"},
      {[](ic::json& d) { d["input"]["domain"] = "float"; }, "$.input.domain"},
      {[](ic::json& d) { d["layers"][1]["k"] = 100; }, "$.layers[1].k"},
      {[](ic::json& d) { d["layers"][1]["thresholds"][1]["direction"] = "GT"; }, "$.layers[1].thresholds[1].direction"},
      {[](ic::json& d) { d["layers"][0]["weights"] = "AAAA"; }, "$.layers[0].weights"},
      {[](ic::json& d) { d["layers"][2]["stride"] = 2; }, "$.layers[2].stride"},
      {[](ic::json& d) { d["layers"][3]["score_bias"] = {1}; }, "$.layers[3].score_bias"},
      {[](ic::json& d) { d["layers"][3]["type"] = "dense"; }, "$.layers[3].type"},
      {[](ic::json& d) { d["layers"].erase(3); }, "$"},
      {[](ic::json& d) { d["format"] = "onnx"; }, "$.format"},
  };
  for (const auto& c : cases) {
    auto doc = good;
    c.mutate(doc);
    const auto e = schema_error(doc);
    EXPECT_EQ(e.code(), ErrorCode::kSchema) << c.path;
    EXPECT_NE(std::string(e.what()).find(c.path), std::string::npos) << e.what();
  }
  auto version = good;
  version["version"] = 2;
  EXPECT_EQ(schema_error(version).code(), ErrorCode::kVersionMismatch);
}

TEST(ModelJson, PaddingBitsRejected) {
  random::Rng rng(6);
  auto net = testing::walk_min(rng);
  std::get<Int8ConvLayer>(net.layers[0]).weights[0] |= 1u;  // 21 valid bits per filter
  auto doc = ic::network_to_json(testing::walk_min(rng));
  doc["layers"][0]["weights"] = ic::encode_words(std::get<Int8ConvLayer>(net.layers[0]).weights);
  const auto e = schema_error(doc);
  EXPECT_EQ(e.code(), ErrorCode::kSchema);
  EXPECT_NE(std::string(e.what()).find("$.layers[0]"), std::string::npos) << e.what();
}

TEST(ForestJson, RoundTrip) {
  random::Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    std::vector<rf::Tree> trees;
    const std::size_t classes = 2 + rng() % 5;
    for (std::size_t t = 0; t < 1 + rng() % 10; ++t) trees.push_back(random::tree(rng, 8, classes, rf::kFeatureCount));
    auto f = rf::flatten(trees, classes, rf::kFeatureCount);
    f.quantizer = random::quantizer(rng, rf::kFeatureCount);
    const auto text = ic::forest_to_json(f).dump();
    const auto back = std::get<rf::Forest>(ic::from_json(ic::parse(text)));
    ASSERT_EQ(back, f);
    ASSERT_EQ(ic::to_binary(back), rf::serialize(f));
  }
}

TEST(ForestJson, MalformedIsSchemaError) {
  random::Rng rng(8);
  auto f = rf::flatten(std::vector<rf::Tree>{random::tree(rng, 4, 2, 3, 1.0)}, 2, 3);
  f.quantizer = random::quantizer(rng, 3);
  auto doc = ic::forest_to_json(f);
  doc["nodes"][0][2] = 0;
  EXPECT_EQ(schema_error(doc).code(), ErrorCode::kSchema);
  doc = ic::forest_to_json(f);
  doc["leaves"][0] = {1, 2, 3};
  EXPECT_NE(std::string(schema_error(doc).what()).find("$.leaves[0]"), std::string::npos);
}

TEST(Manifest, RoundTripAndChecks) {
  ic::Manifest m;
  m.kind = ic::Manifest::Kind::kFeatures;
  m.row_size = 3;
  m.inputs = {{1, -2, 127}, {-128, 0, 5}};
  m.predictions = {1, 0};
  const auto doc = ic::manifest_to_json(m);
  const auto back = ic::manifest_from_json(doc, 3, 2);
  EXPECT_EQ(back.kind, m.kind);
  EXPECT_EQ(back.inputs, m.inputs);
  EXPECT_EQ(back.predictions, m.predictions);

  EXPECT_THROW(ic::manifest_from_json(doc, 4, 2), Error);  // wrong row size
  EXPECT_THROW(ic::manifest_from_json(doc, 3, 1), Error);  // prediction out of range
  auto bad = doc;
  bad["kind"] = "images";
  EXPECT_THROW(ic::manifest_from_json(bad, 3, 2), Error);
}

TEST(Parse, InvalidJsonIsSchemaError) {
  try {
    ic::parse("{\"format\": ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchema);
  }
}

}  // namespace
}  // namespace ubnn
