#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mcafu/config.hpp"

using namespace mcafu;

namespace {
StageSpec find_shape(const std::vector<std::pair<std::string, StageSpec>>& shapes,
                     const std::string& name) {
  for (const auto& [n, s] : shapes)
    if (n == name) return s;
  throw std::runtime_error("shape not found: " + name);
}
}  // namespace

TEST_CASE("default configs validate") {
  CHECK(validate_config(ModelConfig::full_v1()).ok());
  CHECK(validate_config(ModelConfig::full_v0()).ok());
  CHECK(validate_config(ModelConfig::tiny()).ok());
}

TEST_CASE("validation reports violations as data") {
  ModelConfig c = ModelConfig::full_v1();
  c.input_size = 225;
  c.bottleneck_pool = 14;
  auto r = validate_config(c);
  CHECK_FALSE(r.ok());
  bool found = false;
  for (const auto& v : r.violations) found = found || v.find("divisible by 32") != std::string::npos;
  CHECK(found);

  ModelConfig c2 = ModelConfig::full_v1();
  c2.stage_channels = {64, 64, 256, 512};
  auto r2 = validate_config(c2);
  CHECK_FALSE(r2.ok());
  bool mono = false;
  for (const auto& v : r2.violations) mono = mono || v.find("strictly increasing") != std::string::npos;
  CHECK(mono);
}

TEST_CASE("stage shape table matches the published dimension contract at 224") {
  auto shapes = expected_shapes(ModelConfig::full_v1());
  auto eq = [&](const std::string& n, int64_t res, int64_t ch) {
    auto s = find_shape(shapes, n);
    CHECK_MESSAGE((s.resolution == res && s.channels == ch),
                  n, " got (", s.resolution, ",", s.channels, ") want (", res, ",", ch, ")");
  };
  eq("I", 224, 3);
  eq("x_0", 224, 32);
  eq("x_0_pooled", 112, 32);
  eq("t_0", 56, 64);  eq("t_1", 28, 128);  eq("t_2", 14, 320);  eq("t_3", 7, 512);
  eq("r_0", 112, 64); eq("r_1", 56, 64);   eq("r_2", 28, 128);  eq("r_3", 14, 256);
  eq("x_1", 112, 64); eq("x_2", 56, 128);  eq("x_3", 28, 256);  eq("x_4", 14, 512);
  eq("coamamba", 28, 512);
  eq("x_5", 14, 512);
  eq("d_4", 28, 512); eq("dl_1", 28, 256);
  eq("d_3", 56, 256); eq("dl_2", 56, 128);
  eq("d_2", 112, 128); eq("dl_3", 112, 64);
  eq("d_1", 224, 64); eq("d_0", 224, 32);
  eq("logits", 224, 9);
}

TEST_CASE("shape table rescales linearly with input size") {
  ModelConfig c = ModelConfig::full_v1();
  c.input_size = 448;
  c.bottleneck_pool = 28;
  auto shapes = expected_shapes(c);
  CHECK(find_shape(shapes, "x_4").resolution == 28);
  CHECK(find_shape(shapes, "x_4").channels == 512);
  // ratios between consecutive stages match the 224 table
  auto s224 = expected_shapes(ModelConfig::full_v1());
  for (const auto& [name, spec] : shapes) {
    auto base = find_shape(s224, name);
    CHECK(spec.resolution * 224 == base.resolution * 448);
  }
}

TEST_CASE("V0 transformer widths differ from V1") {
  auto v0 = expected_shapes(ModelConfig::full_v0());
  CHECK(find_shape(v0, "t_2").channels == 160);
  CHECK(find_shape(v0, "t_2").resolution == 14);
}

TEST_CASE("tiny scaling rule") {
  auto shapes = expected_shapes(ModelConfig::tiny(3, 64));
  CHECK(find_shape(shapes, "r_0").resolution == 32);
  CHECK(find_shape(shapes, "r_0").channels == 8);
  CHECK(find_shape(shapes, "t_0").resolution == 16);
  CHECK(find_shape(shapes, "t_0").channels == 8);
  CHECK(find_shape(shapes, "x_5").resolution == 4);
}

TEST_CASE("kv config round trip and overrides") {
  TrainConfig c = TrainConfig::preset("synapse");
  CHECK(c.initial_lr == doctest::Approx(0.0025));
  CHECK(c.batch_size == 18);
  CHECK(c.alpha == doctest::Approx(0.8));
  CHECK(c.epochs == 100);
  CHECK(c.restart_period == doctest::Approx(2.0));

  std::istringstream in(dump_kv(c));
  auto kv = parse_kv_text(in);
  TrainConfig c2;
  apply_kv(c2, kv);
  CHECK(dump_kv(c2) == dump_kv(c));

  apply_kv(c2, {{"train.lr", "0.5"}});  // later sources win
  CHECK(c2.initial_lr == doctest::Approx(0.5));
  CHECK_THROWS_AS(apply_kv(c2, {{"no.such.key", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_kv(c2, {{"train.lr", "abc"}}), ConfigError);
}

TEST_CASE("per-dataset presets mirror the published setups") {
  auto acdc = TrainConfig::preset("acdc");
  CHECK(acdc.batch_size == 12);
  CHECK(acdc.initial_lr == doctest::Approx(0.01));
  CHECK(acdc.epochs == 400);
  CHECK(acdc.alpha == doctest::Approx(0.6));
  auto glas = TrainConfig::preset("glas");
  CHECK(glas.optimizer == OptimizerKind::adam);
  CHECK(glas.alpha == doctest::Approx(0.5));
  CHECK(glas.initial_lr == doctest::Approx(0.1));
  CHECK(glas.batch_size == 16);
  auto isic = TrainConfig::preset("isic");
  CHECK(isic.batch_size == 6);
  CHECK(isic.model.num_classes == 1);
  CHECK_THROWS_AS(TrainConfig::preset("imagenet"), ConfigError);
}
