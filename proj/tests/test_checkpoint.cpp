#include <catch_amalgamated.hpp>

#include "psrp/pretrain.hpp"
#include "test_util.hpp"

using namespace psrp;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.section = "encoder";
  c.header = {{"a", "1"}, {"b.c", "two words"}, {"seed", "7"}};
  c.parameters = {1.5, -2.25, 1e-300, 3.0e200};
  c.moment1 = {0.1, 0.2, 0.3, 0.4};
  c.moment2 = {1, 2, 3, 4};
  c.optimizer_step = 42;
  c.log_tail = "epoch,step\n1,1\n";
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const auto c = sample_checkpoint();
  const auto bytes = serialize_checkpoint(c);
  CHECK(bytes.substr(0, 8) == "PSRPCKPT");
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back == c);
  CHECK(serialize_checkpoint(back) == bytes);

  testutil::TempDir dir("ckpt");
  save_checkpoint(dir / "x" / "a.ckpt", c);
  CHECK(load_checkpoint(dir / "x" / "a.ckpt") == c);
  CHECK(testutil::slurp(dir / "x" / "a.ckpt") == bytes);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto bytes = serialize_checkpoint(sample_checkpoint());

  SECTION("truncated") {
    for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}, std::size_t{3}}) {
      CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointError);
    }
  }
  SECTION("flipped byte") {
    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);
  }
  SECTION("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH(deserialize_checkpoint(bad), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("unknown version") {
    auto bad = bytes;
    bad[8] = 9;
    CHECK_THROWS_WITH(deserialize_checkpoint(bad), Catch::Matchers::ContainsSubstring("version 9"));
  }
  SECTION("missing file names the path") {
    testutil::TempDir dir("ckpt-missing");
    CHECK_THROWS_WITH(load_checkpoint(dir / "nope.ckpt"), Catch::Matchers::ContainsSubstring("nope.ckpt"));
  }
  SECTION("missing header key") {
    CHECK_THROWS_AS(sample_checkpoint().at("absent"), CheckpointError);
  }
}

TEST_CASE("encoder checkpoints") {
  const EncoderConfig cfg{8, 1, 2, 16, 3, 5, ResidueVocabulary::kSize};
  const auto racut_cfg = RAcutConfig::make(3, 15);
  const auto state = init_encoder(cfg, 9);
  auto opt = make_adam_state(state);
  opt.step = 3;
  PretrainConfig pcfg;
  const auto ckpt = make_encoder_checkpoint(state, opt, racut_cfg, pcfg, {5, 2, 3}, TrainLog{});

  CHECK(ckpt.at("provenance.global_seed") == "5");
  CHECK(ckpt.at("encoder.embed_dim") == "8");

  const auto loaded = encoder_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ckpt)), cfg);
  CHECK(nn::flatten_values(loaded) == nn::flatten_values(state));
  CHECK(loaded.config == cfg);
  CHECK(adam_state_from_checkpoint(ckpt) == opt);

  SECTION("shape mismatch reports the differing parameters") {
    EncoderConfig other = cfg;
    other.embed_dim = 12;
    try {
      encoder_from_checkpoint(ckpt, other);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("token_embedding") != std::string::npos);
      CHECK(msg.find("25x8") != std::string::npos);
      CHECK(msg.find("25x12") != std::string::npos);
    }
  }
  SECTION("wrong section") {
    auto c = ckpt;
    c.section = "cpi";
    CHECK_THROWS_AS(encoder_from_checkpoint(c), CheckpointError);
  }
}
