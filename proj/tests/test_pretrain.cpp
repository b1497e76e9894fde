#include <catch_amalgamated.hpp>

#include <fstream>

#include "psrp/pretrain.hpp"
#include "psrp/synthetic.hpp"
#include "test_util.hpp"

using namespace psrp;
using Catch::Approx;

namespace {

const EncoderConfig kEnc{16, 1, 2, 32, 4, 12, ResidueVocabulary::kSize};
const RAcutConfig kCut = RAcutConfig::make(4, 48);

PretrainConfig small_config() {
  PretrainConfig c;
  c.epochs = 2;
  c.lr = 1e-3;
  c.batch_size = 8;
  c.sinkhorn.m = 5;
  c.eval_sinkhorn_iterations = 10;
  c.global_seed = 17;
  c.validation_fraction = 0.1;
  return c;
}

PretrainDataset small_dataset(std::size_t count = 40) {
  return motif_dataset(count, MotifConfig{}, 3, 48);
}

std::vector<PretrainExample> fixed_batch(const PretrainDataset& ds, std::size_t count) {
  std::vector<PretrainExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(make_pretrain_example(ds.proteins[i], kCut, NoiseSpec::identity(), 100 + i));
  }
  return out;
}

}  // namespace

TEST_CASE("PretrainConfig validation and key-value round trip") {
  auto c = small_config();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  c = small_config();
  c.noise = NoiseSpec::identity();
  c.keep_epoch_checkpoints = true;
  KeyValues kv;
  write_kv(c, kv);
  const auto back = pretrain_config_from_kv(kv);
  CHECK(back.epochs == c.epochs);
  CHECK(back.lr == c.lr);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.sinkhorn.m == c.sinkhorn.m);
  CHECK(back.global_seed == c.global_seed);
  CHECK(back.noise.kind == NoiseSpec::Kind::Identity);
  CHECK(back.keep_epoch_checkpoints);
}

TEST_CASE("pretrain_step") {
  const auto ds = small_dataset();
  const auto batch = fixed_batch(ds, 8);

  SECTION("zero learning rate leaves parameters unchanged") {
    auto state = init_encoder(kEnc, 1);
    auto opt = make_adam_state(state);
    auto cfg = small_config();
    cfg.lr = 0.0;
    const auto before = nn::flatten_values(state);
    const auto rec = pretrain_step(state, opt, batch, cfg);
    CHECK(nn::flatten_values(state) == before);
    CHECK(opt.step == 1);
    CHECK(rec.step == 1);
  }
  SECTION("reported loss is the mean reorder loss plus the decay term") {
    auto state = init_encoder(kEnc, 1);
    auto opt = make_adam_state(state);
    const auto cfg = small_config();
    double nll = 0.0;
    for (const auto& ex : batch) {
      nll += reorder_loss(ex.target, predict_q(state, ex.shuffled, cfg.sinkhorn).values, cfg.sinkhorn.eps);
    }
    const double expected = nll / 8 + 0.5 * cfg.weight_decay * nn::squared_norm(state);
    CHECK(pretrain_step(state, opt, batch, cfg).loss == Approx(expected).epsilon(1e-12));
  }
  SECTION("repeated steps on one batch drive the loss below half its start") {
    auto state = init_encoder(kEnc, 2);
    auto opt = make_adam_state(state);
    const auto cfg = small_config();
    const double first = pretrain_step(state, opt, batch, cfg).loss;
    double last = first;
    for (int i = 1; i < 50; ++i) last = pretrain_step(state, opt, batch, cfg).loss;
    CHECK(last < 0.5 * first);
  }
  SECTION("mismatched example size") {
    auto state = init_encoder(kEnc, 1);
    auto opt = make_adam_state(state);
    const auto other = make_pretrain_example(ds.proteins[0], RAcutConfig::make(3, 48), NoiseSpec::identity(), 1);
    CHECK_THROWS_AS(pretrain_step(state, opt, std::span(&other, 1), small_config()), DimensionError);
  }
  SECTION("empty batch") {
    auto state = init_encoder(kEnc, 1);
    auto opt = make_adam_state(state);
    CHECK_THROWS_AS(pretrain_step(state, opt, {}, small_config()), ValidationError);
  }
}

TEST_CASE("pretrain_run is reproducible") {
  const auto ds = small_dataset();
  const auto a = pretrain_run(ds, kEnc, kCut, small_config());
  const auto b = pretrain_run(ds, kEnc, kCut, small_config());
  CHECK(serialize_checkpoint(a.last) == serialize_checkpoint(b.last));
  CHECK(serialize_checkpoint(a.best) == serialize_checkpoint(b.best));
  CHECK(a.log.tail(1000) == b.log.tail(1000));
  CHECK(a.validation_accuracy == b.validation_accuracy);

  auto other_cfg = small_config();
  other_cfg.global_seed = 18;
  const auto c = pretrain_run(ds, kEnc, kCut, other_cfg);
  CHECK(nn::flatten_values(c.state) != nn::flatten_values(a.state));

  SECTION("bookkeeping") {
    CHECK(a.train_size + a.validation_size == ds.proteins.size());
    CHECK(a.validation_size == 4);
    CHECK(a.validation_accuracy.size() == 2);
    CHECK(a.log.steps.size() == 2 * 5);  // 36 training proteins in batches of 8
    for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
      CHECK(a.log.steps[i].step == i + 1);
      CHECK(std::isfinite(a.log.steps[i].loss));
      CHECK(a.log.steps[i].perm_acc >= 0.0);
      CHECK(a.log.steps[i].perm_acc <= 1.0);
    }
    CHECK(a.last.at("provenance.epoch") == "2");
    CHECK(a.best.at("provenance.epoch") == std::to_string(a.best_epoch));
    CHECK(a.last.log_tail.find("wall") == std::string::npos);
  }
}

TEST_CASE("pretrain_run input handling") {
  SECTION("proteins shorter than n are skipped") {
    auto ds = small_dataset(20);
    ds.proteins.push_back(encode_protein("MKT", ResidueVocabulary{}, 48));
    const auto r = pretrain_run(ds, kEnc, kCut, small_config());
    CHECK(r.skipped == 1);
    CHECK(r.train_size + r.validation_size == 20);
  }
  SECTION("no admissible protein") {
    PretrainDataset ds;
    ds.proteins.push_back(encode_protein("MKT", ResidueVocabulary{}, 48));
    CHECK_THROWS_AS(pretrain_run(ds, kEnc, kCut, small_config()), ValidationError);
  }
  SECTION("encoder and cut disagree") {
    CHECK_THROWS_AS(pretrain_run(small_dataset(10), kEnc, RAcutConfig::make(3, 48), small_config()),
                    ValidationError);
  }
  SECTION("zero epochs") {
    auto cfg = small_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(pretrain_run(small_dataset(10), kEnc, kCut, cfg), ValidationError);
  }
}

TEST_CASE("pretrain_run writes its outputs") {
  testutil::TempDir dir("pretrain");
  auto cfg = small_config();
  cfg.keep_epoch_checkpoints = true;
  const auto r = pretrain_run(small_dataset(), kEnc, kCut, cfg, {dir.path(), {{"note", "x"}}});

  for (const char* f : {"train_log.csv", "last.ckpt", "best.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(load_checkpoint(dir / "last.ckpt") == r.last);
  CHECK(load_checkpoint(dir / "best.ckpt") == r.best);
  CHECK(r.last.at("note") == "x");

  std::ifstream in(dir / "train_log.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == TrainLog::kHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == r.log.steps.size());
}
