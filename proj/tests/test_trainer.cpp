#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "overlord/core/serialize.hpp"
#include "overlord/train/trainer.hpp"

using namespace overlord;
using namespace overlord::train;
namespace fs = std::filesystem;

namespace {

// 16x16 toy scale: fast enough for behaviour tests while exercising the
// full training machinery.
TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.arch.base_channels = 8;
  cfg.arch.num_scales = 3;  // 16x16
  cfg.arch.channel_cap = 32;
  cfg.arch.enc_base_channels = 8;
  cfg.dims.d_y = 8;
  cfg.dims.d_c = 4;
  cfg.dims.d_u = 8;
  cfg.dims.H = cfg.dims.W = 16;
  cfg.epochs_stage1 = 4;
  cfg.epochs_stage2 = 3;
  cfg.batch_size = 8;
  cfg.probe_curve = false;
  cfg.checkpoint_every = 0;
  cfg.seed = 11;
  return cfg;
}

data::Dataset<float> toy_dataset(std::size_t n, std::uint64_t seed = 5) {
  Rng rng(seed);
  return data::build_dataset<float>(
      synth::CorrelationSpec::default_benchmark(), n, 16, 16, rng, true);
}

std::uint64_t bundle_checksum(nets::ModelBundle<float>& b) {
  std::uint64_t h = 0;
  for (auto group :
       {b.params_g(), b.params_ec(), b.params_ey(), b.params_eu(),
        b.params_d()})
    for (auto& [name, tensor] : group) h ^= io::tensor_checksum(*tensor);
  return h;
}

}  // namespace

TEST_CASE("stage 1 reduces the reconstruction loss on a toy set",
          "[trainer]") {
  auto ds = toy_dataset(8);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 500;  // one full-batch step per epoch: 500 steps
  cfg.batch_size = 8;
  cfg.log_every = 1;

  const auto dir = fs::temp_directory_path() / "ovl_toy_stage1";
  fs::remove_all(dir);
  auto art = train_stage1(ds, cfg, dir.string());

  // Parse the loss log and compare smoothed windows at both ends.
  std::ifstream log(dir / "loss.log");
  REQUIRE(log.good());
  std::vector<double> rec;
  std::string line;
  while (std::getline(log, line)) {
    std::istringstream row(line);
    std::size_t step;
    std::string name;
    double value;
    row >> step >> name >> value;
    if (name == "rec") rec.push_back(value);
  }
  REQUIRE(rec.size() >= 60);
  const std::size_t w = std::min<std::size_t>(50, rec.size() / 2);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < w; ++i) {
    head += rec[i];
    tail += rec[rec.size() - 1 - i];
  }
  INFO("head mean " << head / w << " tail mean " << tail / w);
  CHECK(tail / w < head / w);
  fs::remove_all(dir);
}

TEST_CASE("stage 1 is bitwise deterministic for a fixed seed", "[trainer]") {
  auto ds = toy_dataset(24);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 2;
  auto a = train_stage1(ds, cfg);
  auto b = train_stage1(ds, cfg);
  CHECK(bitwise_equal(a.bank.u_prime, b.bank.u_prime));
  CHECK(bitwise_equal(a.bank.y_embed, b.bank.y_embed));
  CHECK(bundle_checksum(a.bundle) == bundle_checksum(b.bundle));
}

TEST_CASE("stage 2 distills encoders and never touches the bank",
          "[trainer]") {
  auto ds = toy_dataset(24);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 3;
  auto stage1 = train_stage1(ds, cfg);
  const std::uint64_t bank_sum = io::tensor_checksum(stage1.bank.u_prime) ^
                                 io::tensor_checksum(stage1.bank.y_embed);

  SECTION("adversarial run: bank frozen, artifacts complete") {
    auto stage2 = train_stage2(stage1, ds, cfg);
    CHECK((io::tensor_checksum(stage2.bank.u_prime) ^
           io::tensor_checksum(stage2.bank.y_embed)) == bank_sum);
    CHECK(stage2.bundle.has_eu);
    CHECK(stage2.bundle.has_ey);
    CHECK(stage2.bundle.has_d);
    CHECK(stage2.variant == "stage2");
  }

  SECTION("lambda_adv = 0 stays stable and reduces the synthesis loss") {
    TrainConfig noadv = cfg;
    noadv.weights.lambda_adv = 0;
    noadv.epochs_stage2 = 6;
    noadv.log_every = 1;
    const auto dir = fs::temp_directory_path() / "ovl_toy_noadv";
    fs::remove_all(dir);
    auto stage2 = train_stage2(stage1, ds, noadv, dir.string());
    CHECK_FALSE(stage2.bundle.has_d);

    std::ifstream log(dir / "loss.log");
    std::vector<double> totals;
    std::string line;
    while (std::getline(log, line)) {
      std::istringstream row(line);
      std::size_t step;
      std::string name;
      double value;
      row >> step >> name >> value;
      if (name == "synth_total") totals.push_back(value);
    }
    REQUIRE(totals.size() >= 4);
    CHECK(totals.back() < totals.front());
    for (double v : totals) CHECK(std::isfinite(v));
    fs::remove_all(dir);
  }
}

TEST_CASE("no-xcorr ablation removes the correlated branch", "[trainer]") {
  auto ds = toy_dataset(24);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 2;
  auto art = train_no_xcorr_ablation(ds, cfg);
  CHECK_FALSE(art.bundle.has_ec);
  CHECK(art.bundle.latent_dim() == cfg.dims.d_y + cfg.dims.d_u);
  CHECK(art.variant == "no_xcorr");

  // Runs through stage 2 with the same epoch count as the full model.
  auto stage2 = train_stage2(art, ds, cfg);
  CHECK_FALSE(stage2.bundle.has_ec);
  CHECK(stage2.bundle.has_eu);
}

TEST_CASE("amortized ablation emits a full probe curve and leaks at init",
          "[trainer][slow]") {
  auto ds = toy_dataset(400, 7);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 3;
  cfg.probe_curve = true;
  cfg.probe.epochs = 120;

  const auto dir = fs::temp_directory_path() / "ovl_toy_amort";
  fs::remove_all(dir);
  auto art = train_amortized_ablation(ds, cfg, dir.string());

  // epochs + 1 rows, including the epoch-0 probe.
  CHECK(art.probe_curve.size() == cfg.epochs_stage1 + 1);
  std::ifstream curve(dir / "curves" / "probe_by_epoch.tsv");
  REQUIRE(curve.good());
  std::size_t rows = 0;
  std::string line;
  while (std::getline(curve, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.epochs_stage1 + 1);

  // A randomly initialized encoder leaks the labeled attribute.
  CHECK(art.probe_curve.front().second > 1.0 / 3.0 + 0.2);
  fs::remove_all(dir);
}

TEST_CASE("translate contract", "[trainer]") {
  auto ds = toy_dataset(24);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 2;
  cfg.epochs_stage2 = 2;
  auto stage1 = train_stage1(ds, cfg);

  SECTION("stage-1-only artifacts direct the user to stage 2") {
    Tensor<float> src = ds.image(0);
    Reference ref;
    ref.label = 1;
    ref.image = ds.image(1);
    try {
      translate(stage1.bundle, stage1.bank, src, ref);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("stage2") != std::string::npos);
    }
  }

  auto stage2 = train_stage2(stage1, ds, cfg);

  SECTION("reference = source reproduces the amortized reconstruction") {
    Tensor<float> src = ds.image(3);
    Reference ref;
    ref.image = src;
    Tensor<float> out = translate(stage2.bundle, stage2.bank, src, ref,
                                  /*use_ey=*/true);
    Tensor<float> recon = reconstruct(stage2.bundle, src);
    // Identical code paths: feature-loss distance is zero.
    ad::Tape<float> t;
    loss::FeatureLossConfig fl;
    Tensor<float> a = out.reshaped({1, 16, 16, 3});
    Tensor<float> b = recon.reshaped({1, 16, 16, 3});
    auto* d = loss::reconstruction_loss(t, t.constant(std::move(a)),
                                        t.constant(std::move(b)), fl);
    CHECK(double(d->value[0]) <= 1e-6);
  }

  SECTION("table-mode reference label changes the output") {
    Tensor<float> src = ds.image(0);
    Reference ref;
    ref.label = (ds.labels[0] + 1) % 3;
    ref.image = ds.image(1);
    Tensor<float> out = translate(stage2.bundle, stage2.bank, src, ref);
    CHECK(out.all_finite());
    CHECK_FALSE(bitwise_equal(out, src));
  }
}

TEST_CASE("non-finite losses abort with a diagnostic", "[trainer]") {
  auto ds = toy_dataset(8);
  ds.images[5] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 1;
  try {
    train_stage1(ds, cfg);
    FAIL("expected an abort");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip through run directories", "[trainer]") {
  auto ds = toy_dataset(24);
  TrainConfig cfg = toy_config();
  cfg.epochs_stage1 = 2;
  cfg.epochs_stage2 = 2;

  const auto dir = fs::temp_directory_path() / "ovl_toy_ckpt";
  fs::remove_all(dir);
  auto stage1 = train_stage1(ds, cfg, (dir / "run").string());
  auto loaded = load_checkpoint((dir / "run").string());
  CHECK(bitwise_equal(loaded.bank.u_prime, stage1.bank.u_prime));
  CHECK(bundle_checksum(loaded.bundle) == bundle_checksum(stage1.bundle));
  CHECK(loaded.variant == "stage1");

  // Feeding the loaded stage-1 checkpoint into stage 2 works and records
  // provenance.
  auto stage2 = train_stage2(loaded, ds, cfg, (dir / "run2").string());
  CHECK(stage2.stage1_source == (dir / "run").string());
  auto reloaded = load_checkpoint((dir / "run2").string());
  CHECK(reloaded.variant == "stage2");
  CHECK(reloaded.stage1_source == (dir / "run").string());
  CHECK(bundle_checksum(reloaded.bundle) == bundle_checksum(stage2.bundle));
  fs::remove_all(dir);
}
