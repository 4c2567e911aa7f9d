// Command-line entry point: dataset synthesis, the two training stages and
// their ablations, translation, evaluation and report rendering.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "overlord/overlord.hpp"

namespace fs = std::filesystem;
using namespace overlord;

namespace {

std::string default_out_root() {
  if (const char* env = std::getenv("OVERLORD_OUT")) return env;
  return "overlord_out";
}

report::RunConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return report::RunConfig::defaults();
  return report::RunConfig::parse_file(config_path);
}

std::string dataset_cache(const std::string& out_dir, const char* split) {
  return (fs::path(out_dir) / "data" / (std::string(split) + ".ovld"))
      .string();
}

// Synthetic datasets are cached under <out>/data and rebuilt from the config
// seed when missing, so `train` works without a prior `synth-data`.
data::Dataset<float> ensure_dataset(const report::RunConfig& cfg,
                                    const std::string& out_dir,
                                    const char* split) {
  const std::string path = dataset_cache(out_dir, split);
  if (fs::exists(path)) return data::load_dataset<float>(path);

  if (cfg.str("data.kind") == "folder") {
    if (std::string(split) != "train")
      throw std::runtime_error(
          "folder datasets provide a train split only; synthesize or cache "
          "an eval split separately");
    return data::load_folder_dataset<float>(
        cfg.str("data.image_dir"), cfg.str("data.labels_file"),
        cfg.str("data.masks_dir"), cfg.size("data.image_size"));
  }

  const auto spec = cfg.correlation_spec();
  const std::uint64_t seed = cfg.size("train.seed");
  const bool is_train = std::string(split) == "train";
  Rng rng = Rng::stream(seed, rng_tag::kDataset + (is_train ? 0 : 1));
  auto ds = data::build_dataset<float>(
      spec, cfg.size(is_train ? "data.n_train" : "data.n_eval"),
      cfg.size("data.image_size"), cfg.size("data.image_size"), rng,
      cfg.flag("data.with_masks"));
  fs::create_directories(fs::path(out_dir) / "data");
  data::save_dataset(path, ds);
  return ds;
}

train::RunArtifacts load_stage1_artifacts(const std::string& dir) {
  train::RunArtifacts art;
  art.out_dir = dir;
  art.bank = latent::load_bank<float>(
      (fs::path(dir) / "stage1" / "latents.ovlb").string());
  art.bundle = nets::load_bundle<float>(
      (fs::path(dir) / "stage1" / "model.ovlm").string());
  art.variant = art.bundle.has_ec ? "stage1" : "no_xcorr";
  return art;
}

Tensor<float> load_image_for_model(const std::string& path, std::size_t res) {
  Tensor<float> img = data::from_image8<float>(data::read_png(path));
  return data::resize_bilinear(img, res, res);
}

int run_synth_data(const report::RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.write_snapshot((fs::path(out_dir) / "config.snapshot").string());
  auto train_ds = ensure_dataset(cfg, out_dir, "train");
  auto eval_ds = ensure_dataset(cfg, out_dir, "eval");
  std::cout << "train split: " << train_ds.size() << " samples, eval split: "
            << eval_ds.size() << " samples, k=" << train_ds.k << "\n";
  return 0;
}

int run_train(const report::RunConfig& cfg, const std::string& out_dir,
              const std::string& stage, const std::string& stage1_dir) {
  fs::create_directories(out_dir);
  cfg.write_snapshot((fs::path(out_dir) / "config.snapshot").string());
  auto train_cfg = cfg.train_config();
  auto ds = ensure_dataset(cfg, out_dir, "train");

  train::RunArtifacts art;
  if (stage == "stage1") {
    art = train::train_stage1(ds, train_cfg, out_dir);
  } else if (stage == "amortized") {
    art = train::train_amortized_ablation(ds, train_cfg, out_dir);
  } else if (stage == "no-xcorr") {
    art = train::train_no_xcorr_ablation(ds, train_cfg, out_dir);
  } else if (stage == "stage2") {
    const std::string src = stage1_dir.empty() ? out_dir : stage1_dir;
    auto stage1 = load_stage1_artifacts(src);
    stage1.out_dir = src;
    art = train::train_stage2(stage1, ds, train_cfg, out_dir);
  } else {
    throw CLI::ValidationError(
        "stage must be one of stage1|stage2|amortized|no-xcorr");
  }
  std::cout << "trained " << art.variant << " into " << out_dir << "\n";
  if (!art.probe_curve.empty())
    std::cout << "final probe accuracy "
              << art.probe_curve.back().second << " (chance "
              << 1.0 / double(ds.k) << ")\n";
  return 0;
}

int run_translate(const report::RunConfig& cfg, const std::string& out_dir,
                  const std::string& source_path, const std::string& ref_path,
                  long long ref_label, bool use_ey,
                  const std::string& to_path) {
  auto art = train::load_checkpoint(out_dir);
  const std::size_t res = art.bundle.dims.H;
  Tensor<float> source = load_image_for_model(source_path, res);
  train::Reference ref;
  if (!ref_path.empty()) ref.image = load_image_for_model(ref_path, res);
  if (ref_label >= 0) ref.label = std::size_t(ref_label);
  auto rep_opts = cfg.report_options();
  Tensor<float> out = train::translate(art.bundle, art.bank, source, ref,
                                       use_ey, rep_opts.t_inference);
  data::write_png(to_path, data::to_image8(out));
  std::cout << "wrote " << to_path << "\n";
  return 0;
}

int run_evaluate(const report::RunConfig& cfg, const std::string& out_dir) {
  auto art = train::load_checkpoint(out_dir);
  auto train_ds = ensure_dataset(cfg, out_dir, "train");
  auto eval_ds = ensure_dataset(cfg, out_dir, "eval");

  std::optional<eval::OracleSet<float>> oracles;
  if (eval_ds.has_factors()) {
    Rng orng = Rng::stream(cfg.size("train.seed"), rng_tag::kOracle);
    oracles = eval::fit_oracles(train_ds, orng, {}, cfg.size("data.m"));
    std::cout << "oracles: y_acc=" << oracles->y_acc
              << " corr_acc=" << oracles->corr_acc
              << " pose_err=" << oracles->pose_error << "\n";
  }
  auto rep = eval::full_report(art, train_ds, eval_ds,
                               oracles ? &*oracles : nullptr,
                               cfg.report_options());
  report::save_report(rep, out_dir);
  std::cout << report::report_to_text(rep);
  return 0;
}

int run_report(const report::RunConfig& cfg, const std::string& out_dir,
               const std::string& compare_tsv) {
  auto eval_ds = ensure_dataset(cfg, out_dir, "eval");

  // Curves, when the run produced them.
  const auto curve_tsv = fs::path(out_dir) / "curves" / "probe_by_epoch.tsv";
  if (fs::exists(curve_tsv)) {
    std::vector<std::string> files = {curve_tsv.string()};
    if (!compare_tsv.empty()) files.push_back(compare_tsv);
    report::emit_curves_from_files(files, 1.0 / double(eval_ds.k),
                                   (fs::path(out_dir) / "curves.png").string());
    std::cout << "wrote " << (fs::path(out_dir) / "curves.png").string()
              << "\n";
  }

  auto art = train::load_checkpoint(out_dir);
  if (art.bundle.has_eu) {
    report::GridSpec spec;
    for (std::size_t i = 0; i < std::min<std::size_t>(4, eval_ds.size()); ++i)
      spec.sources.push_back(i);
    std::vector<std::size_t> per_class(eval_ds.k, 0);
    for (std::size_t i = 0;
         i < eval_ds.size() && spec.references.size() < 2 * eval_ds.k; ++i) {
      if (per_class[eval_ds.labels[i]] < 2) {
        ++per_class[eval_ds.labels[i]];
        spec.references.push_back(i);
      }
    }
    report::render_grid_png(spec, art, eval_ds,
                            (fs::path(out_dir) / "grid.png").string(),
                            cfg.report_options().t_inference);
    std::cout << "wrote " << (fs::path(out_dir) / "grid.png").string() << "\n";
  }
  return 0;
}

// The latent-optimization vs amortization comparison: trains both variants
// on the same data and renders their probe curves against the chance line.
int run_ablate(const report::RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.write_snapshot((fs::path(out_dir) / "config.snapshot").string());
  auto train_cfg = cfg.train_config();
  auto ds = ensure_dataset(cfg, out_dir, "train");

  const std::string latent_dir = (fs::path(out_dir) / "latent_opt").string();
  const std::string amort_dir = (fs::path(out_dir) / "amortized").string();
  auto latent_art = train::train_stage1(ds, train_cfg, latent_dir);
  auto amort_art = train::train_amortized_ablation(ds, train_cfg, amort_dir);

  report::emit_curves_from_files(
      {(fs::path(latent_dir) / "curves" / "probe_by_epoch.tsv").string(),
       (fs::path(amort_dir) / "curves" / "probe_by_epoch.tsv").string()},
      1.0 / double(ds.k), (fs::path(out_dir) / "curves.png").string());

  std::cout << "latent-optimization final probe: "
            << latent_art.probe_curve.back().second << "\n"
            << "amortized final probe:           "
            << amort_art.probe_curve.back().second << "\n"
            << "chance: " << 1.0 / double(ds.k) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage disentanglement framework (latent optimization + "
               "amortized adversarial synthesis)"};
  app.require_subcommand(1);

  std::string config_path, out_dir = default_out_root();
  long long seed_override = -1;
  app.add_option("--config", config_path, "run configuration file");
  app.add_option("--out", out_dir, "run/output directory");
  app.add_option("--seed", seed_override, "override train.seed");

  auto* synth = app.add_subcommand("synth-data", "build the synthetic benchmark");
  std::string stage;
  auto* tr = app.add_subcommand("train", "run a training stage");
  tr->add_option("stage", stage, "stage1|stage2|amortized|no-xcorr")
      ->required();
  std::string stage1_dir;
  tr->add_option("--stage1", stage1_dir,
                 "directory holding stage-1 artifacts (defaults to --out)");

  auto* tl = app.add_subcommand("translate", "translate one image");
  std::string source_path, ref_path, to_path = "translation.png";
  long long ref_label = -1;
  bool use_ey = false;
  tl->add_option("--source", source_path, "source image (PNG)")->required();
  tl->add_option("--reference", ref_path, "reference image (PNG)");
  tl->add_option("--label", ref_label, "target label id (table mode)");
  tl->add_flag("--use-ey", use_ey, "derive the label code from E_y(reference)");
  tl->add_option("--to", to_path, "output PNG path");

  auto* ev = app.add_subcommand("evaluate", "compute the metric report");
  auto* rp = app.add_subcommand("report", "render grid and curve figures");
  std::string compare_tsv;
  rp->add_option("--compare", compare_tsv,
                 "second probe-curve TSV to overlay");
  auto* ab = app.add_subcommand("ablate",
                                "latent-optimization vs amortized comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto cfg = load_config(config_path);
    if (seed_override >= 0)
      cfg.set("train.seed", std::to_string(seed_override));

    if (synth->parsed()) return run_synth_data(cfg, out_dir);
    if (tr->parsed()) return run_train(cfg, out_dir, stage, stage1_dir);
    if (tl->parsed())
      return run_translate(cfg, out_dir, source_path, ref_path, ref_label,
                           use_ey, to_path);
    if (ev->parsed()) return run_evaluate(cfg, out_dir);
    if (rp->parsed()) return run_report(cfg, out_dir, compare_tsv);
    if (ab->parsed()) return run_ablate(cfg, out_dir);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
