#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cfan/commands.hpp"

namespace {

cfan::io::RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto cfg = path.empty() ? cfan::io::RunConfig{} : cfan::io::load_run_config(path);
  if (seed) cfg.set_seed(*seed);
  return cfg;
}

std::string require(const std::string& flag_value, const std::optional<std::string>& from_config, const char* flag) {
  if (!flag_value.empty()) return flag_value;
  if (from_config) return *from_config;
  throw std::invalid_argument(std::string("missing ") + flag);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    cfan::io::write_text_file(out_path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Component-wise feature aggregation: data generation, training, pooling and evaluation"};
  app.require_subcommand(1);

  std::string config_path, data_path, model_path, out_path, mode_name, log_path, manifest_path;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic noise-model dataset");
  gen->add_option("--config", config_path, "Run configuration file");
  gen->add_option("--seed", seed, "Override the configured seed");
  gen->add_option("--out", out_path, "Output feature file");

  auto* tr = app.add_subcommand("train", "Train a quality head with the template triplet loss");
  tr->add_option("--config", config_path, "Run configuration file");
  tr->add_option("--data", data_path, "Training feature file");
  tr->add_option("--seed", seed, "Override the configured seed");
  tr->add_option("--mode", mode_name, "Head type: cfan or instance")->check(CLI::IsMember({"instance", "cfan"}));
  tr->add_option("--out", out_path, "Output model file");
  tr->add_option("--log", log_path, "Write the training log here instead of stdout");

  auto* agg = app.add_subcommand("aggregate", "Fuse every template into one representation");
  agg->add_option("--data", data_path, "Feature file")->required();
  agg->add_option("--model", model_path, "Quality head (instance/cfan modes)");
  agg->add_option("--mode", mode_name, "average | instance | cfan")
      ->required()
      ->check(CLI::IsMember({"average", "instance", "cfan"}));
  agg->add_option("--manifest", manifest_path, "Template list; listed templates without records are empty");
  agg->add_option("--out", out_path, "Output representation file")->required();

  cfan::cmd::EvaluateOptions eval;
  std::string probe, gallery, reps, pairs, curves;
  auto* ev = app.add_subcommand("evaluate", "Identification or verification metrics");
  ev->add_option("--probe", probe, "Probe representation file");
  ev->add_option("--gallery", gallery, "Gallery representation file");
  ev->add_option("--reps", reps, "Single representation file (split by --gallery-template, or used with --pairs)");
  ev->add_option("--pairs", pairs, "Pair list for the verification protocol");
  ev->add_option("--gallery-template", eval.gallery_template, "Template id that marks gallery entries");
  ev->add_option("--ranks", eval.ranks, "CMC ranks");
  ev->add_option("--fpir", eval.fpir_targets, "FPIR targets");
  ev->add_option("--far", eval.far_targets, "FAR targets");
  ev->add_option("--folds", eval.folds, "Folds for the pair protocol");
  ev->add_option("--curves", curves, "Write <prefix>_cmc.csv / <prefix>_roc.csv");
  ev->add_option("--out", out_path, "Report file (default stdout)");

  auto* corr = app.add_subcommand("analyze-corr", "Intra-class component correlation matrix (CSV)");
  corr->add_option("--data", data_path, "Feature file")->required();
  corr->add_option("--out", out_path, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const auto cfg = load_config(config_path, seed);
      std::cerr << cfan::cmd::gen_data(cfg, require(out_path, cfg.out_path, "--out")) << "\n";
    } else if (*tr) {
      auto cfg = load_config(config_path, seed);
      if (!mode_name.empty()) cfg.mode = cfan::parse_pooling_mode(mode_name);
      const auto log = cfan::cmd::train(cfg, require(data_path, cfg.data_path, "--data"),
                                        require(out_path, cfg.model_path ? cfg.model_path : cfg.out_path, "--out"));
      emit(log, log_path);
    } else if (*agg) {
      cfan::cmd::aggregate(data_path, model_path.empty() ? std::nullopt : std::optional(model_path),
                           cfan::parse_pooling_mode(mode_name), out_path,
                           manifest_path.empty() ? std::nullopt : std::optional(manifest_path));
    } else if (*ev) {
      if (!probe.empty()) eval.probe_path = probe;
      if (!gallery.empty()) eval.gallery_path = gallery;
      if (!reps.empty()) eval.reps_path = reps;
      if (!pairs.empty()) eval.pairs_path = pairs;
      if (!curves.empty()) eval.curves_prefix = curves;
      emit(cfan::cmd::evaluate(eval), out_path);
    } else if (*corr) {
      emit(cfan::cmd::analyze_corr(data_path), out_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "cfan: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
