#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfan/evaluation.hpp"
#include "cfan/io.hpp"

// Subcommand bodies, callable in-process. The CLI binary only parses flags.
namespace cfan::cmd {

/// Generates a synthetic dataset and writes it as a feature file.
/// Returns a one-line summary.
std::string gen_data(const io::RunConfig& cfg, const std::string& out_path);

/// Trains a quality head on a feature file and writes the model.
/// Returns the training log, one `step <n> loss <v> active_triplets <k>` line per step.
std::string train(const io::RunConfig& cfg, const std::string& data_path, const std::string& model_path);

/// Aggregates every template of a feature file (plus empty templates named
/// in an optional manifest) and writes a representation file.
void aggregate(const std::string& data_path, const std::optional<std::string>& model_path, PoolingMode mode,
               const std::string& out_path, const std::optional<std::string>& manifest_path = std::nullopt);

struct EvaluateOptions {
  std::optional<std::string> probe_path;
  std::optional<std::string> gallery_path;
  std::optional<std::string> reps_path;
  std::optional<std::string> pairs_path;
  std::string gallery_template = "g";
  std::vector<std::size_t> ranks = {1, 5, 10};
  std::vector<double> fpir_targets = {0.01, 0.10};
  std::vector<double> far_targets = {0.001, 0.01};
  std::size_t folds = 10;
  std::optional<std::string> curves_prefix;
};

/// Identification (probe/gallery files, or one rep file split on
/// `gallery_template`) or verification (rep file + pair list). Returns the
/// report text.
std::string evaluate(const EvaluateOptions& opts);

/// Absolute intra-class correlation matrix of the embeddings as CSV.
std::string analyze_corr(const std::string& data_path);

/// Splits a rep file into a gallery (records whose template id matches) and probes.
std::pair<Gallery, ProbeSet> split_gallery(const io::RepFile& reps, const std::string& gallery_template);

}  // namespace cfan::cmd
