#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cfan/aggregation.hpp"
#include "cfan/synthetic.hpp"
#include "cfan/training.hpp"

namespace cfan::io {

// All binary formats are little-endian: 4-byte magic, u16 version, then a
// format-specific header. Strings are u32 length + UTF-8 bytes, reals are
// IEEE-754 binary64. Readers reject unknown magic, future versions,
// truncation, trailing bytes and non-finite reals.
inline constexpr std::uint16_t kFormatVersion = 1;

struct FeatureRecord {
  std::string subject_id;
  std::string template_id;
  FeatureInstance instance;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// "CFAN" | version u16 | M u32 | D u32 | count u64 | records
struct FeatureFile {
  std::uint32_t map_dim = 0;
  std::uint32_t dim = 0;
  std::vector<FeatureRecord> records;

  friend bool operator==(const FeatureFile&, const FeatureFile&) = default;
};

void write_feature_file(std::ostream& os, const FeatureFile& f);
FeatureFile read_feature_file(std::istream& is);
void save_feature_file(const std::string& path, const FeatureFile& f);
FeatureFile load_feature_file(const std::string& path);

/// Groups records by (subject_id, template_id) in order of first appearance.
std::vector<Template> group_templates(const FeatureFile& f);

/// Groups records by subject_id in order of first appearance.
TrainingPool group_subjects(const FeatureFile& f);

struct RepRecord {
  std::string subject_id;
  std::string template_id;
  std::uint64_t n_instances = 0;
  Vector vector;

  friend bool operator==(const RepRecord&, const RepRecord&) = default;
};

/// "CREP" | version u16 | mode u8 | D u32 | count u64 | records
/// (subject_id, template_id, n_instances u64, D reals)
struct RepFile {
  PoolingMode mode = PoolingMode::average;
  std::uint32_t dim = 0;
  std::vector<RepRecord> records;

  friend bool operator==(const RepFile&, const RepFile&) = default;
};

void write_rep_file(std::ostream& os, const RepFile& f);
RepFile read_rep_file(std::istream& is);
void save_rep_file(const std::string& path, const RepFile& f);
RepFile load_rep_file(const std::string& path);

/// "CFQH" | version u16 | mode u8 | M u32 | D u32 | out u32 | eps | bn momentum |
/// gamma[M] | beta[M] | running_mean[M] | running_var[M] | weight[M*out] | bias[out]
void write_quality_head(std::ostream& os, const QualityHead& head);
QualityHead read_quality_head(std::istream& is);
void save_quality_head(const std::string& path, const QualityHead& head);
QualityHead load_quality_head(const std::string& path);

/// Template ids used when writing a synthetic dataset: the first
/// `gallery_size` instances of a mated subject form template "g", the rest
/// are cut into probe templates "p0", "p1", ... of `probe_size` instances.
/// The last `unmated_subjects` subjects get no gallery template.
struct TemplateLayout {
  std::size_t gallery_size = 1;
  std::size_t probe_size = 5;
  std::size_t unmated_subjects = 0;
};

FeatureFile to_feature_file(const SyntheticDataset& ds, const TemplateLayout& layout);

/// Key-value run configuration (`key = value`, `#` comments).
struct RunConfig {
  NoiseModelConfig noise;
  TrainConfig train;
  TemplateLayout layout;
  PoolingMode mode = PoolingMode::cfan;
  std::optional<std::string> data_path;
  std::optional<std::string> model_path;
  std::optional<std::string> out_path;

  void set_seed(std::uint64_t seed);
};

/// Unknown keys and malformed values are rejected with the offending line number.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Template pair list for the verification protocol: one pair per line,
/// `<subject_a> <template_a> <subject_b> <template_b> <0|1>`.
struct PairEntry {
  std::string subject_a, template_a, subject_b, template_b;
  bool same = false;
};

std::vector<PairEntry> parse_pair_list(const std::string& text);
std::vector<PairEntry> load_pair_list(const std::string& path);

/// Template manifest: `<subject_id> <template_id>` per line. Templates listed
/// here without records are empty.
std::vector<std::pair<std::string, std::string>> load_template_manifest(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cfan::io
