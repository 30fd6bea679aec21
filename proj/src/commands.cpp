#include "cfan/commands.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

#include "cfan/kernels.hpp"
#include "cfan/synthetic.hpp"
#include "cfan/training.hpp"

namespace cfan::cmd {

std::string gen_data(const io::RunConfig& cfg, const std::string& out_path) {
  if (cfg.noise.n_subjects == 0 || cfg.noise.instances_per_subject == 0) throw std::invalid_argument("empty dataset");
  const auto ds = generate(cfg.noise);
  const auto file = io::to_feature_file(ds, cfg.layout);
  io::save_feature_file(out_path, file);
  char buf[160];
  std::snprintf(buf, sizeof buf, "wrote %zu instances of %zu subjects (M=%u, D=%u)", file.records.size(),
                ds.subjects.size(), file.map_dim, file.dim);
  return buf;
}

std::string train(const io::RunConfig& cfg, const std::string& data_path, const std::string& model_path) {
  if (cfg.mode == PoolingMode::average) throw std::invalid_argument("average pooling has no trainable head");
  const auto file = io::load_feature_file(data_path);
  if (file.records.empty()) throw std::invalid_argument("empty dataset");
  TrainConfig tc = cfg.train;
  tc.head_mode = cfg.mode == PoolingMode::cfan ? QualityMode::component_wise : QualityMode::instance_scalar;
  if (tc.noise_augment_sigma > 0.0 && tc.quality_latent_dim > std::min(file.map_dim, file.dim)) {
    throw std::invalid_argument("quality_latent_dim exceeds the data's dims");
  }
  if (tc.noise_augment_sigma == 0.0) tc.quality_latent_dim = 0;
  const auto result = cfan::train(io::group_subjects(file), file.map_dim, file.dim, tc);
  io::save_quality_head(model_path, result.head);
  std::string log;
  for (const auto& e : result.log) log += format_log_line(e) + "\n";
  return log;
}

void aggregate(const std::string& data_path, const std::optional<std::string>& model_path, PoolingMode mode,
               const std::string& out_path, const std::optional<std::string>& manifest_path) {
  const auto file = io::load_feature_file(data_path);
  std::optional<QualityHead> head;
  if (mode != PoolingMode::average) {
    if (!model_path) throw std::invalid_argument(std::string(to_string(mode)) + " pooling needs --model");
    head = io::load_quality_head(*model_path);
    if (head->map_dim() != file.map_dim) throw std::invalid_argument("model map dim does not match data");
  }

  auto templates = io::group_templates(file);
  if (manifest_path) {
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (std::size_t k = 0; k < templates.size(); ++k) index[{templates[k].subject_id, templates[k].template_id}] = k;
    std::vector<Template> ordered;
    for (const auto& [s, t] : io::load_template_manifest(*manifest_path)) {
      const auto it = index.find({s, t});
      ordered.push_back(it == index.end() ? Template{s, t, {}} : templates[it->second]);
    }
    templates = std::move(ordered);
  }

  const auto reps = kernels::aggregate_templates_parallel(templates, head ? &*head : nullptr, mode, file.dim);
  io::RepFile out;
  out.mode = mode;
  out.dim = file.dim;
  for (std::size_t k = 0; k < templates.size(); ++k) {
    out.records.push_back({templates[k].subject_id, templates[k].template_id, reps[k].n_instances, reps[k].vector});
  }
  io::save_rep_file(out_path, out);
}

namespace {

Matrix stack_records(const std::vector<const io::RepRecord*>& recs, std::size_t dim) {
  Matrix m(recs.size(), dim);
  for (std::size_t k = 0; k < recs.size(); ++k) std::copy(recs[k]->vector.begin(), recs[k]->vector.end(), m.row(k).begin());
  return m;
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string identification_report(const Gallery& gallery, const ProbeSet& probes, const EvaluateOptions& opts) {
  const Truth truth = match_probes(probes, gallery);
  const Matrix scores = score_matrix(probes.reps, gallery.reps);

  EvalReport report;
  Truth mated_truth;
  EmptyFlags mated_empty;
  std::vector<std::size_t> mated_rows;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (truth[p] != kUnmated) {
      mated_truth.push_back(truth[p]);
      mated_empty.push_back(probes.empty[p]);
      mated_rows.push_back(p);
    }
  }
  if (!mated_rows.empty()) {
    Matrix mated_scores(mated_rows.size(), scores.cols());
    for (std::size_t k = 0; k < mated_rows.size(); ++k)
      std::copy(scores.row(mated_rows[k]).begin(), scores.row(mated_rows[k]).end(), mated_scores.row(k).begin());
    report.cmc = closed_set_ir(mated_scores, mated_truth, opts.ranks, mated_empty);
    if (opts.curves_prefix) {
      std::string csv = "rank,ir\n";
      const auto curve = cmc_curve(mated_scores, mated_truth, mated_empty);
      for (std::size_t k = 0; k < curve.size(); ++k) csv += std::to_string(k + 1) + "," + fmt_real(curve[k]) + "\n";
      io::write_text_file(*opts.curves_prefix + "_cmc.csv", csv);
    }
  }
  if (mated_rows.size() < truth.size()) report.tpir = open_set_tpir(scores, truth, opts.fpir_targets, probes.empty);
  return format_report(report);
}

std::string verification_report(const io::RepFile& reps, const std::vector<io::PairEntry>& pairs,
                                const EvaluateOptions& opts) {
  std::map<std::pair<std::string, std::string>, const io::RepRecord*> index;
  for (const auto& r : reps.records) {
    if (!index.emplace(std::pair{r.subject_id, r.template_id}, &r).second) {
      throw std::invalid_argument("duplicate template '" + r.subject_id + " " + r.template_id + "'");
    }
  }
  auto find = [&](const std::string& s, const std::string& t) {
    const auto it = index.find({s, t});
    if (it == index.end()) throw std::invalid_argument("pair references unknown template '" + s + " " + t + "'");
    return it->second;
  };
  std::vector<double> scores, genuine, impostor;
  std::vector<bool> same;
  for (const auto& p : pairs) {
    const double s = cosine_similarity(find(p.subject_a, p.template_a)->vector, find(p.subject_b, p.template_b)->vector);
    scores.push_back(s);
    same.push_back(p.same);
    (p.same ? genuine : impostor).push_back(s);
  }
  EvalReport report;
  if (!genuine.empty() && !impostor.empty()) {
    report.tar = verification_tar(genuine, impostor, opts.far_targets);
    if (opts.curves_prefix) {
      std::string csv = "threshold,far,tar\n";
      for (const auto& pt : roc_curve(genuine, impostor))
        csv += fmt_real(pt.threshold) + "," + fmt_real(pt.far) + "," + fmt_real(pt.tar) + "\n";
      io::write_text_file(*opts.curves_prefix + "_roc.csv", csv);
    }
  }
  report.pairs = pair_protocol(scores, same, opts.folds);
  return format_report(report);
}

}  // namespace

std::pair<Gallery, ProbeSet> split_gallery(const io::RepFile& reps, const std::string& gallery_template) {
  std::vector<const io::RepRecord*> g, p;
  for (const auto& r : reps.records) (r.template_id == gallery_template ? g : p).push_back(&r);
  Gallery gallery;
  ProbeSet probes;
  for (auto* r : g) gallery.subject_ids.push_back(r->subject_id);
  for (auto* r : p) {
    probes.subject_ids.push_back(r->subject_id);
    probes.empty.push_back(r->n_instances == 0);
  }
  gallery.reps = stack_records(g, reps.dim);
  probes.reps = stack_records(p, reps.dim);
  return {std::move(gallery), std::move(probes)};
}

std::string evaluate(const EvaluateOptions& opts) {
  if (opts.pairs_path) {
    if (!opts.reps_path) throw std::invalid_argument("pair protocol needs --reps");
    return verification_report(io::load_rep_file(*opts.reps_path), io::load_pair_list(*opts.pairs_path), opts);
  }
  Gallery gallery;
  ProbeSet probes;
  if (opts.probe_path && opts.gallery_path) {
    const auto pf = io::load_rep_file(*opts.probe_path);
    const auto gf = io::load_rep_file(*opts.gallery_path);
    if (pf.dim != gf.dim) throw std::invalid_argument("probe and gallery dims differ");
    std::vector<const io::RepRecord*> pr, gr;
    for (const auto& r : pf.records) pr.push_back(&r);
    for (const auto& r : gf.records) gr.push_back(&r);
    for (auto* r : pr) {
      probes.subject_ids.push_back(r->subject_id);
      probes.empty.push_back(r->n_instances == 0);
    }
    for (auto* r : gr) gallery.subject_ids.push_back(r->subject_id);
    probes.reps = stack_records(pr, pf.dim);
    gallery.reps = stack_records(gr, gf.dim);
  } else if (opts.reps_path) {
    std::tie(gallery, probes) = split_gallery(io::load_rep_file(*opts.reps_path), opts.gallery_template);
  } else {
    throw std::invalid_argument("evaluate needs --probe and --gallery, or --reps");
  }
  if (gallery.subject_ids.empty()) throw std::invalid_argument("gallery is empty");
  if (probes.subject_ids.empty()) throw std::invalid_argument("no probes");
  return identification_report(gallery, probes, opts);
}

std::string analyze_corr(const std::string& data_path) {
  const auto file = io::load_feature_file(data_path);
  if (file.records.empty()) throw std::invalid_argument("empty dataset");
  std::vector<Matrix> groups;
  for (const auto& s : io::group_subjects(file)) groups.push_back(stack_embeddings(s.instances));
  const Matrix corr = intra_class_correlation(groups);
  std::string csv;
  for (std::size_t a = 0; a < corr.rows(); ++a) {
    for (std::size_t b = 0; b < corr.cols(); ++b) {
      if (b > 0) csv += ",";
      csv += fmt_real(corr(a, b));
    }
    csv += "\n";
  }
  return csv;
}

}  // namespace cfan::cmd
