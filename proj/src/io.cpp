#include "cfan/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace cfan::io {

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

  template <typename U>
  void uint(U v) {
    char buf[sizeof(U)];
    for (std::size_t k = 0; k < sizeof(U); ++k) buf[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
    bytes(buf, sizeof(U));
  }

  void real(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("refusing to write non-finite value");
    uint(std::bit_cast<std::uint64_t>(v));
  }

  void reals(std::span<const double> v) {
    for (double x : v) real(x);
  }

  void str(const std::string& s) {
    if (s.size() > UINT32_MAX) throw std::invalid_argument("string too long");
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void finish() {
    os_.flush();
    if (!os_) throw std::runtime_error("write failed");
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, const char* what) : is_(is), what_(what) {}

  void bytes(char* p, std::size_t n) {
    is_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated");
  }

  template <typename U>
  U uint() {
    unsigned char buf[sizeof(U)];
    bytes(reinterpret_cast<char*>(buf), sizeof(U));
    U v = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(buf[k]) << (8 * k);
    return v;
  }

  double real() {
    const double v = std::bit_cast<double>(uint<std::uint64_t>());
    if (!std::isfinite(v)) fail("non-finite value");
    return v;
  }

  Vector reals(std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = real();
    return v;
  }

  std::string str() {
    const auto n = uint<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void header(const char magic[4]) {
    char m[4];
    bytes(m, 4);
    if (std::memcmp(m, magic, 4) != 0) fail("bad magic");
    const auto version = uint<std::uint16_t>();
    if (version > kFormatVersion) {
      fail("unsupported future format version " + std::to_string(version));
    }
    if (version == 0) fail("invalid format version 0");
  }

  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) fail("trailing bytes");
  }

  [[noreturn]] void fail(const std::string& why) const { throw std::runtime_error(std::string(what_) + ": " + why); }

 private:
  std::istream& is_;
  const char* what_;
};

template <typename F>
void with_output(const std::string& path, F&& fn) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  fn(os);
}

template <typename F>
auto with_input(const std::string& path, F&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return fn(is);
}

std::uint8_t encode_mode(PoolingMode m) { return static_cast<std::uint8_t>(m); }

PoolingMode decode_mode(std::uint8_t v, const Reader& r) {
  if (v > static_cast<std::uint8_t>(PoolingMode::cfan)) r.fail("unknown pooling mode");
  return static_cast<PoolingMode>(v);
}

}  // namespace

void write_feature_file(std::ostream& os, const FeatureFile& f) {
  Writer w(os);
  w.bytes("CFAN", 4);
  w.uint(kFormatVersion);
  w.uint(f.map_dim);
  w.uint(f.dim);
  w.uint(static_cast<std::uint64_t>(f.records.size()));
  for (const auto& r : f.records) {
    if (r.instance.feature_map.size() != f.map_dim || r.instance.embedding.size() != f.dim) {
      throw std::invalid_argument("record dims do not match feature file header");
    }
    w.str(r.subject_id);
    w.str(r.template_id);
    w.reals(r.instance.feature_map);
    w.reals(r.instance.embedding);
  }
  w.finish();
}

FeatureFile read_feature_file(std::istream& is) {
  Reader r(is, "feature file");
  r.header("CFAN");
  FeatureFile f;
  f.map_dim = r.uint<std::uint32_t>();
  f.dim = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    FeatureRecord rec;
    rec.subject_id = r.str();
    rec.template_id = r.str();
    rec.instance.feature_map = r.reals(f.map_dim);
    rec.instance.embedding = r.reals(f.dim);
    f.records.push_back(std::move(rec));
  }
  r.expect_end();
  return f;
}

void save_feature_file(const std::string& path, const FeatureFile& f) {
  with_output(path, [&](std::ostream& os) { write_feature_file(os, f); });
}

FeatureFile load_feature_file(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_feature_file(is); });
}

std::vector<Template> group_templates(const FeatureFile& f) {
  std::vector<Template> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& r : f.records) {
    auto [it, fresh] = index.try_emplace({r.subject_id, r.template_id}, out.size());
    if (fresh) out.push_back({r.subject_id, r.template_id, {}});
    out[it->second].instances.push_back(r.instance);
  }
  return out;
}

TrainingPool group_subjects(const FeatureFile& f) {
  TrainingPool pool;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : f.records) {
    auto [it, fresh] = index.try_emplace(r.subject_id, pool.size());
    if (fresh) pool.push_back({r.subject_id, {}});
    pool[it->second].instances.push_back(r.instance);
  }
  return pool;
}

void write_rep_file(std::ostream& os, const RepFile& f) {
  Writer w(os);
  w.bytes("CREP", 4);
  w.uint(kFormatVersion);
  w.uint(encode_mode(f.mode));
  w.uint(f.dim);
  w.uint(static_cast<std::uint64_t>(f.records.size()));
  for (const auto& r : f.records) {
    if (r.vector.size() != f.dim) throw std::invalid_argument("representation dim does not match header");
    w.str(r.subject_id);
    w.str(r.template_id);
    w.uint(r.n_instances);
    w.reals(r.vector);
  }
  w.finish();
}

RepFile read_rep_file(std::istream& is) {
  Reader r(is, "representation file");
  r.header("CREP");
  RepFile f;
  f.mode = decode_mode(r.uint<std::uint8_t>(), r);
  f.dim = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    RepRecord rec;
    rec.subject_id = r.str();
    rec.template_id = r.str();
    rec.n_instances = r.uint<std::uint64_t>();
    rec.vector = r.reals(f.dim);
    f.records.push_back(std::move(rec));
  }
  r.expect_end();
  return f;
}

void save_rep_file(const std::string& path, const RepFile& f) {
  with_output(path, [&](std::ostream& os) { write_rep_file(os, f); });
}

RepFile load_rep_file(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_rep_file(is); });
}

void write_quality_head(std::ostream& os, const QualityHead& head) {
  head.validate();
  Writer w(os);
  w.bytes("CFQH", 4);
  w.uint(kFormatVersion);
  w.uint(static_cast<std::uint8_t>(head.mode == QualityMode::component_wise ? 0 : 1));
  w.uint(static_cast<std::uint32_t>(head.map_dim()));
  w.uint(static_cast<std::uint32_t>(head.embedding_dim));
  w.uint(static_cast<std::uint32_t>(head.out_dim()));
  w.real(head.bn.eps);
  w.real(head.bn_momentum);
  w.reals(head.bn.gamma);
  w.reals(head.bn.beta);
  w.reals(head.running_mean);
  w.reals(head.running_var);
  w.reals(head.fc.weight.data());
  w.reals(head.fc.bias);
  w.finish();
}

QualityHead read_quality_head(std::istream& is) {
  Reader r(is, "model file");
  r.header("CFQH");
  QualityHead h;
  const auto mode = r.uint<std::uint8_t>();
  if (mode > 1) r.fail("unknown quality mode");
  h.mode = mode == 0 ? QualityMode::component_wise : QualityMode::instance_scalar;
  const auto m = r.uint<std::uint32_t>();
  h.embedding_dim = r.uint<std::uint32_t>();
  const auto out = r.uint<std::uint32_t>();
  h.bn.eps = r.real();
  h.bn_momentum = r.real();
  h.bn.gamma = r.reals(m);
  h.bn.beta = r.reals(m);
  h.running_mean = r.reals(m);
  h.running_var = r.reals(m);
  h.fc.weight = Matrix(m, out, r.reals(static_cast<std::size_t>(m) * out));
  h.fc.bias = r.reals(out);
  r.expect_end();
  try {
    h.validate();
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  return h;
}

void save_quality_head(const std::string& path, const QualityHead& head) {
  with_output(path, [&](std::ostream& os) { write_quality_head(os, head); });
}

QualityHead load_quality_head(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_quality_head(is); });
}

FeatureFile to_feature_file(const SyntheticDataset& ds, const TemplateLayout& layout) {
  FeatureFile f;
  f.map_dim = static_cast<std::uint32_t>(ds.config.map_dim);
  f.dim = static_cast<std::uint32_t>(ds.config.dim);
  const std::size_t n_subj = ds.subjects.size();
  const std::size_t first_unmated = layout.unmated_subjects >= n_subj ? 0 : n_subj - layout.unmated_subjects;
  for (std::size_t s = 0; s < n_subj; ++s) {
    const auto& subj = ds.subjects[s];
    const std::size_t gallery = s < first_unmated ? layout.gallery_size : 0;
    for (std::size_t i = 0; i < subj.instances.size(); ++i) {
      std::string tid;
      if (i < gallery) {
        tid = "g";
      } else {
        const std::size_t k = layout.probe_size == 0 ? 0 : (i - gallery) / layout.probe_size;
        tid = "p" + std::to_string(k);
      }
      f.records.push_back({subj.id, std::move(tid), subj.instances[i]});
    }
  }
  return f;
}

void RunConfig::set_seed(std::uint64_t seed) {
  noise.seed = seed;
  train.seed = seed;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument("bad value '" + v + "' for key '" + key + "'");
  return out;
}

double parse_real(const std::string& v, const std::string& key) {
  // from_chars for double is unavailable on older libstdc++
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) {
    throw std::invalid_argument("bad value '" + v + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("bad value '" + v + "' for key '" + key + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string val = trim(body.substr(eq + 1));
    auto sz = [&] { return parse_number<std::size_t>(val, key); };
    auto u64 = [&] { return parse_number<std::uint64_t>(val, key); };
    auto real = [&] { return parse_real(val, key); };
    try {
      if (key == "n_subjects") c.noise.n_subjects = sz();
      else if (key == "dim") c.noise.dim = sz();
      else if (key == "map_dim") c.noise.map_dim = sz();
      else if (key == "instances_per_subject") c.noise.instances_per_subject = sz();
      else if (key == "sigma_min") c.noise.sigma_min = real();
      else if (key == "sigma_max") c.noise.sigma_max = real();
      else if (key == "quality_latent_dim") c.noise.quality_latent_dim = sz();
      else if (key == "mix_seed") c.noise.mix_seed = u64();
      else if (key == "seed") c.set_seed(u64());
      else if (key == "alpha") c.train.alpha = real();
      else if (key == "lr") c.train.lr = real();
      else if (key == "momentum") c.train.momentum = real();
      else if (key == "weight_decay") c.train.weight_decay = real();
      else if (key == "steps") c.train.steps = sz();
      else if (key == "subjects_per_batch") c.train.subjects_per_batch = sz();
      else if (key == "templates_per_subject") c.train.templates_per_subject = sz();
      else if (key == "images_per_template") c.train.images_per_template = sz();
      else if (key == "noise_augment_sigma") c.train.noise_augment_sigma = real();
      else if (key == "normalize_reps") c.train.normalize_reps = parse_bool(val, key);
      else if (key == "bn_eps") c.train.bn_eps = real();
      else if (key == "mining") {
        if (val == "batch_hard") c.train.mining = MiningStrategy::batch_hard;
        else if (val == "all") c.train.mining = MiningStrategy::all;
        else throw std::invalid_argument("bad value '" + val + "' for key 'mining'");
      }
      else if (key == "mode") c.mode = parse_pooling_mode(val);
      else if (key == "gallery_size") c.layout.gallery_size = sz();
      else if (key == "probe_size") c.layout.probe_size = sz();
      else if (key == "unmated_subjects") c.layout.unmated_subjects = sz();
      else if (key == "data") c.data_path = val;
      else if (key == "model") c.model_path = val;
      else if (key == "out") c.out_path = val;
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.train.quality_latent_dim = c.noise.quality_latent_dim;
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

std::vector<PairEntry> parse_pair_list(const std::string& text) {
  std::vector<PairEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::istringstream ls(line);
    PairEntry p;
    std::string flag, extra;
    if (!(ls >> p.subject_a >> p.template_a >> p.subject_b >> p.template_b >> flag) || (ls >> extra) ||
        (flag != "0" && flag != "1")) {
      throw std::invalid_argument("pair list line " + std::to_string(lineno) +
                                  ": expected '<subject_a> <template_a> <subject_b> <template_b> <0|1>'");
    }
    p.same = flag == "1";
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PairEntry> load_pair_list(const std::string& path) { return parse_pair_list(read_text_file(path)); }

std::vector<std::pair<std::string, std::string>> load_template_manifest(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::istringstream ls(line);
    std::string s, t, extra;
    if (!(ls >> s >> t) || (ls >> extra)) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected '<subject_id> <template_id>'");
    }
    out.emplace_back(std::move(s), std::move(t));
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace cfan::io
