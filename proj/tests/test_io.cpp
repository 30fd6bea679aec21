#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "cfan/io.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cfan;
using namespace cfan::testing;

namespace {

io::FeatureFile sample_features(std::mt19937_64& rng) {
  io::FeatureFile f;
  f.map_dim = 3;
  f.dim = 2;
  for (std::size_t k = 0; k < 7; ++k) {
    f.records.push_back({"s" + std::to_string(k % 3), k < 4 ? "a" : "b", {random_vector(3, rng), random_vector(2, rng)}});
  }
  f.records[0].subject_id = "sübject";  // non-ASCII survives
  return f;
}

template <typename Write>
std::string serialize(Write write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

io::FeatureFile parse_features(const std::string& bytes) {
  std::istringstream is(bytes);
  return io::read_feature_file(is);
}

// Every corruption of a valid byte string that a reader must reject.
template <typename Read>
void check_rejects_corruption(const std::string& bytes, Read read) {
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    std::istringstream is(bytes.substr(0, len));
    CHECK_THROWS_AS(read(is), std::runtime_error);
  }
  {
    std::istringstream is(bytes + '\0');
    CHECK_THROWS_WITH_AS(read(is), doctest::Contains("trailing"), std::runtime_error);
  }
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream m(bad_magic);
  CHECK_THROWS_WITH_AS(read(m), doctest::Contains("magic"), std::runtime_error);
  for (std::uint8_t v : {std::uint8_t{0}, std::uint8_t{2}}) {
    std::string ver = bytes;
    ver[4] = static_cast<char>(v);
    std::istringstream is(ver);
    CHECK_THROWS_WITH_AS(read(is), doctest::Contains("version"), std::runtime_error);
  }
  std::string nan = bytes;
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 8, &q, 8);
  std::istringstream n(nan);
  CHECK_THROWS_WITH_AS(read(n), doctest::Contains("non-finite"), std::runtime_error);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cfan_test_io_" + name)).string();
}

}  // namespace

TEST_CASE("feature file round trip and layout") {
  std::mt19937_64 rng(1);
  const auto f = sample_features(rng);
  const auto bytes = serialize([&](std::ostream& os) { io::write_feature_file(os, f); });
  CHECK(bytes.substr(0, 4) == "CFAN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(parse_features(bytes) == f);

  const auto path = temp_path("features.bin");
  io::save_feature_file(path, f);
  CHECK(io::load_feature_file(path) == f);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(io::load_feature_file(path), std::runtime_error);

  check_rejects_corruption(bytes, [](std::istream& is) { return io::read_feature_file(is); });

  auto bad = f;
  bad.records[2].instance.embedding.push_back(0.0);
  std::ostringstream os;
  CHECK_THROWS_AS(io::write_feature_file(os, bad), std::invalid_argument);
  bad = f;
  bad.records[1].instance.feature_map[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(io::write_feature_file(os, bad), std::invalid_argument);
}

TEST_CASE("grouping records") {
  std::mt19937_64 rng(2);
  const auto f = sample_features(rng);
  const auto templates = io::group_templates(f);
  // (sübject,a) (s1,a) (s2,a) (s0,a) (s1,b) (s2,b) (s0,b)
  REQUIRE(templates.size() == 7);
  CHECK(templates[0].subject_id == "sübject");
  CHECK(templates[3].subject_id == "s0");
  CHECK(templates[3].template_id == "a");
  CHECK(templates[6].template_id == "b");
  CHECK(templates[6].instances[0] == f.records[6].instance);

  const auto pool = io::group_subjects(f);
  REQUIRE(pool.size() == 4);
  CHECK(pool[1].id == "s1");
  CHECK(pool[1].instances.size() == 2);
  CHECK(pool[3].id == "s0");
}

TEST_CASE("rep file round trip") {
  std::mt19937_64 rng(3);
  io::RepFile r;
  r.mode = PoolingMode::instance;
  r.dim = 4;
  r.records.push_back({"a", "g", 3, random_vector(4, rng)});
  r.records.push_back({"b", "p0", 0, Vector(4, 0.0)});
  const auto bytes = serialize([&](std::ostream& os) { io::write_rep_file(os, r); });
  CHECK(bytes.substr(0, 4) == "CREP");
  std::istringstream is(bytes);
  CHECK(io::read_rep_file(is) == r);
  check_rejects_corruption(bytes, [](std::istream& s) { return io::read_rep_file(s); });
}

TEST_CASE("quality head round trip preserves aggregation") {
  std::mt19937_64 rng(4);
  for (auto mode : {QualityMode::component_wise, QualityMode::instance_scalar}) {
    auto h = QualityHead::initialize(5, 3, mode, rng);
    h.bn.gamma = random_vector(5, rng);
    h.running_mean = random_vector(5, rng);
    h.running_var = random_vector(5, rng, 0.1, 2.0);
    const auto bytes = serialize([&](std::ostream& os) { io::write_quality_head(os, h); });
    CHECK(bytes.substr(0, 4) == "CFQH");
    std::istringstream is(bytes);
    const auto back = io::read_quality_head(is);
    CHECK(back.mode == h.mode);
    CHECK(back.bn.gamma == h.bn.gamma);
    CHECK(back.bn.eps == h.bn.eps);
    CHECK(back.running_var == h.running_var);
    CHECK(back.fc.weight == h.fc.weight);
    CHECK(back.fc.bias == h.fc.bias);

    Template t{"x", "g", {}};
    for (int i = 0; i < 4; ++i) t.instances.push_back({random_vector(5, rng), random_vector(3, rng)});
    const auto pm = mode == QualityMode::component_wise ? PoolingMode::cfan : PoolingMode::instance;
    CHECK(aggregate_template(t, &back, pm, 3).vector == aggregate_template(t, &h, pm, 3).vector);
    check_rejects_corruption(bytes, [](std::istream& s) { return io::read_quality_head(s); });
  }
}

TEST_CASE("synthetic dataset template layout") {
  NoiseModelConfig c;
  c.n_subjects = 4;
  c.dim = 3;
  c.map_dim = 5;
  c.quality_latent_dim = 2;
  c.instances_per_subject = 12;
  const auto ds = generate(c);
  const auto f = io::to_feature_file(ds, {1, 5, 1});
  CHECK(f.map_dim == 5);
  CHECK(f.dim == 3);
  REQUIRE(f.records.size() == 48);
  CHECK(f.records[0].template_id == "g");
  CHECK(f.records[1].template_id == "p0");
  CHECK(f.records[5].template_id == "p0");
  CHECK(f.records[6].template_id == "p1");
  CHECK(f.records[11].template_id == "p2");
  // last subject is unmated: no gallery template
  CHECK(f.records[36].template_id == "p0");
  CHECK(f.records[41].template_id == "p1");
  CHECK(f.records[36].subject_id == ds.subjects[3].id);
  CHECK(f.records[36].instance == ds.subjects[3].instances[0]);
}

TEST_CASE("run config parsing") {
  const auto cfg = io::parse_run_config(
      "# comment\n"
      "n_subjects = 50\n"
      "dim=8\n"
      "map_dim = 16   # trailing comment\n"
      "quality_latent_dim = 4\n"
      "\n"
      "seed = 9\n"
      "lr = 0.005\n"
      "mining = all\n"
      "mode = instance\n"
      "normalize_reps = false\n"
      "gallery_size = 2\n"
      "data = /tmp/x.bin\n");
  CHECK(cfg.noise.n_subjects == 50);
  CHECK(cfg.noise.dim == 8);
  CHECK(cfg.noise.map_dim == 16);
  CHECK(cfg.noise.quality_latent_dim == 4);
  CHECK(cfg.train.quality_latent_dim == 4);
  CHECK(cfg.noise.seed == 9);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.lr == 0.005);
  CHECK(cfg.train.mining == MiningStrategy::all);
  CHECK(cfg.mode == PoolingMode::instance);
  CHECK_FALSE(cfg.train.normalize_reps);
  CHECK(cfg.layout.gallery_size == 2);
  CHECK(cfg.data_path == "/tmp/x.bin");
  CHECK_FALSE(cfg.model_path.has_value());

  CHECK_THROWS_WITH_AS(io::parse_run_config("dim = 4\nbogus = 1\n"), doctest::Contains("line 2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(io::parse_run_config("bogus = 1\n"), doctest::Contains("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_run_config("dim = four\n"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_run_config("dim = -3\n"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_run_config("lr = 0.1x\n"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_run_config("dim\n"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_run_config("mode = median\n"), std::invalid_argument);
}

TEST_CASE("pair list and manifest") {
  const auto pairs = io::parse_pair_list("a g b g 0\n# c\n\na p0 a p1 1\n");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].subject_b == "b");
  CHECK_FALSE(pairs[0].same);
  CHECK(pairs[1].template_b == "p1");
  CHECK(pairs[1].same);
  CHECK_THROWS_WITH_AS(io::parse_pair_list("a g b g 0\na g b\n"), doctest::Contains("line 2"), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_pair_list("a g b g 2\n"), std::invalid_argument);

  const auto path = temp_path("manifest.txt");
  io::write_text_file(path, "s1 g\ns2 p0\n");
  const auto m = io::load_template_manifest(path);
  REQUIRE(m.size() == 2);
  CHECK(m[1] == std::pair<std::string, std::string>{"s2", "p0"});
  io::write_text_file(path, "s1\n");
  CHECK_THROWS_AS(io::load_template_manifest(path), std::invalid_argument);
  std::filesystem::remove(path);
}
