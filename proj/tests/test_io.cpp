#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <unistd.h>

#include "bdh/checkpoint.hpp"
#include "bdh/csv.hpp"
#include "bdh/run_config.hpp"
#include "bdh/threads.hpp"

using namespace bdh;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("bdh_io_" + std::to_string(std::rand()) + "_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ModelConfig small() {
  ModelConfig c;
  c.n = 32;
  c.d = 8;
  c.layers = 2;
  c.heads = 2;
  c.vocab_size = 16;
  c.alibi_gamma = {0.9, 0.99};
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Independent encoder for the on-disk layout, byte by byte.
struct Blob {
  std::string bytes;
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes += s;
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u64(t.shape().size());
    for (auto e : t.shape()) u64(e);
    for (float f : t.values()) u32(std::bit_cast<std::uint32_t>(f));
  }
};

using NamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

NamedTensors all_tensors(const ModelParams& p) {
  return {{"encoder", &p.encoder},         {"decoder_x", &p.decoder_x}, {"decoder_y", &p.decoder_y},
          {"token_embedding", &p.token_embedding}, {"readout", &p.readout},     {"rope_freqs", &p.rope_freqs}};
}

std::string build(const json& meta, const NamedTensors& tensors, std::uint32_t version = 1) {
  Blob b;
  b.bytes = "BDHC";
  b.u32(version);
  b.str(meta.dump());
  b.u64(tensors.size());
  for (const auto& [name, t] : tensors) b.tensor(name, *t);
  return b.bytes;
}

json meta_for(const ModelConfig& c, std::uint64_t step) { return {{"config", to_json(c)}, {"step", step}}; }

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  TempDir dir;
  auto p = init_params<float>(small(), 3);
  p.encoder.values()[0] = -0.0f;
  p.encoder.values()[1] = 1e-40f;  // subnormal
  save_checkpoint(p, 1234, dir.file("a.bdhc"));
  auto back = load_checkpoint(dir.file("a.bdhc"));
  CHECK(back.step == 1234);
  CHECK(back.params.config == p.config);
  auto want = all_tensors(p), got = all_tensors(back.params);
  for (std::size_t k = 0; k < want.size(); ++k) {
    CAPTURE(want[k].first);
    CHECK(bit_identical(*want[k].second, *got[k].second));
  }
  CHECK(std::signbit(back.params.encoder.values()[0]));
}

TEST_CASE("checkpoint bytes follow the documented layout") {
  TempDir dir;
  auto p = init_params<float>(small(), 4);
  save_checkpoint(p, 7, dir.file("a.bdhc"));
  const auto bytes = slurp(dir.file("a.bdhc"));
  REQUIRE(bytes.size() > 4);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x42);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0x44);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x48);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x43);
  // A hand-encoded file with the same content loads to the same model.
  spit(dir.file("b.bdhc"), build(meta_for(p.config, 7), all_tensors(p)));
  auto b = load_checkpoint(dir.file("b.bdhc"));
  CHECK(b.step == 7);
  CHECK(bit_identical(b.params.decoder_y, p.decoder_y));
  CHECK(bit_identical(b.params.readout, p.readout));
  // No temporary files are left behind.
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
  CHECK(files == 2);
}

TEST_CASE("truncated checkpoints fail with a format error") {
  TempDir dir;
  auto p = init_params<float>(small(), 5);
  save_checkpoint(p, 1, dir.file("a.bdhc"));
  const auto bytes = slurp(dir.file("a.bdhc"));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{20}, bytes.size() / 2,
                          bytes.size() - 1}) {
    CAPTURE(cut);
    spit(dir.file("t.bdhc"), bytes.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(dir.file("t.bdhc")), CheckpointError);
  }
  spit(dir.file("x.bdhc"), bytes + "z");
  CHECK_THROWS_AS(load_checkpoint(dir.file("x.bdhc")), CheckpointError);
  auto bad = bytes;
  bad[0] = 'X';
  spit(dir.file("m.bdhc"), bad);
  CHECK_THROWS_AS(load_checkpoint(dir.file("m.bdhc")), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.bdhc")), CheckpointError);
}

TEST_CASE("version mismatch is reported as unsupported") {
  TempDir dir;
  auto p = init_params<float>(small(), 6);
  spit(dir.file("v.bdhc"), build(meta_for(p.config, 0), all_tensors(p), 2));
  CHECK_THROWS_AS(load_checkpoint(dir.file("v.bdhc")), UnsupportedVersion);
  try {
    load_checkpoint(dir.file("v.bdhc"));
  } catch (const UnsupportedVersion& e) {
    CHECK(std::string(e.what()).find("version 2") != std::string::npos);
  }
}

TEST_CASE("strict tensor and config validation on load") {
  TempDir dir;
  auto p = init_params<float>(small(), 7);
  auto tensors = all_tensors(p);

  SUBCASE("n not divisible by heads") {
    auto c = p.config;
    c.heads = 3;
    spit(dir.file("a.bdhc"), build(meta_for(c, 0), tensors));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("empty tensor list") {
    spit(dir.file("a.bdhc"), build(meta_for(p.config, 0), {}));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("extra unknown tensor") {
    auto more = tensors;
    more.emplace_back("bias", &p.readout);
    spit(dir.file("a.bdhc"), build(meta_for(p.config, 0), more));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("missing tensor") {
    auto fewer = tensors;
    fewer.pop_back();
    spit(dir.file("a.bdhc"), build(meta_for(p.config, 0), fewer));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("duplicate tensor") {
    auto dup = tensors;
    dup.push_back(tensors.front());
    spit(dir.file("a.bdhc"), build(meta_for(p.config, 0), dup));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("shape disagrees with config") {
    auto c = p.config;
    c.d = 4;
    spit(dir.file("a.bdhc"), build(meta_for(c, 0), tensors));
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
  SUBCASE("garbage metadata") {
    Blob b;
    b.bytes = "BDHC";
    b.u32(1);
    b.str("{not json");
    spit(dir.file("a.bdhc"), b.bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("a.bdhc")), CheckpointError);
  }
}

TEST_CASE("save reports the path on I/O failure") {
  auto p = init_params<float>(small(), 8);
  const std::string path = "/nonexistent_dir_for_bdh/x.bdhc";
  try {
    save_checkpoint(p, 0, path);
    FAIL("expected an error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find(path) != std::string::npos);
  }
}

TEST_CASE("run config round trip and strictness") {
  RunConfig r;
  r.model = small();
  r.train.steps = 17;
  r.train.warmup_steps = 3;
  r.task.seed = 99;
  r.task.repetition.word_len = 5;
  r.output_dir = "out_x";
  r.checkpoint_every = 4;
  const auto j = to_json(r);
  const auto back = run_config_from_json(j);
  CHECK(back.model == r.model);
  CHECK(back.train.steps == 17);
  CHECK(back.task.seed == 99);
  CHECK(back.task.repetition.word_len == 5);
  CHECK(back.output_dir == "out_x");
  CHECK(to_json(back) == j);

  // Missing keys take defaults.
  CHECK(run_config_from_json(json::object()).output_dir == "run");

  auto expect_key_error = [](json bad, const std::string& key) {
    try {
      run_config_from_json(bad);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  auto top = j;
  top["learning_rate"] = 1;
  expect_key_error(top, "learning_rate");
  auto nested = j;
  nested["model"]["nn"] = 4;
  expect_key_error(nested, "nn");
  auto deep = j;
  deep["task"]["repetition"]["repz"] = 4;
  expect_key_error(deep, "repz");
  auto typed = j;
  typed["train"]["steps"] = "ten";
  expect_key_error(typed, "steps");
  auto negative = j;
  negative["train"]["steps"] = -5;
  expect_key_error(negative, "steps");
  auto kind = j;
  kind["task"]["kind"] = "poetry";
  CHECK_THROWS_AS(run_config_from_json(kind), ConfigError);
  auto corpus = j;
  corpus["task"]["kind"] = "corpus";
  CHECK_THROWS_AS(run_config_from_json(corpus), ConfigError);
  auto heads = j;
  heads["model"]["heads"] = 3;
  CHECK_THROWS_AS(run_config_from_json(heads), ConfigError);
}

TEST_CASE("run config file errors carry the path") {
  TempDir dir;
  spit(dir.file("c.json"), "{\"model\": {\"n\": 64,}}");
  try {
    load_run_config(dir.file("c.json"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("c.json") != std::string::npos);
  }
  CHECK_THROWS_AS(load_run_config(dir.file("none.json")), ConfigError);
}

TEST_CASE("csv output") {
  TempDir dir;
  {
    CsvWriter w(dir.file("a.csv"), {"name", "value"});
    w.row({CsvWriter::field(std::string("a,b")), CsvWriter::field(0.1)});
    w.row({CsvWriter::field(std::string("say \"hi\"")), CsvWriter::field(-2.5e-300)});
    CHECK_THROWS_AS(w.row({"only one"}), std::logic_error);
  }
  CHECK(slurp(dir.file("a.csv")) ==
        "name,value\n\"a,b\",0.10000000000000001\n\"say \"\"hi\"\"\",-2.5e-300\n");
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -1e-310})
    CHECK(std::strtod(CsvWriter::field(v).c_str(), nullptr) == v);

  {
    MetricsCsv m(dir.file("m.csv"), 2);
    m.write({0, 1.5, 0.001, 2.0, {0.25, 0.125}});
    m.write({1, 1.25, 0.002, 1.0, {}});
  }
  CHECK(slurp(dir.file("m.csv")) ==
        "step,loss,lr,grad_norm,sparsity_l0,sparsity_l1\n0,1.5,0.001,2,0.25,0.125\n1,1.25,0.002,1,,\n");
}

TEST_CASE("worker threads and parallel_for") {
  ::setenv("BDH_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  ::setenv("BDH_THREADS", "zero", 1);
  CHECK_THROWS_AS(worker_threads(), std::invalid_argument);
  ::setenv("BDH_THREADS", "0", 1);
  CHECK_THROWS_AS(worker_threads(), std::invalid_argument);
  ::unsetenv("BDH_THREADS");
  CHECK(worker_threads() >= 1);
}
