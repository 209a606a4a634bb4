#include "bdh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <unistd.h>

#include "bdh/run_config.hpp"

namespace bdh {

namespace {

constexpr char kMagic[4] = {'B', 'D', 'H', 'C'};
// Guards against absurd lengths in corrupt files before allocating.
constexpr std::uint64_t kMaxNameLen = 1 << 16;
constexpr std::uint64_t kMaxMetaLen = 1 << 24;
constexpr std::uint64_t kMaxRank = 8;

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* s = reinterpret_cast<const unsigned char*>(&v);
    auto* d = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) d[i] = s[sizeof(U) - 1 - i];
    return out;
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename U>
  void num(U v) {
    v = to_le(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const std::string& s) {
    num<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void floats(const std::vector<float>& v) {
    for (float f : v) num(std::bit_cast<std::uint32_t>(f));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  [[noreturn]] void fail(const std::string& why) const { throw CheckpointError(path_ + ": " + why); }
  void raw(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) fail("truncated file");
  }
  template <typename U>
  U num() {
    U v;
    raw(reinterpret_cast<char*>(&v), sizeof v);
    return to_le(v);
  }
  std::string bytes(std::uint64_t limit) {
    const auto n = num<std::uint64_t>();
    if (n > limit) fail("implausible length field");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<float> floats(std::uint64_t count) {
    std::vector<float> v(count);
    for (auto& f : v) f = std::bit_cast<float>(num<std::uint32_t>());
    return v;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string path_;
};

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelParams& p) {
  return {{"encoder", &p.encoder},           {"decoder_x", &p.decoder_x}, {"decoder_y", &p.decoder_y},
          {"token_embedding", &p.token_embedding}, {"readout", &p.readout},     {"rope_freqs", &p.rope_freqs}};
}

}  // namespace

void save_checkpoint(const ModelParams& params, std::uint64_t step, const std::string& path) {
  params.config.validate();
  params.check_shapes();
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(path + ": cannot open for writing");
    Writer w(out);
    out.write(kMagic, 4);
    w.num<std::uint32_t>(kCheckpointVersion);
    const nlohmann::json meta = {{"config", to_json(params.config)}, {"step", step}};
    w.bytes(meta.dump());
    const auto tensors = named_tensors(params);
    w.num<std::uint64_t>(tensors.size());
    for (const auto& [name, t] : tensors) {
      w.bytes(name);
      w.num<std::uint64_t>(t->shape().size());
      for (auto e : t->shape()) w.num<std::uint64_t>(e);
      w.floats(t->values());
    }
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw CheckpointError(path + ": write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw CheckpointError(path + ": cannot move checkpoint into place");
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  Reader r(in, path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.num<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw UnsupportedVersion(path + ": unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint out;
  try {
    const auto meta = nlohmann::json::parse(r.bytes(kMaxMetaLen));
    out.params.config = model_config_from_json(meta.at("config"));
    out.step = meta.at("step").get<std::uint64_t>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  }
  try {
    out.params.config.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config: ") + e.what());
  }

  std::map<std::string, Tensor*> slots = {{"encoder", &out.params.encoder},
                                          {"decoder_x", &out.params.decoder_x},
                                          {"decoder_y", &out.params.decoder_y},
                                          {"token_embedding", &out.params.token_embedding},
                                          {"readout", &out.params.readout},
                                          {"rope_freqs", &out.params.rope_freqs}};
  const auto count = r.num<std::uint64_t>();
  if (count == 0) r.fail("no tensors");
  std::set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name = r.bytes(kMaxNameLen);
    auto slot = slots.find(name);
    if (slot == slots.end()) r.fail("unknown tensor '" + name + "'");
    if (!seen.insert(name).second) r.fail("duplicate tensor '" + name + "'");
    const auto rank = r.num<std::uint64_t>();
    if (rank == 0 || rank > kMaxRank) r.fail("bad rank for '" + name + "'");
    Shape shape;
    std::uint64_t size = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto e = r.num<std::uint64_t>();
      if (e == 0 || e > (std::uint64_t{1} << 34) / size) r.fail("bad extents for '" + name + "'");
      size *= e;
      shape.push_back(static_cast<std::size_t>(e));
    }
    Tensor t(shape);
    t.values() = r.floats(size);
    *slot->second = std::move(t);
  }
  if (seen.size() != slots.size()) r.fail("missing tensors");
  if (!r.at_end()) r.fail("trailing bytes");
  try {
    out.params.check_shapes();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  return out;
}

}  // namespace bdh
