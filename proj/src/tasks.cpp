#include "bdh/tasks.hpp"

#include <cmath>
#include <fstream>

namespace bdh {

namespace {

// The warm-up text is the same for every seed.
constexpr std::uint64_t kWarmupSeed = 0x5eed0fa11ULL;

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    std::uint32_t cp = len == 1 ? c : c & (0x7f >> len);
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10ffff ||
        (cp >= 0xd800 && cp <= 0xdfff))
      return false;
    i += len;
  }
  return true;
}

}  // namespace

std::vector<int> TaskStream::take(std::size_t count) {
  std::vector<int> out(count);
  for (auto& t : out) t = next();
  return out;
}

void RepetitionSpec::validate() const {
  if (warmup_len == 0 || word_len == 0 || reps == 0 || alphabet == 0) throw ParameterError("repetition task sizes must be positive");
  if (alphabet > 26) throw ParameterError("alphabet is limited to the 26 letters a..z");
}

RepetitionStream::RepetitionStream(RepetitionSpec spec, std::uint64_t seed) : spec_(spec), seed_(seed), rng_(seed) {
  spec_.validate();
  Rng fixed(kWarmupSeed);
  std::uniform_int_distribution<int> letter(0, static_cast<int>(spec_.alphabet) - 1);
  for (std::size_t i = 0; i < spec_.warmup_len; ++i) warmup_.push_back('a' + letter(fixed));
}

RepetitionPhase RepetitionStream::phase_at(std::size_t pos, const RepetitionSpec& spec) {
  const std::size_t p = pos % spec.period();
  if (p < spec.warmup_len) return RepetitionPhase::Warmup;
  if (p < spec.warmup_len + spec.word_len) return RepetitionPhase::Introduction;
  return RepetitionPhase::Repetition;
}

int RepetitionStream::next() {
  const std::size_t p = pos_ % spec_.period();
  if (p == spec_.warmup_len) {
    std::uniform_int_distribution<int> letter(0, static_cast<int>(spec_.alphabet) - 1);
    word_.resize(spec_.word_len);
    for (auto& c : word_) c = 'a' + letter(rng_);
  }
  ++pos_;
  if (p < spec_.warmup_len) return warmup_[p];
  return word_[(p - spec_.warmup_len) % spec_.word_len];
}

std::unique_ptr<TaskStream> RepetitionStream::fork(std::size_t index) const {
  return std::make_unique<RepetitionStream>(spec_, seed_ + index);
}

std::unique_ptr<RepetitionStream> make_repetition_stream(std::uint64_t seed, RepetitionSpec spec) {
  return std::make_unique<RepetitionStream>(spec, seed);
}

std::string format_record(const std::string& src, const std::string& tgt, const std::string& from,
                          const std::string& to) {
  return "<F:" + from + ">" + src + "<T:" + to + ">" + tgt;
}

std::vector<SentencePair> read_sentence_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path);
  std::vector<SentencePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    if (!valid_utf8(line)) throw IngestionError(where + ": invalid UTF-8");
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw IngestionError(where + ": expected exactly one tab between the two sentences");
    SentencePair p{line.substr(0, tab), line.substr(tab + 1)};
    if (p.a.empty() || p.b.empty()) throw IngestionError(where + ": empty sentence");
    out.push_back(std::move(p));
  }
  return out;
}

InterleavedCorpus::InterleavedCorpus(std::vector<SentencePair> pairs, std::string lang_a, std::string lang_b,
                                     std::uint64_t seed, std::size_t start_pair)
    : pairs_(std::move(pairs)), lang_a_(std::move(lang_a)), lang_b_(std::move(lang_b)), seed_(seed), rng_(seed) {
  if (pairs_.empty()) throw IngestionError("corpus has no sentence pairs");
  start_ = pair_ = start_pair % pairs_.size();
  load_record();
}

void InterleavedCorpus::load_record() {
  const auto& p = pairs_[pair_];
  const bool a_to_b = fixed_ >= 0 ? fixed_ == 1 : std::bernoulli_distribution(0.5)(rng_);
  record_ = a_to_b ? format_record(p.a, p.b, lang_a_, lang_b_) : format_record(p.b, p.a, lang_b_, lang_a_);
  offset_ = 0;
}

int InterleavedCorpus::next() {
  if (offset_ == record_.size()) {
    pair_ = (pair_ + 1) % pairs_.size();
    if (pair_ == start_) ++epoch_;
    load_record();
  }
  return static_cast<unsigned char>(record_[offset_++]);
}

std::unique_ptr<TaskStream> InterleavedCorpus::fork(std::size_t index) const {
  // Batch streams start at evenly spaced pairs with their own direction draws.
  const std::size_t start = start_ + index * pairs_.size() / 8 + index;
  auto c = std::make_unique<InterleavedCorpus>(pairs_, lang_a_, lang_b_, seed_ + index, start);
  if (fixed_ >= 0) {
    c->fix_direction(fixed_ == 1);
    c->load_record();
  }
  return c;
}

std::unique_ptr<InterleavedCorpus> make_interleaved_corpus(const std::vector<std::string>& files,
                                                           const std::string& lang_a, const std::string& lang_b,
                                                           std::uint64_t seed) {
  std::vector<SentencePair> all;
  for (const auto& f : files) {
    auto part = read_sentence_pairs(f);
    all.insert(all.end(), part.begin(), part.end());
  }
  return std::make_unique<InterleavedCorpus>(std::move(all), lang_a, lang_b, seed);
}

double unigram_entropy(std::span<const int> tokens, std::size_t vocab_size) {
  if (tokens.empty()) return 0.0;
  std::vector<double> counts(vocab_size, 0.0);
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw IndexError("token out of range");
    counts[t] += 1;
  }
  double h = 0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / tokens.size();
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace bdh
