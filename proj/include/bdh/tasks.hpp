#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdh/tensor.hpp"

namespace bdh {

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Infinite deterministic token source. fork(i) gives the i-th independent batch stream.
class TaskStream {
 public:
  virtual ~TaskStream() = default;
  virtual int next() = 0;
  virtual std::unique_ptr<TaskStream> fork(std::size_t index) const = 0;
  virtual std::size_t vocab_size() const { return 256; }
  // 0 when the stream has no fixed period.
  virtual std::size_t period() const { return 0; }

  std::vector<int> take(std::size_t count);
};

struct RepetitionSpec {
  std::size_t warmup_len = 13;
  std::size_t word_len = 8;
  std::size_t reps = 8;
  std::size_t alphabet = 26;

  std::size_t period() const { return warmup_len + word_len * reps; }
  void validate() const;
};

enum class RepetitionPhase { Warmup, Introduction, Repetition };

// Fixed warm-up string, then reps copies of a fresh random word, repeating.
// Tokens are the bytes 'a' + k. The warm-up does not depend on the seed.
class RepetitionStream : public TaskStream {
 public:
  RepetitionStream(RepetitionSpec spec, std::uint64_t seed);
  int next() override;
  std::unique_ptr<TaskStream> fork(std::size_t index) const override;
  std::size_t period() const override { return spec_.period(); }

  const std::vector<int>& warmup() const { return warmup_; }
  const RepetitionSpec& spec() const { return spec_; }
  // Phase of the token at absolute offset pos (streams start at a period boundary).
  static RepetitionPhase phase_at(std::size_t pos, const RepetitionSpec& spec);

 private:
  RepetitionSpec spec_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<int> warmup_, word_;
  std::size_t pos_ = 0;
};

std::unique_ptr<RepetitionStream> make_repetition_stream(std::uint64_t seed, RepetitionSpec spec = {});

struct SentencePair {
  std::string a, b;
};

// "<F:from>src<T:to>tgt"
std::string format_record(const std::string& src, const std::string& tgt, const std::string& from,
                          const std::string& to);

// Reads a UTF-8 file of tab-separated aligned sentences ("a\tb" per line).
// Blank lines are skipped; anything else malformed raises IngestionError with the line number.
std::vector<SentencePair> read_sentence_pairs(const std::string& path);

// Byte stream of records, one per pair, in file order. Each record's direction
// (which side is the source) is drawn afresh every epoch.
class InterleavedCorpus : public TaskStream {
 public:
  InterleavedCorpus(std::vector<SentencePair> pairs, std::string lang_a, std::string lang_b, std::uint64_t seed,
                    std::size_t start_pair = 0);
  int next() override;
  std::unique_ptr<TaskStream> fork(std::size_t index) const override;

  std::size_t pairs() const { return pairs_.size(); }
  std::size_t epoch() const { return epoch_; }
  // Force a direction (true: a -> b) for every record; used for fixed-format checks.
  void fix_direction(bool a_to_b) { fixed_ = a_to_b ? 1 : 0; }

 private:
  void load_record();

  std::vector<SentencePair> pairs_;
  std::string lang_a_, lang_b_;
  std::uint64_t seed_;
  Rng rng_;
  std::size_t pair_ = 0, start_ = 0, epoch_ = 0;
  int fixed_ = -1;
  std::string record_;
  std::size_t offset_ = 0;
};

// Reads every file (aligned pairs, tab-separated) and builds one stream.
std::unique_ptr<InterleavedCorpus> make_interleaved_corpus(const std::vector<std::string>& paired_sentence_files,
                                                           const std::string& lang_a, const std::string& lang_b,
                                                           std::uint64_t seed);

// Plug-in entropy (nats) of the empirical unigram distribution of a sample.
double unigram_entropy(std::span<const int> tokens, std::size_t vocab_size);

}  // namespace bdh
