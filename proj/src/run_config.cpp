#include "bdh/run_config.hpp"

#include <fstream>
#include <set>

namespace bdh {

namespace {

using nlohmann::json;

// Reads keys out of one JSON object, remembering which were consumed so
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename U>
  void get(const char* key, U& dst) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<U, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<U>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<U>) {
        if (!it->is_number()) throw ConfigError("");
      }
      dst = it->get<U>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json* object(const char* key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

ModelConfig model_from(const json& j, const std::string& where) {
  ModelConfig c;
  Fields f(j, where);
  f.get("n", c.n);
  f.get("d", c.d);
  f.get("layers", c.layers);
  f.get("heads", c.heads);
  f.get("vocab_size", c.vocab_size);
  f.get("dropout", c.dropout);
  f.get("rope_wavelength_min", c.rope_wavelength_min);
  f.get("rope_wavelength_max", c.rope_wavelength_max);
  f.get("alibi_gamma", c.alibi_gamma);
  f.get("eps", c.eps);
  f.finish();
  return c;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"n", c.n},
          {"d", c.d},
          {"layers", c.layers},
          {"heads", c.heads},
          {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},
          {"rope_wavelength_min", c.rope_wavelength_min},
          {"rope_wavelength_max", c.rope_wavelength_max},
          {"alibi_gamma", c.alibi_gamma},
          {"eps", c.eps}};
}

ModelConfig model_config_from_json(const json& j) { return model_from(j, "model"); }

json to_json(const RunConfig& r) {
  const auto& t = r.train;
  const auto& k = r.task;
  return {{"model", to_json(r.model)},
          {"train",
           {{"lr_peak", t.lr_peak},
            {"warmup_steps", t.warmup_steps},
            {"lr_final", t.lr_final},
            {"weight_decay", t.weight_decay},
            {"clip_norm", t.clip_norm},
            {"seq_len", t.seq_len},
            {"batch_size", t.batch_size},
            {"steps", t.steps},
            {"detach_attention", t.detach_attention},
            {"seed", t.seed},
            {"sparsity_every", t.sparsity_every}}},
          {"task",
           {{"kind", k.kind},
            {"seed", k.seed},
            {"repetition",
             {{"warmup_len", k.repetition.warmup_len},
              {"word_len", k.repetition.word_len},
              {"reps", k.repetition.reps},
              {"alphabet", k.repetition.alphabet}}},
            {"files", k.files},
            {"lang_a", k.lang_a},
            {"lang_b", k.lang_b}}},
          {"init_seed", r.init_seed},
          {"output_dir", r.output_dir},
          {"checkpoint_every", r.checkpoint_every}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig r;
  Fields top(j, "config");
  if (const auto* m = top.object("model")) r.model = model_from(*m, "model");
  if (const auto* t = top.object("train")) {
    Fields f(*t, "train");
    auto& c = r.train;
    f.get("lr_peak", c.lr_peak);
    f.get("warmup_steps", c.warmup_steps);
    f.get("lr_final", c.lr_final);
    f.get("weight_decay", c.weight_decay);
    f.get("clip_norm", c.clip_norm);
    f.get("seq_len", c.seq_len);
    f.get("batch_size", c.batch_size);
    f.get("steps", c.steps);
    f.get("detach_attention", c.detach_attention);
    f.get("seed", c.seed);
    f.get("sparsity_every", c.sparsity_every);
    f.finish();
  }
  if (const auto* t = top.object("task")) {
    Fields f(*t, "task");
    auto& k = r.task;
    f.get("kind", k.kind);
    f.get("seed", k.seed);
    if (const auto* rep = f.object("repetition")) {
      Fields g(*rep, "task.repetition");
      g.get("warmup_len", k.repetition.warmup_len);
      g.get("word_len", k.repetition.word_len);
      g.get("reps", k.repetition.reps);
      g.get("alphabet", k.repetition.alphabet);
      g.finish();
    }
    f.get("files", k.files);
    f.get("lang_a", k.lang_a);
    f.get("lang_b", k.lang_b);
    f.finish();
    if (k.kind != "repetition" && k.kind != "corpus") throw ConfigError("task.kind must be 'repetition' or 'corpus'");
    if (k.kind == "corpus" && k.files.empty()) throw ConfigError("task.files is required for a corpus task");
  }
  top.get("init_seed", r.init_seed);
  top.get("output_dir", r.output_dir);
  top.get("checkpoint_every", r.checkpoint_every);
  top.finish();
  r.model.validate();
  r.train.validate();
  r.task.repetition.validate();
  return r;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::unique_ptr<TaskStream> make_task_stream(const TaskConfig& task) {
  if (task.kind == "repetition") return make_repetition_stream(task.seed, task.repetition);
  if (task.kind == "corpus") return make_interleaved_corpus(task.files, task.lang_a, task.lang_b, task.seed);
  throw ConfigError("unknown task kind '" + task.kind + "'");
}

}  // namespace bdh
