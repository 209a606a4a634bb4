#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdh/model.hpp"
#include "bdh/tasks.hpp"
#include "bdh/training.hpp"

namespace bdh {

struct TaskConfig {
  std::string kind = "repetition";  // or "corpus"
  std::uint64_t seed = 1;
  RepetitionSpec repetition;
  std::vector<std::string> files;  // corpus: tab-separated sentence pairs
  std::string lang_a = "en", lang_b = "es";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
  std::uint64_t init_seed = 0;
  std::string output_dir = "run";
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
};

// Strict: unknown keys and wrong types raise ConfigError naming the key.
// Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
// Every field, so the result loads back to the same config.
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::unique_ptr<TaskStream> make_task_stream(const TaskConfig& task);

}  // namespace bdh
