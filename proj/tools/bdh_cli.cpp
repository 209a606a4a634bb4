#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bdh/analysis.hpp"
#include "bdh/checkpoint.hpp"
#include "bdh/csv.hpp"
#include "bdh/graph_kernel.hpp"
#include "bdh/run_config.hpp"
#include "bdh/threads.hpp"
#include "bdh/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bdh;

namespace {

// Bad values discovered after parsing; reported like parse errors (exit 2).
struct BadUsage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<int> bytes_of(const std::string& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(c);
  return out;
}

std::vector<int> parse_prompt(const std::string& prompt) {
  if (prompt.rfind("hex:", 0) != 0) return bytes_of(prompt);
  const std::string hex = prompt.substr(4);
  if (hex.size() % 2 != 0) throw BadUsage("hex prompt needs an even number of digits");
  std::vector<int> out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(hex.substr(i, 2), &used, 16);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != 2) throw BadUsage("bad hex digits in prompt: '" + hex.substr(i, 2) + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::runtime_error(path + ": no texts");
  return lines;
}

Synapse parse_synapse(const std::string& spec) {
  std::stringstream ss(spec);
  std::vector<std::size_t> parts;
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw BadUsage("--synapse expects l,h,i,j with non-negative integers");
    parts.push_back(static_cast<std::size_t>(v));
  }
  if (parts.size() != 4) throw BadUsage("--synapse expects l,h,i,j");
  return {parts[0], parts[1], parts[2], parts[3]};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error(dir + ": cannot create directory");
  return p;
}

// Every option of the subcommand with its resolved value (defaults included).
json option_record(const CLI::App& sub) {
  json opts = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_lnames().empty()) continue;
    const auto& name = o->get_lnames().front();
    if (name == "help") continue;
    auto results = o->reduced_results();
    if (results.empty()) {
      if (o->get_default_str().empty()) continue;
      opts[name] = o->get_default_str();
    } else {
      opts[name] = results.size() == 1 ? json(results.front()) : json(results);
    }
  }
  return opts;
}

json run_record(const CLI::App& sub) {
  return {{"command", sub.get_name()},
          {"options", option_record(sub)},
          {"threads", worker_threads()},
          {"checkpoint_version", kCheckpointVersion}};
}

// ---- train ----

struct TrainArgs {
  std::string config, out;
};

RunConfig resolve_run_config(const std::string& path) {
  // A run.json written by train carries the config under "config".
  json j;
  {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  if (j.is_object() && j.contains("command")) {
    if (j["command"] != "train" || !j.contains("config")) throw ConfigError(path + ": not a train run record");
    j = j["config"];
  }
  try {
    return run_config_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  RunConfig rc = resolve_run_config(a.config);
  if (!a.out.empty()) rc.output_dir = a.out;
  const auto dir = ensure_dir(rc.output_dir);
  json record = run_record(sub);
  record["config"] = to_json(rc);
  write_json(dir / "run.json", record);

  auto stream = make_task_stream(rc.task);
  ModelParams params = init_params<float>(rc.model, rc.init_seed);
  MetricsCsv metrics((dir / "metrics.csv").string(), rc.model.layers);
  auto on_step = [&](const StepMetrics& m, const ModelParams& p) {
    metrics.write(m);
    const std::size_t done = m.step + 1;
    if (rc.checkpoint_every > 0 && done % rc.checkpoint_every == 0 && done < rc.train.steps)
      save_checkpoint(p, done, (dir / ("step_" + std::to_string(done) + ".bdhc")).string());
    if (done % 50 == 0 || done == rc.train.steps)
      std::fprintf(stderr, "step %zu loss %.4f lr %.3g\n", done, m.loss, m.lr);
  };

  TrainResult result;
  try {
    result = train(std::move(params), *stream, rc.train, on_step);
  } catch (const TrainingDiverged& e) {
    save_checkpoint(e.last_good, e.step, (dir / "last_good.bdhc").string());
    write_json(dir / "summary.json", {{"status", "diverged"}, {"step", e.step}, {"message", e.what()}});
    throw;
  }
  save_checkpoint(result.params, rc.train.steps, (dir / "final.bdhc").string());

  json summary = {{"status", "ok"}, {"steps", rc.train.steps}};
  if (!result.metrics.steps.empty()) summary["final_loss"] = result.metrics.steps.back().loss;
  if (rc.task.kind == "repetition") {
    auto rep = evaluate_repetition(result.params, rc.task.seed + 1, 20, 256, rc.task.repetition);
    summary["repetition"] = {{"accuracy_repetition", rep.accuracy_repetition},
                             {"accuracy_introduction", rep.accuracy_introduction},
                             {"accuracy_warmup", rep.accuracy_warmup},
                             {"sparsity_introduction", rep.sparsity_introduction},
                             {"sparsity_repetition", rep.sparsity_repetition},
                             {"sparsity_warmup", rep.sparsity_warmup},
                             {"mean_loss", rep.mean_loss}};
  }
  write_json(dir / "summary.json", summary);
  return 0;
}

// ---- generate ----

struct GenerateArgs {
  std::string ckpt, prompt;
  std::size_t tokens = 64;
  double temp = 1.0;
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a) {
  const auto ck = load_checkpoint(a.ckpt);
  const auto prompt = parse_prompt(a.prompt);
  if (prompt.empty()) throw BadUsage("--prompt must not be empty");
  for (int t : prompt)
    if (static_cast<std::size_t>(t) >= ck.params.config.vocab_size)
      throw BadUsage("prompt byte outside the model's vocabulary");
  const auto out = generate(ck.params, prompt, a.tokens, a.temp, a.seed);
  std::string bytes;
  for (int t : out) bytes.push_back(static_cast<char>(t));
  std::cout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::cout.flush();
  return 0;
}

// ---- verify-equivalence ----

struct VerifyArgs {
  std::size_t n = 64, d = 8, layers = 3, trials = 50, tokens = 16;
  std::uint64_t seed = 0;
};

int cmd_verify(const VerifyArgs& a) {
  if (a.n < 4 || a.layers < 1 || a.tokens < 1 || a.d < 1) throw BadUsage("--n >= 4, --d, --L and --tokens >= 1 required");
  Rng rng(a.seed);
  std::uniform_int_distribution<std::size_t> n_dist(2, a.n), l_dist(1, a.layers), t_dist(1, a.tokens);
  double worst = 0;
  for (std::size_t trial = 0; trial < a.trials; ++trial) {
    KernelModel model;
    std::size_t n = 0;
    if (trial % 2 == 0) {
      n = n_dist(rng);
      model = random_kernel_model(n, l_dist(rng), rng);
    } else {
      // Graph form of a dense model; n must split into rotation pairs.
      ModelConfig c;
      c.n = std::max<std::size_t>(2, n_dist(rng) / 2 * 2);
      c.d = a.d;
      c.layers = l_dist(rng);
      c.heads = 1;
      c.dropout = 0;
      n = c.n;
      model = from_tensor_model(init_params<float>(c, rng()));
    }
    auto inputs = random_kernel_inputs(n, t_dist(rng), rng);
    if (trial % 5 == 4) inputs.y.clear();
    const double diff = verify_equivalence(model, inputs);
    worst = std::max(worst, diff);
  }
  const bool ok = worst < 1e-5;
  std::printf("trials %zu max_abs_diff %.3e %s\n", a.trials, worst, ok ? "OK" : "FAILED");
  return ok ? 0 : 1;
}

// ---- analyze ----

struct AnalyzeArgs {
  std::string kind, ckpt, out = "analysis", text_file, decoder = "x";
  std::size_t head_a = 0, head_b = 0, bins = 200, layer = 1, head = 0, seeds = 5, lowrank_d = 0, buckets = 0;
  long long t = -1;
  double beta = 0, threshold = 0;
  std::uint64_t seed = 0;
};

DenseMatrix analyzed_graph(const AnalyzeArgs& a, const ModelParams& p) {
  if (a.decoder != "x" && a.decoder != "y") throw BadUsage("--decoder must be x or y");
  return extract_ffn_graph(p, a.head_a, a.head_b, a.decoder == "x" ? Decoder::X : Decoder::Y);
}

ActivationTrace trace_of(const ModelParams& p, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::runtime_error("text file is empty");
  return forward_parallel(p, std::span<const int>(tokens)).second;
}

int cmd_analyze(const AnalyzeArgs& a, const CLI::App& sub) {
  const auto dir = ensure_dir(a.out);
  write_json(dir / "run.json", run_record(sub));
  const auto ck = load_checkpoint(a.ckpt);
  const auto& p = ck.params;

  if (a.kind == "ffn") {
    const auto g = analyzed_graph(a, p);
    const auto h = element_histogram(g, a.bins);
    CsvWriter csv((dir / "ffn_histogram.csv").string(), {"lo", "hi", "count", "symmetric", "skew"});
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      csv.row({CsvWriter::field(h.edges[b]), CsvWriter::field(h.edges[b + 1]), CsvWriter::field(h.counts[b]),
               CsvWriter::field(h.symmetric[b]), CsvWriter::field(h.skew[b])});
    write_json(dir / "ffn_summary.json", {{"rows", g.rows()},
                                          {"cols", g.cols()},
                                          {"total", h.total()},
                                          {"skew_mass", h.skew_mass()},
                                          {"max", g.maxCoeff()},
                                          {"min", g.minCoeff()}});
  } else if (a.kind == "degrees") {
    const auto g = threshold_graph(analyzed_graph(a, p), a.beta);
    const auto dd = degree_distribution(g);
    CsvWriter csv((dir / "degrees.csv").string(), {"direction", "lo", "hi", "count"});
    for (const auto& [name, hist] : {std::pair{"in", &dd.in_hist}, std::pair{"out", &dd.out_hist}})
      for (const auto& b : *hist)
        csv.row({name, std::to_string(b.lo), std::to_string(b.hi), std::to_string(b.count)});
    write_json(dir / "degrees_summary.json", {{"beta", a.beta}, {"edges", g.edge_count()}, {"n", g.n()}});
  } else if (a.kind == "modularity") {
    const auto g = analyzed_graph(a, p);
    const auto r = modularity_report(g, a.beta, a.lowrank_d ? a.lowrank_d : p.config.d, a.seed, a.seeds);
    CsvWriter csv((dir / "partition.csv").string(), {"neuron", "community"});
    for (std::size_t i = 0; i < r.partition.size(); ++i)
      csv.row({std::to_string(i), std::to_string(r.partition[i])});
    write_json(dir / "modularity.json",
               {{"beta", r.beta}, {"m", r.m}, {"Q", r.Q}, {"Q_gnm", r.Q_gnm}, {"Q_lowrank", r.Q_lowrank}});
  } else if (a.kind == "sigma") {
    if (a.text_file.empty()) throw BadUsage("analyze sigma needs --text-file");
    const auto tokens = bytes_of(read_file(a.text_file));
    const auto trace = trace_of(p, tokens);
    const std::size_t t = a.t < 0 ? tokens.size() : static_cast<std::size_t>(a.t);
    const auto sigma = reconstruct_sigma(trace, p, a.layer, a.head, t);
    CsvWriter csv((dir / "sigma.csv").string(), {"i", "j", "value"});
    std::size_t kept = 0;
    for (Eigen::Index i = 0; i < sigma.rows(); ++i)
      for (Eigen::Index j = 0; j < sigma.cols(); ++j)
        if (sigma(i, j) > a.threshold) {
          csv.row({std::to_string(i), std::to_string(j), CsvWriter::field(sigma(i, j))});
          ++kept;
        }
    write_json(dir / "sigma_summary.json", {{"layer", a.layer},
                                            {"head", a.head},
                                            {"t", t},
                                            {"threshold", a.threshold},
                                            {"kept", kept},
                                            {"max", sigma.size() ? sigma.maxCoeff() : 0.0},
                                            {"min", sigma.size() ? sigma.minCoeff() : 0.0}});
  } else if (a.kind == "sparsity") {
    if (a.text_file.empty()) throw BadUsage("analyze sparsity needs --text-file");
    const auto tokens = bytes_of(read_file(a.text_file));
    const auto trace = trace_of(p, tokens);
    const auto sp = sparsity_trace(trace, p, a.buckets);
    std::vector<std::string> header = {"t", "byte"};
    for (std::size_t l = 0; l < p.config.layers; ++l) header.push_back("layer_" + std::to_string(l));
    CsvWriter csv((dir / "sparsity.csv").string(), header);
    for (std::size_t t = 0; t < sp.fraction.size(); ++t) {
      std::vector<std::string> row = {std::to_string(t), std::to_string(tokens[t])};
      for (double f : sp.fraction[t]) row.push_back(CsvWriter::field(f));
      csv.row(row);
    }
    if (a.buckets > 0) {
      CsvWriter bcsv((dir / "sparsity_buckets.csv").string(), {"t", "layer", "bucket", "fraction"});
      for (std::size_t t = 0; t < sp.by_bucket.size(); ++t)
        for (std::size_t l = 0; l < sp.by_bucket[t].size(); ++l)
          for (std::size_t b = 0; b < sp.by_bucket[t][l].size(); ++b)
            bcsv.row({std::to_string(t), std::to_string(l), std::to_string(b), CsvWriter::field(sp.by_bucket[t][l][b])});
    }
  } else {
    throw BadUsage("unknown analysis '" + a.kind + "'");
  }
  return 0;
}

// ---- probe ----

struct ProbeArgs {
  std::string ckpt, text_file, synapse, out;
};

int cmd_probe(const ProbeArgs& a, const CLI::App& sub, const std::string& run_dir) {
  const Synapse s = parse_synapse(a.synapse);
  write_json(ensure_dir(run_dir) / "run.json", run_record(sub));
  const auto ck = load_checkpoint(a.ckpt);
  const auto tokens = bytes_of(read_file(a.text_file));
  if (tokens.empty()) throw std::runtime_error(a.text_file + ": empty text");
  const auto tr = probe_synapse(ck.params, tokens, s);
  std::ostringstream body;
  body << "t,byte,value\n";
  for (std::size_t t = 0; t < tr.value.size(); ++t)
    body << t << ',' << tr.tokens[t] << ',' << CsvWriter::field(tr.value[t]) << '\n';
  if (a.out.empty()) {
    std::cout << body.str();
  } else {
    std::ofstream out(a.out);
    if (!(out << body.str())) throw std::runtime_error(a.out + ": write failed");
  }
  return 0;
}

// ---- concept-test ----

struct ConceptArgs {
  std::string ckpt, positive, contrast, out;
  std::size_t top_k = 10, pool = 100000;
};

int cmd_concept(const ConceptArgs& a, const CLI::App& sub, const std::string& run_dir) {
  write_json(ensure_dir(run_dir) / "run.json", run_record(sub));
  const auto ck = load_checkpoint(a.ckpt);
  const auto pos = read_lines(a.positive);
  const auto con = read_lines(a.contrast);
  const auto ranked = find_concept_synapses(ck.params, pos, con, a.top_k, a.pool);
  json arr = json::array();
  for (const auto& r : ranked)
    arr.push_back({{"layer", r.synapse.layer},
                   {"head", r.synapse.head},
                   {"i", r.synapse.i},
                   {"j", r.synapse.j},
                   {"U", r.test.U},
                   {"U_max", r.test.U_max},
                   {"p_one_sided", r.test.p_one_sided},
                   {"rank_biserial", r.test.rank_biserial}});
  const json doc = {{"positive_texts", pos.size()}, {"contrast_texts", con.size()}, {"synapses", arr}};
  if (a.out.empty())
    std::cout << doc.dump(2) << '\n';
  else
    write_json(a.out, doc);
  return 0;
}

// ---- merge ----

struct MergeArgs {
  std::string a, b, out;
};

int cmd_merge(const MergeArgs& m, const CLI::App& sub, const std::string& run_dir) {
  write_json(ensure_dir(run_dir) / "run.json", run_record(sub));
  const auto a = load_checkpoint(m.a);
  const auto b = load_checkpoint(m.b);
  save_checkpoint(concat_models(a.params, b.params), 0, m.out);
  return 0;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string kind, out = "experiment.csv", variant = "both", keys = "random";
  std::size_t n = 1024, r = 4, seeds = 20, a = 64, b = 64, c = 32, trials = 200, points = 200, buckets = 256;
  std::vector<std::size_t> d = {32, 64, 128, 256, 512}, t;
  double threshold = 1.0;
  std::uint64_t seed = 0;
};

// Runs jobs in parallel and emits rows in job order.
void run_rows(std::size_t jobs, CsvWriter& csv, const std::function<std::vector<std::string>(std::size_t)>& job) {
  std::vector<std::vector<std::string>> rows(jobs);
  parallel_for(jobs, [&](std::size_t k) { rows[k] = job(k); });
  for (const auto& r : rows) csv.row(r);
}

int cmd_experiment(const ExperimentArgs& e, const CLI::App& sub, const std::string& run_dir) {
  write_json(ensure_dir(run_dir) / "run.json", run_record(sub));
  auto f = [](double v) { return CsvWriter::field(v); };
  auto u = [](std::size_t v) { return std::to_string(v); };

  if (e.kind == "markov") {
    std::vector<LowRankVariant> variants;
    if (e.variant == "relu" || e.variant == "both") variants.push_back(LowRankVariant::ReluBias);
    if (e.variant == "linear" || e.variant == "both") variants.push_back(LowRankVariant::Linear);
    if (variants.empty()) throw BadUsage("--variant must be relu, linear or both");
    CsvWriter csv(e.out, {"d", "seed", "variant", "l1_error"});
    const std::size_t per_d = e.seeds * variants.size();
    run_rows(e.d.size() * per_d, csv, [&](std::size_t k) -> std::vector<std::string> {
      const std::size_t d = e.d[k / per_d], s = e.seed + (k % per_d) / variants.size();
      const auto v = variants[k % variants.size()];
      const double err = markov_lowrank_experiment(e.n, e.r, d, s, v);
      return {u(d), u(s), v == LowRankVariant::ReluBias ? "relu_bias" : "linear", f(err)};
    });
  } else if (e.kind == "fscore") {
    if (e.d.size() != 1) throw BadUsage("fscore takes a single --d");
    const double bound = 4 * std::sqrt(std::log(static_cast<double>(e.n)) / static_cast<double>(e.d[0]));
    CsvWriter csv(e.out, {"trial", "w", "rho", "abs_diff", "bound", "within"});
    run_rows(e.trials, csv, [&](std::size_t k) -> std::vector<std::string> {
      const auto s = fscore_experiment(e.a, e.b, e.c, e.n, e.d[0], e.seed + k);
      const double diff = std::abs(s.w - s.rho);
      return {u(k), f(s.w), f(s.rho), f(diff), f(bound), diff <= bound ? "1" : "0"};
    });
  } else if (e.kind == "capacity") {
    if (e.d.size() != 1) throw BadUsage("capacity takes a single --d");
    if (e.keys != "random" && e.keys != "orthogonal") throw BadUsage("--keys must be random or orthogonal");
    auto ts = e.t;
    if (ts.empty()) ts = {static_cast<std::size_t>(std::sqrt(static_cast<double>(e.n))), e.n};
    const auto mode = e.keys == "random" ? KeyMode::Random : KeyMode::Orthogonal;
    CsvWriter csv(e.out, {"t", "seed", "keys", "mean_error"});
    run_rows(ts.size() * e.seeds, csv, [&](std::size_t k) -> std::vector<std::string> {
      const std::size_t t = ts[k / e.seeds], s = e.seed + k % e.seeds;
      return {u(t), u(s), e.keys, f(attention_capacity_experiment(e.n, e.d[0], t, s, mode))};
    });
  } else if (e.kind == "lsh") {
    // Pairs of random inputs at graded angles: bucket overlap should track similarity.
    if (e.d.size() != 1) throw BadUsage("lsh takes a single --d (input dimension)");
    const std::size_t dim = e.d[0];
    Rng rng(e.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseMatrix lambdas(static_cast<Eigen::Index>(e.buckets), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < lambdas.size(); ++i) lambdas.data()[i] = normal(rng);
    CsvWriter csv(e.out, {"pair", "cosine", "active_a", "active_b", "jaccard"});
    for (std::size_t k = 0; k < e.points; ++k) {
      std::vector<double> x(dim), z(dim), y(dim);
      for (auto& v : x) v = normal(rng);
      for (auto& v : z) v = normal(rng);
      const double mix = static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(1, e.points - 1));
      for (std::size_t i = 0; i < dim; ++i) y[i] = (1 - mix) * x[i] + mix * z[i];
      double xy = 0, xx = 0, yy = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
      }
      const auto bx = lsh_bucketize(x, lambdas, e.threshold);
      const auto by = lsh_bucketize(y, lambdas, e.threshold);
      double both = 0, any = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < bx.size(); ++i) {
        both += bx[i] * by[i];
        any += std::max(bx[i], by[i]);
        na += bx[i];
        nb += by[i];
      }
      csv.row({u(k), f(xy / std::sqrt(xx * yy)), f(na), f(nb), f(any > 0 ? both / any : 1.0)});
    }
  } else {
    throw BadUsage("unknown experiment '" + e.kind + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based language model toolkit: training, inference and analysis"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string run_dir = ".";
  app.add_option("--run-dir", run_dir, "where commands without an output directory write run.json")
      ->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON run config");
  train_cmd->add_option("--config", ta.config, "run config (or a previous run.json)")->required();
  train_cmd->add_option("--out", ta.out, "output directory, overrides the config");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "sample bytes from a checkpoint");
  gen_cmd->add_option("--ckpt", ga.ckpt)->required();
  gen_cmd->add_option("--prompt", ga.prompt, "text, or hex:<digits>")->required();
  gen_cmd->add_option("--tokens", ga.tokens);
  gen_cmd->add_option("--temp", ga.temp);
  gen_cmd->add_option("--seed", ga.seed);

  VerifyArgs va;
  auto* ver_cmd = app.add_subcommand("verify-equivalence", "check the local graph kernel against dense execution");
  ver_cmd->add_option("--n", va.n, "largest neuron count");
  ver_cmd->add_option("--d", va.d, "rank of tensor-derived instances");
  ver_cmd->add_option("--L", va.layers, "largest layer count");
  ver_cmd->add_option("--trials", va.trials);
  ver_cmd->add_option("--tokens", va.tokens, "longest input");
  ver_cmd->add_option("--seed", va.seed);

  AnalyzeArgs aa;
  auto* an_cmd = app.add_subcommand("analyze", "structural and activation analyses of a checkpoint");
  an_cmd->add_option("kind", aa.kind)->required()->check(CLI::IsMember({"ffn", "sigma", "sparsity", "degrees", "modularity"}));
  an_cmd->add_option("--ckpt", aa.ckpt)->required();
  an_cmd->add_option("--out", aa.out);
  an_cmd->add_option("--head-a", aa.head_a);
  an_cmd->add_option("--head-b", aa.head_b);
  an_cmd->add_option("--decoder", aa.decoder)->check(CLI::IsMember({"x", "y"}));
  an_cmd->add_option("--beta", aa.beta, "edge threshold");
  an_cmd->add_option("--bins", aa.bins);
  an_cmd->add_option("--seeds", aa.seeds, "Louvain restarts");
  an_cmd->add_option("--lowrank-d", aa.lowrank_d, "baseline rank, 0 for the model's d");
  an_cmd->add_option("--seed", aa.seed);
  an_cmd->add_option("--text-file", aa.text_file);
  an_cmd->add_option("--layer", aa.layer);
  an_cmd->add_option("--head", aa.head);
  an_cmd->add_option("--t", aa.t, "state after this many tokens, -1 for all");
  an_cmd->add_option("--threshold", aa.threshold);
  an_cmd->add_option("--buckets", aa.buckets, "rotation-frequency buckets for sparsity");

  ProbeArgs pa;
  auto* probe_cmd = app.add_subcommand("probe", "trace one synapse over a text");
  probe_cmd->add_option("--ckpt", pa.ckpt)->required();
  probe_cmd->add_option("--text-file", pa.text_file)->required();
  probe_cmd->add_option("--synapse", pa.synapse, "l,h,i,j")->required();
  probe_cmd->add_option("--out", pa.out, "CSV path, stdout when empty");

  ConceptArgs ca;
  auto* con_cmd = app.add_subcommand("concept-test", "rank synapses separating two sets of texts");
  con_cmd->add_option("--ckpt", ca.ckpt)->required();
  con_cmd->add_option("--positive", ca.positive, "one text per line")->required();
  con_cmd->add_option("--contrast", ca.contrast, "one text per line")->required();
  con_cmd->add_option("--top-k", ca.top_k);
  con_cmd->add_option("--pool", ca.pool, "candidate synapses");
  con_cmd->add_option("--out", ca.out, "JSON path, stdout when empty");

  MergeArgs ma;
  auto* merge_cmd = app.add_subcommand("merge", "concatenate two models along the neuron axis");
  merge_cmd->add_option("--a", ma.a)->required();
  merge_cmd->add_option("--b", ma.b)->required();
  merge_cmd->add_option("--out", ma.out)->required();

  ExperimentArgs ea;
  auto* exp_cmd = app.add_subcommand("experiment", "synthetic experiments on low-rank and attention claims");
  exp_cmd->add_option("kind", ea.kind)->required()->check(CLI::IsMember({"markov", "fscore", "capacity", "lsh"}));
  exp_cmd->add_option("--out", ea.out);
  exp_cmd->add_option("--n", ea.n);
  exp_cmd->add_option("--r", ea.r, "markov out-degree");
  exp_cmd->add_option("--d", ea.d, "rank list (markov) or single rank")->delimiter(',');
  exp_cmd->add_option("--seeds", ea.seeds);
  exp_cmd->add_option("--seed", ea.seed, "first seed");
  exp_cmd->add_option("--variant", ea.variant, "relu, linear or both");
  exp_cmd->add_option("--a", ea.a, "fscore |A|");
  exp_cmd->add_option("--b", ea.b, "fscore |B|");
  exp_cmd->add_option("--c", ea.c, "fscore overlap");
  exp_cmd->add_option("--trials", ea.trials);
  exp_cmd->add_option("--t", ea.t, "capacity key counts, default sqrt(n),n")->delimiter(',');
  exp_cmd->add_option("--keys", ea.keys, "random or orthogonal");
  exp_cmd->add_option("--points", ea.points, "lsh pairs");
  exp_cmd->add_option("--buckets", ea.buckets, "lsh projections");
  exp_cmd->add_option("--threshold", ea.threshold, "lsh activation threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(ta, *train_cmd);
    if (*gen_cmd) {
      write_json(ensure_dir(run_dir) / "run.json", run_record(*gen_cmd));
      return cmd_generate(ga);
    }
    if (*ver_cmd) {
      write_json(ensure_dir(run_dir) / "run.json", run_record(*ver_cmd));
      return cmd_verify(va);
    }
    if (*an_cmd) return cmd_analyze(aa, *an_cmd);
    if (*probe_cmd) return cmd_probe(pa, *probe_cmd, run_dir);
    if (*con_cmd) return cmd_concept(ca, *con_cmd, run_dir);
    if (*merge_cmd) return cmd_merge(ma, *merge_cmd, run_dir);
    if (*exp_cmd) return cmd_experiment(ea, *exp_cmd, run_dir);
  } catch (const BadUsage& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
