#include "semlink/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "semlink/checkpoint.hpp"
#include "semlink/errors.hpp"

namespace semlink {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const ExperimentConfig& c) {
  return json{{"seed", c.seed},
              {"dataset_size", c.dataset_size},
              {"test_size", c.test_size},
              {"n_devices", c.n_devices},
              {"n_groups", c.n_groups},
              {"p_partial", c.p_partial},
              {"patch_scale", c.patch_scale},
              {"patch_mode", c.patch_mode},
              {"gamma_min_db", c.gamma_min_db},
              {"gamma_max_db", c.gamma_max_db},
              {"scenario", c.scenario},
              {"snr_resample", c.snr_resample},
              {"feature_dim", c.feature_dim},
              {"key_dim", c.key_dim},
              {"query_dim", c.query_dim},
              {"pretrain_max_epochs", c.pretrain_max_epochs},
              {"pretrain_lr", c.pretrain_lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"samples_per_epoch", c.samples_per_epoch},
              {"lr", c.lr},
              {"method", c.method},
              {"rho", c.rho},
              {"noisy_query", c.noisy_query},
              {"noisy_data", c.noisy_data},
              {"n_rounds", c.n_rounds},
              {"seeds", c.seeds}};
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

void merge_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  static const std::vector<std::string> ignored = {"command", "inputs", "desk_scale",
                                                   "desk_scale_fields", "run_ids"};
  const json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.contains(key) && std::find(ignored.begin(), ignored.end(), key) == ignored.end())
      throw ArgumentError("unknown config key '" + key + "'");
  }
  try {
    take(j, "seed", c.seed);
    take(j, "dataset_size", c.dataset_size);
    take(j, "test_size", c.test_size);
    take(j, "n_devices", c.n_devices);
    take(j, "n_groups", c.n_groups);
    take(j, "p_partial", c.p_partial);
    take(j, "patch_scale", c.patch_scale);
    take(j, "patch_mode", c.patch_mode);
    take(j, "gamma_min_db", c.gamma_min_db);
    take(j, "gamma_max_db", c.gamma_max_db);
    take(j, "scenario", c.scenario);
    take(j, "snr_resample", c.snr_resample);
    take(j, "feature_dim", c.feature_dim);
    take(j, "key_dim", c.key_dim);
    take(j, "query_dim", c.query_dim);
    take(j, "pretrain_max_epochs", c.pretrain_max_epochs);
    take(j, "pretrain_lr", c.pretrain_lr);
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "samples_per_epoch", c.samples_per_epoch);
    take(j, "lr", c.lr);
    take(j, "method", c.method);
    take(j, "rho", c.rho);
    take(j, "noisy_query", c.noisy_query);
    take(j, "noisy_data", c.noisy_data);
    take(j, "n_rounds", c.n_rounds);
    take(j, "seeds", c.seeds);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad config value: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ArgumentError("cannot parse config " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg;
  merge_json(cfg, j);
  return cfg;
}

SnrScenario scenario_of(const ExperimentConfig& cfg) {
  SnrScenario s;
  s.kind = scenario_from_string(cfg.scenario);
  s.gamma_min_db = cfg.gamma_min_db;
  s.gamma_max_db = cfg.gamma_max_db;
  s.validate();
  return s;
}

EnvironmentConfig environment_of(const ExperimentConfig& cfg) {
  EnvironmentConfig e;
  e.n_devices = cfg.n_devices;
  e.n_groups = cfg.n_groups;
  e.p_partial = cfg.p_partial;
  e.patch_scale = cfg.patch_scale;
  e.patch_mode = patch_mode_from_string(cfg.patch_mode);
  e.snr_resample = snr_resample_from_string(cfg.snr_resample);
  return e;
}

TrainConfig train_config_of(const ExperimentConfig& cfg, bool link_aware) {
  TrainConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.samples_per_epoch = cfg.samples_per_epoch;
  t.lr = cfg.lr;
  t.noisy_query = cfg.noisy_query;
  t.noisy_data = cfg.noisy_data;
  t.link_aware = link_aware;
  t.scenario = scenario_of(cfg);
  t.env = environment_of(cfg);
  t.matching.feature_dim = cfg.feature_dim;
  t.matching.query_dim = cfg.query_dim;
  t.matching.key_dim = cfg.key_dim;
  t.matching.gamma_min_db = cfg.gamma_min_db;
  t.matching.gamma_max_db = cfg.gamma_max_db;
  return t;
}

RoundConfig round_config_of(const ExperimentConfig& cfg) {
  RoundConfig r;
  r.method = method_from_string(cfg.method);
  r.rho = cfg.rho;
  r.noisy_query = cfg.noisy_query;
  r.noisy_data = cfg.noisy_data;
  r.scenario = scenario_of(cfg);
  return r;
}

namespace {

std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw IoError("bad boolean field '" + s + "'");
}

}  // namespace

std::vector<ResultRecord> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw IoError("unexpected results header in " + path.string());
  std::vector<ResultRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 11)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 11 fields");
    try {
      ResultRecord r;
      r.run_id = std::stoull(f[0]);
      r.method = f[1];
      r.scenario = f[2];
      r.noisy_query = parse_bool(f[3]);
      r.noisy_data = parse_bool(f[4]);
      r.query_size = std::stoull(f[5]);
      r.rho = std::stod(f[6]);
      r.seed = std::stoull(f[7]);
      r.accuracy = std::stod(f[8]);
      r.avg_connections = std::stod(f[9]);
      r.n_rounds = std::stoull(f[10]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

std::vector<ResultRecord> write_results(const fs::path& path, std::vector<ResultRecord> records) {
  std::uint64_t next_id = 1;
  const bool exists = fs::exists(path) && fs::file_size(path) > 0;
  if (exists) {
    for (const auto& r : read_results(path)) next_id = std::max(next_id, r.run_id + 1);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write results " + path.string());
  if (!exists) out << kResultsHeader << '\n';
  for (auto& r : records) {
    r.run_id = next_id++;
    out << r.run_id << ',' << r.method << ',' << r.scenario << ',' << (r.noisy_query ? 1 : 0)
        << ',' << (r.noisy_data ? 1 : 0) << ',' << r.query_size << ',' << fmt_double(r.rho) << ','
        << r.seed << ',' << fmt_double(r.accuracy) << ',' << fmt_double(r.avg_connections) << ','
        << r.n_rounds << '\n';
  }
  if (!out) throw IoError("error writing results " + path.string());
  return records;
}

namespace {

std::string column_value(const ResultRecord& r, const std::string& col) {
  if (col == "method") return r.method;
  if (col == "scenario") return r.scenario;
  if (col == "noisy_query") return r.noisy_query ? "1" : "0";
  if (col == "noisy_data") return r.noisy_data ? "1" : "0";
  if (col == "query_size") return std::to_string(r.query_size);
  if (col == "rho") return fmt_double(r.rho);
  if (col == "seed") return std::to_string(r.seed);
  throw ArgumentError("cannot group by column '" + col + "'");
}

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& records,
                                    const std::vector<std::string>& by) {
  std::vector<std::vector<std::string>> keys;
  std::vector<std::vector<double>> accs;
  std::vector<std::vector<double>> conns;
  for (const auto& r : records) {
    std::vector<std::string> key;
    for (const auto& col : by) key.push_back(column_value(r, col));
    auto it = std::find(keys.begin(), keys.end(), key);
    std::size_t idx = static_cast<std::size_t>(it - keys.begin());
    if (it == keys.end()) {
      keys.push_back(key);
      accs.emplace_back();
      conns.emplace_back();
    }
    accs[idx].push_back(r.accuracy);
    conns[idx].push_back(r.avg_connections);
  }
  std::vector<AggregateRow> out;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    AggregateRow row;
    row.key = keys[k];
    row.count = accs[k].size();
    mean_sd(accs[k], row.accuracy_mean, row.accuracy_sd);
    mean_sd(conns[k], row.connections_mean, row.connections_sd);
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command-line tool

namespace {

struct Paths {
  std::string data;
  std::string classifier;
  std::string matching;
  std::string out;
  std::string results = "results.csv";
  std::string from_png;
  std::string ckpt_dir = "checkpoints";
  std::string dump_graphs;
  std::string dump_matrices;
  std::string report_out;
};

struct Split {
  std::vector<Sample> pool;
  std::vector<Sample> test;
};

Split load_split(const ExperimentConfig& cfg, const std::string& data) {
  if (data.empty()) throw ArgumentError("--data is required");
  std::vector<Sample> all = load_dataset(data);
  if (cfg.test_size == 0 || cfg.test_size >= all.size())
    throw ArgumentError("test_size must be in [1, dataset size)");
  Split s;
  const auto cut = all.end() - static_cast<std::ptrdiff_t>(cfg.test_size);
  s.pool.assign(all.begin(), cut);
  s.test.assign(cut, all.end());
  return s;
}

SplitClassifier load_classifier(const std::string& path) {
  if (path.empty()) throw ArgumentError("--classifier is required");
  SplitClassifier clf = SplitClassifier::from_blocks(load_container(path));
  return clf;
}

bool needs_matching(Method m) { return m == Method::SemanticOnly || m == Method::Joint; }

void write_snapshot(const fs::path& path, const ExperimentConfig& cfg, const std::string& command,
                    const json& inputs, const std::vector<std::uint64_t>& run_ids = {}) {
  json j = to_json(cfg);
  j["command"] = command;
  j["inputs"] = inputs;
  j["desk_scale"] = true;
  j["desk_scale_fields"] = kDeskScaleFields;
  if (!run_ids.empty()) j["run_ids"] = run_ids;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot " + path.string());
  out << j.dump(2) << '\n';
}

fs::path results_snapshot_path(const fs::path& results, std::uint64_t first_id) {
  return results.parent_path() /
         (results.stem().string() + ".run" + std::to_string(first_id) + ".config.json");
}

class Dumper {
 public:
  Dumper(const std::string& graphs, const std::string& matrices) {
    open(graphs_, graphs, "graphs.csv", "method,rho,seed,round,src,dst,weight");
    open(matrices_, matrices, "matrices.csv",
         "method,rho,seed,round,row,col,raw,normalized,pruned");
  }

  bool active() const { return graphs_.is_open() || matrices_.is_open(); }

  void record(const std::string& method, double rho, std::uint64_t seed, std::size_t round,
              const RoundResult& r) {
    const std::string prefix =
        method + ',' + fmt_double(rho) + ',' + std::to_string(seed) + ',' + std::to_string(round) + ',';
    if (graphs_.is_open()) {
      for (const auto& e : r.graph.edges)
        graphs_ << prefix << e.src << ',' << e.dst << ',' << fmt_double(e.weight) << '\n';
    }
    if (matrices_.is_open() && r.matrix.raw.rows() > 0) {
      const auto& m = r.matrix;
      for (std::size_t i = 0; i < m.raw.rows(); ++i)
        for (std::size_t j = 0; j < m.raw.cols(); ++j)
          matrices_ << prefix << i << ',' << j << ',' << fmt_double(m.raw(i, j)) << ','
                    << fmt_double(m.normalized(i, j)) << ',' << fmt_double(m.pruned(i, j)) << '\n';
    }
  }

 private:
  static void open(std::ofstream& f, const std::string& dir, const char* name,
                   const char* header) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    const fs::path path = fs::path(dir) / name;
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    f.open(path, std::ios::app);
    if (!f) throw IoError("cannot write " + path.string());
    if (fresh) f << header << '\n';
  }

  std::ofstream graphs_;
  std::ofstream matrices_;
};

// Evaluates one method over cfg.seeds; returns one record per seed.
std::vector<ResultRecord> evaluate_cell(const ModelBundle& bundle, std::span<const Sample> test,
                                        const ExperimentConfig& cfg, std::size_t query_size,
                                        Dumper* dumper) {
  const RoundConfig rc = round_config_of(cfg);
  EvalConfig ec;
  ec.env = environment_of(cfg);
  ec.n_rounds = cfg.n_rounds;
  ec.seeds = cfg.seeds;
  if (dumper && dumper->active()) {
    ec.observer = [&](std::uint64_t seed, std::size_t k, const RoundResult& r) {
      dumper->record(cfg.method, cfg.rho, seed, k, r);
    };
  }
  const EvalSummary s = evaluate(bundle, test, rc, ec);
  std::vector<ResultRecord> out;
  for (const auto& ps : s.per_seed) {
    ResultRecord r;
    r.method = to_string(rc.method);
    r.scenario = cfg.scenario;
    r.noisy_query = cfg.noisy_query;
    r.noisy_data = cfg.noisy_data;
    r.query_size = needs_matching(rc.method) ? query_size : 0;
    r.rho = cfg.rho;
    r.seed = ps.seed;
    r.accuracy = ps.accuracy;
    r.avg_connections = ps.avg_connections;
    r.n_rounds = cfg.n_rounds;
    out.push_back(std::move(r));
  }
  return out;
}

void print_records(const std::vector<ResultRecord>& recs) {
  for (const auto& r : recs) {
    std::printf("run %llu  %-8s %-7s nq=%d rho=%-6g Q=%-4zu seed=%llu  acc=%.4f  conn=%.3f\n",
                static_cast<unsigned long long>(r.run_id), r.method.c_str(), r.scenario.c_str(),
                r.noisy_query ? 1 : 0, r.rho, r.query_size,
                static_cast<unsigned long long>(r.seed), r.accuracy, r.avg_connections);
  }
}

std::vector<std::uint64_t> ids_of(const std::vector<ResultRecord>& recs) {
  std::vector<std::uint64_t> ids;
  for (const auto& r : recs) ids.push_back(r.run_id);
  return ids;
}

void record_results(const Paths& p, const ExperimentConfig& cfg, const std::string& command,
                    const json& inputs, std::vector<ResultRecord> recs) {
  recs = write_results(p.results, std::move(recs));
  if (!recs.empty())
    write_snapshot(results_snapshot_path(p.results, recs.front().run_id), cfg, command, inputs,
                   ids_of(recs));
  print_records(recs);
}

int cmd_gen_data(const ExperimentConfig& cfg, const Paths& p) {
  if (p.out.empty()) throw ArgumentError("--out is required");
  std::vector<Sample> samples = p.from_png.empty() ? generate_dataset(cfg.dataset_size, cfg.seed)
                                                   : load_png_directory(p.from_png);
  save_dataset(p.out, samples);
  write_snapshot(p.out + ".config.json", cfg, "gen-data", {{"from_png", p.from_png}});
  std::printf("wrote %zu samples to %s\n", samples.size(), p.out.c_str());
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg, const Paths& p) {
  if (p.out.empty()) throw ArgumentError("--out is required");
  const Split s = load_split(cfg, p.data);
  PerceptionConfig pc;
  pc.feature_dim = cfg.feature_dim;
  PretrainConfig tc;
  tc.max_epochs = cfg.pretrain_max_epochs;
  tc.lr = cfg.pretrain_lr;
  tc.min_epochs = std::min(tc.min_epochs, tc.max_epochs);
  Rng rng = make_rng(cfg.seed, stream_tag("pretrain"));
  PretrainReport rep;
  const SplitClassifier clf = pretrain_full_model(s.pool, s.test, pc, tc, rng, &rep);
  save_container(p.out, clf.to_blocks());
  Rng occ_rng = make_rng(cfg.seed, stream_tag("occlusion"));
  const double occ = occluded_accuracy(clf, s.test, cfg.patch_scale, occ_rng,
                                       patch_mode_from_string(cfg.patch_mode));
  write_snapshot(p.out + ".config.json", cfg, "pretrain", {{"data", p.data}});
  std::printf("pretrained in %d epochs: clean accuracy %.4f, occluded accuracy %.4f\n",
              rep.epochs_run, rep.clean_accuracy, occ);
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Paths& p) {
  if (p.out.empty()) throw ArgumentError("--out is required");
  const Method m = method_from_string(cfg.method);
  if (!needs_matching(m)) throw ArgumentError("train: --method must be semantic or joint");
  const Split s = load_split(cfg, p.data);
  const SplitClassifier clf = load_classifier(p.classifier);
  const VariantSpec v{m == Method::Joint, scenario_from_string(cfg.scenario), cfg.query_dim,
                      cfg.noisy_query};
  TrainReport rep;
  const MatchingModules mm =
      train_variant(clf, s.pool, train_config_of(cfg, v.link_aware), v, cfg.seed, &rep);
  save_container(p.out, mm.to_blocks());
  write_snapshot(p.out + ".config.json", cfg, "train",
                 {{"data", p.data}, {"classifier", p.classifier}});
  std::printf("trained %s: %zu steps, final epoch loss %.5f\n", variant_name(v).c_str(),
              rep.steps, rep.final_loss);
  return 0;
}

ModelBundle bundle_for(const ExperimentConfig& cfg, const Paths& p) {
  ModelBundle b{load_classifier(p.classifier), std::nullopt};
  if (needs_matching(method_from_string(cfg.method))) {
    if (p.matching.empty()) throw ArgumentError("--matching is required for this method");
    b.matching = MatchingModules::from_blocks(load_container(p.matching));
  }
  return b;
}

int cmd_eval(const ExperimentConfig& cfg, const Paths& p) {
  const Split s = load_split(cfg, p.data);
  const ModelBundle b = bundle_for(cfg, p);
  Dumper dumper(p.dump_graphs, p.dump_matrices);
  const std::size_t q = b.matching ? b.matching->cfg.query_dim : 0;
  ExperimentConfig effective = cfg;
  if (b.matching) effective.query_dim = q;
  auto recs = evaluate_cell(b, s.test, effective, q, &dumper);
  record_results(p, effective, "eval",
                 {{"data", p.data}, {"classifier", p.classifier}, {"matching", p.matching}},
                 std::move(recs));
  return 0;
}

MatchingModules trained_or_cached(const SplitClassifier& clf, std::span<const Sample> pool,
                                  const ExperimentConfig& cfg, const VariantSpec& v,
                                  const fs::path& dir) {
  const fs::path path = dir / (variant_name(v) + ".slnk");
  if (fs::exists(path)) {
    std::printf("reusing %s\n", path.string().c_str());
    return MatchingModules::from_blocks(load_container(path));
  }
  fs::create_directories(dir);
  TrainReport rep;
  MatchingModules mm =
      train_variant(clf, pool, train_config_of(cfg, v.link_aware), v, cfg.seed, &rep);
  save_container(path, mm.to_blocks());
  std::printf("trained %s: final epoch loss %.5f\n", variant_name(v).c_str(), rep.final_loss);
  return mm;
}

int cmd_sweep_query(const ExperimentConfig& cfg, const Paths& p,
                    const std::vector<std::size_t>& query_sizes,
                    const std::vector<std::string>& scenarios, const std::vector<std::string>& arms) {
  const Split s = load_split(cfg, p.data);
  const SplitClassifier clf = load_classifier(p.classifier);
  std::vector<ResultRecord> all;
  for (const auto& sc : scenarios) {
    for (const auto& arm : arms) {
      if (arm != "reliable" && arm != "noisy")
        throw ArgumentError("unknown query arm '" + arm + "' (expected reliable|noisy)");
      ExperimentConfig c = cfg;
      c.scenario = sc;
      c.noisy_query = arm == "noisy";
      const ModelBundle base{clf, std::nullopt};
      for (const char* m : {"local", "full", "top3"}) {
        c.method = m;
        auto recs = evaluate_cell(base, s.test, c, 0, nullptr);
        all.insert(all.end(), recs.begin(), recs.end());
      }
      for (std::size_t q : query_sizes) {
        for (bool aware : {false, true}) {
          const VariantSpec v{aware, scenario_from_string(sc), q, c.noisy_query};
          ExperimentConfig cc = c;
          cc.query_dim = q;
          cc.method = aware ? "joint" : "semantic";
          ModelBundle b{clf, trained_or_cached(clf, s.pool, cc, v, p.ckpt_dir)};
          auto recs = evaluate_cell(b, s.test, cc, q, nullptr);
          all.insert(all.end(), recs.begin(), recs.end());
        }
      }
    }
  }
  json inputs = {{"data", p.data},
                 {"classifier", p.classifier},
                 {"ckpt_dir", p.ckpt_dir},
                 {"query_sizes", query_sizes},
                 {"scenarios", scenarios},
                 {"query_arms", arms}};
  record_results(p, cfg, "sweep-query", inputs, std::move(all));
  return 0;
}

int cmd_sweep_rho(const ExperimentConfig& cfg, const Paths& p, const std::vector<double>& rhos) {
  const Method m = method_from_string(cfg.method);
  if (!needs_matching(m)) throw ArgumentError("sweep-rho: --method must be semantic or joint");
  const Split s = load_split(cfg, p.data);
  const SplitClassifier clf = load_classifier(p.classifier);
  ExperimentConfig c = cfg;
  ModelBundle b{clf, std::nullopt};
  if (!p.matching.empty()) {
    b.matching = MatchingModules::from_blocks(load_container(p.matching));
  } else {
    const VariantSpec v{m == Method::Joint, scenario_from_string(cfg.scenario), cfg.query_dim,
                        cfg.noisy_query};
    b.matching = trained_or_cached(clf, s.pool, cfg, v, p.ckpt_dir);
  }
  c.query_dim = b.matching->cfg.query_dim;
  Dumper dumper(p.dump_graphs, p.dump_matrices);
  std::vector<ResultRecord> all;
  for (double rho : rhos) {
    c.rho = rho;
    auto recs = evaluate_cell(b, s.test, c, c.query_dim, &dumper);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  json inputs = {{"data", p.data},
                 {"classifier", p.classifier},
                 {"matching", p.matching},
                 {"ckpt_dir", p.ckpt_dir},
                 {"rhos", rhos}};
  record_results(p, c, "sweep-rho", inputs, std::move(all));
  return 0;
}

int cmd_report(const Paths& p, const std::vector<std::string>& by) {
  const auto recs = read_results(p.results);
  const auto rows = aggregate(recs, by);
  std::ostringstream os;
  for (const auto& col : by) os << col << ',';
  os << "n,accuracy_mean,accuracy_sd,connections_mean,connections_sd\n";
  for (const auto& r : rows) {
    for (const auto& k : r.key) os << k << ',';
    os << r.count << ',' << fmt_double(r.accuracy_mean) << ',' << fmt_double(r.accuracy_sd) << ','
       << fmt_double(r.connections_mean) << ',' << fmt_double(r.connections_sd) << '\n';
  }
  std::cout << os.str();
  if (!p.report_out.empty()) {
    std::ofstream out(p.report_out);
    if (!out) throw IoError("cannot write " + p.report_out);
    out << os.str();
  }
  return 0;
}

std::string find_config_arg(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  ExperimentConfig cfg;
  Paths p;
  std::string config_path;
  std::vector<std::size_t> query_sizes = {8, 16, 32, 64, 128};
  std::vector<std::string> scenarios = {"uniform", "extreme"};
  std::vector<std::string> arms = {"reliable", "noisy"};
  std::vector<double> rhos = {0.0, 0.01, 0.05, 0.1, 0.2, 0.4};
  std::vector<std::string> by = {"method", "scenario", "query_size"};
  bool paper_lr = false;

  CLI::App app{"Channel-aware semantic matching for collaborative sidelink perception"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  try {
    const std::string early = find_config_arg(argc, argv);
    if (!early.empty()) cfg = load_config(early);
    if (const char* env = std::getenv("SEMLINK_SEED")) cfg.seed = std::stoull(env);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config; flags override its values");
    sub->add_option("--seed", cfg.seed, "Base seed (also SEMLINK_SEED)");
    sub->add_option("--dataset-size", cfg.dataset_size);
    sub->add_option("--test-size", cfg.test_size, "Held-out samples at the end of the dataset");
  };
  auto env_opts = [&](CLI::App* sub) {
    sub->add_option("--devices", cfg.n_devices);
    sub->add_option("--groups", cfg.n_groups);
    sub->add_option("--p-partial", cfg.p_partial, "Probability a device sees a patched view");
    sub->add_option("--patch-scale", cfg.patch_scale);
    sub->add_option("--patch-mode", cfg.patch_mode)->check(CLI::IsMember({"side", "area"}));
    sub->add_option("--scenario", cfg.scenario)->check(CLI::IsMember({"uniform", "extreme"}));
    sub->add_option("--snr-resample", cfg.snr_resample)
        ->check(CLI::IsMember({"per_round", "per_episode"}));
    sub->add_option("--gamma-min", cfg.gamma_min_db);
    sub->add_option("--gamma-max", cfg.gamma_max_db);
    sub->add_flag("--noisy-query,!--reliable-query", cfg.noisy_query,
                  "Corrupt queries with channel noise");
    sub->add_flag("--noisy-data,!--reliable-data", cfg.noisy_data,
                  "Corrupt features with channel noise");
  };
  auto train_opts = [&](CLI::App* sub) {
    sub->add_option("--query-dim", cfg.query_dim);
    sub->add_option("--key-dim", cfg.key_dim);
    sub->add_option("--epochs", cfg.epochs);
    sub->add_option("--batch-size", cfg.batch_size);
    sub->add_option("--samples-per-epoch", cfg.samples_per_epoch, "0 uses the whole pool");
    sub->add_option("--lr", cfg.lr);
    sub->add_flag("--paper-lr", paper_lr, "Use the original learning rate 1e-5");
  };
  auto eval_opts = [&](CLI::App* sub) {
    sub->add_option("--rounds", cfg.n_rounds, "Test rounds per seed");
    sub->add_option("--seeds", cfg.seeds, "Evaluation seeds")->delimiter(',');
    sub->add_option("--results", p.results, "Results CSV (appended)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the glyph dataset or import PNGs");
  common(gen);
  gen->add_option("--out", p.out)->required();
  gen->add_option("--from-png", p.from_png, "Directory of <class>_<id>.png files");

  auto* pre = app.add_subcommand("pretrain", "Pretrain and freeze the split classifier");
  common(pre);
  pre->add_option("--data", p.data)->required();
  pre->add_option("--out", p.out)->required();
  pre->add_option("--feature-dim", cfg.feature_dim);
  pre->add_option("--max-epochs", cfg.pretrain_max_epochs);
  pre->add_option("--lr", cfg.pretrain_lr);
  pre->add_option("--patch-scale", cfg.patch_scale);
  pre->add_option("--patch-mode", cfg.patch_mode)->check(CLI::IsMember({"side", "area"}));

  auto* train = app.add_subcommand("train", "Train the matching modules of one variant");
  common(train);
  env_opts(train);
  train_opts(train);
  train->add_option("--data", p.data)->required();
  train->add_option("--classifier", p.classifier)->required();
  train->add_option("--out", p.out)->required();
  train->add_option("--method", cfg.method)->check(CLI::IsMember({"semantic", "joint"}));

  auto* ev = app.add_subcommand("eval", "Evaluate one method over test rounds");
  common(ev);
  env_opts(ev);
  eval_opts(ev);
  ev->add_option("--data", p.data)->required();
  ev->add_option("--classifier", p.classifier)->required();
  ev->add_option("--matching", p.matching, "Matching checkpoint (semantic, joint)");
  ev->add_option("--method", cfg.method)
      ->check(CLI::IsMember({"local", "full", "top3", "semantic", "joint"}));
  ev->add_option("--rho", cfg.rho, "Pruning threshold");
  ev->add_option("--dump-graphs", p.dump_graphs, "Directory for per-round edge lists");
  ev->add_option("--dump-matrices", p.dump_matrices, "Directory for per-round matching matrices");

  auto* sq = app.add_subcommand("sweep-query", "Accuracy against query size for every method");
  common(sq);
  env_opts(sq);
  train_opts(sq);
  eval_opts(sq);
  sq->add_option("--data", p.data)->required();
  sq->add_option("--classifier", p.classifier)->required();
  sq->add_option("--ckpt-dir", p.ckpt_dir, "Matching checkpoints are reused from here");
  sq->add_option("--query-sizes", query_sizes)->delimiter(',');
  sq->add_option("--scenarios", scenarios)->delimiter(',');
  sq->add_option("--query-arms", arms, "reliable and/or noisy")->delimiter(',');

  auto* sr = app.add_subcommand("sweep-rho", "Accuracy and connections against rho");
  common(sr);
  env_opts(sr);
  train_opts(sr);
  eval_opts(sr);
  sr->add_option("--data", p.data)->required();
  sr->add_option("--classifier", p.classifier)->required();
  sr->add_option("--matching", p.matching, "Matching checkpoint; trained if absent");
  sr->add_option("--ckpt-dir", p.ckpt_dir);
  sr->add_option("--method", cfg.method)->check(CLI::IsMember({"semantic", "joint"}));
  sr->add_option("--rhos", rhos)->delimiter(',');
  sr->add_option("--dump-graphs", p.dump_graphs);
  sr->add_option("--dump-matrices", p.dump_matrices);

  auto* rep = app.add_subcommand("report", "Aggregate a results CSV");
  rep->add_option("--results", p.results)->required();
  rep->add_option("--by", by, "Grouping columns")->delimiter(',');
  rep->add_option("--out", p.report_out, "Also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (paper_lr) cfg.lr = kPaperLearningRate;

  try {
    if (*gen) return cmd_gen_data(cfg, p);
    if (*pre) return cmd_pretrain(cfg, p);
    if (*train) return cmd_train(cfg, p);
    if (*ev) return cmd_eval(cfg, p);
    if (*sq) return cmd_sweep_query(cfg, p, query_sizes, scenarios, arms);
    if (*sr) return cmd_sweep_rho(cfg, p, rhos);
    if (*rep) return cmd_report(p, by);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace semlink
