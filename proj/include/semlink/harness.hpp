#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlink/protocol.hpp"
#include "semlink/trainer.hpp"

namespace semlink {

// Every effective parameter of a CLI run. Defaults follow the reference
// simulation setup; desk-scale substitutions are listed in kDeskScaleFields.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  // dataset
  std::size_t dataset_size = 14000;
  std::size_t test_size = 2000;
  // environment
  std::size_t n_devices = 16;
  std::size_t n_groups = 4;
  double p_partial = 0.8;
  double patch_scale = 0.4;
  std::string patch_mode = "side";
  double gamma_min_db = -10.0;
  double gamma_max_db = 10.0;
  std::string scenario = "extreme";
  std::string snr_resample = "per_round";
  // models
  std::size_t feature_dim = 64;
  std::size_t key_dim = 128;
  std::size_t query_dim = 64;
  // pretraining
  int pretrain_max_epochs = 40;
  double pretrain_lr = 1e-3;
  // matching training
  int epochs = 60;
  std::size_t batch_size = 64;
  std::size_t samples_per_epoch = 2560;
  double lr = 1e-3;
  // protocol / evaluation
  std::string method = "joint";
  double rho = 0.0;
  bool noisy_query = false;
  bool noisy_data = true;
  std::size_t n_rounds = 2000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

inline const std::vector<std::string> kDeskScaleFields = {
    "dataset_size", "feature_dim", "key_dim", "query_dim", "lr", "samples_per_epoch"};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Fields absent from j keep their current value; unknown keys are rejected.
void merge_json(ExperimentConfig& cfg, const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

SnrScenario scenario_of(const ExperimentConfig& cfg);
EnvironmentConfig environment_of(const ExperimentConfig& cfg);
TrainConfig train_config_of(const ExperimentConfig& cfg, bool link_aware);
RoundConfig round_config_of(const ExperimentConfig& cfg);

struct ResultRecord {
  std::uint64_t run_id = 0;
  std::string method;
  std::string scenario;
  bool noisy_query = false;
  bool noisy_data = true;
  std::size_t query_size = 0;
  double rho = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double avg_connections = 0.0;
  std::size_t n_rounds = 0;

  friend bool operator==(const ResultRecord&, const ResultRecord&) = default;
};

inline constexpr const char* kResultsHeader =
    "run_id,method,scenario,noisy_query,noisy_data,query_size,rho,seed,accuracy,avg_connections,"
    "n_rounds";

// Appends records, assigning run_ids after the largest one already in the
// file. Writes the header when the file is new. Returns the records as written.
std::vector<ResultRecord> write_results(const std::filesystem::path& path,
                                        std::vector<ResultRecord> records);
std::vector<ResultRecord> read_results(const std::filesystem::path& path);

struct AggregateRow {
  std::vector<std::string> key;
  std::size_t count = 0;
  double accuracy_mean = 0.0;
  double accuracy_sd = 0.0;  // sample standard deviation
  double connections_mean = 0.0;
  double connections_sd = 0.0;
};

// Groups by the named columns (any of method, scenario, noisy_query,
// noisy_data, query_size, rho) in first-seen order.
std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& records,
                                    const std::vector<std::string>& by);

// Entry point of the semlink command-line tool.
int cli_main(int argc, const char* const* argv);

}  // namespace semlink
