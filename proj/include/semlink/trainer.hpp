#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semlink/matching.hpp"
#include "semlink/perception.hpp"
#include "semlink/protocol.hpp"

namespace semlink {

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 64;
  // Training samples consumed per epoch; each round consumes n_groups of them.
  // 0 uses the whole pool.
  std::size_t samples_per_epoch = 0;
  double lr = 1e-3;
  bool noisy_query = false;
  bool noisy_data = true;
  bool link_aware = true;
  SnrScenario scenario;
  EnvironmentConfig env;
  MatchingConfig matching;
};

// Learning rate of the original large-scale setup, kept as a preset.
inline constexpr double kPaperLearningRate = 1e-5;

// A fully sampled round ready for the differentiable pipeline.
struct TrainingRound {
  ScoreRound score;
  Tensor2 received;  // (N·N)×D, row i·N+j holds what i got from j; diagonal is o_i
  std::vector<int> labels;
};

TrainingRound build_training_round(const SplitClassifier& clf, const RoundEnvironment& env,
                                   std::size_t query_dim, bool noisy_query, bool noisy_data,
                                   Rng& rng);

// Mean cross-entropy over every device of every round, unpruned. With
// backward set, gradients are accumulated into mm's trainable blocks (the
// caller zeroes them); the classifier only propagates.
double collaborative_loss(MatchingModules& mm, const SplitClassifier& clf,
                          std::span<const TrainingRound> rounds, bool link_aware, bool backward);

struct TrainReport {
  std::vector<double> loss_history;  // one entry per optimizer step
  std::size_t steps = 0;
  double final_loss = 0.0;  // mean of the last epoch
};

// Trains G_q, G_k, W0 (and the G_W MLP when link_aware) with the classifier
// frozen. Initializes bundle.matching from cfg.matching when absent.
TrainReport train_matching(ModelBundle& bundle, std::span<const Sample> pool,
                           const TrainConfig& cfg, Rng& rng);

// Moving average with the given window; entry k averages history[max(0,k-w+1)..k].
std::vector<double> smooth(std::span<const double> history, std::size_t window);

struct VariantSpec {
  bool link_aware = true;
  ScenarioKind scenario = ScenarioKind::Extreme;
  std::size_t query_dim = 64;
  bool noisy_query = false;
};

std::string variant_name(const VariantSpec& v);

// Trains one variant cell from base; the random stream depends only on
// (seed, variant name).
MatchingModules train_variant(const SplitClassifier& clf, std::span<const Sample> pool,
                              const TrainConfig& base, const VariantSpec& v, std::uint64_t seed,
                              TrainReport* report = nullptr);

struct ManifestEntry {
  VariantSpec variant;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  std::filesystem::path checkpoint;
};

struct SweepConfig {
  TrainConfig base;
  std::vector<ScenarioKind> scenarios = {ScenarioKind::Uniform, ScenarioKind::Extreme};
  std::vector<std::size_t> query_sizes = {8, 16, 32, 64, 128};
  std::vector<bool> noisy_query_arms = {false, true};
  std::vector<bool> link_aware_arms = {false, true};
  std::uint64_t seed = 1;
};

// Trains every (variant, scenario, Q, query-noise arm) cell, writing one
// matching checkpoint per cell plus manifest.json into out_dir.
std::vector<ManifestEntry> train_all_variants(const SplitClassifier& clf,
                                              std::span<const Sample> pool, const SweepConfig& cfg,
                                              const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& classifier_checkpoint = {});
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace semlink
