#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semlink/channel.hpp"
#include "semlink/dataio.hpp"
#include "semlink/matching.hpp"
#include "semlink/perception.hpp"

namespace semlink {

enum class Method { Local, FullObservation, Top3Channel, SemanticOnly, Joint };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct RoundConfig {
  Method method = Method::Joint;
  double rho = 0.0;
  bool noisy_query = false;
  bool noisy_data = true;
  SnrScenario scenario;
};

struct RoundMetrics {
  std::vector<bool> correct;
  double accuracy = 0.0;
  std::size_t sidelink_connections = 0;
  double avg_connections_per_device = 0.0;
};

struct CommEdge {
  std::size_t src = 0;  // transmitting device j
  std::size_t dst = 0;  // receiving device i
  double weight = 0.0;
};

struct CommGraph {
  std::vector<CommEdge> edges;
};

struct RoundResult {
  std::vector<int> predictions;
  RoundMetrics metrics;
  CommGraph graph;
  MatchingMatrix matrix;  // populated for matching-based methods
};

// One collaborative inference round. Matching-based methods run the full
// procedure: local encode and query/key generation, query multicast, responder
// scoring, row softmax and pruning, feature unicast over surviving edges,
// weighted fusion and decoding.
RoundResult run_round(const ModelBundle& bundle, const ObservationBatch& batch,
                      const LinkState& link, const RoundConfig& cfg, Rng& rng);

// Each device averages its own feature with those of the three peers whose
// inbound data links have the highest SNR (ties go to the lower index).
RoundResult run_top3_baseline(const ModelBundle& bundle, const ObservationBatch& batch,
                              const LinkState& link, bool noisy_data, Rng& rng);

// Peers selected by run_top3_baseline for device i.
std::vector<std::size_t> top3_peers(const LinkState& link, std::size_t i);

struct EnvironmentConfig {
  std::size_t n_devices = 16;
  std::size_t n_groups = 4;
  double p_partial = 0.8;
  double patch_scale = 0.4;
  PatchMode patch_mode = PatchMode::Side;
  SnrResample snr_resample = SnrResample::PerRound;
};

// Groups, observations and link state of one round, drawn from a sample pool.
struct RoundEnvironment {
  ObservationBatch batch;
  LinkState link;
};

RoundEnvironment sample_environment(std::span<const Sample> pool, const EnvironmentConfig& env,
                                    const SnrScenario& scenario, Rng& rng);

struct EvalConfig {
  EnvironmentConfig env;
  std::size_t n_rounds = 100;
  std::vector<std::uint64_t> seeds = {1};
  // Called after every round with (seed, round index, result).
  std::function<void(std::uint64_t, std::size_t, const RoundResult&)> observer;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double avg_connections = 0.0;
};

struct EvalSummary {
  double accuracy_mean = 0.0;
  double accuracy_sd = 0.0;
  double connections_mean = 0.0;
  double connections_sd = 0.0;
  std::size_t rounds = 0;
  std::vector<SeedSummary> per_seed;
};

// Rounds are paired across methods: the environment of round k under seed s
// depends only on (s, k), and channel noise comes from a separate stream.
// Statistics are taken over all rounds × seeds.
EvalSummary evaluate(const ModelBundle& bundle, std::span<const Sample> test,
                     const RoundConfig& cfg, const EvalConfig& eval);

// Stream tags for derive_seed.
inline constexpr std::uint64_t kEnvironmentStream = 0x454e56;
inline constexpr std::uint64_t kChannelStream = 0x43484e;
inline constexpr std::uint64_t kEpisodeStream = 0x455049;

}  // namespace semlink
