#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "semlink/channel.hpp"
#include "semlink/checkpoint.hpp"
#include "semlink/layers.hpp"

namespace semlink {

struct MatchingConfig {
  std::size_t feature_dim = 64;
  std::size_t query_dim = 64;
  std::size_t key_dim = 128;
  std::vector<std::size_t> generator_hidden = {256, 128};
  std::vector<std::size_t> weight_hidden = {32, 32};
  // SNR range used to normalize G_W inputs to [-1, 1].
  double gamma_min_db = -10.0;
  double gamma_max_db = 10.0;
};

// Channel-conditioned attention weights W(γ_d, γ_q) = W0 + u·vᵀ, with
// (u, v) produced by a small MLP from the normalized SNR pair. The u half of
// the output layer starts at zero, so W = W0 until the MLP is trained.
class WeightGenerator {
 public:
  WeightGenerator() = default;
  WeightGenerator(std::size_t query_dim, std::size_t key_dim, const std::vector<std::size_t>& hidden,
                  double gamma_min_db, double gamma_max_db, Rng& rng);

  std::size_t query_dim() const { return query_dim_; }
  std::size_t key_dim() const { return key_dim_; }

  // MLP input row for an SNR pair.
  std::pair<double, double> normalized_input(double gamma_d_db, double gamma_q_db) const;
  // Returns (u, v); u has query_dim entries and v key_dim.
  std::pair<std::vector<double>, std::vector<double>> modulation(double gamma_d_db,
                                                                 double gamma_q_db) const;
  Tensor2 weights(double gamma_d_db, double gamma_q_db) const;

  // Zeroes the whole output layer: W(γ) = W0 for every γ.
  void zero_head();

  ParamBlock& base() { return w0_; }
  const ParamBlock& base() const { return w0_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

 private:
  std::size_t query_dim_ = 0;
  std::size_t key_dim_ = 0;
  double gamma_min_db_ = -10.0;
  double gamma_max_db_ = 10.0;
  ParamBlock w0_;
  Mlp mlp_;
};

// G_q, G_k and G_W shared by all devices.
struct MatchingModules {
  MatchingConfig cfg;
  Mlp gq;
  Mlp gk;
  WeightGenerator gw;
  bool link_aware = true;
  bool trained = false;

  MatchingModules() = default;
  MatchingModules(const MatchingConfig& cfg, bool link_aware, Rng& rng);

  // Trainable blocks for the configured variant; the G_W MLP is included
  // only when link_aware is set.
  std::vector<ParamBlock*> trainable_params();
  std::vector<ParamBlock*> all_params();

  std::vector<NamedTensor> to_blocks() const;
  static MatchingModules from_blocks(const std::vector<NamedTensor>& blocks);
};

std::vector<double> gen_query(const Mlp& gq, std::span<const double> feature);
std::vector<double> gen_key(const Mlp& gk, std::span<const double> feature);
Tensor2 gen_weights(const WeightGenerator& gw, double gamma_d_db, double gamma_q_db);

// Scaled general attention qᵀ W k / sqrt(K) with W of shape Q×K, evaluated
// by the responder with its own key and the query it received.
double match_score(std::span<const double> key, const Tensor2& w, std::span<const double> query);

struct MatchingMatrix {
  Tensor2 raw;
  Tensor2 normalized;
  Tensor2 pruned;
  double rho = 0.0;
};

MatchingMatrix build_matching_matrix(const Tensor2& raw);
// Off-diagonal weights below rho are zeroed; the diagonal and the remaining
// weights are kept as-is (no renormalization).
MatchingMatrix prune(const MatchingMatrix& m, double rho);

// y_g = m_ii·local + Σ_j m_ij·received[j]. Every peer with a nonzero weight
// in row must be present in received.
std::vector<double> combine_features(std::span<const double> row, std::size_t self,
                                     std::span<const double> local,
                                     const std::map<std::size_t, std::vector<double>>& received);

// One round's inputs to the score computation.
struct ScoreRound {
  Tensor2 features;     // N×D encoder outputs
  LinkState link;
  Tensor2 query_noise;  // (N·N)×Q standard normal draws, row i·N+j; empty = reliable query
};

// Batched forward/backward of the score stage over several rounds:
// queries, keys, channel-conditioned weights, optional query corruption and
// the bilinear score. Scores of round r occupy rows r·N .. r·N+N-1.
class ScoreTape {
 public:
  // link_aware selects W(γ) from G_W; otherwise the constant base W0 is used.
  Tensor2 forward(const MatchingModules& mm, std::span<const ScoreRound> rounds, bool link_aware);
  // Accumulates gradients into mm's trainable blocks.
  void backward(MatchingModules& mm, const Tensor2& grad_scores);

 private:
  std::size_t rounds_ = 0;
  std::size_t n_ = 0;
  bool link_aware_ = false;
  bool recorded_ = false;
  Tensor2 queries_;   // R·N × Q
  Tensor2 keys_;      // R·N × K
  Tensor2 key_proj_;  // R·N × Q, W0·k
  Tensor2 modulation_;  // unique SNR pairs × (Q+K)
  std::vector<std::size_t> modulation_row_;  // pair -> row of modulation_
  Tensor2 received_queries_;  // R·N·N × Q
  std::vector<double> sigma_;
  std::vector<double> snr_lin_;
  MlpTape gq_tape_;
  MlpTape gk_tape_;
  MlpTape gw_tape_;
};

}  // namespace semlink
