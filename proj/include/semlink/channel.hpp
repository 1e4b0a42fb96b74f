#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "semlink/rng.hpp"
#include "semlink/tensor.hpp"

namespace semlink {

enum class ScenarioKind { Uniform, Extreme };

std::string to_string(ScenarioKind k);
ScenarioKind scenario_from_string(const std::string& s);

struct SnrScenario {
  ScenarioKind kind = ScenarioKind::Uniform;
  double gamma_min_db = -10.0;
  double gamma_max_db = 10.0;

  void validate() const;
  // Affine map [gamma_min, gamma_max] dB -> [-1, 1].
  double normalize(double snr_db) const;
};

enum class SnrResample { PerRound, PerEpisode };

std::string to_string(SnrResample r);
SnrResample snr_resample_from_string(const std::string& s);

// Per-direction link SNRs in dB, indexed [src][dst]. Query i→j is
// gamma_q_db(i, j); data j→i is gamma_d_db(j, i). The diagonal holds
// gamma_max by convention; self traffic never crosses the channel.
struct LinkState {
  std::size_t n_devices = 0;
  Tensor2 gamma_q_db;
  Tensor2 gamma_d_db;

  double query_snr(std::size_t from, std::size_t to) const { return gamma_q_db(from, to); }
  double data_snr(std::size_t from, std::size_t to) const { return gamma_d_db(from, to); }
};

LinkState sample_link_state(const SnrScenario& scenario, std::size_t n, Rng& rng);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

double db_to_linear(double db);

// Noise standard deviation for a message at the given SNR, using the
// message's own mean-square power. Zero when the message has zero power or
// the SNR is +inf.
double awgn_sigma(std::span<const double> v, double snr_db);

// v + sigma·z for caller-supplied standard-normal draws z.
std::vector<double> awgn_apply(std::span<const double> v, double snr_db, std::span<const double> z);

std::vector<double> awgn_transmit(std::span<const double> v, double snr_db, Rng& rng);

// Query multicast leg i→j. Identity when noisy is false.
std::vector<double> transmit_query(std::span<const double> query, const LinkState& link,
                                   std::size_t i, std::size_t j, bool noisy, Rng& rng);

// Feature unicast leg j→i; produces the corrupted copy device i receives.
std::vector<double> transmit_data(std::span<const double> feature, const LinkState& link,
                                  std::size_t j, std::size_t i, Rng& rng);

void fill_standard_normal(std::span<double> out, Rng& rng);

}  // namespace semlink
