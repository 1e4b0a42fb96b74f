#include "semlink/channel.hpp"

#include <cmath>

#include "semlink/errors.hpp"

namespace semlink {

std::string to_string(ScenarioKind k) { return k == ScenarioKind::Uniform ? "uniform" : "extreme"; }

ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "uniform") return ScenarioKind::Uniform;
  if (s == "extreme") return ScenarioKind::Extreme;
  throw ArgumentError("unknown scenario '" + s + "' (expected uniform|extreme)");
}

std::string to_string(SnrResample r) {
  return r == SnrResample::PerRound ? "per_round" : "per_episode";
}

SnrResample snr_resample_from_string(const std::string& s) {
  if (s == "per_round") return SnrResample::PerRound;
  if (s == "per_episode") return SnrResample::PerEpisode;
  throw ArgumentError("unknown snr resample mode '" + s + "' (expected per_round|per_episode)");
}

void SnrScenario::validate() const {
  if (!(gamma_min_db < gamma_max_db)) {
    throw ArgumentError("SnrScenario: gamma_min_db must be below gamma_max_db");
  }
}

double SnrScenario::normalize(double snr_db) const {
  const double mid = 0.5 * (gamma_min_db + gamma_max_db);
  const double half = 0.5 * (gamma_max_db - gamma_min_db);
  return (snr_db - mid) / half;
}

LinkState sample_link_state(const SnrScenario& scenario, std::size_t n, Rng& rng) {
  if (n < 2) throw ArgumentError("sample_link_state: need at least 2 devices");
  scenario.validate();
  LinkState link{n, Tensor2(n, n), Tensor2(n, n)};
  std::uniform_real_distribution<double> cont(scenario.gamma_min_db, scenario.gamma_max_db);
  std::bernoulli_distribution coin(0.5);
  auto draw = [&]() {
    if (scenario.kind == ScenarioKind::Uniform) return cont(rng);
    return coin(rng) ? scenario.gamma_max_db : scenario.gamma_min_db;
  };
  for (Tensor2* m : {&link.gamma_q_db, &link.gamma_d_db}) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) (*m)(a, b) = a == b ? scenario.gamma_max_db : draw();
  }
  return link;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

double awgn_sigma(std::span<const double> v, double snr_db) {
  if (v.empty() || snr_db == kNoiseless) return 0.0;
  double power = 0.0;
  for (double x : v) power += x * x;
  power /= static_cast<double>(v.size());
  if (power == 0.0) return 0.0;
  return std::sqrt(power / db_to_linear(snr_db));
}

std::vector<double> awgn_apply(std::span<const double> v, double snr_db, std::span<const double> z) {
  if (z.size() != v.size()) throw DimensionError("awgn_apply: noise length mismatch");
  std::vector<double> out(v.begin(), v.end());
  const double sigma = awgn_sigma(v, snr_db);
  if (sigma == 0.0) return out;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += sigma * z[k];
  return out;
}

void fill_standard_normal(std::span<double> out, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& x : out) x = n01(rng);
}

std::vector<double> awgn_transmit(std::span<const double> v, double snr_db, Rng& rng) {
  if (snr_db == kNoiseless) return {v.begin(), v.end()};
  std::vector<double> z(v.size());
  fill_standard_normal(z, rng);
  return awgn_apply(v, snr_db, z);
}

std::vector<double> transmit_query(std::span<const double> query, const LinkState& link,
                                   std::size_t i, std::size_t j, bool noisy, Rng& rng) {
  if (i == j) throw ArgumentError("transmit_query: self-queries never cross the channel");
  if (i >= link.n_devices || j >= link.n_devices) throw ArgumentError("transmit_query: bad index");
  if (!noisy) return {query.begin(), query.end()};
  return awgn_transmit(query, link.query_snr(i, j), rng);
}

std::vector<double> transmit_data(std::span<const double> feature, const LinkState& link,
                                  std::size_t j, std::size_t i, Rng& rng) {
  if (i == j) throw ArgumentError("transmit_data: self-features never cross the channel");
  if (i >= link.n_devices || j >= link.n_devices) throw ArgumentError("transmit_data: bad index");
  return awgn_transmit(feature, link.data_snr(j, i), rng);
}

}  // namespace semlink
