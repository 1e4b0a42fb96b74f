#include "semlink/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "semlink/errors.hpp"

namespace semlink {

std::string to_string(Method m) {
  switch (m) {
    case Method::Local: return "local";
    case Method::FullObservation: return "full";
    case Method::Top3Channel: return "top3";
    case Method::SemanticOnly: return "semantic";
    case Method::Joint: return "joint";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "local") return Method::Local;
  if (s == "full") return Method::FullObservation;
  if (s == "top3") return Method::Top3Channel;
  if (s == "semantic") return Method::SemanticOnly;
  if (s == "joint") return Method::Joint;
  throw ArgumentError("unknown method '" + s + "' (expected local|full|top3|semantic|joint)");
}

namespace {

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

void finish(RoundResult& res, const ModelBundle& bundle, const Tensor2& fused,
            const ObservationBatch& batch) {
  const Tensor2 logits = bundle.classifier.decode_batch(fused);
  const std::size_t n = batch.n_devices();
  res.predictions.resize(n);
  res.metrics.correct.resize(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    res.predictions[i] = argmax(logits.row(i));
    const bool ok = res.predictions[i] == batch.label_of(i);
    res.metrics.correct[i] = ok;
    hits += ok ? 1 : 0;
  }
  res.metrics.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  res.metrics.sidelink_connections = res.graph.edges.size();
  res.metrics.avg_connections_per_device =
      static_cast<double>(res.graph.edges.size()) / static_cast<double>(n);
}

std::vector<double> receive(const Tensor2& features, const LinkState& link, std::size_t j,
                            std::size_t i, bool noisy, Rng& rng) {
  const auto f = features.row(j);
  if (!noisy) return {f.begin(), f.end()};
  return transmit_data(f, link, j, i, rng);
}

RoundResult run_matching_round(const ModelBundle& bundle, const ObservationBatch& batch,
                               const LinkState& link, const RoundConfig& cfg, Rng& rng) {
  if (!bundle.matching || !bundle.matching->trained) {
    throw StateError("run_round: " + to_string(cfg.method) + " needs trained matching modules");
  }
  const MatchingModules& mm = *bundle.matching;
  const std::size_t n = batch.n_devices();

  // Step 1: local encoding; queries and keys are generated inside the tape.
  ScoreRound round{bundle.classifier.encode_batch(batch.observed), link, Tensor2()};

  // Step 2: query multicast i -> j.
  if (cfg.noisy_query) {
    round.query_noise = Tensor2(n * n, mm.cfg.query_dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) fill_standard_normal(round.query_noise.row(i * n + j), rng);
  }

  // Step 3: responder-side scores; step 4: row softmax and pruning.
  ScoreTape tape;
  const Tensor2 scores =
      tape.forward(mm, std::span<const ScoreRound>(&round, 1), cfg.method == Method::Joint);
  RoundResult res;
  res.matrix = prune(build_matching_matrix(scores), cfg.rho);

  // Step 5: feature unicast over surviving edges, then fusion.
  Tensor2 fused(n, round.features.cols());
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, std::vector<double>> received;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !(res.matrix.normalized(i, j) >= cfg.rho)) continue;
      received.emplace(j, receive(round.features, link, j, i, cfg.noisy_data, rng));
      res.graph.edges.push_back({j, i, res.matrix.pruned(i, j)});
    }
    const auto y = combine_features(res.matrix.pruned.row(i), i, round.features.row(i), received);
    std::copy(y.begin(), y.end(), fused.row(i).begin());
  }
  finish(res, bundle, fused, batch);
  return res;
}

}  // namespace

std::vector<std::size_t> top3_peers(const LinkState& link, std::size_t i) {
  std::vector<std::size_t> peers;
  for (std::size_t j = 0; j < link.n_devices; ++j)
    if (j != i) peers.push_back(j);
  if (peers.size() < 3) throw ArgumentError("top3: need at least 4 devices");
  std::stable_sort(peers.begin(), peers.end(), [&](std::size_t a, std::size_t b) {
    return link.data_snr(a, i) > link.data_snr(b, i);
  });
  peers.resize(3);
  return peers;
}

RoundResult run_top3_baseline(const ModelBundle& bundle, const ObservationBatch& batch,
                              const LinkState& link, bool noisy_data, Rng& rng) {
  const std::size_t n = batch.n_devices();
  if (n < 4) throw ArgumentError("run_top3_baseline: need at least 4 devices");
  const Tensor2 features = bundle.classifier.encode_batch(batch.observed);
  Tensor2 fused(n, features.cols());
  RoundResult res;
  for (std::size_t i = 0; i < n; ++i) {
    auto y = fused.row(i);
    axpy(0.25, features.row(i), y);
    for (std::size_t j : top3_peers(link, i)) {
      axpy(0.25, receive(features, link, j, i, noisy_data, rng), y);
      res.graph.edges.push_back({j, i, 0.25});
    }
  }
  finish(res, bundle, fused, batch);
  return res;
}

RoundResult run_round(const ModelBundle& bundle, const ObservationBatch& batch,
                      const LinkState& link, const RoundConfig& cfg, Rng& rng) {
  if (link.n_devices != batch.n_devices()) {
    throw ArgumentError("run_round: link state and batch disagree on device count");
  }
  switch (cfg.method) {
    case Method::Local: {
      RoundResult res;
      finish(res, bundle, bundle.classifier.encode_batch(batch.observed), batch);
      return res;
    }
    case Method::FullObservation: {
      std::vector<Image> clean;
      for (std::size_t i = 0; i < batch.n_devices(); ++i) clean.push_back(batch.clean_of(i));
      RoundResult res;
      finish(res, bundle, bundle.classifier.encode_batch(clean), batch);
      return res;
    }
    case Method::Top3Channel:
      return run_top3_baseline(bundle, batch, link, cfg.noisy_data, rng);
    case Method::SemanticOnly:
    case Method::Joint:
      return run_matching_round(bundle, batch, link, cfg, rng);
  }
  throw ArgumentError("run_round: unknown method");
}

RoundEnvironment sample_environment(std::span<const Sample> pool, const EnvironmentConfig& env,
                                    const SnrScenario& scenario, Rng& rng) {
  if (pool.empty()) throw ArgumentError("sample_environment: empty sample pool");
  const GroupAssignment groups = assign_groups(env.n_devices, env.n_groups, rng);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<Sample> chosen;
  for (std::size_t g = 0; g < env.n_groups; ++g) chosen.push_back(pool[pick(rng)]);
  RoundEnvironment out;
  out.batch = make_observation_batch(chosen, groups, env.p_partial, env.patch_scale, rng,
                                     env.patch_mode);
  out.link = sample_link_state(scenario, env.n_devices, rng);
  return out;
}

EvalSummary evaluate(const ModelBundle& bundle, std::span<const Sample> test,
                     const RoundConfig& cfg, const EvalConfig& eval) {
  EvalSummary out;
  std::vector<double> accs;
  std::vector<double> conns;
  for (std::uint64_t seed : eval.seeds) {
    Rng episode_rng = make_rng(seed, kEpisodeStream);
    const LinkState episode_link = sample_link_state(cfg.scenario, eval.env.n_devices, episode_rng);
    double acc_sum = 0.0;
    double conn_sum = 0.0;
    for (std::size_t k = 0; k < eval.n_rounds; ++k) {
      Rng env_rng = make_rng(seed, kEnvironmentStream, k);
      RoundEnvironment env = sample_environment(test, eval.env, cfg.scenario, env_rng);
      if (eval.env.snr_resample == SnrResample::PerEpisode) env.link = episode_link;
      Rng channel_rng = make_rng(seed, kChannelStream, k);
      const RoundResult res = run_round(bundle, env.batch, env.link, cfg, channel_rng);
      if (eval.observer) eval.observer(seed, k, res);
      accs.push_back(res.metrics.accuracy);
      conns.push_back(res.metrics.avg_connections_per_device);
      acc_sum += res.metrics.accuracy;
      conn_sum += res.metrics.avg_connections_per_device;
    }
    const double denom = eval.n_rounds ? static_cast<double>(eval.n_rounds) : 1.0;
    out.per_seed.push_back({seed, acc_sum / denom, conn_sum / denom});
  }
  auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) return;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  mean_sd(accs, out.accuracy_mean, out.accuracy_sd);
  mean_sd(conns, out.connections_mean, out.connections_sd);
  out.rounds = accs.size();
  return out;
}

}  // namespace semlink
