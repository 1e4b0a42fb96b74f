#include "semlink/matching.hpp"

#include <cmath>
#include <map>
#include <string>

#include "semlink/errors.hpp"

namespace semlink {

WeightGenerator::WeightGenerator(std::size_t query_dim, std::size_t key_dim,
                                 const std::vector<std::size_t>& hidden, double gamma_min_db,
                                 double gamma_max_db, Rng& rng)
    : query_dim_(query_dim), key_dim_(key_dim), gamma_min_db_(gamma_min_db),
      gamma_max_db_(gamma_max_db) {
  Tensor2 w0(query_dim, key_dim);
  // Small enough that initial attention rows are close to uniform.
  std::normal_distribution<double> init(0.0, 0.1 / std::sqrt(static_cast<double>(query_dim)));
  for (double& v : w0.values()) v = init(rng);
  w0_ = ParamBlock("gw.base", std::move(w0));

  std::vector<std::size_t> sizes{2};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(query_dim + key_dim);
  mlp_ = Mlp("gw.mlp", sizes, rng);
  // u half zero (W = W0 at start); v half scaled down so the rank-1 term
  // does not dominate the score as soon as u moves.
  ParamBlock& head = mlp_.weight(mlp_.num_layers() - 1);
  const double v_scale = 1.0 / std::sqrt(static_cast<double>(key_dim));
  for (std::size_t r = 0; r < head.value.rows(); ++r) {
    for (std::size_t c = 0; c < query_dim; ++c) head.value(r, c) = 0.0;
    for (std::size_t c = query_dim; c < query_dim + key_dim; ++c) head.value(r, c) *= v_scale;
  }
}

std::pair<double, double> WeightGenerator::normalized_input(double gamma_d_db,
                                                            double gamma_q_db) const {
  const SnrScenario range{ScenarioKind::Uniform, gamma_min_db_, gamma_max_db_};
  return {range.normalize(gamma_d_db), range.normalize(gamma_q_db)};
}

std::pair<std::vector<double>, std::vector<double>> WeightGenerator::modulation(
    double gamma_d_db, double gamma_q_db) const {
  const auto [nd, nq] = normalized_input(gamma_d_db, gamma_q_db);
  const Tensor2 out = mlp_.infer(Tensor2{{nd, nq}});
  const auto row = out.row(0);
  return {std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(query_dim_)),
          std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(query_dim_), row.end())};
}

Tensor2 WeightGenerator::weights(double gamma_d_db, double gamma_q_db) const {
  const auto [u, v] = modulation(gamma_d_db, gamma_q_db);
  Tensor2 w = w0_.value;
  for (std::size_t a = 0; a < query_dim_; ++a)
    for (std::size_t b = 0; b < key_dim_; ++b) w(a, b) += u[a] * v[b];
  return w;
}

void WeightGenerator::zero_head() {
  const std::size_t last = mlp_.num_layers() - 1;
  mlp_.weight(last).value.fill(0.0);
  mlp_.bias(last).value.fill(0.0);
}

MatchingModules::MatchingModules(const MatchingConfig& c, bool aware, Rng& rng)
    : cfg(c), link_aware(aware) {
  std::vector<std::size_t> qsizes{cfg.feature_dim};
  qsizes.insert(qsizes.end(), cfg.generator_hidden.begin(), cfg.generator_hidden.end());
  std::vector<std::size_t> ksizes = qsizes;
  qsizes.push_back(cfg.query_dim);
  ksizes.push_back(cfg.key_dim);
  gq = Mlp("gq", qsizes, rng);
  gk = Mlp("gk", ksizes, rng);
  gw = WeightGenerator(cfg.query_dim, cfg.key_dim, cfg.weight_hidden, cfg.gamma_min_db,
                       cfg.gamma_max_db, rng);
}

std::vector<ParamBlock*> MatchingModules::trainable_params() {
  std::vector<ParamBlock*> out = gq.params();
  for (auto* p : gk.params()) out.push_back(p);
  out.push_back(&gw.base());
  if (link_aware)
    for (auto* p : gw.mlp().params()) out.push_back(p);
  return out;
}

std::vector<ParamBlock*> MatchingModules::all_params() {
  std::vector<ParamBlock*> out = gq.params();
  for (auto* p : gk.params()) out.push_back(p);
  out.push_back(&gw.base());
  for (auto* p : gw.mlp().params()) out.push_back(p);
  return out;
}

namespace {

Tensor2 sizes_row(const std::vector<std::size_t>& v) {
  Tensor2 t(1, v.size());
  for (std::size_t k = 0; k < v.size(); ++k) t(0, k) = static_cast<double>(v[k]);
  return t;
}

std::vector<std::size_t> row_sizes(const Tensor2& t) {
  std::vector<std::size_t> v;
  for (double x : t.values()) v.push_back(static_cast<std::size_t>(x));
  return v;
}

}  // namespace

std::vector<NamedTensor> MatchingModules::to_blocks() const {
  std::vector<NamedTensor> out;
  out.push_back({"meta.matching",
                 Tensor2{{static_cast<double>(cfg.feature_dim), static_cast<double>(cfg.query_dim),
                          static_cast<double>(cfg.key_dim), cfg.gamma_min_db, cfg.gamma_max_db,
                          link_aware ? 1.0 : 0.0, trained ? 1.0 : 0.0}}});
  out.push_back({"meta.generator_hidden", sizes_row(cfg.generator_hidden)});
  out.push_back({"meta.weight_hidden", sizes_row(cfg.weight_hidden)});
  for (const auto* p : gq.params()) out.push_back({p->name, p->value});
  for (const auto* p : gk.params()) out.push_back({p->name, p->value});
  out.push_back({gw.base().name, gw.base().value});
  for (const auto* p : gw.mlp().params()) out.push_back({p->name, p->value});
  return out;
}

MatchingModules MatchingModules::from_blocks(const std::vector<NamedTensor>& blocks) {
  std::map<std::string, const Tensor2*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b.value;
  auto get = [&](const std::string& name) -> const Tensor2& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing block " + name);
    return *it->second;
  };
  const Tensor2& meta = get("meta.matching");
  if (meta.size() != 7) throw IoError("malformed matching metadata");
  MatchingConfig cfg;
  cfg.feature_dim = static_cast<std::size_t>(meta(0, 0));
  cfg.query_dim = static_cast<std::size_t>(meta(0, 1));
  cfg.key_dim = static_cast<std::size_t>(meta(0, 2));
  cfg.gamma_min_db = meta(0, 3);
  cfg.gamma_max_db = meta(0, 4);
  cfg.generator_hidden = row_sizes(get("meta.generator_hidden"));
  cfg.weight_hidden = row_sizes(get("meta.weight_hidden"));
  Rng dummy(0);
  MatchingModules mm(cfg, meta(0, 5) != 0.0, dummy);
  mm.trained = meta(0, 6) != 0.0;
  for (auto* p : mm.all_params()) {
    const Tensor2& v = get(p->name);
    if (!v.same_shape(p->value)) throw IoError("checkpoint block " + p->name + " has wrong shape");
    p->value = v;
  }
  return mm;
}

std::vector<double> gen_query(const Mlp& gq, std::span<const double> feature) {
  if (feature.size() != gq.in_dim()) throw ArgumentError("gen_query: feature length mismatch");
  return gq.infer(Tensor2::row_vector(feature)).data();
}

std::vector<double> gen_key(const Mlp& gk, std::span<const double> feature) {
  if (feature.size() != gk.in_dim()) throw ArgumentError("gen_key: feature length mismatch");
  return gk.infer(Tensor2::row_vector(feature)).data();
}

Tensor2 gen_weights(const WeightGenerator& gw, double gamma_d_db, double gamma_q_db) {
  return gw.weights(gamma_d_db, gamma_q_db);
}

double match_score(std::span<const double> key, const Tensor2& w, std::span<const double> query) {
  if (w.rows() != query.size() || w.cols() != key.size()) {
    throw ArgumentError("match_score: W is " + std::to_string(w.rows()) + "x" +
                        std::to_string(w.cols()) + " but query has " +
                        std::to_string(query.size()) + " and key " + std::to_string(key.size()) +
                        " entries");
  }
  double s = 0.0;
  for (std::size_t a = 0; a < query.size(); ++a) s += query[a] * dot(w.row(a), key);
  return s / std::sqrt(static_cast<double>(key.size()));
}

MatchingMatrix build_matching_matrix(const Tensor2& raw) {
  if (raw.rows() != raw.cols()) throw DimensionError("build_matching_matrix: scores must be N×N");
  if (!raw.all_finite()) throw NumericError("build_matching_matrix: non-finite score");
  MatchingMatrix m;
  m.raw = raw;
  m.normalized = row_softmax(raw);
  m.pruned = m.normalized;
  m.rho = 0.0;
  return m;
}

MatchingMatrix prune(const MatchingMatrix& m, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("prune: rho outside [0, 1]");
  MatchingMatrix out = m;
  out.rho = rho;
  out.pruned = m.normalized;
  for (std::size_t i = 0; i < out.pruned.rows(); ++i)
    for (std::size_t j = 0; j < out.pruned.cols(); ++j)
      if (i != j && !(out.pruned(i, j) >= rho)) out.pruned(i, j) = 0.0;
  return out;
}

std::vector<double> combine_features(std::span<const double> row, std::size_t self,
                                     std::span<const double> local,
                                     const std::map<std::size_t, std::vector<double>>& received) {
  if (self >= row.size()) throw ArgumentError("combine_features: self index out of range");
  std::vector<double> out(local.size(), 0.0);
  axpy(row[self], local, out);
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j == self || row[j] == 0.0) continue;
    const auto it = received.find(j);
    if (it == received.end()) {
      throw ProtocolError("combine_features: missing feature from device " + std::to_string(j));
    }
    if (it->second.size() != local.size()) throw DimensionError("combine_features: feature length");
    axpy(row[j], it->second, out);
  }
  return out;
}

Tensor2 ScoreTape::forward(const MatchingModules& mm, std::span<const ScoreRound> rounds,
                           bool link_aware) {
  if (rounds.empty()) throw ArgumentError("ScoreTape::forward: no rounds");
  const std::size_t n = rounds[0].features.rows();
  const std::size_t d = mm.cfg.feature_dim;
  const std::size_t qd = mm.cfg.query_dim;
  const std::size_t kd = mm.cfg.key_dim;
  rounds_ = rounds.size();
  n_ = n;
  link_aware_ = link_aware;

  Tensor2 features(rounds_ * n, d);
  for (std::size_t r = 0; r < rounds_; ++r) {
    const ScoreRound& rd = rounds[r];
    if (rd.features.rows() != n || rd.features.cols() != d || rd.link.n_devices != n) {
      throw DimensionError("ScoreTape::forward: inconsistent round shapes");
    }
    if (!rd.query_noise.empty() && (rd.query_noise.rows() != n * n || rd.query_noise.cols() != qd)) {
      throw DimensionError("ScoreTape::forward: query noise must be (N*N)xQ");
    }
    std::copy(rd.features.values().begin(), rd.features.values().end(),
              features.row(r * n).begin());
  }

  queries_ = mm.gq.forward(features, gq_tape_);
  keys_ = mm.gk.forward(features, gk_tape_);
  key_proj_ = matmul_nt(keys_, mm.gw.base().value);

  const std::size_t pairs = rounds_ * n * n;
  if (link_aware_) {
    // G_W only sees the SNR pair, so identical pairs share one MLP row.
    std::map<std::pair<double, double>, std::size_t> unique;
    std::vector<std::pair<double, double>> inputs;
    modulation_row_.assign(pairs, 0);
    for (std::size_t r = 0; r < rounds_; ++r) {
      const LinkState& link = rounds[r].link;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          // Diagonal uses the self-link convention (gamma_max on both legs).
          const auto in = mm.gw.normalized_input(link.data_snr(j, i), link.query_snr(i, j));
          const auto [it, fresh] = unique.try_emplace(in, inputs.size());
          if (fresh) inputs.push_back(in);
          modulation_row_[(r * n + i) * n + j] = it->second;
        }
    }
    Tensor2 snr_in(inputs.size(), 2);
    for (std::size_t u = 0; u < inputs.size(); ++u) {
      snr_in(u, 0) = inputs[u].first;
      snr_in(u, 1) = inputs[u].second;
    }
    modulation_ = mm.gw.mlp().forward(snr_in, gw_tape_);
  } else {
    modulation_ = Tensor2();
    modulation_row_.clear();
    gw_tape_ = MlpTape();
  }

  received_queries_ = Tensor2(pairs, qd);
  sigma_.assign(pairs, 0.0);
  snr_lin_.assign(pairs, 0.0);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(kd));
  Tensor2 scores(rounds_ * n, n);
  for (std::size_t r = 0; r < rounds_; ++r) {
    const ScoreRound& rd = rounds[r];
    for (std::size_t i = 0; i < n; ++i) {
      const auto q = queries_.row(r * n + i);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t p = (r * n + i) * n + j;
        auto qhat = received_queries_.row(p);
        std::copy(q.begin(), q.end(), qhat.begin());
        if (i != j && !rd.query_noise.empty()) {
          const double snr_db = rd.link.query_snr(i, j);
          const double sigma = awgn_sigma(q, snr_db);
          sigma_[p] = sigma;
          snr_lin_[p] = db_to_linear(snr_db);
          if (sigma > 0.0) axpy(sigma, rd.query_noise.row(i * n + j), qhat);
        }
        const auto key = keys_.row(r * n + j);
        double s = dot(qhat, key_proj_.row(r * n + j));
        if (link_aware_) {
          const auto mod = modulation_.row(modulation_row_[p]);
          const double b = dot(qhat, mod.first(qd));
          const double c = dot(mod.subspan(qd), key);
          s += b * c;
        }
        scores(r * n + i, j) = s * inv_sqrt_k;
      }
    }
  }
  recorded_ = true;
  return scores;
}

void ScoreTape::backward(MatchingModules& mm, const Tensor2& grad_scores) {
  if (!recorded_) throw StateError("ScoreTape::backward: no forward pass recorded");
  const std::size_t n = n_;
  const std::size_t qd = mm.cfg.query_dim;
  const std::size_t kd = mm.cfg.key_dim;
  if (grad_scores.rows() != rounds_ * n || grad_scores.cols() != n) {
    throw DimensionError("ScoreTape::backward: gradient shape mismatch");
  }
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(kd));
  Tensor2 g_queries(rounds_ * n, qd);
  Tensor2 g_keys(rounds_ * n, kd);
  Tensor2 g_key_proj(rounds_ * n, qd);
  Tensor2 g_mod = link_aware_ ? Tensor2(modulation_.rows(), qd + kd) : Tensor2();
  std::vector<double> g_qhat(qd);

  for (std::size_t r = 0; r < rounds_; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto q = queries_.row(r * n + i);
      auto gq = g_queries.row(r * n + i);
      for (std::size_t j = 0; j < n; ++j) {
        const double gs = grad_scores(r * n + i, j) * inv_sqrt_k;
        if (gs == 0.0) continue;
        const std::size_t p = (r * n + i) * n + j;
        const auto qhat = received_queries_.row(p);
        const auto key = keys_.row(r * n + j);
        const auto kp = key_proj_.row(r * n + j);
        for (std::size_t a = 0; a < qd; ++a) g_qhat[a] = gs * kp[a];
        axpy(gs, qhat, g_key_proj.row(r * n + j));
        if (link_aware_) {
          const auto mod = modulation_.row(modulation_row_[p]);
          const auto u = mod.first(qd);
          const auto v = mod.subspan(qd);
          const double b = dot(qhat, u);
          const double c = dot(v, key);
          axpy(gs * c, u, g_qhat);
          auto gm = g_mod.row(modulation_row_[p]);
          axpy(gs * c, qhat, gm.first(qd));
          axpy(gs * b, key, gm.subspan(qd));
          axpy(gs * b, v, g_keys.row(r * n + j));
        }
        axpy(1.0, g_qhat, gq);
        // Noise scale depends on the query through its power: q̂ = q + σ(q)·z.
        if (sigma_[p] > 0.0) {
          double gn = 0.0;
          for (std::size_t a = 0; a < qd; ++a) gn += g_qhat[a] * (qhat[a] - q[a]);
          const double coef = gn / (static_cast<double>(qd) * snr_lin_[p] * sigma_[p] * sigma_[p]);
          axpy(coef, q, gq);
        }
      }
    }
  }

  ParamBlock& w0 = mm.gw.base();
  if (w0.trainable) matmul_tn_accumulate(g_key_proj, keys_, w0.grad);
  add_inplace(g_keys, matmul(g_key_proj, w0.value));
  mm.gq.backward(gq_tape_, g_queries, false);
  mm.gk.backward(gk_tape_, g_keys, false);
  if (link_aware_) mm.gw.mlp().backward(gw_tape_, g_mod, false);
  recorded_ = false;
}

}  // namespace semlink
