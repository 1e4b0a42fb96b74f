#include "semlink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "semlink/errors.hpp"
#include "semlink/radam.hpp"

namespace semlink {

TrainingRound build_training_round(const SplitClassifier& clf, const RoundEnvironment& env,
                                   std::size_t query_dim, bool noisy_query, bool noisy_data,
                                   Rng& rng) {
  const std::size_t n = env.batch.n_devices();
  TrainingRound tr;
  tr.score.features = clf.encode_batch(env.batch.observed);
  tr.score.link = env.link;
  const std::size_t d = tr.score.features.cols();
  if (noisy_query) {
    tr.score.query_noise = Tensor2(n * n, query_dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) fill_standard_normal(tr.score.query_noise.row(i * n + j), rng);
  }
  tr.received = Tensor2(n * n, d);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto src = tr.score.features.row(j);
      auto dst = tr.received.row(i * n + j);
      if (i != j && noisy_data) {
        fill_standard_normal(z, rng);
        const auto y = awgn_apply(src, env.link.data_snr(j, i), z);
        std::copy(y.begin(), y.end(), dst.begin());
      } else {
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
    tr.labels.push_back(env.batch.label_of(i));
  }
  return tr;
}

double collaborative_loss(MatchingModules& mm, const SplitClassifier& clf,
                          std::span<const TrainingRound> rounds, bool link_aware, bool backward) {
  if (rounds.empty()) throw ArgumentError("collaborative_loss: no rounds");
  std::vector<ScoreRound> score_rounds;
  score_rounds.reserve(rounds.size());
  for (const auto& r : rounds) score_rounds.push_back(r.score);

  ScoreTape tape;
  const Tensor2 scores = tape.forward(mm, score_rounds, link_aware);
  const Tensor2 weights = row_softmax(scores);
  const std::size_t n = scores.cols();
  const std::size_t d = rounds[0].score.features.cols();

  Tensor2 fused(scores.rows(), d);
  std::vector<int> labels;
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      auto y = fused.row(r * n + i);
      for (std::size_t j = 0; j < n; ++j)
        axpy(weights(r * n + i, j), rounds[r].received.row(i * n + j), y);
    }
    labels.insert(labels.end(), rounds[r].labels.begin(), rounds[r].labels.end());
  }

  MlpTape dec_tape;
  const Tensor2 logits = clf.decoder().forward(fused, dec_tape);
  const CrossEntropy ce = cross_entropy_loss(logits, labels);
  if (!backward) return ce.loss;

  const Tensor2 g_fused = clf.decoder().backward_input(dec_tape, ce.grad_logits);
  Tensor2 g_weights(scores.rows(), n);
  for (std::size_t r = 0; r < rounds.size(); ++r)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        g_weights(r * n + i, j) = dot(g_fused.row(r * n + i), rounds[r].received.row(i * n + j));
  tape.backward(mm, row_softmax_backward(weights, g_weights));
  return ce.loss;
}

std::vector<double> smooth(std::span<const double> history, std::size_t window) {
  std::vector<double> out(history.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < history.size(); ++k) {
    acc += history[k];
    if (k >= window) acc -= history[k - window];
    out[k] = acc / static_cast<double>(std::min(k + 1, window));
  }
  return out;
}

namespace {

std::string grad_norms(std::span<ParamBlock* const> params) {
  std::ostringstream os;
  for (const ParamBlock* p : params) {
    double ss = 0.0;
    for (double g : p->grad.values()) ss += g * g;
    os << ' ' << p->name << '=' << std::sqrt(ss);
  }
  return os.str();
}

}  // namespace

TrainReport train_matching(ModelBundle& bundle, std::span<const Sample> pool,
                           const TrainConfig& cfg, Rng& rng) {
  const SplitClassifier& clf = bundle.classifier;
  if (!clf.pretrained() || !clf.frozen()) {
    throw StateError("train_matching: classifier must be pretrained and frozen");
  }
  const std::size_t groups = cfg.env.n_groups;
  if (pool.size() < groups) throw ArgumentError("train_matching: sample pool too small");
  if (cfg.batch_size == 0) throw ArgumentError("train_matching: batch size must be positive");
  cfg.scenario.validate();

  if (!bundle.matching) {
    MatchingConfig mc = cfg.matching;
    mc.feature_dim = clf.feature_dim();
    mc.gamma_min_db = cfg.scenario.gamma_min_db;
    mc.gamma_max_db = cfg.scenario.gamma_max_db;
    bundle.matching.emplace(mc, cfg.link_aware, rng);
  }
  MatchingModules& mm = *bundle.matching;
  mm.link_aware = cfg.link_aware;
  std::vector<ParamBlock*> params = mm.trainable_params();
  std::vector<ParamBlock*> all = mm.all_params();
  RAdam opt(params, RAdamConfig{cfg.lr});

  const std::size_t per_epoch =
      std::min(pool.size(), cfg.samples_per_epoch ? cfg.samples_per_epoch : pool.size());
  const std::size_t rounds_per_epoch = std::max<std::size_t>(1, per_epoch / groups);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  double last_epoch_sum = 0.0;
  std::size_t last_epoch_steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const LinkState episode_link = sample_link_state(cfg.scenario, cfg.env.n_devices, rng);
    last_epoch_sum = 0.0;
    last_epoch_steps = 0;
    std::size_t cursor = 0;
    for (std::size_t done = 0; done < rounds_per_epoch; done += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, rounds_per_epoch - done);
      std::vector<TrainingRound> batch;
      batch.reserve(count);
      for (std::size_t b = 0; b < count; ++b) {
        RoundEnvironment env;
        const GroupAssignment ga = assign_groups(cfg.env.n_devices, groups, rng);
        std::vector<Sample> chosen;
        for (std::size_t g = 0; g < groups; ++g) {
          chosen.push_back(pool[order[cursor % order.size()]]);
          ++cursor;
        }
        env.batch = make_observation_batch(chosen, ga, cfg.env.p_partial, cfg.env.patch_scale, rng,
                                           cfg.env.patch_mode);
        env.link = cfg.env.snr_resample == SnrResample::PerRound
                       ? sample_link_state(cfg.scenario, cfg.env.n_devices, rng)
                       : episode_link;
        batch.push_back(build_training_round(clf, env, mm.cfg.query_dim, cfg.noisy_query,
                                             cfg.noisy_data, rng));
      }
      zero_grads(all);
      const double loss = collaborative_loss(mm, clf, batch, cfg.link_aware, true);
      if (!std::isfinite(loss)) {
        throw NumericError("train_matching: non-finite loss " + std::to_string(loss) +
                           " at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(report.steps) + "; grad norms:" + grad_norms(params));
      }
      opt.step();
      report.loss_history.push_back(loss);
      ++report.steps;
      last_epoch_sum += loss;
      ++last_epoch_steps;
    }
  }
  report.final_loss = last_epoch_steps ? last_epoch_sum / static_cast<double>(last_epoch_steps) : 0.0;
  mm.trained = true;
  return report;
}

std::string variant_name(const VariantSpec& v) {
  std::ostringstream os;
  os << (v.link_aware ? "joint" : "semantic") << '_' << to_string(v.scenario) << "_q"
     << v.query_dim << '_' << (v.noisy_query ? "noisyq" : "reliableq");
  return os.str();
}

MatchingModules train_variant(const SplitClassifier& clf, std::span<const Sample> pool,
                              const TrainConfig& base, const VariantSpec& v, std::uint64_t seed,
                              TrainReport* report) {
  TrainConfig tc = base;
  tc.link_aware = v.link_aware;
  tc.scenario.kind = v.scenario;
  tc.matching.query_dim = v.query_dim;
  tc.noisy_query = v.noisy_query;
  ModelBundle bundle{clf, std::nullopt};
  Rng rng = make_rng(seed, stream_tag(variant_name(v)));
  TrainReport rep = train_matching(bundle, pool, tc, rng);
  if (report) *report = std::move(rep);
  return std::move(*bundle.matching);
}

std::vector<ManifestEntry> train_all_variants(const SplitClassifier& clf,
                                              std::span<const Sample> pool, const SweepConfig& cfg,
                                              const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (bool aware : cfg.link_aware_arms)
    for (ScenarioKind sc : cfg.scenarios)
      for (std::size_t q : cfg.query_sizes)
        for (bool nq : cfg.noisy_query_arms) {
          const VariantSpec v{aware, sc, q, nq};
          TrainReport rep;
          const MatchingModules mm = train_variant(clf, pool, cfg.base, v, cfg.seed, &rep);
          const auto path = out_dir / (variant_name(v) + ".slnk");
          save_container(path, mm.to_blocks());
          entries.push_back({v, cfg.seed, rep.final_loss, path});
          write_manifest(out_dir / "manifest.json", entries);
        }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& classifier_checkpoint) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    j.push_back({{"variant", e.variant.link_aware ? "joint" : "semantic"},
                 {"scenario", to_string(e.variant.scenario)},
                 {"query_size", e.variant.query_dim},
                 {"noise_arm", e.variant.noisy_query ? "noisy_query" : "reliable_query"},
                 {"seed", e.seed},
                 {"final_loss", e.final_loss},
                 {"path", e.checkpoint.string()}});
  }
  nlohmann::json doc = {{"entries", j}};
  if (!classifier_checkpoint.empty()) doc["classifier"] = classifier_checkpoint.string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const nlohmann::json doc = nlohmann::json::parse(in);
  std::vector<ManifestEntry> out;
  for (const auto& e : doc.at("entries")) {
    ManifestEntry m;
    m.variant.link_aware = e.at("variant").get<std::string>() == "joint";
    m.variant.scenario = scenario_from_string(e.at("scenario").get<std::string>());
    m.variant.query_dim = e.at("query_size").get<std::size_t>();
    m.variant.noisy_query = e.at("noise_arm").get<std::string>() == "noisy_query";
    m.seed = e.at("seed").get<std::uint64_t>();
    m.final_loss = e.at("final_loss").get<double>();
    m.checkpoint = e.at("path").get<std::string>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace semlink
