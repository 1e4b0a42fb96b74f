#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semlink/errors.hpp"
#include "semlink/harness.hpp"

using namespace semlink;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("  %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// gradients against central differences

double max_rel_error(const std::vector<ParamBlock*>& blocks, const std::function<double()>& loss,
                     std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_block(0, blocks.size() - 1);
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t c = 0; c < count; ++c) {
    ParamBlock* b = blocks[pick_block(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, b->value.size() - 1);
    const std::size_t idx = pick(rng);
    double& w = b->value.values()[idx];
    const double saved = w;
    w = saved + h;
    const double up = loss();
    w = saved - h;
    const double down = loss();
    w = saved;
    const double fd = (up - down) / (2.0 * h);
    const double bp = b->grad.values()[idx];
    worst = std::max(worst, std::abs(fd - bp) / std::max({std::abs(fd), std::abs(bp), 1e-6}));
  }
  return worst;
}

void check_gradients(const ExperimentConfig& cfg) {
  Stopwatch sw;
  Rng rng(cfg.seed);
  SplitClassifier clf(PerceptionConfig{cfg.feature_dim}, rng);
  const auto pool = generate_dataset(64, cfg.seed);

  // classifier chain
  std::vector<Image> images;
  std::vector<int> labels;
  for (std::size_t k = 0; k < 8; ++k) {
    images.push_back(pool[k].image);
    labels.push_back(pool[k].label);
  }
  const Tensor2 x = stack_images(images);
  auto clf_params = clf.encoder().params();
  for (auto* p : clf.decoder().params()) clf_params.push_back(p);
  zero_grads(clf_params);
  MlpTape et, dt;
  const Tensor2 feats = clf.encoder().forward(x, et);
  const CrossEntropy ce = cross_entropy_loss(clf.decoder().forward(feats, dt), labels);
  clf.encoder().backward(et, clf.decoder().backward(dt, ce.grad_logits));
  const double clf_err = max_rel_error(
      clf_params, [&] { return cross_entropy_loss(clf.full_logits(x), labels).loss; }, 50, 1);
  clf.mark_pretrained();
  clf.freeze();

  MatchingConfig mc;
  mc.feature_dim = cfg.feature_dim;
  mc.query_dim = cfg.query_dim;
  mc.key_dim = cfg.key_dim;
  MatchingModules mm(mc, true, rng);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (double& v : mm.gw.mlp().weight(mm.gw.mlp().num_layers() - 1).value.values()) v += nd(rng);

  std::vector<TrainingRound> rounds;
  const EnvironmentConfig env = environment_of(cfg);
  for (int r = 0; r < 2; ++r) {
    const RoundEnvironment e = sample_environment(pool, env, {ScenarioKind::Uniform, -10, 10}, rng);
    rounds.push_back(build_training_round(clf, e, mc.query_dim, true, true, rng));
  }

  double worst = clf_err;
  std::string detail = fmt("classifier %.2e", clf_err);
  for (bool aware : {false, true}) {
    mm.link_aware = aware;
    zero_grads(mm.all_params());
    collaborative_loss(mm, clf, rounds, aware, true);
    auto loss = [&] { return collaborative_loss(mm, clf, rounds, aware, false); };
    std::vector<ParamBlock*> gw{&mm.gw.base()};
    if (aware)
      for (auto* p : mm.gw.mlp().params()) gw.push_back(p);
    const double eq = max_rel_error(mm.gq.params(), loss, 50, 2);
    const double ek = max_rel_error(mm.gk.params(), loss, 50, 3);
    const double ew = max_rel_error(gw, loss, 50, 4);
    const double ee = max_rel_error(mm.trainable_params(), loss, 50, 5);
    worst = std::max({worst, eq, ek, ew, ee});
    detail += fmt("; %s gq %.2e gk %.2e gw %.2e all %.2e", aware ? "joint" : "semantic", eq, ek,
                  ew, ee);
  }
  const double t = sw.seconds();
  report(1, "numeric core", worst < 1e-4 && t < 60.0,
         fmt("max rel err %.2e (< 1e-4), %.1f s (< 60 s); ", worst, t) + detail);
}

// ---------------------------------------------------------------------------
// channel calibration

void check_channel() {
  Rng rng(2);
  const std::size_t draws = 100000;
  std::vector<double> signal(64);
  fill_standard_normal(signal, rng);
  double worst = 0.0;
  std::string detail;
  for (double target : {-10.0, 0.0, 10.0}) {
    double ps = 0.0;
    for (double v : signal) ps += v * v;
    ps /= static_cast<double>(signal.size());
    double pn = 0.0;
    std::size_t n = 0;
    for (std::size_t d = 0; d < draws; d += signal.size()) {
      const auto out = awgn_transmit(signal, target, rng);
      for (std::size_t k = 0; k < out.size(); ++k) pn += (out[k] - signal[k]) * (out[k] - signal[k]);
      n += out.size();
    }
    pn /= static_cast<double>(n);
    const double measured = 10.0 * std::log10(ps / pn);
    worst = std::max(worst, std::abs(measured - target));
    detail += fmt(" %+.0f dB -> %+.3f dB;", target, measured);
  }
  report(2, "channel calibration", worst <= 0.2,
         fmt("max deviation %.3f dB (<= 0.2) over %zu draws per target;", worst, draws) + detail);
}

// ---------------------------------------------------------------------------
// matching algebra on trained modules

void check_matching(const ModelBundle& joint, std::span<const Sample> test,
                    const ExperimentConfig& cfg) {
  const std::vector<double> grid{0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0};
  double stoch_err = 0.0;
  bool monotone = true;
  bool bit_equal = true;
  std::size_t matrices = 0;

  RoundConfig rc = round_config_of(cfg);
  rc.method = Method::Joint;
  EvalConfig ec;
  ec.env = environment_of(cfg);
  ec.n_rounds = 100;
  ec.seeds = {cfg.seeds.front()};
  std::vector<int> preds_zero;
  ec.observer = [&](std::uint64_t, std::size_t, const RoundResult& r) {
    preds_zero.insert(preds_zero.end(), r.predictions.begin(), r.predictions.end());
    const auto& m = r.matrix;
    ++matrices;
    for (std::size_t i = 0; i < m.normalized.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.normalized.cols(); ++j) s += m.normalized(i, j);
      stoch_err = std::max(stoch_err, std::abs(s - 1.0));
    }
    std::size_t prev = m.normalized.size() + 1;
    for (double rho : grid) {
      const MatchingMatrix p = prune(m, rho);
      const auto nz = static_cast<std::size_t>(std::count_if(
          p.pruned.values().begin(), p.pruned.values().end(), [](double v) { return v != 0.0; }));
      if (nz > prev) monotone = false;
      prev = nz;
    }
    if (!(prune(m, 0.0).pruned == m.normalized)) bit_equal = false;
  };
  rc.rho = 0.0;
  evaluate(joint, test, rc, ec);

  std::vector<int> preds_tiny;
  ec.observer = [&](std::uint64_t, std::size_t, const RoundResult& r) {
    preds_tiny.insert(preds_tiny.end(), r.predictions.begin(), r.predictions.end());
  };
  rc.rho = 1e-300;
  evaluate(joint, test, rc, ec);
  if (preds_zero != preds_tiny) bit_equal = false;

  // bilinear score against a long-double oracle on generated queries and keys
  const MatchingModules& mm = *joint.matching;
  Rng rng(3);
  double score_err = 0.0;
  std::uniform_real_distribution<double> snr(-10.0, 10.0);
  for (std::size_t t = 0; t < 200; ++t) {
    const auto& a = test[t % test.size()];
    const auto& b = test[(t * 7 + 1) % test.size()];
    const auto q = gen_query(mm.gq, joint.classifier.encode(a.image));
    const auto k = gen_key(mm.gk, joint.classifier.encode(b.image));
    const Tensor2 w = gen_weights(mm.gw, snr(rng), snr(rng));
    long double acc = 0.0L;
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c)
        acc += static_cast<long double>(q[r]) * w(r, c) * k[c];
    const double oracle = static_cast<double>(acc / std::sqrt(static_cast<long double>(k.size())));
    const double got = match_score(k, w, q);
    score_err = std::max(score_err, std::abs(got - oracle) / std::max(1.0, std::abs(oracle)));
  }

  report(3, "matching algebra",
         stoch_err <= 1e-9 && monotone && bit_equal && score_err <= 1e-12,
         fmt("row sum err %.1e (<= 1e-9) over %zu matrices; pruning monotone %s over %zu rho "
             "values; rho=0 bit-equivalent %s; score err %.1e (<= 1e-12)",
             stoch_err, matrices, monotone ? "yes" : "no", grid.size(), bit_equal ? "yes" : "no",
             score_err));
}

// ---------------------------------------------------------------------------
// baseline oracles

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

void check_baselines(const SplitClassifier& clf, std::span<const Sample> test,
                     const ExperimentConfig& cfg) {
  Rng rng(4);
  std::size_t top3_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const ScenarioKind kind = t % 2 ? ScenarioKind::Uniform : ScenarioKind::Extreme;
    const LinkState link = sample_link_state({kind, cfg.gamma_min_db, cfg.gamma_max_db},
                                             cfg.n_devices, rng);
    for (std::size_t i = 0; i < link.n_devices; ++i) {
      std::vector<std::pair<double, std::size_t>> c;
      for (std::size_t j = 0; j < link.n_devices; ++j)
        if (j != i) c.push_back({-link.data_snr(j, i), j});
      std::sort(c.begin(), c.end());
      const std::vector<std::size_t> expect{c[0].second, c[1].second, c[2].second};
      if (top3_peers(link, i) != expect) ++top3_mismatch;
    }
  }

  const ModelBundle b{clf, std::nullopt};
  std::size_t mismatch = 0;
  std::size_t checked = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng er(s);
    const RoundEnvironment env =
        sample_environment(test, environment_of(cfg), scenario_of(cfg), er);
    RoundConfig rc = round_config_of(cfg);
    rc.method = Method::Local;
    const RoundResult local = run_round(b, env.batch, env.link, rc, er);
    rc.method = Method::FullObservation;
    const RoundResult full = run_round(b, env.batch, env.link, rc, er);
    for (std::size_t i = 0; i < env.batch.observed.size(); ++i) {
      if (local.predictions[i] != argmax(clf.decode(clf.encode(env.batch.observed[i])))) ++mismatch;
      if (full.predictions[i] != argmax(clf.decode(clf.encode(env.batch.clean_of(i))))) ++mismatch;
      checked += 2;
    }
  }
  report(4, "baseline oracles", top3_mismatch == 0 && mismatch == 0,
         fmt("top-3 mismatches %zu over 1000 link states; local/full mismatches %zu of %zu",
             top3_mismatch, mismatch, checked));
}

// ---------------------------------------------------------------------------
// trained pipeline

struct Cell {
  double accuracy = 0.0;
  double connections = 0.0;
};

class Experiment {
 public:
  Experiment(const ExperimentConfig& cfg, const SplitClassifier& clf,
             std::span<const Sample> pool, std::span<const Sample> test)
      : cfg_(cfg), clf_(clf), pool_(pool), test_(test) {}

  const ModelBundle& model(const VariantSpec& v) {
    const std::string name = variant_name(v);
    auto it = models_.find(name);
    if (it != models_.end()) return it->second;
    Stopwatch sw;
    TrainReport rep;
    ModelBundle b{clf_, train_variant(clf_, pool_, train_config_of(cfg_, v.link_aware), v,
                                      cfg_.seed, &rep)};
    info(fmt("trained %s in %.0f s (%zu steps, final epoch loss %.4f)", name.c_str(), sw.seconds(),
             rep.steps, rep.final_loss));
    histories_[name] = rep.loss_history;
    return models_.emplace(name, std::move(b)).first->second;
  }

  const std::vector<double>& history(const VariantSpec& v) { return histories_.at(variant_name(v)); }

  Cell eval(Method m, ScenarioKind scenario, bool noisy_query, std::size_t q, double rho) {
    ExperimentConfig c = cfg_;
    c.scenario = to_string(scenario);
    c.noisy_query = noisy_query;
    c.rho = rho;
    c.method = to_string(m);
    const bool matching = m == Method::Joint || m == Method::SemanticOnly;
    const ModelBundle base{clf_, std::nullopt};
    const ModelBundle& b =
        matching ? model({m == Method::Joint, scenario, q, noisy_query}) : base;
    EvalConfig ec;
    ec.env = environment_of(c);
    ec.n_rounds = c.n_rounds;
    ec.seeds = c.seeds;
    Stopwatch sw;
    const EvalSummary s = evaluate(b, test_, round_config_of(c), ec);
    info(fmt("%-8s %-7s noisy_query=%d Q=%-3zu rho=%-5g acc %.4f (sd %.4f) conn %.3f  [%.0f s]",
             c.method.c_str(), c.scenario.c_str(), noisy_query ? 1 : 0, matching ? q : 0, rho,
             s.accuracy_mean, s.accuracy_sd, s.connections_mean, sw.seconds()));
    return {s.accuracy_mean, s.connections_mean};
  }

 private:
  ExperimentConfig cfg_;
  const SplitClassifier& clf_;
  std::span<const Sample> pool_;
  std::span<const Sample> test_;
  std::map<std::string, ModelBundle> models_;
  std::map<std::string, std::vector<double>> histories_;
};

double points(double a) { return 100.0 * a; }

}  // namespace

int main(int argc, char** argv) {
  ExperimentConfig cfg;
  CLI::App app{"semlink acceptance checks"};
  app.add_option("--rounds", cfg.n_rounds, "test rounds per seed");
  app.add_option("--seeds", cfg.seeds, "evaluation seeds")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Stopwatch total;
  check_gradients(cfg);
  check_channel();

  const auto all = generate_dataset(cfg.dataset_size, cfg.seed);
  const std::vector<Sample> pool(all.begin(), all.end() - static_cast<std::ptrdiff_t>(cfg.test_size));
  const std::vector<Sample> test(all.end() - static_cast<std::ptrdiff_t>(cfg.test_size), all.end());

  Stopwatch pt;
  PerceptionConfig pc;
  pc.feature_dim = cfg.feature_dim;
  PretrainConfig tc;
  tc.max_epochs = cfg.pretrain_max_epochs;
  tc.lr = cfg.pretrain_lr;
  Rng prng = make_rng(cfg.seed, stream_tag("pretrain"));
  PretrainReport prep;
  SplitClassifier clf;
  bool pretrained = true;
  try {
    clf = pretrain_full_model(pool, test, pc, tc, prng, &prep);
  } catch (const TrainingError& e) {
    pretrained = false;
    report(5, "learnability contract", false, e.what());
  }
  if (!pretrained) {
    std::printf("%d criteria failed\n", failures);
    return 1;
  }
  const double pretrain_s = pt.seconds();
  const double clean = clean_accuracy(clf, test);
  Rng orng = make_rng(cfg.seed, stream_tag("occlusion"));
  const double occluded = occluded_accuracy(clf, test, cfg.patch_scale, orng,
                                            patch_mode_from_string(cfg.patch_mode));
  report(5, "learnability contract",
         clean >= 0.95 && points(clean - occluded) >= 15.0 && pretrain_s < 600.0,
         fmt("clean %.2f%% (>= 95), occluded %.2f%%, drop %.2f points (>= 15), %d epochs in "
             "%.0f s (< 600 s)",
             points(clean), points(occluded), points(clean - occluded), prep.epochs_run,
             pretrain_s));

  check_baselines(clf, test, cfg);

  Experiment ex(cfg, clf, pool, test);
  const auto X = ScenarioKind::Extreme;
  const auto U = ScenarioKind::Uniform;
  check_matching(ex.model({true, X, 64, false}), test, cfg);

  {
    const Cell joint = ex.eval(Method::Joint, X, false, 64, 0.0);
    const Cell sem = ex.eval(Method::SemanticOnly, X, false, 64, 0.0);
    const double gap = points(joint.accuracy - sem.accuracy);
    report(6, "link information helps", gap >= 2.0,
           fmt("extreme, reliable query, Q=64, rho=0: joint %.2f%% vs semantic %.2f%%, gap %.2f "
               "points (>= 2)",
               points(joint.accuracy), points(sem.accuracy), gap));

    const Cell local = ex.eval(Method::Local, X, false, 0, 0.0);
    const Cell full = ex.eval(Method::FullObservation, X, false, 0, 0.0);
    const Cell top3 = ex.eval(Method::Top3Channel, X, false, 0, 0.0);
    bool ok = true;
    std::string detail = fmt("full %.2f%%, local %.2f%%", points(full.accuracy), points(local.accuracy));
    for (const auto& [name, c] : {std::pair{"joint", joint}, std::pair{"semantic", sem}}) {
      ok = ok && points(full.accuracy - c.accuracy) >= -1.0 &&
           points(c.accuracy - local.accuracy) >= -1.0;
      detail += fmt(", %s %.2f%%", name, points(c.accuracy));
    }
    report(10, "ordering full >= collaborative >= local", ok, detail + " (1-point slack)");
    info(fmt("top-3 channel baseline %.2f%% (not a matching method; reported only)",
             points(top3.accuracy)));
  }

  {
    const Cell local = ex.eval(Method::Local, X, true, 0, 0.0);
    const Cell sem8 = ex.eval(Method::SemanticOnly, X, true, 8, 0.0);
    const Cell joint128 = ex.eval(Method::Joint, X, true, 128, 0.0);
    const bool ok = points(sem8.accuracy - local.accuracy) <= 1.0 &&
                    points(joint128.accuracy - local.accuracy) >= 2.0;
    report(7, "noisy queries", ok,
           fmt("extreme, noisy query and data: local %.2f%%, semantic Q=8 %.2f%% (<= local + 1), "
               "joint Q=128 %.2f%% (>= local + 2)",
               points(local.accuracy), points(sem8.accuracy), points(joint128.accuracy)));
  }

  {
    const Cell r0 = ex.eval(Method::Joint, U, false, 64, 0.0);
    const Cell r1 = ex.eval(Method::Joint, U, false, 64, 0.01);
    const double reduction = 1.0 - r1.connections / r0.connections;
    const double drop = points(r0.accuracy - r1.accuracy);
    std::string large;
    bool degraded = false;
    for (double rho : {0.4, 0.6}) {
      const Cell c = ex.eval(Method::Joint, U, false, 64, rho);
      const double d = points(r0.accuracy - c.accuracy);
      large += fmt("; rho=%g acc %.2f%% (drop %.2f)", rho, points(c.accuracy), d);
      degraded = degraded || d > 2.0;
    }
    report(8, "pruning trade-off", reduction >= 0.30 && std::abs(drop) <= 1.0 && degraded,
           fmt("uniform joint Q=64: rho=0 acc %.2f%% conn %.2f; rho=0.01 acc %.2f%% conn %.2f, "
               "reduction %.1f%% (>= 30), accuracy change %.2f points (within 1)",
               points(r0.accuracy), r0.connections, points(r1.accuracy), r1.connections,
               100.0 * reduction, -drop) +
               large + " (some drop > 2)");
  }

  {
    const Cell joint = ex.eval(Method::Joint, X, false, 64, 0.01);
    const Cell sem = ex.eval(Method::SemanticOnly, X, false, 64, 0.01);
    report(9, "channel-aware sparsity", joint.connections <= sem.connections,
           fmt("extreme, rho=0.01: joint %.3f connections (acc %.2f%%) vs semantic %.3f (acc "
               "%.2f%%)",
               joint.connections, points(joint.accuracy), sem.connections, points(sem.accuracy)));
  }

  {
    bool ok = true;
    std::string detail;
    for (bool aware : {false, true}) {
      for (std::uint64_t seed : {cfg.seed, cfg.seed + 1, cfg.seed + 2}) {
        std::vector<double> h;
        const VariantSpec v{aware, X, cfg.query_dim, false};
        if (seed == cfg.seed) {
          ex.model(v);
          h = ex.history(v);
        } else {
          TrainReport rep;
          Stopwatch sw;
          train_variant(clf, pool, train_config_of(cfg, aware), v, seed, &rep);
          info(fmt("trained %s seed %llu in %.0f s", variant_name(v).c_str(),
                   static_cast<unsigned long long>(seed), sw.seconds()));
          h = rep.loss_history;
        }
        const double end = smooth(h, 50).back();
        ok = ok && end < h.front();
        detail += fmt("%s seed %llu: %.4f -> %.4f; ", aware ? "joint" : "semantic",
                      static_cast<unsigned long long>(seed), h.front(), end);
      }
    }
    report(11, "training loss decreases", ok, detail + "smoothed window 50");
  }

  std::printf("%d criteria failed, total %.0f s\n", failures, total.seconds());
  return failures == 0 ? 0 : 1;
}
