#include "semlink/perception.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "semlink/errors.hpp"
#include "semlink/radam.hpp"

namespace semlink {

SplitClassifier::SplitClassifier(const PerceptionConfig& cfg, Rng& rng)
    : cfg_(cfg),
      encoder_("encoder", {kImagePixels, cfg.encoder_hidden, cfg.feature_dim}, rng),
      decoder_("decoder", {cfg.feature_dim, cfg.decoder_hidden, kNumClasses}, rng) {}

void SplitClassifier::require_pretrained(const char* op) const {
  if (!pretrained_) throw StateError(std::string(op) + ": classifier has not been pretrained");
}

Tensor2 stack_images(std::span<const Image> images) {
  Tensor2 x(images.size(), kImagePixels);
  for (std::size_t r = 0; r < images.size(); ++r) {
    if (images[r].size() != kImagePixels) throw DimensionError("stack_images: bad image size");
    std::copy(images[r].begin(), images[r].end(), x.row(r).begin());
  }
  return x;
}

std::vector<double> SplitClassifier::encode(const Image& image) const {
  require_pretrained("encode");
  if (image.size() != kImagePixels) throw ArgumentError("encode: expected a 32x32 image");
  const Tensor2 f = encoder_.infer(Tensor2::row_vector(image));
  return f.data();
}

Tensor2 SplitClassifier::encode_batch(std::span<const Image> images) const {
  require_pretrained("encode");
  return encoder_.infer(stack_images(images));
}

std::vector<double> SplitClassifier::decode(std::span<const double> feature) const {
  require_pretrained("decode");
  if (feature.size() != cfg_.feature_dim) {
    throw ArgumentError("decode: feature length " + std::to_string(feature.size()) +
                        " != " + std::to_string(cfg_.feature_dim));
  }
  return decoder_.infer(Tensor2::row_vector(feature)).data();
}

Tensor2 SplitClassifier::decode_batch(const Tensor2& features) const {
  require_pretrained("decode");
  if (features.cols() != cfg_.feature_dim) throw ArgumentError("decode: feature dimension mismatch");
  return decoder_.infer(features);
}

Tensor2 SplitClassifier::full_logits(const Tensor2& images) const {
  return decoder_.infer(encoder_.infer(images));
}

int SplitClassifier::predict(const Image& image) const {
  const Tensor2 logits = full_logits(Tensor2::row_vector(image));
  const auto row = logits.row(0);
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

void SplitClassifier::freeze() {
  encoder_.set_trainable(false);
  decoder_.set_trainable(false);
}

bool SplitClassifier::frozen() const {
  for (const auto* p : encoder_.params())
    if (p->trainable) return false;
  for (const auto* p : decoder_.params())
    if (p->trainable) return false;
  return true;
}

std::vector<NamedTensor> SplitClassifier::to_blocks() const {
  std::vector<NamedTensor> out;
  out.push_back({"meta.perception", Tensor2{{static_cast<double>(cfg_.feature_dim),
                                             static_cast<double>(cfg_.encoder_hidden),
                                             static_cast<double>(cfg_.decoder_hidden),
                                             pretrained_ ? 1.0 : 0.0}}});
  for (const auto* p : encoder_.params()) out.push_back({p->name, p->value});
  for (const auto* p : decoder_.params()) out.push_back({p->name, p->value});
  return out;
}

SplitClassifier SplitClassifier::from_blocks(const std::vector<NamedTensor>& blocks) {
  std::map<std::string, const Tensor2*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b.value;
  const auto meta = by_name.find("meta.perception");
  if (meta == by_name.end() || meta->second->size() != 4) {
    throw IoError("checkpoint has no perception metadata");
  }
  const auto& m = *meta->second;
  PerceptionConfig cfg{static_cast<std::size_t>(m(0, 0)), static_cast<std::size_t>(m(0, 1)),
                       static_cast<std::size_t>(m(0, 2))};
  Rng dummy(0);
  SplitClassifier model(cfg, dummy);
  auto load = [&](Mlp& mlp) {
    for (auto* p : mlp.params()) {
      const auto it = by_name.find(p->name);
      if (it == by_name.end()) throw IoError("checkpoint missing block " + p->name);
      if (!it->second->same_shape(p->value)) throw IoError("checkpoint block " + p->name + " has wrong shape");
      p->value = *it->second;
    }
  };
  load(model.encoder_);
  load(model.decoder_);
  model.pretrained_ = m(0, 3) != 0.0;
  if (model.pretrained_) model.freeze();
  return model;
}

double clean_accuracy(const SplitClassifier& model, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < samples.size(); s += kChunk) {
    const std::size_t e = std::min(samples.size(), s + kChunk);
    std::vector<Image> imgs;
    for (std::size_t k = s; k < e; ++k) imgs.push_back(samples[k].image);
    const Tensor2 logits = model.full_logits(stack_images(imgs));
    for (std::size_t k = s; k < e; ++k) {
      const auto row = logits.row(k - s);
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      if (pred == samples[k].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double occluded_accuracy(const SplitClassifier& model, std::span<const Sample> samples,
                         double scale, Rng& rng, PatchMode mode) {
  std::vector<Sample> occluded;
  occluded.reserve(samples.size());
  for (const Sample& s : samples) occluded.push_back({apply_patch(s.image, scale, rng, mode), s.label});
  return clean_accuracy(model, occluded);
}

SplitClassifier pretrain_full_model(std::span<const Sample> train, std::span<const Sample> test,
                                    const PerceptionConfig& pcfg, const PretrainConfig& cfg,
                                    Rng& rng, PretrainReport* report) {
  if (train.empty() || test.empty()) throw ArgumentError("pretrain_full_model: empty split");
  SplitClassifier model(pcfg, rng);
  std::vector<ParamBlock*> params = model.encoder().params();
  for (auto* p : model.decoder().params()) params.push_back(p);
  RAdam opt(params, RAdamConfig{cfg.lr});

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  MlpTape enc_tape;
  MlpTape dec_tape;
  double acc = 0.0;
  PretrainReport local;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      Tensor2 x(e - s, kImagePixels);
      std::vector<int> labels;
      for (std::size_t k = s; k < e; ++k) {
        const Sample& smp = train[order[k]];
        std::copy(smp.image.begin(), smp.image.end(), x.row(k - s).begin());
        labels.push_back(smp.label);
      }
      zero_grads(params);
      const Tensor2 feat = model.encoder().forward(x, enc_tape);
      const Tensor2 logits = model.decoder().forward(feat, dec_tape);
      const CrossEntropy ce = cross_entropy_loss(logits, labels);
      const Tensor2 g_feat = model.decoder().backward(dec_tape, ce.grad_logits);
      model.encoder().backward(enc_tape, g_feat, false);
      opt.step();
      epoch_loss += ce.loss;
      ++batches;
    }
    local.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    local.epochs_run = epoch + 1;
    acc = clean_accuracy(model, test);
    if (epoch + 1 >= cfg.min_epochs && acc >= cfg.target_accuracy) break;
  }
  local.clean_accuracy = acc;
  if (report) *report = local;
  if (acc < cfg.target_accuracy) {
    throw TrainingError("pretraining reached clean accuracy " + std::to_string(acc) +
                            " below target " + std::to_string(cfg.target_accuracy),
                        acc);
  }
  model.mark_pretrained();
  model.freeze();
  return model;
}

}  // namespace semlink
