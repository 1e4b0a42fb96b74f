#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "semlink/checkpoint.hpp"
#include "semlink/dataio.hpp"
#include "semlink/layers.hpp"
#include "semlink/matching.hpp"

namespace semlink {

struct PerceptionConfig {
  std::size_t feature_dim = 64;
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 64;
};

struct PretrainConfig {
  int max_epochs = 40;
  int min_epochs = 5;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double target_accuracy = 0.95;
};

// f = f_d ∘ f_e. The encoder maps a flattened image to the feature vector
// exchanged between devices; the decoder maps a (fused) feature to logits.
class SplitClassifier {
 public:
  SplitClassifier() = default;
  SplitClassifier(const PerceptionConfig& cfg, Rng& rng);

  std::vector<double> encode(const Image& image) const;
  Tensor2 encode_batch(std::span<const Image> images) const;
  std::vector<double> decode(std::span<const double> feature) const;
  Tensor2 decode_batch(const Tensor2& features) const;

  // Monolithic classifier on a batch of flattened images.
  Tensor2 full_logits(const Tensor2& images) const;
  int predict(const Image& image) const;

  std::size_t feature_dim() const { return cfg_.feature_dim; }
  const PerceptionConfig& config() const { return cfg_; }
  bool pretrained() const { return pretrained_; }
  void mark_pretrained() { pretrained_ = true; }
  void freeze();
  bool frozen() const;

  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  std::vector<NamedTensor> to_blocks() const;
  static SplitClassifier from_blocks(const std::vector<NamedTensor>& blocks);

 private:
  void require_pretrained(const char* op) const;

  PerceptionConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
  bool pretrained_ = false;
};

// Everything a device runs: the frozen split classifier and the matching
// modules, one copy shared by all devices.
struct ModelBundle {
  SplitClassifier classifier;
  std::optional<MatchingModules> matching;
};

Tensor2 stack_images(std::span<const Image> images);

struct PretrainReport {
  int epochs_run = 0;
  double clean_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Trains encoder+decoder on clean images with cross-entropy until the held-out
// accuracy reaches cfg.target_accuracy, then freezes. Throws TrainingError
// carrying the achieved accuracy if the epoch budget runs out first.
SplitClassifier pretrain_full_model(std::span<const Sample> train, std::span<const Sample> test,
                                    const PerceptionConfig& pcfg, const PretrainConfig& cfg,
                                    Rng& rng, PretrainReport* report = nullptr);

double clean_accuracy(const SplitClassifier& model, std::span<const Sample> samples);
// Accuracy when every input carries a random white patch.
double occluded_accuracy(const SplitClassifier& model, std::span<const Sample> samples,
                         double scale, Rng& rng, PatchMode mode = PatchMode::Side);

}  // namespace semlink
