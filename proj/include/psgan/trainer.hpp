#pragma once

// Unpaired adversarial training: pair sampling, Adam, one D update followed
// by one G update per step, checkpoints and JSON-lines metrics.

#include "psgan/config.hpp"
#include "psgan/losses.hpp"
#include "psgan/model.hpp"
#include "psgan/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace psgan::train {

struct TrainConfig {
  losses::LossWeights weights;
  double w_visual = 0.01;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 50;
  int batch_size = 1;
  int image_size = 256;
  std::uint64_t seed = 0;
  int checkpoint_interval = 1000;

  // Architecture and run control.
  int base_width = 64;
  int disc_width = 64;
  long max_steps = 0;  // 0: run epochs * steps_per_epoch
  std::string perceptual = "identity";

  /// Config files must give learning_rate > 0; the trainer itself also
  /// accepts 0 (a frozen step) when `allow_zero_lr` is set.
  void validate(bool allow_zero_lr = false) const;
  nn::ArchSpec arch() const;
  nlohmann::json to_json() const;
};

/// Flat keys accepted in training config files.
const std::vector<std::string>& train_config_keys();

/// Applies every recognised key of `kv` on top of `base`; unknown keys throw.
TrainConfig apply_config(const KeyValueConfig& kv, TrainConfig base = {});

/// Assets grouped by domain.
struct Corpus {
  std::vector<FaceAsset> assets;
  std::vector<std::size_t> non_makeup;
  std::vector<std::size_t> makeup;

  static Corpus from_assets(std::vector<FaceAsset> assets);
  static Corpus load(const std::filesystem::path& manifest_path);
  bool has_dense() const;
};

struct Triple {
  const FaceAsset* x = nullptr;
  const FaceAsset* y1 = nullptr;
  const FaceAsset* y_r = nullptr;
};

/// Independent uniform draws: x from the non-makeup domain, y1 and y_r from
/// the makeup domain.
Triple sample_pair(const Corpus& corpus, std::mt19937_64& rng);

/// Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<ag::Tensor<float>> params, double lr, double beta1, double beta2, double eps = 1e-8);
  void step();
  void zero_grad();

  long t() const { return t_; }
  std::vector<Eigen::ArrayXf>& m() { return m_; }
  std::vector<Eigen::ArrayXf>& v() { return v_; }
  const std::vector<Eigen::ArrayXf>& m() const { return m_; }
  const std::vector<Eigen::ArrayXf>& v() const { return v_; }
  void set_t(long t) { t_ = t; }

 private:
  std::vector<ag::Tensor<float>> params_;
  std::vector<Eigen::ArrayXf> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

enum class Phase { Discriminator, Generator };

class Trainer {
 public:
  /// Fails if lambda_detail > 0 while some asset lacks dense correspondences.
  Trainer(Corpus corpus, TrainConfig config);

  /// Samples `batch_size` triples and runs one step.
  losses::LossReport step();
  /// One D update then one G update over `batch`; losses are batch means.
  losses::LossReport train_step(const std::vector<Triple>& batch);

  long steps_done() const { return step_; }
  long steps_per_epoch() const;
  long total_steps() const;

  const nn::NetworkBundle<float>& bundle() const { return bundle_; }
  nn::NetworkBundle<float>& bundle() { return bundle_; }
  const TrainConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }

  /// Bundle plus optimizer moments, RNG state and step counter.
  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path);

  /// Invoked after each optimizer sub-step (tests use it to hash parameters).
  std::function<void(Phase)> on_phase;

 private:
  const PreparedFace<float>& prepared(const FaceAsset* asset);

  Corpus corpus_;
  TrainConfig config_;
  nn::NetworkBundle<float> bundle_;
  std::unique_ptr<losses::FeatureExtractor<float>> extractor_;
  Adam adam_g_, adam_d_;
  std::mt19937_64 rng_;
  long step_ = 0;
  std::map<const FaceAsset*, PreparedFace<float>> cache_;
};

struct TrainResult {
  long steps = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics;
};

/// Runs to total_steps(), appending one metrics line per step to
/// `out_dir/metrics.jsonl`, writing `step_<n>.ckpt` every checkpoint_interval
/// steps and `final.ckpt` at the end. With `resume_from`, continues a run.
TrainResult train_loop(Trainer& trainer, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                       std::ostream* log = nullptr);

}  // namespace psgan::train
