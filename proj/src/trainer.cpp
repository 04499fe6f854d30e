#include "psgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace psgan::train {

using ag::Tensor;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate(bool allow_zero_lr) const {
  weights.validate();
  if (!std::isfinite(learning_rate) || learning_rate < 0 || (learning_rate == 0 && !allow_zero_lr))
    throw ConfigFileError("learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigFileError("betas must lie in [0, 1)");
  if (batch_size < 1) throw ConfigFileError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigFileError("epochs must be >= 1");
  if (!is_supported_size(image_size)) throw ConfigFileError("image_size must be one of 64, 256, 512");
  if (checkpoint_interval < 1) throw ConfigFileError("checkpoint_interval must be >= 1");
  if (!(w_visual >= 0)) throw ConfigFileError("w_visual must be >= 0");
  if (max_steps < 0) throw ConfigFileError("max_steps must be >= 0");
  arch().validate();
}

nn::ArchSpec TrainConfig::arch() const {
  nn::ArchSpec a;
  a.input_size = image_size;
  a.base_width = base_width;
  a.disc_width = disc_width;
  return a;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda_adv", weights.adv},
          {"lambda_cyc", weights.cyc},
          {"lambda_per", weights.per},
          {"lambda_region", weights.region},
          {"lambda_detail", weights.detail},
          {"w_visual", w_visual},
          {"learning_rate", learning_rate},
          {"betas", {beta1, beta2}},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"image_size", image_size},
          {"seed", seed},
          {"checkpoint_interval", checkpoint_interval},
          {"base_width", base_width},
          {"disc_width", disc_width},
          {"max_steps", max_steps},
          {"perceptual", perceptual}};
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "lambda_adv", "lambda_cyc",  "lambda_per",          "lambda_region", "lambda_detail", "w_visual",
      "learning_rate", "betas",    "epochs",              "batch_size",    "image_size",    "seed",
      "checkpoint_interval",       "base_width",          "disc_width",    "max_steps",     "perceptual"};
  return keys;
}

TrainConfig apply_config(const KeyValueConfig& kv, TrainConfig c) {
  kv.require_known(train_config_keys());
  c.weights.adv = kv.get_double("lambda_adv", c.weights.adv);
  c.weights.cyc = kv.get_double("lambda_cyc", c.weights.cyc);
  c.weights.per = kv.get_double("lambda_per", c.weights.per);
  c.weights.region = kv.get_double("lambda_region", c.weights.region);
  c.weights.detail = kv.get_double("lambda_detail", c.weights.detail);
  c.w_visual = kv.get_double("w_visual", c.w_visual);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  if (kv.contains("betas")) {
    const std::string s = kv.get_string("betas", "");
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw ConfigFileError("betas must be 'beta1,beta2'");
    KeyValueConfig pair;
    pair.set("b1", s.substr(0, comma));
    pair.set("b2", s.substr(comma + 1));
    auto strip = [](std::string v) {
      v.erase(std::remove_if(v.begin(), v.end(), [](unsigned char ch) { return std::isspace(ch); }), v.end());
      return v;
    };
    pair.set("b1", strip(pair.get_string("b1", "")));
    pair.set("b2", strip(pair.get_string("b2", "")));
    c.beta1 = pair.get_double("b1", c.beta1);
    c.beta2 = pair.get_double("b2", c.beta2);
  }
  c.epochs = int(kv.get_long("epochs", c.epochs));
  c.batch_size = int(kv.get_long("batch_size", c.batch_size));
  c.image_size = int(kv.get_long("image_size", c.image_size));
  c.seed = std::uint64_t(kv.get_long("seed", long(c.seed)));
  c.checkpoint_interval = int(kv.get_long("checkpoint_interval", c.checkpoint_interval));
  c.base_width = int(kv.get_long("base_width", c.base_width));
  c.disc_width = int(kv.get_long("disc_width", c.disc_width));
  c.max_steps = kv.get_long("max_steps", c.max_steps);
  c.perceptual = kv.get_string("perceptual", c.perceptual);
  return c;
}

// ---------------------------------------------------------------------------
// Data

Corpus Corpus::from_assets(std::vector<FaceAsset> assets) {
  Corpus c;
  c.assets = std::move(assets);
  for (std::size_t i = 0; i < c.assets.size(); ++i)
    (c.assets[i].domain == Domain::Makeup ? c.makeup : c.non_makeup).push_back(i);
  return c;
}

Corpus Corpus::load(const std::filesystem::path& manifest_path) {
  return from_assets(load_assets(read_manifest(manifest_path)));
}

bool Corpus::has_dense() const {
  return !assets.empty() && std::all_of(assets.begin(), assets.end(), [](const FaceAsset& a) {
           return a.dense.has_value() && a.dense->rows() > 0;
         });
}

Triple sample_pair(const Corpus& corpus, std::mt19937_64& rng) {
  if (corpus.non_makeup.empty()) throw std::invalid_argument("sample_pair: non-makeup domain is empty");
  if (corpus.makeup.empty()) throw std::invalid_argument("sample_pair: makeup domain is empty");
  std::uniform_int_distribution<std::size_t> dx(0, corpus.non_makeup.size() - 1), dy(0, corpus.makeup.size() - 1);
  Triple t;
  t.x = &corpus.assets[corpus.non_makeup[dx(rng)]];
  t.y1 = &corpus.assets[corpus.makeup[dy(rng)]];
  t.y_r = &corpus.assets[corpus.makeup[dy(rng)]];
  return t;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor<float>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Eigen::ArrayXf::Zero(p.value().size()));
    v_.push_back(Eigen::ArrayXf::Zero(p.value().size()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  const float step = float(lr_ * std::sqrt(c2) / c1);
  const float b1 = float(beta1_), b2 = float(beta2_);
  const float eps = float(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].grad();
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.square();
    if (step != 0.0f) params_[i].mutable_value() -= step * m_[i] / (v_[i].sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

nn::NetworkBundle<float> make_bundle(const TrainConfig& c) {
  c.validate(/*allow_zero_lr=*/true);
  return nn::NetworkBundle<float>::create(c.arch(), c.seed);
}

}  // namespace

Trainer::Trainer(Corpus corpus, TrainConfig config)
    : corpus_(std::move(corpus)),
      config_(std::move(config)),
      bundle_(make_bundle(config_)),
      extractor_(losses::make_extractor<float>(config_.perceptual)),
      adam_g_(bundle_.generator_parameters(), config_.learning_rate, config_.beta1, config_.beta2),
      adam_d_(bundle_.discriminator_parameters(), config_.learning_rate, config_.beta1, config_.beta2),
      rng_(config_.seed) {
  if (corpus_.non_makeup.empty() || corpus_.makeup.empty())
    throw std::invalid_argument("training needs assets in both the non-makeup and makeup domains");
  if (config_.weights.detail > 0 && !corpus_.has_dense())
    throw std::invalid_argument(
        "lambda_detail > 0 requires dense landmark correspondences for every asset "
        "(set lambda_detail = 0 to train without them)");
  for (const auto& a : corpus_.assets) {
    validate_asset(a);
    if (a.image.height != config_.image_size)
      throw nn::ShapeError(a.id + ": image size " + std::to_string(a.image.height) + " differs from image_size " +
                           std::to_string(config_.image_size));
  }
}

long Trainer::steps_per_epoch() const {
  const long n = long(std::max(corpus_.non_makeup.size(), corpus_.makeup.size()));
  return std::max(1L, (n + config_.batch_size - 1) / config_.batch_size);
}

long Trainer::total_steps() const {
  return config_.max_steps > 0 ? config_.max_steps : long(config_.epochs) * steps_per_epoch();
}

const PreparedFace<float>& Trainer::prepared(const FaceAsset* asset) {
  auto it = cache_.find(asset);
  if (it == cache_.end()) it = cache_.emplace(asset, prepare_face<float>(*asset, bundle_.arch)).first;
  return it->second;
}

losses::LossReport Trainer::step() {
  std::vector<Triple> batch;
  for (int i = 0; i < config_.batch_size; ++i) batch.push_back(sample_pair(corpus_, rng_));
  return train_step(batch);
}

losses::LossReport Trainer::train_step(const std::vector<Triple>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const float w = float(config_.w_visual);
  const float inv_b = 1.0f / float(batch.size());
  const auto& lw = config_.weights;

  struct Sample {
    const PreparedFace<float>* x;
    const PreparedFace<float>* y1;
    const PreparedFace<float>* yr;
    Tensor<float> fake_y, fake_x, rec_x, rec_y;
  };
  std::vector<Sample> samples;
  for (const auto& t : batch) {
    Sample s{&prepared(t.x), &prepared(t.y1), &prepared(t.y_r), {}, {}, {}, {}};
    s.fake_y = transfer_graph(bundle_, s.x->image, s.x->geometry, s.y1->image, s.y1->geometry, w);
    s.fake_x = removal_graph(bundle_, s.yr->image);
    s.rec_x = removal_graph(bundle_, s.fake_y);
    s.rec_y = transfer_graph(bundle_, s.fake_x, s.yr->geometry, s.yr->image, s.yr->geometry, w);
    samples.push_back(std::move(s));
  }

  auto d_x = [this](const Tensor<float>& img) { return nn::discriminator_forward(bundle_, img, nn::Which::X); };
  auto d_y = [this](const Tensor<float>& img) { return nn::discriminator_forward(bundle_, img, nn::Which::Y); };

  // Discriminator update on detached fakes.
  losses::LossTerms terms;
  {
    Tensor<float> d_total;
    for (auto& s : samples) {
      Tensor<float> l = losses::adv_loss_d(d_x, d_y, s.x->image, s.y1->image, s.fake_x, s.fake_y);
      d_total = d_total.defined() ? d_total + l : l;
    }
    d_total = ag::scale(d_total, inv_b);
    terms.d_adv = d_total.item();
    if (!std::isfinite(terms.d_adv)) throw losses::NumericalError("d_adv");
    adam_d_.zero_grad();
    ag::scale(d_total, float(lw.adv)).backward();
    adam_d_.step();
    adam_d_.zero_grad();
    if (on_phase) on_phase(Phase::Discriminator);
  }

  // Generator update against the refreshed discriminators.
  Tensor<float> adv, cyc, per, region, detail;
  auto acc = [](Tensor<float>& sum, const Tensor<float>& v) { sum = sum.defined() ? sum + v : v; };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    const Triple& t = batch[i];
    acc(adv, losses::adv_loss_g(d_x, d_y, s.fake_x, s.fake_y));
    acc(cyc, losses::cycle_loss(s.x->image, s.rec_x, s.yr->image, s.rec_y));
    acc(per, losses::perceptual_loss(s.fake_y, s.x->image, extractor_.get()) +
                 losses::perceptual_loss(s.fake_x, s.yr->image, extractor_.get()));
    const auto pseudo = losses::build_pseudo_gt(*t.x, *t.y1);
    acc(region, losses::region_loss(s.fake_y, nn::to_tensor<float>(pseudo.image)));
    if (lw.detail > 0) acc(detail, losses::detail_loss(s.fake_y, s.y1->image, *t.x->dense, *t.y1->dense));
  }
  terms.g_adv = double(adv.item()) * inv_b;
  terms.g_cyc = double(cyc.item()) * inv_b;
  terms.g_per = double(per.item()) * inv_b;
  terms.g_region = double(region.item()) * inv_b;
  terms.g_detail = detail.defined() ? double(detail.item()) * inv_b : 0.0;
  const losses::LossReport report = losses::total_losses(terms, lw);

  Tensor<float> g_total = ag::scale(adv, float(lw.adv)) + ag::scale(cyc, float(lw.cyc)) +
                          ag::scale(per, float(lw.per)) + ag::scale(region, float(lw.region));
  if (detail.defined()) g_total = g_total + ag::scale(detail, float(lw.detail));
  adam_g_.zero_grad();
  ag::scale(g_total, inv_b).backward();
  adam_g_.step();
  adam_g_.zero_grad();
  adam_d_.zero_grad();
  if (on_phase) on_phase(Phase::Generator);

  ++step_;
  return report;
}

// ---------------------------------------------------------------------------
// State

namespace {

void push_moments(nn::CheckpointExtras& ex, const std::string& prefix, const Adam& opt) {
  for (std::size_t i = 0; i < opt.m().size(); ++i) {
    ex.tensors.emplace_back(prefix + ".m." + std::to_string(i), opt.m()[i]);
    ex.tensors.emplace_back(prefix + ".v." + std::to_string(i), opt.v()[i]);
  }
}

void pull_moments(const nn::CheckpointExtras& ex, const std::string& prefix, Adam& opt) {
  std::map<std::string, const Eigen::ArrayXf*> by_name;
  for (const auto& [name, arr] : ex.tensors) by_name[name] = &arr;
  auto fetch = [&](const std::string& name, Eigen::ArrayXf& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->size() != dst.size())
      throw std::runtime_error("checkpoint lacks optimizer state '" + name + "'");
    dst = *it->second;
  };
  for (std::size_t i = 0; i < opt.m().size(); ++i) {
    fetch(prefix + ".m." + std::to_string(i), opt.m()[i]);
    fetch(prefix + ".v." + std::to_string(i), opt.v()[i]);
  }
}

}  // namespace

void Trainer::save(const std::filesystem::path& path) const {
  nn::CheckpointExtras ex;
  std::ostringstream rng;
  rng << rng_;
  ex.train_state = {{"step", step_},
                    {"rng", rng.str()},
                    {"adam_g_t", adam_g_.t()},
                    {"adam_d_t", adam_d_.t()},
                    {"config", config_.to_json()}};
  push_moments(ex, "adam_g", adam_g_);
  push_moments(ex, "adam_d", adam_d_);
  nn::save_checkpoint(bundle_, path, &ex);
}

void Trainer::resume(const std::filesystem::path& path) {
  nn::CheckpointExtras ex;
  const nn::ArchSpec arch = config_.arch();
  nn::NetworkBundle<float> loaded = nn::load_checkpoint(path, &arch, &ex);
  if (!ex.train_state.is_object() || !ex.train_state.contains("step"))
    throw std::runtime_error(path.string() + " carries no training state");
  // Copy into the existing parameter nodes so optimizer references stay valid.
  auto dst = bundle_.named_parameters();
  auto src = loaded.named_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].second.mutable_value() = src[i].second.value();
  pull_moments(ex, "adam_g", adam_g_);
  pull_moments(ex, "adam_d", adam_d_);
  adam_g_.set_t(ex.train_state.at("adam_g_t").get<long>());
  adam_d_.set_t(ex.train_state.at("adam_d_t").get<long>());
  std::istringstream rng(ex.train_state.at("rng").get<std::string>());
  rng >> rng_;
  step_ = ex.train_state.at("step").get<long>();
}

// ---------------------------------------------------------------------------
// Loop

TrainResult train_loop(Trainer& trainer, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume_from, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.metrics = out_dir / "metrics.jsonl";

  if (resume_from) {
    trainer.resume(*resume_from);
    // Drop metric lines past the resumed step so the file matches executed steps.
    std::vector<std::string> kept;
    if (std::ifstream in(result.metrics); in) {
      std::string line;
      while (long(kept.size()) < trainer.steps_done() && std::getline(in, line)) kept.push_back(line);
    }
    std::ofstream out(result.metrics, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
  } else {
    std::ofstream(result.metrics, std::ios::trunc);
  }

  std::ofstream metrics(result.metrics, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics.string());
  const long total = trainer.total_steps();
  const int interval = trainer.config().checkpoint_interval;
  while (trainer.steps_done() < total) {
    const losses::LossReport report = trainer.step();
    const long s = trainer.steps_done();
    metrics << report.to_json(s).dump() << '\n';
    metrics.flush();
    if (!metrics) throw std::runtime_error("failed writing metrics (disk full?)");
    if (log && (s == 1 || s % 50 == 0 || s == total))
      *log << "step " << s << "/" << total << "  loss_d " << report.loss_d << "  loss_g " << report.loss_g << '\n';
    if (s % interval == 0) trainer.save(out_dir / ("step_" + std::to_string(s) + ".ckpt"));
  }
  result.final_checkpoint = out_dir / "final.ckpt";
  trainer.save(result.final_checkpoint);
  result.steps = trainer.steps_done();
  return result;
}

}  // namespace psgan::train
