#include "ride/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ride/evaluation.hpp"
#include "ride/metrics.hpp"

namespace ride {

template <typename T>
void adam_update(std::span<T> weights, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t step,
                 const AdamOptions& o) {
  if (grads.size() != weights.size() || m.size() != weights.size() || v.size() != weights.size())
    throw ShapeError("ADAM state does not match the weights");
  if (step < 1) throw ContractError("ADAM steps count from 1");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = grads[i];
    const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    weights[i] = static_cast<T>(weights[i] - o.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + o.eps));
  }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 std::int64_t, const AdamOptions&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::int64_t, const AdamOptions&);

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("ADAM parameters must be trainable leaves");
    m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    dispatch(p.dtype(), [&]<typename T>() {
      auto& node = p.node();
      std::span<const T> g = node.grad_span<T>();
      adam_update<T>(p.data<T>(), g, m_[i].data<T>(), v_[i].data<T>(), step_, options_);
    });
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ContractError("iterations must be non-negative");
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (!(adam.learning_rate > 0.0) || !(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0))
    throw ContractError("ADAM rates must be positive and betas in (0, 1)");
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (lambda_o < 0.0) throw ContractError("lambda_o must be non-negative");
  if (crop <= model.crop_total()) throw ContractError("crop is too small for the network");
  model.validate();
}

std::vector<std::string> TrainConfig::known_keys() {
  return {"iterations",      "batch_size",        "learning_rate",    "beta1",
          "beta2",           "lambda_o",          "temperature",      "crop",
          "seed",            "model",             "group_order",      "block_widths",
          "convs_per_block", "descriptor_channels", "kernel_size",    "max_correspondences",
          "validation_every", "validation_images", "validation_topk", "rotation_range",
          "scale_min",       "scale_max",         "translation_fraction", "perspective",
          "steering"};
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  const auto unknown = cfg.unknown_keys(known_keys());
  if (!unknown.empty()) throw ContractError("unknown config key '" + unknown.front() + "'");
  TrainConfig c;
  c.iterations = cfg.get_int("iterations", c.iterations);
  c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
  c.adam.learning_rate = cfg.get_double("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = cfg.get_double("beta1", c.adam.beta1);
  c.adam.beta2 = cfg.get_double("beta2", c.adam.beta2);
  c.lambda_o = cfg.get_double("lambda_o", c.lambda_o);
  c.temperature = cfg.get_double("temperature", c.temperature);
  c.crop = cfg.get_int("crop", c.crop);
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(c.seed)));
  c.model = RideConfig::preset(cfg.get_string("model", "desk"));
  c.model.group_order = static_cast<int>(cfg.get_int("group_order", c.model.group_order));
  c.model.block_widths = cfg.get_int_list("block_widths", c.model.block_widths);
  c.model.convs_per_block = static_cast<int>(cfg.get_int("convs_per_block", c.model.convs_per_block));
  c.model.descriptor_channels = static_cast<int>(cfg.get_int("descriptor_channels", c.model.descriptor_channels));
  c.model.kernel_size = static_cast<int>(cfg.get_int("kernel_size", c.model.kernel_size));
  if (cfg.has("steering")) {
    const auto mode = cfg.get_string("steering", "");
    if (mode != "harmonic" && mode != "bilinear") throw ContractError("steering must be harmonic or bilinear");
    c.model.steering = mode == "harmonic" ? KernelSteering::harmonic : KernelSteering::bilinear;
  }
  c.max_correspondences = cfg.get_int("max_correspondences", c.max_correspondences);
  c.validation_every = cfg.get_int("validation_every", c.validation_every);
  c.validation_images = static_cast<int>(cfg.get_int("validation_images", c.validation_images));
  c.validation_topk = cfg.get_int("validation_topk", c.validation_topk);
  c.geometry.rotation_degrees = cfg.get_double("rotation_range", c.geometry.rotation_degrees);
  c.geometry.scale_min = cfg.get_double("scale_min", c.geometry.scale_min);
  c.geometry.scale_max = cfg.get_double("scale_max", c.geometry.scale_max);
  c.geometry.translation_fraction = cfg.get_double("translation_fraction", c.geometry.translation_fraction);
  c.geometry.perspective = cfg.get_double("perspective", c.geometry.perspective);
  c.validate();
  return c;
}

ValidationSet make_validation_set(const Rng& rng, int count, std::int64_t size, const HomographyRanges& geometry) {
  ValidationSet set;
  set.images = synth_corpus(rng.substream("validation-images"), count, size);
  Rng hr = rng.substream("validation-homographies");
  for (int i = 0; i < count; ++i) set.homographies.push_back(sample_homography(hr, geometry, size, size));
  return set;
}

double validation_mma(RideModel& model, const ValidationSet& set, std::int64_t topk) {
  if (set.images.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const Features fa = describe_image(model, set.images[i], topk);
    const Features fb = describe_image(model, warp_image(set.images[i], set.homographies[i]), topk);
    const MatchSet m = match_features(fa, fb);
    const double thr[] = {3.0};
    total += mean_matching_accuracy(m, set.homographies[i].matrix, thr)[0];
  }
  return total / static_cast<double>(set.images.size());
}

namespace {

Image random_crop(const Image& img, std::int64_t size, Rng& rng) {
  if (img.height < size || img.width < size)
    throw ContractError("corpus image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " is smaller than the training crop");
  const auto top = rng.uniform_int(0, img.height - size);
  const auto left = rng.uniform_int(0, img.width - size);
  return img.crop(top, left, size, size);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_train_log(const std::filesystem::path& path, const std::vector<TrainRecord>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,l_o,l_d,l_k,total,val_mma\n";
  for (const auto& r : log) {
    out << r.iteration << ',' << fmt(r.l_orientation) << ',' << fmt(r.l_description) << ',' << fmt(r.l_keypoint)
        << ',' << fmt(r.total) << ',' << (r.validation_mma ? fmt(*r.validation_mma) : std::string()) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

TrainResult train(RideModel& model, const std::vector<Image>& corpus, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  if (corpus.empty()) throw ContractError("training corpus is empty");
  const Rng root(config.seed);
  Rng data_rng = root.substream("data");
  Rng loss_rng = root.substream("loss");
  const ValidationSet validation =
      config.validation_every > 0
          ? make_validation_set(root, config.validation_images, config.crop, config.geometry)
          : ValidationSet{};

  if (outputs.directory) std::filesystem::create_directories(*outputs.directory);
  Adam adam(model.parameters(), config.adam);
  LossOptions loss_options;
  loss_options.lambda_o = config.lambda_o;
  loss_options.temperature = config.temperature;
  loss_options.max_correspondences = config.max_correspondences;

  TrainResult result;
  NamedTensors best_state;
  auto snapshot = [&]() {
    NamedTensors s;
    for (const auto& [name, t] : model.state()) s.emplace_back(name, t.detach().clone());
    return s;
  };
  auto maybe_validate = [&](std::int64_t it, TrainRecord& rec) {
    if (config.validation_every <= 0) return;
    if (it % config.validation_every != 0 && it != config.iterations) return;
    const double mma = validation_mma(model, validation, config.validation_topk);
    rec.validation_mma = mma;
    if (mma > result.best_validation_mma) {
      result.best_validation_mma = mma;
      result.best_iteration = it;
      best_state = snapshot();
      if (outputs.directory) model.save(*outputs.directory / "best.ckpt", it);
    }
  };

  const std::int64_t crop_side = config.model.crop_per_side();
  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    std::vector<TrainingPair> pairs;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto idx = data_rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1);
      const Image base = random_crop(corpus[static_cast<std::size_t>(idx)], config.crop, data_rng);
      pairs.push_back(make_training_pair(base, data_rng, config.geometry, config.photometric, crop_side, model.group()));
    }
    std::vector<const Image*> views;
    for (const auto& p : pairs) views.push_back(&p.image_a);
    for (const auto& p : pairs) views.push_back(&p.image_b);
    const RideOutput out = model.forward(images_to_batch(views, model.dtype()), true);

    TrainRecord rec;
    rec.iteration = it;
    std::vector<LossBreakdown> parts;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& corr = pairs[static_cast<std::size_t>(b)].correspondences;
      if (corr.empty()) {
        ++rec.skipped_pairs;
        continue;
      }
      parts.push_back(pair_loss(out, b, config.batch_size + b, corr, loss_options, loss_rng));
    }
    result.skipped_pairs += rec.skipped_pairs;
    if (parts.empty()) {
      if (outputs.on_record) outputs.on_record(rec);
      continue;
    }
    Tensor total = parts.front().total;
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i].total);
    total = mul_scalar(total, 1.0 / static_cast<double>(parts.size()));
    for (const auto& p : parts) {
      rec.l_orientation += p.l_orientation.item() / static_cast<double>(parts.size());
      rec.l_description += p.l_description.item() / static_cast<double>(parts.size());
      rec.l_keypoint += p.l_keypoint.item() / static_cast<double>(parts.size());
    }
    rec.total = total.item();

    adam.zero_grad();
    backward(total);
    adam.step();

    maybe_validate(it, rec);
    result.log.push_back(rec);
    if (outputs.on_record) outputs.on_record(rec);
    const bool checkpoint_due = it == config.iterations ||
                                (config.validation_every > 0 && it % config.validation_every == 0);
    if (outputs.directory && checkpoint_due) model.save(*outputs.directory / "last.ckpt", it);
  }

  if (outputs.directory) write_train_log(*outputs.directory / "train_log.csv", result.log);
  if (!best_state.empty()) model.load_state(best_state);
  return result;
}

}  // namespace ride
