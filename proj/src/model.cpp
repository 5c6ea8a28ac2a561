#include "ride/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ride {

void RideConfig::validate() const {
  if (group_order < 2) throw ContractError("group order must be at least 2");
  if (block_widths.empty()) throw ContractError("at least one backbone block is required");
  for (int w : block_widths)
    if (w < 1) throw ContractError("block widths must be positive");
  if (convs_per_block < 1) throw ContractError("convs_per_block must be positive");
  if (descriptor_channels < 1) throw ContractError("descriptor_channels must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ContractError("kernel size must be odd");
}

RideConfig RideConfig::ride() { return {}; }

RideConfig RideConfig::ride_large() {
  RideConfig c;
  c.block_widths = {16, 16, 32, 32};
  c.descriptor_channels = 32;
  return c;
}

RideConfig RideConfig::desk() {
  RideConfig c;
  c.block_widths = {2, 2, 4, 4};
  c.descriptor_channels = 8;
  return c;
}

RideConfig RideConfig::toy() {
  RideConfig c;
  c.group_order = 4;
  c.block_widths = {1, 2};
  c.descriptor_channels = 2;
  return c;
}

RideConfig RideConfig::preset(const std::string& name) {
  if (name == "ride") return ride();
  if (name == "ride-l") return ride_large();
  if (name == "desk") return desk();
  if (name == "toy") return toy();
  throw ContractError("unknown model preset '" + name + "'");
}

namespace {

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  Tensor t = Tensor::from_data(shape, std::move(v));
  if (dtype == DType::f32) t = t.to(DType::f32);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

RideModel::RideModel(const RideConfig& config, Rng& rng, DType dtype)
    : config_(config),
      group_(config.group_order),
      rotator_(config.kernel_size, CyclicGroup(config.group_order), config.steering),
      dtype_(dtype) {
  config_.validate();
  const std::int64_t g = config_.group_order, k = config_.kernel_size;
  Rng init = rng.substream("init");
  auto make_layer = [&](const std::string& name, std::int64_t cout, std::int64_t cin, bool lifting,
                        bool normalized) {
    Layer layer;
    layer.name = name;
    if (lifting)
      layer.weight = kaiming_uniform({cout, 1, k, k}, k * k, init.substream(name), dtype);
    else
      layer.weight = kaiming_uniform({cout, cin, g, k, k}, cin * g * k * k, init.substream(name), dtype);
    layer.normalized = normalized;
    if (normalized) {
      layer.gamma = Tensor::full({cout}, 1.0, dtype, true);
      layer.beta = Tensor::zeros({cout}, dtype, true);
      layer.running_mean = Tensor::zeros({cout}, dtype);
      layer.running_var = Tensor::full({cout}, 1.0, dtype);
    }
    return layer;
  };
  std::int64_t in = 0;
  int index = 0;
  for (int w : config_.block_widths) {
    for (int j = 0; j < config_.convs_per_block; ++j) {
      backbone_.push_back(make_layer("backbone." + std::to_string(index++), w, in, in == 0, true));
      in = w;
    }
  }
  detector_ = make_layer("detector", 1, in, false, false);
  descriptor_ = make_layer("descriptor", config_.descriptor_channels, in, false, false);
}

GroupFeatureMap RideModel::apply(const Layer& layer, const GroupFeatureMap& input, bool training,
                                 bool activate) {
  GroupFeatureMap out = group_conv(input, layer.weight, rotator_);
  if (!layer.normalized) return out;
  Tensor mean_ref = layer.running_mean, var_ref = layer.running_var;
  Tensor v = batch_norm(out.values, layer.gamma, layer.beta, mean_ref, var_ref, training);
  if (activate) v = relu(v);
  return {v, group_};
}

RideOutput RideModel::forward(const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != 1) throw ShapeError("expected grayscale images [B, 1, H, W]");
  if (images.dim(2) <= config_.crop_total() || images.dim(3) <= config_.crop_total())
    throw ContractError("input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                        " is too small for a network that crops " + std::to_string(config_.crop_total()));
  const Tensor x = images.dtype() == dtype_ ? images : images.to(dtype_);

  const Layer& first = backbone_.front();
  GroupFeatureMap h = lifting_conv(x, first.weight, rotator_);
  {
    Tensor mean_ref = first.running_mean, var_ref = first.running_var;
    h = {relu(batch_norm(h.values, first.gamma, first.beta, mean_ref, var_ref, training)), group_};
  }
  for (std::size_t i = 1; i < backbone_.size(); ++i) h = apply(backbone_[i], h, training, true);

  RideOutput out{apply(detector_, h, training, false), apply(descriptor_, h, training, false), {}, {}};
  const auto b = out.detector.batch(), hh = out.detector.height(), ww = out.detector.width();
  out.keypoints = reshape(sigmoid(group_pool(out.detector)), {b, hh, ww});
  out.orientation = reshape(slice(out.descriptor.values, 1, 0, 1), {b, group_.order(), hh, ww});
  return out;
}

std::vector<Tensor> RideModel::parameters() const {
  std::vector<Tensor> p;
  for (const auto& l : backbone_) {
    p.push_back(l.weight);
    p.push_back(l.gamma);
    p.push_back(l.beta);
  }
  p.push_back(detector_.weight);
  p.push_back(descriptor_.weight);
  return p;
}

NamedTensors RideModel::state() const {
  NamedTensors s;
  for (const auto& l : backbone_) {
    s.emplace_back(l.name + ".weight", l.weight);
    s.emplace_back(l.name + ".gamma", l.gamma);
    s.emplace_back(l.name + ".beta", l.beta);
    s.emplace_back(l.name + ".running_mean", l.running_mean);
    s.emplace_back(l.name + ".running_var", l.running_var);
  }
  s.emplace_back(detector_.name + ".weight", detector_.weight);
  s.emplace_back(descriptor_.name + ".weight", descriptor_.weight);
  return s;
}

void RideModel::load_state(const NamedTensors& tensors) {
  for (auto& [name, target] : state()) {
    const Tensor& src = find_tensor(tensors, name);
    if (src.shape() != target.shape())
      throw ShapeError("checkpoint tensor " + name + " has shape " + to_string(src.shape()) + ", expected " +
                       to_string(target.shape()));
    const Tensor converted = src.to(target.dtype());
    dispatch(target.dtype(), [&]<typename T>() {
      auto dst = target.data<T>();
      auto from = converted.data<T>();
      std::copy(from.begin(), from.end(), dst.begin());
    });
  }
}

namespace {

Tensor meta_int(std::int64_t v) { return Tensor::from_data({1}, std::vector<double>{static_cast<double>(v)}).to(DType::f32); }

std::int64_t read_meta(const NamedTensors& t, const std::string& name) {
  return static_cast<std::int64_t>(std::llround(find_tensor(t, name).at(0)));
}

}  // namespace

NamedTensors RideModel::checkpoint(std::int64_t iteration) const {
  NamedTensors out;
  out.emplace_back("meta.group_order", meta_int(config_.group_order));
  std::vector<float> widths(config_.block_widths.begin(), config_.block_widths.end());
  const Shape widths_shape{static_cast<std::int64_t>(widths.size())};
  out.emplace_back("meta.block_widths", Tensor::from_data(widths_shape, std::move(widths)));
  out.emplace_back("meta.convs_per_block", meta_int(config_.convs_per_block));
  out.emplace_back("meta.descriptor_channels", meta_int(config_.descriptor_channels));
  out.emplace_back("meta.kernel_size", meta_int(config_.kernel_size));
  out.emplace_back("meta.steering", meta_int(config_.steering == KernelSteering::harmonic ? 1 : 0));
  out.emplace_back("meta.iteration", meta_int(iteration));
  for (auto& entry : state()) out.push_back(entry);
  return out;
}

RideModel RideModel::from_checkpoint(const NamedTensors& tensors, std::int64_t* iteration) {
  RideConfig c;
  c.group_order = static_cast<int>(read_meta(tensors, "meta.group_order"));
  c.block_widths.clear();
  for (double w : find_tensor(tensors, "meta.block_widths").to_vector())
    c.block_widths.push_back(static_cast<int>(std::lround(w)));
  c.convs_per_block = static_cast<int>(read_meta(tensors, "meta.convs_per_block"));
  c.descriptor_channels = static_cast<int>(read_meta(tensors, "meta.descriptor_channels"));
  c.kernel_size = static_cast<int>(read_meta(tensors, "meta.kernel_size"));
  c.steering = read_meta(tensors, "meta.steering") != 0 ? KernelSteering::harmonic : KernelSteering::bilinear;
  if (iteration != nullptr) *iteration = read_meta(tensors, "meta.iteration");
  Rng rng(0);
  RideModel model(c, rng, DType::f32);
  model.load_state(tensors);
  return model;
}

void RideModel::save(const std::filesystem::path& path, std::int64_t iteration) const {
  save_tensors(path, checkpoint(iteration));
}

RideModel RideModel::load(const std::filesystem::path& path, std::int64_t* iteration) {
  return from_checkpoint(load_tensors(path), iteration);
}

std::vector<int> estimate_orientation(const Tensor& orientation) {
  if (orientation.rank() != 4) throw ShapeError("orientation histogram must be [B, G, H, W]");
  const auto b = orientation.dim(0), g = orientation.dim(1), hw = orientation.dim(2) * orientation.dim(3);
  std::vector<int> out(static_cast<std::size_t>(b * hw));
  dispatch(orientation.dtype(), [&]<typename T>() {
    auto v = orientation.data<T>();
    for (std::int64_t n = 0; n < b; ++n) {
      for (std::int64_t p = 0; p < hw; ++p) {
        int best = 0;
        T best_v = v[static_cast<std::size_t>(n * g * hw + p)];
        for (std::int64_t k = 1; k < g; ++k) {
          const T x = v[static_cast<std::size_t>((n * g + k) * hw + p)];
          if (x > best_v) {
            best_v = x;
            best = static_cast<int>(k);
          }
        }
        out[static_cast<std::size_t>(n * hw + p)] = best;
      }
    }
  });
  return out;
}

Tensor invariant_descriptors(const GroupFeatureMap& descriptor, std::span<const int> orientations) {
  std::vector<int> offsets(orientations.begin(), orientations.end());
  for (auto& o : offsets) o = -o;
  GroupFeatureMap aligned = cyclic_shift(descriptor, offsets);
  const auto b = descriptor.batch(), c = descriptor.channels(), g = static_cast<std::int64_t>(descriptor.group.order());
  Tensor flat = reshape(aligned.values, {b, c * g, descriptor.height(), descriptor.width()});
  return l2_normalize(flat, 1);
}

std::vector<ScoredPixel> top_k_keypoints(const Tensor& scores, std::int64_t k) {
  if (k < 1) throw ContractError("top-k requires k >= 1");
  if (scores.rank() != 2 && !(scores.rank() == 3 && scores.dim(0) == 1))
    throw ShapeError("top-k expects a single [H, W] score map");
  const auto w = scores.dim(scores.rank() - 1);
  const std::vector<double> v = scores.to_vector();
  std::vector<std::int64_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  const auto take = std::min<std::int64_t>(k, static_cast<std::int64_t>(v.size()));
  auto better = [&](std::int64_t a, std::int64_t b) {
    const double va = v[static_cast<std::size_t>(a)], vb = v[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + take, order.end(), better);
  std::vector<ScoredPixel> out;
  out.reserve(static_cast<std::size_t>(take));
  for (std::int64_t i = 0; i < take; ++i) {
    const auto idx = order[static_cast<std::size_t>(i)];
    out.push_back({idx / w, idx % w, v[static_cast<std::size_t>(idx)]});
  }
  return out;
}

}  // namespace ride
