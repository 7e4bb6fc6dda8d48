#include "vesselcouple/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"
#include "vesselcouple/vtsr.hpp"

namespace vesselcouple {

namespace {

constexpr char kCheckpointMagic[4] = {'V', 'C', 'K', 'P'};

Conv make_conv(std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  // Kaiming-uniform over fan-in, zero bias.
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::vector<double> w(out * in * k * k);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return {Tensor::from_data({out, in, k, k}, std::move(w), true),
          Tensor::zeros({out}, true)};
}

Tensor conv_relu(const Tensor& x, const Conv& c) {
  return ops::relu(ops::conv2d(x, c.weight, c.bias, {1, 1}));
}

std::size_t level_channels(const NetConfig& cfg, std::size_t level) {
  return cfg.base_channels << level;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CheckpointError("checkpoint truncated");
  }
  return v;
}

}  // namespace

void NetConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("NetConfig: depth must be >= 2");
  if (depth > 8) throw std::invalid_argument("NetConfig: depth must be <= 8");
  if (base_channels < 1 || in_channels < 1) {
    throw std::invalid_argument("NetConfig: channel counts must be >= 1");
  }
  if (out_channels != 3) throw std::invalid_argument("NetConfig: out_channels must be 3");
}

UNet::UNet(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t in = config_.in_channels;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::size_t c = level_channels(config_, l);
    encoder_.push_back(make_conv(in, c, 3, rng));
    encoder_.push_back(make_conv(c, c, 3, rng));
    in = c;
  }
  for (std::size_t l = config_.depth - 1; l-- > 0;) {
    const std::size_t c = level_channels(config_, l);
    decoder_.push_back(make_conv(level_channels(config_, l + 1) + c, c, 3, rng));
    decoder_.push_back(make_conv(c, c, 3, rng));
  }
  head_ = make_conv(config_.base_channels, config_.out_channels, 1, rng);
}

UNet::Output UNet::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != config_.in_channels) {
    throw TensorError("UNet::forward: expected [1," + std::to_string(config_.in_channels) +
                      ",H,W], got " + shape_to_string(x.shape()));
  }
  const std::size_t div = config_.divisor();
  if (x.dim(2) % div || x.dim(3) % div) {
    throw TensorError("UNet::forward: spatial dims " + shape_to_string(x.shape()) +
                      " not divisible by " + std::to_string(div));
  }
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    h = conv_relu(conv_relu(h, encoder_[2 * l]), encoder_[2 * l + 1]);
    if (l + 1 < config_.depth) {
      skips.push_back(h);
      h = ops::maxpool2x(h);
    }
  }
  Output out;
  out.bottleneck = h;
  for (std::size_t i = 0; i + 1 < config_.depth; ++i) {
    const Tensor& skip = skips[skips.size() - 1 - i];
    h = ops::concat_channels(ops::upsample2x_nearest(h), skip);
    h = conv_relu(conv_relu(h, decoder_[2 * i]), decoder_[2 * i + 1]);
  }
  const Tensor probs = ops::sigmoid(ops::conv2d(h, head_.weight, head_.bias));
  out.pred = {ops::channel(probs, 0), ops::channel(probs, 1), ops::channel(probs, 2)};
  return out;
}

std::vector<Tensor> UNet::parameters() const {
  std::vector<Tensor> out;
  for (const auto* group : {&encoder_, &decoder_}) {
    for (const Conv& c : *group) {
      out.push_back(c.weight);
      out.push_back(c.bias);
    }
  }
  out.push_back(head_.weight);
  out.push_back(head_.bias);
  return out;
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

std::size_t UNet::expected_parameter_count(const NetConfig& cfg) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; };
  std::size_t n = 0;
  std::size_t in = cfg.in_channels;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t c = level_channels(cfg, l);
    n += conv(in, c, 3) + conv(c, c, 3);
    in = c;
  }
  for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
    const std::size_t c = level_channels(cfg, l);
    n += conv(level_channels(cfg, l + 1) + c, c, 3) + conv(c, c, 3);
  }
  return n + conv(cfg.base_channels, cfg.out_channels, 1);
}

UNet UNet::clone() const {
  UNet copy;
  copy.config_ = config_;
  auto dup = [](const Conv& c) { return Conv{c.weight.clone(true), c.bias.clone(true)}; };
  for (const Conv& c : encoder_) copy.encoder_.push_back(dup(c));
  for (const Conv& c : decoder_) copy.decoder_.push_back(dup(c));
  copy.head_ = dup(head_);
  return copy;
}

void UNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, config_.depth);
  put<std::uint64_t>(out, config_.base_channels);
  put<std::uint64_t>(out, config_.in_channels);
  put<std::uint64_t>(out, config_.out_channels);
  const auto params = parameters();
  put<std::uint64_t>(out, params.size());
  for (const Tensor& p : params) vtsr::write(out, p, vtsr::DType::kF64);
  if (!out) throw CheckpointError("write failed for " + path.string());
}

UNet UNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  NetConfig cfg;
  cfg.depth = get<std::uint64_t>(in);
  cfg.base_channels = get<std::uint64_t>(in);
  cfg.in_channels = get<std::uint64_t>(in);
  cfg.out_channels = get<std::uint64_t>(in);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  UNet net(cfg, 0);
  auto params = net.parameters();
  if (get<std::uint64_t>(in) != params.size()) {
    throw CheckpointError(path.string() + ": parameter tensor count mismatch");
  }
  for (Tensor& p : params) {
    Tensor stored;
    try {
      stored = vtsr::read(in);
    } catch (const TensorError& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
    if (stored.shape() != p.shape()) {
      throw CheckpointError(path.string() + ": parameter shape mismatch");
    }
    std::copy(stored.data().begin(), stored.data().end(), p.mutable_data().begin());
  }
  return net;
}

// ---------------------------------------------------------------------------

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("Adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("Adam: eps must be > 0");
}

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg) {
  if (param.size() != grad.size()) throw TensorError("adam_step: size mismatch");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size()) throw TensorError("adam_step: state size mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {
  cfg_.validate();
}

bool Adam::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const Tensor& p : params_) {
    grads.push_back(p.grad());
    for (double g : grads.back()) {
      if (!std::isfinite(g)) {
        if (checking_enabled()) throw TensorError("Adam: non-finite gradient");
        zero_grad();
        return false;
      }
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(params_[i].mutable_data(), grads[i], states_[i], cfg_);
  }
  zero_grad();
  ++steps_;
  return true;
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace vesselcouple
