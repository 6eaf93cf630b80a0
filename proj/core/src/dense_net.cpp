#include "canids/dense_net.hpp"

#include <atomic>
#include <cmath>

namespace canids {

namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

DenseGrad::DenseGrad(const DenseNet& net) {
  for (const auto& layer : net.layers()) {
    weight.emplace_back(layer.weight.size(), 0.0);
    bias.emplace_back(layer.bias.size(), 0.0);
  }
}

void DenseGrad::zero() {
  for (auto& w : weight) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void DenseGrad::scale(double factor) {
  for (auto& w : weight)
    for (double& v : w) v *= factor;
  for (auto& b : bias)
    for (double& v : b) v *= factor;
}

void DenseGrad::collect(const std::string& prefix, std::vector<GradRef>& out) const {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", weight[i]});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", bias[i]});
  }
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)), generation_(next_generation()) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.in == 0 || l.out == 0) throw Error("dense layer " + std::to_string(i) + " has a zero dimension");
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out)
      throw Error("dense layer " + std::to_string(i) + " parameter sizes do not match its shape");
    if (i > 0 && layers_[i - 1].out != l.in)
      throw Error("dense layer " + std::to_string(i) + " input does not chain with previous output");
    for (double w : l.weight)
      if (!std::isfinite(w)) throw Error("non-finite weight in dense layer " + std::to_string(i));
    for (double b : l.bias)
      if (!std::isfinite(b)) throw Error("non-finite bias in dense layer " + std::to_string(i));
  }
}

DenseNet DenseNet::glorot(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t output_dim, std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out, Activation act) {
    DenseLayer l{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0), act};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : l.weight) w = dist(rng);
    layers.push_back(std::move(l));
    in = out;
  };
  for (std::size_t width : hidden) add(width, Activation::ReLU);
  add(output_dim, Activation::Identity);
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

DenseLayer& DenseNet::layer(std::size_t i) {
  generation_ = next_generation();
  return layers_.at(i);
}

std::span<const double> DenseNet::forward(std::span<const double> input, Tape& tape) const {
  if (layers_.empty()) throw Error("forward on an empty network");
  if (input.size() != input_dim())
    throw Error("forward: input has " + std::to_string(input.size()) + " values, network expects " +
                std::to_string(input_dim()));
  for (double v : input)
    if (!std::isfinite(v)) throw Error("forward: non-finite input");

  const std::size_t n_layers = layers_.size();
  tape.net = this;
  tape.generation = generation_;
  tape.inputs.resize(n_layers);
  tape.pre.resize(n_layers);

  tape.inputs[0].assign(input.begin(), input.end());
  for (std::size_t k = 0; k < n_layers; ++k) {
    const auto& l = layers_[k];
    const double* x = tape.inputs[k].data();
    auto& z = tape.pre[k];
    z.resize(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* row = l.weight.data() + o * l.in;
      double acc = l.bias[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
      z[o] = acc;
    }
    auto& next = (k + 1 < n_layers) ? tape.inputs[k + 1] : tape.output;
    next.resize(l.out);
    if (l.activation == Activation::ReLU) {
      for (std::size_t o = 0; o < l.out; ++o) next[o] = z[o] > 0.0 ? z[o] : 0.0;
    } else {
      std::copy(z.begin(), z.end(), next.begin());
    }
  }
  for (double v : tape.output)
    if (!std::isfinite(v)) throw Error("numeric overflow");
  return tape.output;
}

std::vector<double> DenseNet::backward(const Tape& tape, std::span<const double> out_grad,
                                       DenseGrad& grad) const {
  if (tape.net != this || tape.generation != generation_ || tape.pre.size() != layers_.size())
    throw Error("backward: tape does not belong to this network state");
  if (out_grad.size() != output_dim()) throw Error("backward: output gradient has the wrong size");
  if (grad.weight.size() != layers_.size()) throw Error("backward: gradient buffer has the wrong shape");

  std::vector<double> delta(out_grad.begin(), out_grad.end());
  std::vector<double> prev;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    const auto& z = tape.pre[k];
    if (l.activation == Activation::ReLU) {
      for (std::size_t o = 0; o < l.out; ++o)
        if (!(z[o] > 0.0)) delta[o] = 0.0;
    }
    const double* x = tape.inputs[k].data();
    double* gw = grad.weight[k].data();
    double* gb = grad.bias[k].data();
    prev.assign(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + o * l.in;
      const double* wrow = l.weight.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) {
        grow[i] += d * x[i];
        prev[i] += wrow[i] * d;
      }
    }
    delta.swap(prev);
  }
  return delta;
}

void DenseNet::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  generation_ = next_generation();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", layers_[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", layers_[i].bias});
  }
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.in == b.in && a.out == b.out && a.activation == b.activation && a.weight == b.weight &&
         a.bias == b.bias;
}

bool operator==(const DenseNet& a, const DenseNet& b) { return a.layers_ == b.layers_; }

ForwardResult forward(const DenseNet& net, std::span<const double> input) {
  ForwardResult r;
  auto out = net.forward(input, r.tape);
  r.output.assign(out.begin(), out.end());
  return r;
}

BackwardResult backward(const DenseNet& net, const Tape& tape, std::span<const double> out_grad) {
  BackwardResult r{DenseGrad(net), {}};
  r.input = net.backward(tape, out_grad, r.params);
  return r;
}

}  // namespace canids
