#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "canids/adam.hpp"
#include "canids/can_frame.hpp"

namespace canids {

enum class Activation : std::uint8_t { ReLU, Identity };

/// y = act(W x + b), W stored row-major as out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  Activation activation = Activation::Identity;
};

class DenseNet;

/// Activation record of one forward pass; consumed by backward.
struct Tape {
  const DenseNet* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<std::vector<double>> inputs;  // input of each layer
  std::vector<std::vector<double>> pre;     // pre-activation of each layer
  std::vector<double> output;
};

/// Parameter gradients shaped like a DenseNet.
struct DenseGrad {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  DenseGrad() = default;
  explicit DenseGrad(const DenseNet& net);
  void zero();
  void scale(double factor);
  void collect(const std::string& prefix, std::vector<GradRef>& out) const;
};

/// Fully-connected feed-forward stack with a hand-written reverse pass.
class DenseNet {
 public:
  DenseNet() = default;
  /// Throws Error unless adjacent layer dimensions chain.
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// `hidden.size()` ReLU layers of the given widths, then an Identity head.
  /// Weights ~ U(+-sqrt(6 / (fan_in + fan_out))), biases zero.
  static DenseNet glorot(std::size_t input_dim, std::span<const std::size_t> hidden,
                         std::size_t output_dim, std::mt19937_64& rng);

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding tapes.
  DenseLayer& layer(std::size_t i);

  /// Runs the network, recording activations into `tape` (buffers reused).
  /// Throws on a dimension mismatch, non-finite input, or non-finite output.
  std::span<const double> forward(std::span<const double> input, Tape& tape) const;

  /// Accumulates d(loss)/d(params) into `grad` and returns d(loss)/d(input).
  std::vector<double> backward(const Tape& tape, std::span<const double> out_grad, DenseGrad& grad) const;

  /// Named views "<prefix>.<i>.weight" / "<prefix>.<i>.bias"; invalidates tapes.
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  friend bool operator==(const DenseNet& a, const DenseNet& b);

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = 0;
};

bool operator==(const DenseLayer& a, const DenseLayer& b);

struct ForwardResult {
  std::vector<double> output;
  Tape tape;
};

struct BackwardResult {
  DenseGrad params;
  std::vector<double> input;
};

ForwardResult forward(const DenseNet& net, std::span<const double> input);
BackwardResult backward(const DenseNet& net, const Tape& tape, std::span<const double> out_grad);

}  // namespace canids
