#pragma once

#include "facepatch/types.hpp"
#include "facepatch/weights.hpp"

#include <vector>

namespace facepatch {

/// Channel-major feature map: data is channels x (height * width), each row
/// one row-major spatial plane.
template <class T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Plane<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Plane<T>::Zero(c, h * w)) {}
};

/// Image in [0, 1] -> network input per the bundle's normalization.
template <class T>
FeatureMap<T> to_network_input(const Image<T>& image, const NetworkInput& norm);

/// Adjoint of to_network_input.
template <class T>
Image<T> network_input_adjoint(const FeatureMap<T>& grad, const NetworkInput& norm);

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Tensor& kernel, const Tensor& bias);

  FeatureMap<T> forward(const FeatureMap<T>& in) const;
  /// Gradient with respect to the input, given the gradient of the output.
  FeatureMap<T> backward(const FeatureMap<T>& grad_out, int in_height, int in_width) const;

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 0;
  Plane<T> weight_;  // out x (in * k * k), column (c * k + ky) * k + kx
  Vector<T> bias_;
};

template <class T>
class PRelu {
 public:
  PRelu() = default;
  explicit PRelu(const Tensor& slope);

  void apply(Plane<T>& x) const;
  /// grad *= d prelu / dx evaluated at the pre-activation.
  void backward(const Plane<T>& pre, Plane<T>& grad) const;

 private:
  Vector<T> slope_;
};

struct PoolIndex {
  std::vector<int> argmax;  // per output element, flat index into the input plane
};

/// Max pooling with ceil-mode output size (windows clipped at the border).
template <class T>
FeatureMap<T> max_pool(const FeatureMap<T>& in, int kernel, int stride, PoolIndex* index = nullptr);

template <class T>
FeatureMap<T> max_pool_backward(const FeatureMap<T>& grad_out, const PoolIndex& index, int in_height, int in_width);

template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(const Tensor& weight, const Tensor& bias);

  Vector<T> forward(const Eigen::Ref<const Vector<T>>& x) const;

 private:
  Plane<T> weight_;  // out x in
  Vector<T> bias_;
};

template <class T>
struct PNetOutput {
  Plane<T> face_prob;     // H' x W', softmax face probability per 12x12 window
  FeatureMap<T> regression;  // 4 x H' x W'
};

/// Activations retained by PNet::forward for the backward pass.
template <class T>
struct PNetTape {
  FeatureMap<T> input, pre1, pooled, pre2, pre3, act3;
  PoolIndex pool;
  Plane<T> face_prob;
};

/// Proposal network: fully convolutional, one output cell per 12x12 window
/// at stride 2. Differentiable with respect to its input.
template <class T>
class PNet {
 public:
  PNet() = default;
  explicit PNet(const WeightBundle& weights);

  PNetOutput<T> forward(const FeatureMap<T>& input, PNetTape<T>* tape = nullptr) const;

  /// d(sum(grad_prob .* face_prob)) / d input.
  FeatureMap<T> backward(const PNetTape<T>& tape, const Plane<T>& grad_prob) const;

  /// Output spatial size for an input side length.
  static int output_size(int input_size);

 private:
  Conv2d<T> conv1_, conv2_, conv3_, conv4_1_, conv4_2_;
  PRelu<T> prelu1_, prelu2_, prelu3_;
};

template <class T>
struct RNetOutput {
  T face_prob{};
  std::array<T, 4> regression{};
};

template <class T>
struct ONetOutput {
  T face_prob{};
  std::array<T, 4> regression{};
  std::array<T, 10> landmarks{};  // x1..x5, y1..y5 relative to the box
};

/// Refinement network on 24x24 crops.
template <class T>
class RNet {
 public:
  RNet() = default;
  explicit RNet(const WeightBundle& weights);
  RNetOutput<T> forward(const FeatureMap<T>& input) const;

 private:
  Conv2d<T> conv1_, conv2_, conv3_;
  PRelu<T> prelu1_, prelu2_, prelu3_, prelu4_;
  Dense<T> dense4_, dense5_1_, dense5_2_;
};

/// Output network on 48x48 crops; adds five landmarks.
template <class T>
class ONet {
 public:
  ONet() = default;
  explicit ONet(const WeightBundle& weights);
  ONetOutput<T> forward(const FeatureMap<T>& input) const;

 private:
  Conv2d<T> conv1_, conv2_, conv3_, conv4_;
  PRelu<T> prelu1_, prelu2_, prelu3_, prelu4_, prelu5_;
  Dense<T> dense5_, dense6_1_, dense6_2_, dense6_3_;
};

}  // namespace facepatch
