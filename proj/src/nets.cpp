#include "facepatch/nets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace facepatch {
namespace {

template <class T>
Vector<T> to_vector(const Tensor& t) {
  Vector<T> v(static_cast<Eigen::Index>(t.values.size()));
  for (size_t i = 0; i < t.values.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<T>(t.values[i]);
  return v;
}

template <class T>
Plane<T> im2col(const FeatureMap<T>& in, int k) {
  const int oh = in.height - k + 1;
  const int ow = in.width - k + 1;
  Plane<T> col(in.channels * k * k, oh * ow);
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.row((c * k + ky) * k + kx).data();
        const T* src = in.data.row(c).data();
        for (int y = 0; y < oh; ++y) std::copy_n(src + (y + ky) * in.width + kx, ow, dst + y * ow);
      }
  return col;
}

template <class T>
FeatureMap<T> col2im(const Plane<T>& col, int channels, int k, int height, int width) {
  FeatureMap<T> out(channels, height, width);
  const int oh = height - k + 1;
  const int ow = width - k + 1;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.row((c * k + ky) * k + kx).data();
        T* dst = out.data.row(c).data();
        for (int y = 0; y < oh; ++y) {
          T* d = dst + (y + ky) * width + kx;
          const T* s = src + y * ow;
          for (int x = 0; x < ow; ++x) d[x] += s[x];
        }
      }
  return out;
}

int pooled_size(int size, int kernel, int stride) {
  int out = (size - kernel + stride - 1) / stride + 1;
  if ((out - 1) * stride >= size) --out;
  return std::max(out, 1);
}

template <class T>
T softmax_face(T background, T face) {
  return T(1) / (T(1) + std::exp(background - face));
}

}  // namespace

template <class T>
FeatureMap<T> to_network_input(const Image<T>& image, const NetworkInput& norm) {
  FeatureMap<T> fm(3, image.height(), image.width());
  const T gain = static_cast<T>(norm.range * norm.scale);
  const T offset = static_cast<T>(-norm.mean * norm.scale);
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<const Vector<T>> src(image.channels[c].data(), image.channels[c].size());
    fm.data.row(c) = (src.array() * gain + offset).matrix().transpose();
  }
  return fm;
}

template <class T>
Image<T> network_input_adjoint(const FeatureMap<T>& grad, const NetworkInput& norm) {
  Image<T> out(grad.height, grad.width);
  const T gain = static_cast<T>(norm.range * norm.scale);
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<Vector<T>> dst(out.channels[c].data(), out.channels[c].size());
    dst = grad.data.row(c).transpose() * gain;
  }
  return out;
}

template <class T>
Conv2d<T>::Conv2d(const Tensor& kernel, const Tensor& bias)
    : in_(kernel.shape[2]), out_(kernel.shape[3]), k_(kernel.shape[0]) {
  weight_.resize(out_, in_ * k_ * k_);
  // stored as kh, kw, in, out
  for (int ky = 0; ky < k_; ++ky)
    for (int kx = 0; kx < k_; ++kx)
      for (int c = 0; c < in_; ++c)
        for (int o = 0; o < out_; ++o)
          weight_(o, (c * k_ + ky) * k_ + kx) =
              static_cast<T>(kernel.values[((static_cast<size_t>(ky) * k_ + kx) * in_ + c) * out_ + o]);
  bias_ = to_vector<T>(bias);
}

template <class T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& in) const {
  FeatureMap<T> out;
  out.channels = out_;
  out.height = in.height - k_ + 1;
  out.width = in.width - k_ + 1;
  if (k_ == 1) {
    out.data.noalias() = weight_ * in.data;
  } else {
    out.data.noalias() = weight_ * im2col(in, k_);
  }
  out.data.colwise() += bias_;
  return out;
}

template <class T>
FeatureMap<T> Conv2d<T>::backward(const FeatureMap<T>& grad_out, int in_height, int in_width) const {
  Plane<T> col = weight_.transpose() * grad_out.data;
  if (k_ == 1) {
    FeatureMap<T> out(in_, in_height, in_width);
    out.data = std::move(col);
    return out;
  }
  return col2im(col, in_, k_, in_height, in_width);
}

template <class T>
PRelu<T>::PRelu(const Tensor& slope) : slope_(to_vector<T>(slope)) {}

template <class T>
void PRelu<T>::apply(Plane<T>& x) const {
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const T a = slope_[c];
    for (T& v : x.row(c)) v = v > T(0) ? v : a * v;
  }
}

template <class T>
void PRelu<T>::backward(const Plane<T>& pre, Plane<T>& grad) const {
  for (Eigen::Index c = 0; c < grad.rows(); ++c) {
    const T a = slope_[c];
    for (Eigen::Index i = 0; i < grad.cols(); ++i)
      if (!(pre(c, i) > T(0))) grad(c, i) *= a;
  }
}

template <class T>
FeatureMap<T> max_pool(const FeatureMap<T>& in, int kernel, int stride, PoolIndex* index) {
  const int oh = pooled_size(in.height, kernel, stride);
  const int ow = pooled_size(in.width, kernel, stride);
  FeatureMap<T> out(in.channels, oh, ow);
  if (index) index->argmax.assign(static_cast<size_t>(in.channels) * oh * ow, 0);
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.data.row(c).data();
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const int y0 = y * stride, x0 = x * stride;
        const int y1 = std::min(y0 + kernel, in.height), x1 = std::min(x0 + kernel, in.width);
        T best = -std::numeric_limits<T>::infinity();
        int arg = y0 * in.width + x0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) {
            const T v = src[yy * in.width + xx];
            if (v > best) {
              best = v;
              arg = yy * in.width + xx;
            }
          }
        out.data(c, y * ow + x) = best;
        if (index) index->argmax[(static_cast<size_t>(c) * oh + y) * ow + x] = arg;
      }
  }
  return out;
}

template <class T>
FeatureMap<T> max_pool_backward(const FeatureMap<T>& grad_out, const PoolIndex& index, int in_height, int in_width) {
  FeatureMap<T> out(grad_out.channels, in_height, in_width);
  const int n = grad_out.height * grad_out.width;
  for (int c = 0; c < grad_out.channels; ++c)
    for (int i = 0; i < n; ++i) out.data(c, index.argmax[static_cast<size_t>(c) * n + i]) += grad_out.data(c, i);
  return out;
}

template <class T>
Dense<T>::Dense(const Tensor& weight, const Tensor& bias) {
  const int in = weight.shape[0];
  const int out = weight.shape[1];
  weight_.resize(out, in);
  for (int i = 0; i < in; ++i)
    for (int o = 0; o < out; ++o) weight_(o, i) = static_cast<T>(weight.values[static_cast<size_t>(i) * out + o]);
  bias_ = to_vector<T>(bias);
}

template <class T>
Vector<T> Dense<T>::forward(const Eigen::Ref<const Vector<T>>& x) const {
  return weight_ * x + bias_;
}

// ---------------------------------------------------------------- P-Net

template <class T>
PNet<T>::PNet(const WeightBundle& w)
    : conv1_(w.at("pnet.conv1.weight"), w.at("pnet.conv1.bias")),
      conv2_(w.at("pnet.conv2.weight"), w.at("pnet.conv2.bias")),
      conv3_(w.at("pnet.conv3.weight"), w.at("pnet.conv3.bias")),
      conv4_1_(w.at("pnet.conv4_1.weight"), w.at("pnet.conv4_1.bias")),
      conv4_2_(w.at("pnet.conv4_2.weight"), w.at("pnet.conv4_2.bias")),
      prelu1_(w.at("pnet.prelu1.weight")),
      prelu2_(w.at("pnet.prelu2.weight")),
      prelu3_(w.at("pnet.prelu3.weight")) {}

template <class T>
int PNet<T>::output_size(int input_size) {
  if (input_size < 12) return 0;
  return pooled_size(input_size - 2, 2, 2) - 4;
}

template <class T>
PNetOutput<T> PNet<T>::forward(const FeatureMap<T>& input, PNetTape<T>* tape) const {
  if (input.height < 12 || input.width < 12)
    throw std::invalid_argument("pnet: input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                                " is smaller than the 12x12 receptive field");
  FeatureMap<T> x = conv1_.forward(input);
  if (tape) {
    tape->input = input;
    tape->pre1 = x;
  }
  prelu1_.apply(x.data);
  x = max_pool(x, 2, 2, tape ? &tape->pool : nullptr);
  if (tape) tape->pooled = x;
  x = conv2_.forward(x);
  if (tape) tape->pre2 = x;
  prelu2_.apply(x.data);
  x = conv3_.forward(x);
  if (tape) tape->pre3 = x;
  prelu3_.apply(x.data);
  if (tape) tape->act3 = x;

  const FeatureMap<T> logits = conv4_1_.forward(x);
  PNetOutput<T> out;
  out.face_prob.resize(x.height, x.width);
  for (int i = 0; i < x.height * x.width; ++i)
    out.face_prob(i / x.width, i % x.width) = softmax_face(logits.data(0, i), logits.data(1, i));
  out.regression = conv4_2_.forward(x);
  if (tape) tape->face_prob = out.face_prob;
  return out;
}

template <class T>
FeatureMap<T> PNet<T>::backward(const PNetTape<T>& tape, const Plane<T>& grad_prob) const {
  const int h = tape.act3.height, w = tape.act3.width;
  FeatureMap<T> g_logits(2, h, w);
  for (int i = 0; i < h * w; ++i) {
    const T p = tape.face_prob(i / w, i % w);
    const T d = grad_prob(i / w, i % w) * p * (T(1) - p);
    g_logits.data(0, i) = -d;
    g_logits.data(1, i) = d;
  }
  FeatureMap<T> g = conv4_1_.backward(g_logits, h, w);
  prelu3_.backward(tape.pre3.data, g.data);
  g = conv3_.backward(g, tape.pre2.height, tape.pre2.width);
  prelu2_.backward(tape.pre2.data, g.data);
  g = conv2_.backward(g, tape.pooled.height, tape.pooled.width);
  g = max_pool_backward(g, tape.pool, tape.pre1.height, tape.pre1.width);
  prelu1_.backward(tape.pre1.data, g.data);
  return conv1_.backward(g, tape.input.height, tape.input.width);
}

// ---------------------------------------------------------------- R-Net

template <class T>
RNet<T>::RNet(const WeightBundle& w)
    : conv1_(w.at("rnet.conv1.weight"), w.at("rnet.conv1.bias")),
      conv2_(w.at("rnet.conv2.weight"), w.at("rnet.conv2.bias")),
      conv3_(w.at("rnet.conv3.weight"), w.at("rnet.conv3.bias")),
      prelu1_(w.at("rnet.prelu1.weight")),
      prelu2_(w.at("rnet.prelu2.weight")),
      prelu3_(w.at("rnet.prelu3.weight")),
      prelu4_(w.at("rnet.prelu4.weight")),
      dense4_(w.at("rnet.dense4.weight"), w.at("rnet.dense4.bias")),
      dense5_1_(w.at("rnet.dense5_1.weight"), w.at("rnet.dense5_1.bias")),
      dense5_2_(w.at("rnet.dense5_2.weight"), w.at("rnet.dense5_2.bias")) {}

template <class T>
RNetOutput<T> RNet<T>::forward(const FeatureMap<T>& input) const {
  if (input.height != 24 || input.width != 24) throw std::invalid_argument("rnet: input must be 24x24");
  FeatureMap<T> x = conv1_.forward(input);
  prelu1_.apply(x.data);
  x = max_pool(x, 3, 2);
  x = conv2_.forward(x);
  prelu2_.apply(x.data);
  x = max_pool(x, 3, 2);
  x = conv3_.forward(x);
  prelu3_.apply(x.data);
  // channel-major flatten matches the stored dense layout
  Eigen::Map<const Vector<T>> flat(x.data.data(), x.data.size());
  Plane<T> hidden = dense4_.forward(flat);
  prelu4_.apply(hidden);  // 128 x 1 column: one slope per row
  const Vector<T> logits = dense5_1_.forward(hidden.col(0));
  const Vector<T> reg = dense5_2_.forward(hidden.col(0));
  RNetOutput<T> out;
  out.face_prob = softmax_face(logits[0], logits[1]);
  for (int i = 0; i < 4; ++i) out.regression[i] = reg[i];
  return out;
}

// ---------------------------------------------------------------- O-Net

template <class T>
ONet<T>::ONet(const WeightBundle& w)
    : conv1_(w.at("onet.conv1.weight"), w.at("onet.conv1.bias")),
      conv2_(w.at("onet.conv2.weight"), w.at("onet.conv2.bias")),
      conv3_(w.at("onet.conv3.weight"), w.at("onet.conv3.bias")),
      conv4_(w.at("onet.conv4.weight"), w.at("onet.conv4.bias")),
      prelu1_(w.at("onet.prelu1.weight")),
      prelu2_(w.at("onet.prelu2.weight")),
      prelu3_(w.at("onet.prelu3.weight")),
      prelu4_(w.at("onet.prelu4.weight")),
      prelu5_(w.at("onet.prelu5.weight")),
      dense5_(w.at("onet.dense5.weight"), w.at("onet.dense5.bias")),
      dense6_1_(w.at("onet.dense6_1.weight"), w.at("onet.dense6_1.bias")),
      dense6_2_(w.at("onet.dense6_2.weight"), w.at("onet.dense6_2.bias")),
      dense6_3_(w.at("onet.dense6_3.weight"), w.at("onet.dense6_3.bias")) {}

template <class T>
ONetOutput<T> ONet<T>::forward(const FeatureMap<T>& input) const {
  if (input.height != 48 || input.width != 48) throw std::invalid_argument("onet: input must be 48x48");
  FeatureMap<T> x = conv1_.forward(input);
  prelu1_.apply(x.data);
  x = max_pool(x, 3, 2);
  x = conv2_.forward(x);
  prelu2_.apply(x.data);
  x = max_pool(x, 3, 2);
  x = conv3_.forward(x);
  prelu3_.apply(x.data);
  x = max_pool(x, 2, 2);
  x = conv4_.forward(x);
  prelu4_.apply(x.data);
  Eigen::Map<const Vector<T>> flat(x.data.data(), x.data.size());
  Plane<T> hidden = dense5_.forward(flat);
  prelu5_.apply(hidden);
  const Vector<T> logits = dense6_1_.forward(hidden.col(0));
  const Vector<T> reg = dense6_2_.forward(hidden.col(0));
  const Vector<T> marks = dense6_3_.forward(hidden.col(0));
  ONetOutput<T> out;
  out.face_prob = softmax_face(logits[0], logits[1]);
  for (int i = 0; i < 4; ++i) out.regression[i] = reg[i];
  for (int i = 0; i < 10; ++i) out.landmarks[i] = marks[i];
  return out;
}

#define FACEPATCH_INSTANTIATE(T)                                                                        \
  template FeatureMap<T> to_network_input<T>(const Image<T>&, const NetworkInput&);                     \
  template Image<T> network_input_adjoint<T>(const FeatureMap<T>&, const NetworkInput&);                \
  template class Conv2d<T>;                                                                             \
  template class PRelu<T>;                                                                              \
  template class Dense<T>;                                                                              \
  template FeatureMap<T> max_pool<T>(const FeatureMap<T>&, int, int, PoolIndex*);                       \
  template FeatureMap<T> max_pool_backward<T>(const FeatureMap<T>&, const PoolIndex&, int, int);        \
  template class PNet<T>;                                                                               \
  template class RNet<T>;                                                                               \
  template class ONet<T>;

FACEPATCH_INSTANTIATE(float)
FACEPATCH_INSTANTIATE(double)

#undef FACEPATCH_INSTANTIATE

}  // namespace facepatch
