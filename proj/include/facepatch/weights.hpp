#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace facepatch {

struct WeightError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<int> shape;
  std::string order;  // "kh,kw,in,out" for conv kernels, "in,out" for dense, "n" for vectors
  std::vector<float> values;

  size_t size() const;
};

/// Maps an image intensity v in [0, 1] to a network input:
/// (v * range - mean) * scale.
struct NetworkInput {
  double range = 255.0;
  double mean = 127.5;
  double scale = 0.0078125;
};

/// Parameters of P-Net, R-Net and O-Net, keyed "<net>.<layer>.<kind>",
/// e.g. "pnet.conv1.weight".
struct WeightBundle {
  std::map<std::string, Tensor> tensors;
  NetworkInput input;

  const Tensor& at(const std::string& name) const;
};

struct LayerSpec {
  std::string name;
  std::vector<int> shape;
  std::string order;
};

/// Every tensor the three architectures require, with expected shapes.
const std::vector<LayerSpec>& required_layers();

/// Loads a weight directory (manifest.json + little-endian float32 blobs) and
/// validates it against required_layers(). Errors name the offending layer.
WeightBundle load_weights(const std::filesystem::path& dir);

void save_weights(const WeightBundle& bundle, const std::filesystem::path& dir);

/// Directory configured at build time, overridable with FACEPATCH_WEIGHTS.
std::filesystem::path default_weights_dir();

}  // namespace facepatch
