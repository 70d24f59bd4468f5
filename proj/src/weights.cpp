#include "facepatch/weights.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>

namespace facepatch {

static_assert(std::endian::native == std::endian::little, "weight blobs are read as native little-endian floats");

size_t Tensor::size() const {
  return std::accumulate(shape.begin(), shape.end(), size_t{1},
                         [](size_t a, int b) { return a * static_cast<size_t>(b); });
}

const Tensor& WeightBundle::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw WeightError("missing layer " + name);
  return it->second;
}

const std::vector<LayerSpec>& required_layers() {
  static const std::vector<LayerSpec> specs = [] {
    std::vector<LayerSpec> s;
    auto conv = [&s](const std::string& net, const std::string& layer, int k, int in, int out, bool prelu) {
      s.push_back({net + "." + layer + ".weight", {k, k, in, out}, "kh,kw,in,out"});
      s.push_back({net + "." + layer + ".bias", {out}, "n"});
      if (prelu) s.push_back({net + ".prelu" + layer.substr(4) + ".weight", {out}, "n"});
    };
    auto dense = [&s](const std::string& net, const std::string& layer, int in, int out) {
      s.push_back({net + "." + layer + ".weight", {in, out}, "in,out"});
      s.push_back({net + "." + layer + ".bias", {out}, "n"});
    };
    auto prelu = [&s](const std::string& net, const std::string& name, int n) {
      s.push_back({net + "." + name + ".weight", {n}, "n"});
    };

    conv("pnet", "conv1", 3, 3, 10, true);
    conv("pnet", "conv2", 3, 10, 16, true);
    conv("pnet", "conv3", 3, 16, 32, true);
    conv("pnet", "conv4_1", 1, 32, 2, false);
    conv("pnet", "conv4_2", 1, 32, 4, false);

    conv("rnet", "conv1", 3, 3, 28, true);
    conv("rnet", "conv2", 3, 28, 48, true);
    conv("rnet", "conv3", 2, 48, 64, true);
    dense("rnet", "dense4", 576, 128);
    prelu("rnet", "prelu4", 128);
    dense("rnet", "dense5_1", 128, 2);
    dense("rnet", "dense5_2", 128, 4);

    conv("onet", "conv1", 3, 3, 32, true);
    conv("onet", "conv2", 3, 32, 64, true);
    conv("onet", "conv3", 3, 64, 64, true);
    conv("onet", "conv4", 2, 64, 128, true);
    dense("onet", "dense5", 1152, 256);
    prelu("onet", "prelu5", 256);
    dense("onet", "dense6_1", 256, 2);
    dense("onet", "dense6_2", 256, 4);
    dense("onet", "dense6_3", 256, 10);
    return s;
  }();
  return specs;
}

namespace {

std::string shape_str(const std::vector<int>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

std::vector<float> read_blob(const std::filesystem::path& path, size_t count, const std::string& layer) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw WeightError(layer + ": cannot open " + path.string());
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != count * sizeof(float))
    throw WeightError(layer + ": expected " + std::to_string(count * sizeof(float)) + " bytes, file has " +
                      std::to_string(bytes));
  std::vector<float> values(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

}  // namespace

WeightBundle load_weights(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw WeightError("weights: cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw WeightError("weights: malformed manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "facepatch-weights" || manifest.value("version", 0) != 1)
    throw WeightError("weights: unsupported manifest format or version");

  WeightBundle bundle;
  if (manifest.contains("input_normalization")) {
    const auto& n = manifest["input_normalization"];
    bundle.input = {n.at("range").get<double>(), n.at("mean").get<double>(), n.at("scale").get<double>()};
  }
  const auto& layers = manifest.at("layers");
  for (const auto& spec : required_layers()) {
    if (!layers.contains(spec.name)) {
      const auto net = spec.name.substr(0, spec.name.find('.'));
      throw WeightError(net + ": missing layer " + spec.name);
    }
    const auto& entry = layers[spec.name];
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<int>>();
    t.order = entry.at("order").get<std::string>();
    if (t.shape != spec.shape)
      throw WeightError(spec.name + ": shape " + shape_str(t.shape) + " does not match expected " +
                        shape_str(spec.shape));
    if (t.order != spec.order)
      throw WeightError(spec.name + ": element order '" + t.order + "', expected '" + spec.order + "'");
    t.values = read_blob(dir / entry.at("file").get<std::string>(), t.size(), spec.name);
    for (float v : t.values)
      if (!std::isfinite(v)) throw WeightError(spec.name + ": non-finite value");
    bundle.tensors.emplace(spec.name, std::move(t));
  }
  return bundle;
}

void save_weights(const WeightBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [name, t] : bundle.tensors) {
    std::string file = name;
    std::replace(file.begin(), file.end(), '.', '_');
    file += ".bin";
    std::ofstream out(dir / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!out) throw WeightError(name + ": cannot write " + (dir / file).string());
    layers[name] = {{"shape", t.shape}, {"order", t.order}, {"file", file}};
  }
  nlohmann::json manifest = {
      {"format", "facepatch-weights"},
      {"version", 1},
      {"input_normalization", {{"range", bundle.input.range}, {"mean", bundle.input.mean}, {"scale", bundle.input.scale}}},
      {"layers", layers},
  };
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw WeightError("weights: cannot write manifest in " + dir.string());
}

std::filesystem::path default_weights_dir() {
  if (const char* env = std::getenv("FACEPATCH_WEIGHTS"); env && *env) return env;
#ifdef FACEPATCH_DEFAULT_WEIGHTS
  return FACEPATCH_DEFAULT_WEIGHTS;
#else
  return "data/mtcnn";
#endif
}

}  // namespace facepatch
