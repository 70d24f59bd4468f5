#include "facepatch/trainer.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace facepatch {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoints are written in native little-endian order");

struct Writer {
  nlohmann::json arrays = nlohmann::json::array();
  std::string blob;

  template <class S>
  void add(const std::string& name, const S* data, std::vector<long> shape) {
    long count = 1;
    for (long d : shape) count *= d;
    arrays.push_back({{"name", name},
                      {"dtype", sizeof(S) == 4 ? "f32" : "f64"},
                      {"shape", shape},
                      {"offset", blob.size()}});
    blob.append(reinterpret_cast<const char*>(data), static_cast<size_t>(count) * sizeof(S));
  }

  void add_planes(const std::string& prefix, const std::vector<Plane<float>>& planes) {
    for (size_t i = 0; i < planes.size(); ++i)
      add(prefix + "/" + std::to_string(i), planes[i].data(), {planes[i].rows(), planes[i].cols()});
  }
};

std::vector<Plane<float>> pixels_of(const PatchSet<float>& set) {
  std::vector<Plane<float>> out;
  for (const auto& p : set) out.push_back(p.pixels);
  return out;
}

struct Reader {
  const nlohmann::json& header;
  const std::string& blob;

  const nlohmann::json& find(const std::string& name) const {
    for (const auto& a : header.at("arrays"))
      if (a.at("name") == name) return a;
    throw CheckpointError("checkpoint: missing array " + name);
  }

  template <class S>
  std::vector<S> values(const std::string& name, std::vector<long>& shape) const {
    const auto& a = find(name);
    if (a.at("dtype") != (sizeof(S) == 4 ? "f32" : "f64")) throw CheckpointError("checkpoint: wrong dtype for " + name);
    shape = a.at("shape").get<std::vector<long>>();
    size_t count = 1;
    for (long d : shape) {
      if (d < 0) throw CheckpointError("checkpoint: negative extent in " + name);
      count *= static_cast<size_t>(d);
    }
    const auto offset = a.at("offset").get<size_t>();
    if (offset > blob.size() || count * sizeof(S) > blob.size() - offset)
      throw CheckpointError("checkpoint: array " + name + " runs past the end of the file");
    std::vector<S> out(count);
    std::memcpy(out.data(), blob.data() + offset, count * sizeof(S));
    return out;
  }

  Plane<float> plane(const std::string& name) const {
    std::vector<long> shape;
    auto v = values<float>(name, shape);
    if (shape.size() != 2) throw CheckpointError("checkpoint: " + name + " is not two-dimensional");
    return Eigen::Map<Plane<float>>(v.data(), shape[0], shape[1]);
  }
};

}  // namespace

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
  Writer w;
  std::vector<std::string> names;
  for (const auto& p : state.patches) names.push_back(p.name);
  w.add_planes("patches", pixels_of(state.patches));
  w.add_planes("reference", pixels_of(state.reference));
  w.add_planes("best", pixels_of(state.best));
  w.add_planes("momentum", state.momentum);
  std::vector<double> history;
  for (const auto& b : state.history) history.insert(history.end(), {b.clf[0], b.clf[1], b.clf[2], b.tv, b.blk, b.total});
  w.add("history", history.data(), {static_cast<long>(state.history.size()), 6});
  w.add("best_loss", &state.best_loss, {1});

  std::ostringstream rng;
  rng << state.rng;
  const nlohmann::json header = {
      {"patches", names}, {"epoch", state.epoch}, {"rng", rng.str()}, {"arrays", w.arrays}};
  const std::string text = header.dump();
  const std::uint64_t header_size = text.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&header_size), sizeof header_size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(w.blob.data(), static_cast<std::streamsize>(w.blob.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  constexpr size_t prefix = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)" + where);
  std::uint32_t version = 0;
  std::uint64_t header_size = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&header_size, bytes.data() + 8, sizeof header_size);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + where);
  if (header_size > bytes.size() - prefix) throw CheckpointError("truncated checkpoint header" + where);

  TrainingState state;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(prefix, header_size));
    const std::string blob = bytes.substr(prefix + header_size);
    const Reader r{header, blob};
    const auto names = header.at("patches").get<std::vector<std::string>>();
    for (size_t i = 0; i < names.size(); ++i) {
      const std::string idx = "/" + std::to_string(i);
      state.patches.push_back({names[i], r.plane("patches" + idx)});
      state.reference.push_back({names[i], r.plane("reference" + idx)});
      state.best.push_back({names[i], r.plane("best" + idx)});
      state.momentum.push_back(r.plane("momentum" + idx));
    }
    std::vector<long> shape;
    const auto history = r.values<double>("history", shape);
    if (shape.size() != 2 || shape[1] != 6) throw CheckpointError("checkpoint: history must be n x 6");
    for (long e = 0; e < shape[0]; ++e) {
      const double* h = history.data() + e * 6;
      LossBreakdown b;
      b.clf = {h[0], h[1], h[2]};
      b.tv = h[3];
      b.blk = h[4];
      b.total = h[5];
      state.history.push_back(b);
    }
    state.best_loss = r.values<double>("best_loss", shape).at(0);
    state.epoch = header.at("epoch").get<int>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) throw CheckpointError("checkpoint: unreadable rng state");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what() + where);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.what() + where);
  }
  for (const auto& p : state.patches)
    if ((p.pixels.array() < 0.0f).any() || (p.pixels.array() > 1.0f).any() || !p.pixels.allFinite())
      throw CheckpointError("checkpoint: patch '" + p.name + "' has pixels outside [0, 1]" + where);
  return state;
}

}  // namespace facepatch
