#pragma once

#include "facepatch/detector.hpp"
#include "facepatch/image_io.hpp"
#include "facepatch/weights.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace test {

inline const std::filesystem::path kDataDir = FACEPATCH_TEST_DATA_DIR;
inline const std::filesystem::path kFixtureDir = FACEPATCH_TEST_FIXTURE_DIR;

inline const facepatch::WeightBundle& weights() {
  static const auto bundle = facepatch::load_weights(kDataDir / "mtcnn");
  return bundle;
}

inline const facepatch::Detector& detector() {
  static const facepatch::Detector d(weights());
  return d;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline const nlohmann::json& reference() {
  static const auto j = read_json(kFixtureDir / "reference_mtcnn.json");
  return j;
}

template <class T>
facepatch::Image<T> random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  facepatch::Image<T> img(h, w);
  for (auto& c : img.channels)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<T>(u(rng));
  return img;
}

template <class T>
facepatch::Plane<T> random_plane(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  facepatch::Plane<T> p(h, w);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<T>(u(rng));
  return p;
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("facepatch_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs the command-line tool with `args` appended (shell syntax).
inline CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + FACEPATCH_CLI + "' " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace test
