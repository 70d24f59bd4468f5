#pragma once

#include "facepatch/detector.hpp"
#include "facepatch/eot.hpp"
#include "facepatch/geometry.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace facepatch {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Split { train, eval };

struct FrameEntry {
  std::filesystem::path image_path;  // resolved against the manifest directory
  Split split = Split::train;
  BoundingBox face_region;
  PlacementMap placement;
  Image<float> image;
};

/// Frames plus the patches their placements refer to (name and size only;
/// pixels start at mid-gray).
struct DatasetManifest {
  PatchSet<float> patches;
  std::vector<FrameEntry> frames;
};

/// Parses and validates a manifest, reading every image. Errors name the
/// offending frame: missing file, malformed or out-of-image quad, face
/// region outside the image, unknown patch, train frame without placements.
DatasetManifest load_dataset(const std::filesystem::path& manifest_path);

/// Frames of one split (all frames when `split` is empty) as training samples.
/// Throws DatasetError when nothing is left.
std::vector<TrainingSample> select_frames(const DatasetManifest& dataset, std::optional<Split> split);

/// A frame is misdetected when no detection reaches IoU 0.5 with the face.
bool is_misdetected(const std::vector<Detection>& detections, const BoundingBox& face);

struct EvalRecord {
  double factor = 0.0;
  int frames = 0;
  int misdetections = 0;
  double probability = 0.0;  // misdetections / frames
};

struct EvalReport {
  std::string label;
  std::vector<EvalRecord> records;
};

/// One record per factor, in the given order. Each frame is composited with
/// `patches` (when given) and run through the full cascade with the factor
/// substituted into `base`. Factors must lie in (0, 1).
EvalReport evaluate_misdetection(const Detector& detector, const std::vector<TrainingSample>& frames,
                                 const PatchSet<float>* patches, const PyramidConfig& base,
                                 const std::vector<double>& factors, const std::string& label);

struct RobustnessResult {
  int trials = 0;
  int misdetections = 0;
  double rate = 0.0;
};

/// Full-cascade misdetection rate over `trials` transforms drawn from `spec`
/// (seeded by spec.seed). Trial t uses frame t mod frames.size().
RobustnessResult evaluate_robustness(const Detector& detector, const std::vector<TrainingSample>& frames,
                                     const PatchSet<float>* patches, const TransformSpec& spec, int trials,
                                     const PyramidConfig& config);

/// Writes report.csv (setup, factor, frames, misdetections, probability) and
/// report.svg, a probability-vs-factor line chart with one series per report.
void emit_report(const std::vector<EvalReport>& reports, const std::filesystem::path& out_dir);

/// Inverse of the CSV written by emit_report.
std::vector<EvalReport> read_report_csv(const std::filesystem::path& path);

/// 8-bit grayscale PNG of the patch. With pixels_per_cm, a sidecar
/// "<path>.txt" records the physical print size.
void export_patch(const Patch& patch, const std::filesystem::path& path, std::optional<double> pixels_per_cm = {});

}  // namespace facepatch
