#include "facepatch/harness.hpp"

#include "facepatch/image_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace facepatch {

using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

BoundingBox parse_box(const json& j, const std::string& what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw DatasetError(what + ": expected [x1, y1, x2, y2]");
  BoundingBox b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw DatasetError(what + ": box has non-positive extent");
  return b;
}

PlacementEntry parse_placement(const json& j, const std::string& where) {
  PlacementEntry e;
  e.patch = j.at("patch").get<std::string>();
  const auto src = j.at("src").get<std::vector<double>>();
  if (src.size() != 4) throw DatasetError(where + ": src must be [x0, y0, x1, y1]");
  std::copy(src.begin(), src.end(), e.src.begin());
  const auto dst = j.at("dst").get<std::vector<std::vector<double>>>();
  if (dst.size() != 4) throw DatasetError(where + ": dst must hold four corners");
  for (size_t k = 0; k < 4; ++k) {
    if (dst[k].size() != 2) throw DatasetError(where + ": dst corner must be [x, y]");
    e.dst.corners[k] = {dst[k][0], dst[k][1]};
  }
  return e;
}

void validate_frame(const FrameEntry& f, const DatasetManifest& d, const std::string& where) {
  const double w = f.image.width(), h = f.image.height();
  const auto& b = f.face_region;
  if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h) throw DatasetError(where + ": face_region outside the image");
  if (f.split == Split::train && f.placement.entries.empty())
    throw DatasetError(where + ": train frames need at least one placement");
  for (size_t k = 0; k < f.placement.entries.size(); ++k) {
    const auto& e = f.placement.entries[k];
    const std::string at = where + ", placement " + std::to_string(k);
    auto it = std::find_if(d.patches.begin(), d.patches.end(), [&](const Patch& p) { return p.name == e.patch; });
    if (it == d.patches.end()) throw DatasetError(at + ": unknown patch '" + e.patch + "'");
    if (!(e.src[0] >= 0.0 && e.src[1] >= 0.0 && e.src[2] <= it->width() && e.src[3] <= it->height() &&
          e.src[0] < e.src[2] && e.src[1] < e.src[3]))
      throw DatasetError(at + ": src rectangle outside patch '" + e.patch + "'");
    if (!e.dst.is_simple()) throw DatasetError(at + ": dst quad is degenerate or self-intersecting");
    for (const auto& c : e.dst.corners)
      if (!(c.x >= 0.0 && c.y >= 0.0 && c.x <= w && c.y <= h)) throw DatasetError(at + ": dst corner outside the image");
  }
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

void write_svg(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  double fmin = 1.0, fmax = 0.0;
  for (const auto& r : reports)
    for (const auto& rec : r.records) {
      fmin = std::min(fmin, rec.factor);
      fmax = std::max(fmax, rec.factor);
    }
  if (fmax - fmin < 1e-9) {
    fmin -= 0.05;
    fmax += 0.05;
  }
  constexpr double W = 640, H = 420, left = 70, right = 190, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double f) { return left + (f - fmin) / (fmax - fmin) * pw; };
  auto py = [&](double p) { return top + (1.0 - p) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write chart " + path.string());
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double p = t / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.1f</text>\n",
                  left, py(p), left + pw, py(p), left - 6, py(p) + 4, p);
    out << buf;
  }
  std::vector<double> ticks;
  for (const auto& r : reports)
    for (const auto& rec : r.records) ticks.push_back(rec.factor);
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double f : ticks) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", px(f),
                  top + ph + 18, f);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", left,
                top, pw, ph);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">scale step factor</text>\n",
                left + pw / 2, H - 15);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text transform=\"translate(18,%.1f) rotate(-90)\" text-anchor=\"middle\">misdetection probability</text>\n",
                top + ph / 2);
  out << buf;

  for (size_t s = 0; s < reports.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    auto recs = reports[s].records;
    std::sort(recs.begin(), recs.end(), [](const EvalRecord& a, const EvalRecord& b) { return a.factor < b.factor; });
    out << "<g class=\"series\" data-label=\"" << svg_escape(reports[s].label) << "\">\n<polyline fill=\"none\" stroke=\""
        << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& rec : recs) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(rec.factor), py(rec.probability));
      out << buf;
    }
    out << "\"/>\n";
    for (const auto& rec : recs) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", px(rec.factor),
                    py(rec.probability), color);
      out << buf;
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>", left + pw + 12,
                  ly, left + pw + 32, ly, color);
    out << buf << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << svg_escape(reports[s].label)
        << "</text>\n</g>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("failed writing chart " + path.string());
}

}  // namespace

DatasetManifest load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError("cannot open manifest " + manifest_path.string());
  const auto dir = manifest_path.parent_path();
  DatasetManifest d;
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (root.at("version").get<int>() != kManifestVersion)
      throw DatasetError("unsupported manifest version " + root.at("version").dump());
    for (const auto& p : root.value("patches", json::array())) {
      const int h = p.at("height").get<int>(), w = p.at("width").get<int>();
      if (h < 2 || w < 2) throw DatasetError("patch '" + p.at("name").get<std::string>() + "' must be at least 2x2");
      d.patches.push_back({p.at("name").get<std::string>(), Plane<float>::Constant(h, w, 0.5f)});
    }
    const auto& frames = root.at("frames");
    if (frames.empty()) throw DatasetError("manifest lists no frames");
    for (size_t i = 0; i < frames.size(); ++i) {
      const auto& fj = frames[i];
      const std::string name = fj.value("image", std::string("?"));
      const std::string where = "frame " + std::to_string(i) + " (" + name + ")";
      try {
        FrameEntry f;
        f.image_path = dir / fj.at("image").get<std::string>();
        const auto split = fj.value("split", std::string("train"));
        if (split != "train" && split != "eval") throw DatasetError("split must be train or eval");
        f.split = split == "train" ? Split::train : Split::eval;
        f.face_region = parse_box(fj.at("face_region"), "face_region");
        if (fj.contains("placements"))
          for (size_t k = 0; k < fj.at("placements").size(); ++k)
            f.placement.entries.push_back(parse_placement(fj.at("placements")[k], "placement " + std::to_string(k)));
        if (!std::filesystem::exists(f.image_path)) throw DatasetError("missing image " + f.image_path.string());
        f.image = read_image(f.image_path);
        validate_frame(f, d, where);
        d.frames.push_back(std::move(f));
      } catch (const DatasetError& e) {
        const std::string msg = e.what();
        throw DatasetError(msg.rfind("frame ", 0) == 0 ? msg : where + ": " + msg);
      } catch (const json::exception& e) {
        throw DatasetError(where + ": " + e.what());
      } catch (const ImageIoError& e) {
        throw DatasetError(where + ": " + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  } catch (const DatasetError& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }
  return d;
}

std::vector<TrainingSample> select_frames(const DatasetManifest& dataset, std::optional<Split> split) {
  std::vector<TrainingSample> out;
  for (const auto& f : dataset.frames)
    if (!split || f.split == *split) out.push_back({f.image, f.placement, f.face_region});
  if (out.empty()) throw DatasetError("no frames left after the split filter");
  return out;
}

bool is_misdetected(const std::vector<Detection>& detections, const BoundingBox& face) {
  return std::none_of(detections.begin(), detections.end(),
                      [&](const Detection& d) { return iou(d.box, face) >= 0.5; });
}

EvalReport evaluate_misdetection(const Detector& detector, const std::vector<TrainingSample>& frames,
                                 const PatchSet<float>* patches, const PyramidConfig& base,
                                 const std::vector<double>& factors, const std::string& label) {
  if (frames.empty()) throw DatasetError("evaluate_misdetection: no frames");
  if (factors.empty()) throw std::invalid_argument("evaluate_misdetection: no factors");
  for (double f : factors)
    if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("scale step factor " + std::to_string(f) + " outside (0, 1)");

  std::vector<Image<float>> inputs;
  for (const auto& s : frames) inputs.push_back(patches ? apply_patches(s.image, *patches, s.placement) : s.image);

  EvalReport report{label, {}};
  for (double f : factors) {
    PyramidConfig cfg = base;
    cfg.factor = f;
    EvalRecord rec{f, 0, 0, 0.0};
    for (size_t i = 0; i < frames.size(); ++i) {
      ++rec.frames;
      if (is_misdetected(detector.detect(inputs[i], cfg), frames[i].face_region)) ++rec.misdetections;
    }
    rec.probability = static_cast<double>(rec.misdetections) / rec.frames;
    report.records.push_back(rec);
  }
  return report;
}

RobustnessResult evaluate_robustness(const Detector& detector, const std::vector<TrainingSample>& frames,
                                     const PatchSet<float>* patches, const TransformSpec& spec, int trials,
                                     const PyramidConfig& config) {
  if (frames.empty()) throw DatasetError("evaluate_robustness: no frames");
  if (trials < 1) throw std::invalid_argument("evaluate_robustness: trials must be >= 1");
  spec.validate();
  Rng rng(spec.seed);
  RobustnessResult r;
  for (int t = 0; t < trials; ++t) {
    const auto& s = frames[static_cast<size_t>(t) % frames.size()];
    const auto params = sample_transform(spec, rng);
    Augmentation<float> aug(s.image.height(), s.image.width(), params);
    const auto img = aug.forward(patches ? apply_patches(s.image, *patches, s.placement) : s.image);
    ++r.trials;
    if (is_misdetected(detector.detect(img, config), aug.map_box(s.face_region))) ++r.misdetections;
  }
  r.rate = static_cast<double>(r.misdetections) / r.trials;
  return r;
}

void emit_report(const std::vector<EvalReport>& reports, const std::filesystem::path& out_dir) {
  if (reports.empty()) throw std::invalid_argument("emit_report: nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  const auto csv_path = out_dir / "report.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "setup,factor,frames,misdetections,probability\n";
  char buf[128];
  for (const auto& r : reports) {
    if (r.records.empty()) throw std::invalid_argument("emit_report: setup '" + r.label + "' has no records");
    for (const auto& rec : r.records) {
      std::snprintf(buf, sizeof buf, ",%.17g,%d,%d,%.17g\n", rec.factor, rec.frames, rec.misdetections,
                    rec.probability);
      csv << csv_field(r.label) << buf;
    }
  }
  if (!csv) throw std::runtime_error("failed writing " + csv_path.string());
  write_svg(reports, out_dir / "report.svg");
}

std::vector<EvalReport> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "setup,factor,frames,misdetections,probability") throw std::runtime_error("unexpected report header");
  std::vector<EvalReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw std::runtime_error("malformed report row: " + line);
    if (out.empty() || out.back().label != f[0]) out.push_back({f[0], {}});
    out.back().records.push_back({std::stod(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4])});
  }
  return out;
}

void export_patch(const Patch& patch, const std::filesystem::path& path, std::optional<double> pixels_per_cm) {
  validate_patch(patch);
  write_gray_png(path, patch.pixels);
  if (!pixels_per_cm) return;
  if (!(*pixels_per_cm > 0.0)) throw std::invalid_argument("export_patch: pixels_per_cm must be positive");
  const auto side = std::filesystem::path(path.string() + ".txt");
  std::ofstream out(side);
  if (!out) throw std::runtime_error("cannot write " + side.string());
  out << "patch " << patch.name << "\n"
      << "pixels " << patch.width() << " x " << patch.height() << "\n"
      << "pixels_per_cm " << *pixels_per_cm << "\n"
      << "print_size_cm " << patch.width() / *pixels_per_cm << " x " << patch.height() / *pixels_per_cm << "\n";
  if (!out) throw std::runtime_error("failed writing " + side.string());
}

}  // namespace facepatch
