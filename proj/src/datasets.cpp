#include "latseg/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "latseg/image_io.hpp"
#include "latseg/random.hpp"

namespace latseg::data {

using json = nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void validate(const AnnotatedSample& s) {
  if (s.image.n() != 1) throw std::invalid_argument(s.sample_id + ": image must be a single item");
  if (s.masks.empty()) throw std::invalid_argument(s.sample_id + ": sample has no masks");
  for (const auto& m : s.masks) {
    if (m.height != s.image.h() || m.width != s.image.w())
      throw std::invalid_argument(s.sample_id + ": mask size differs from image size");
    if (!m.is_binary()) throw std::invalid_argument(s.sample_id + ": mask is not binary");
  }
  for (float v : s.image.vec())
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument(s.sample_id + ": image values outside [0,1]");
}

// ---------------------------------------------------------------- synthetic

std::size_t tiny_area_limit(int resolution) {
  return std::size_t(resolution) * std::size_t(resolution) * 5 / 1000;
}

void SyntheticSpec::validate() const {
  if (count < 1) throw std::invalid_argument("synthetic count must be >= 1");
  if (resolution < 8) throw std::invalid_argument("synthetic resolution must be >= 8");
  if (channels != 1 && channels != 3) throw std::invalid_argument("synthetic channels must be 1 or 3");
  if (blob_count_min < 0 || blob_count_max < blob_count_min)
    throw std::invalid_argument("blob count range is empty");
  if (!(blob_radius_min > 0.0) || blob_radius_max < blob_radius_min)
    throw std::invalid_argument("blob radius range is empty");
  if (2.0 * blob_radius_max + 2.0 > resolution)
    throw std::invalid_argument("infeasible geometry: blob radius " + std::to_string(blob_radius_max) +
                                " does not fit a " + std::to_string(resolution) + " px image");
  if (tiny_mode) {
    const double smallest = std::numbers::pi * 0.36 * blob_radius_min * blob_radius_min;
    if (blob_count_min * smallest > double(tiny_area_limit(resolution)))
      throw std::invalid_argument("infeasible geometry: tiny_mode allows " +
                                  std::to_string(tiny_area_limit(resolution)) +
                                  " foreground pixels, the smallest blobs need more");
  }
  if (noise_level < 0.0) throw std::invalid_argument("noise_level must be >= 0");
  if (annotator_count < 1) throw std::invalid_argument("annotator_count must be >= 1");
  if (annotator_jitter < 0) throw std::invalid_argument("annotator_jitter must be >= 0");
  if (samples_per_patient < 1) throw std::invalid_argument("samples_per_patient must be >= 1");
}

namespace {

struct Blob {
  double cx, cy;
  bool ellipse;
  double a, b, theta;           // ellipse semi-axes and rotation
  std::vector<double> radii;    // polygon vertex radii at equal angles
  double phase;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (ellipse) {
      const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / a;
      const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / b;
      return u * u + v * v <= 1.0;
    }
    // Star-shaped polygon: radius interpolated linearly between vertices.
    const int k = int(radii.size());
    double ang = std::atan2(dy, dx) - phase;
    const double two_pi = 2.0 * std::numbers::pi;
    ang = std::fmod(std::fmod(ang, two_pi) + two_pi, two_pi);
    const double pos = ang / two_pi * k;
    const int i = int(pos) % k;
    const double frac = pos - std::floor(pos);
    const double r = radii[i] * (1.0 - frac) + radii[(i + 1) % k] * frac;
    return std::hypot(dx, dy) <= r;
  }
};

Blob random_blob(const SyntheticSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> radius(spec.blob_radius_min, spec.blob_radius_max);
  Blob b{};
  const double r = radius(rng);
  const double margin = r + 1.0;
  b.cx = margin + unit(rng) * (spec.resolution - 2.0 * margin);
  b.cy = margin + unit(rng) * (spec.resolution - 2.0 * margin);
  b.ellipse = unit(rng) < 0.5;
  b.theta = unit(rng) * std::numbers::pi;
  b.phase = unit(rng) * 2.0 * std::numbers::pi;
  if (b.ellipse) {
    b.a = r;
    b.b = std::max(spec.blob_radius_min, r * (0.6 + 0.4 * unit(rng)));
  } else {
    const int k = 5 + int(unit(rng) * 4.0);
    for (int i = 0; i < k; ++i) b.radii.push_back(r * (0.6 + 0.4 * unit(rng)));
  }
  return b;
}

Mask rasterize(const std::vector<Blob>& blobs, int res) {
  Mask m(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      for (const auto& b : blobs)
        if (b.contains(x + 0.5, y + 0.5)) {
          m.at(y, x) = 1;
          break;
        }
  return m;
}

AnnotatedSample make_sample(const SyntheticSpec& spec, int index) {
  Rng rng = derive_rng(spec.seed, index, 0x5E7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int res = spec.resolution;

  Mask gt;
  const std::size_t limit = tiny_area_limit(res);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::invalid_argument("infeasible geometry: could not place blobs within tiny_mode area");
    const int count = spec.blob_count_min +
                      int(unit(rng) * double(spec.blob_count_max - spec.blob_count_min + 1));
    std::vector<Blob> blobs;
    for (int i = 0; i < std::min(count, spec.blob_count_max); ++i) blobs.push_back(random_blob(spec, rng));
    gt = rasterize(blobs, res);
    if (!spec.tiny_mode) break;
    if (gt.count() <= limit && (count == 0 || gt.count() > 0)) break;
  }

  // Smooth background, textured foreground of shifted intensity.
  const double grad_angle = unit(rng) * 2.0 * std::numbers::pi;
  const double grad_amp = (unit(rng) - 0.5) * 0.3;
  const double wave_f = 1.0 + unit(rng) * 2.0, wave_phase = unit(rng) * 6.283;
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double stripe = 3.0 + unit(rng) * 3.0, stripe_angle = unit(rng) * std::numbers::pi;
  std::vector<double> base(spec.channels), shift(spec.channels);
  for (int c = 0; c < spec.channels; ++c) {
    base[c] = 0.35 + 0.3 * unit(rng);
    shift[c] = sign * (0.25 + 0.15 * unit(rng));
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor image({1, spec.channels, res, res});
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double u = double(x) / res, v = double(y) / res;
      const double bg = grad_amp * (u * std::cos(grad_angle) + v * std::sin(grad_angle)) +
                        0.05 * std::sin(2.0 * std::numbers::pi * wave_f * (u + v) + wave_phase);
      const double tex =
          0.06 * std::sin(2.0 * std::numbers::pi * (x * std::cos(stripe_angle) + y * std::sin(stripe_angle)) / stripe);
      for (int c = 0; c < spec.channels; ++c) {
        double val = base[c] + bg;
        if (gt.at(y, x)) val += shift[c] + tex;
        val += spec.noise_level * noise(rng);
        image.at(0, c, y, x) = float(std::clamp(val, 0.0, 1.0));
      }
    }

  AnnotatedSample s;
  s.image = std::move(image);
  s.masks.push_back(gt);
  for (int a = 1; a < spec.annotator_count; ++a) {
    const int r = int(unit(rng) * double(spec.annotator_jitter + 1));
    s.masks.push_back(unit(rng) < 0.5 ? dilate(gt, r) : erode(gt, r));
  }
  char id[32];
  std::snprintf(id, sizeof id, "s%05d", index);
  s.sample_id = id;
  std::snprintf(id, sizeof id, "p%04d", index / spec.samples_per_patient);
  s.patient_id = id;
  return s;
}

}  // namespace

std::vector<AnnotatedSample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<AnnotatedSample> out(spec.count);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < spec.count; ++i) out[i] = make_sample(spec, i);
  return out;
}

namespace {

Mask morph(const Mask& m, int radius, bool grow) {
  if (radius <= 0) return m;
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dy, dx);
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      // Dilation: any neighbour set. Erosion: all neighbours set, outside counts as unset.
      bool v = !grow;
      for (auto [dy, dx] : disk) {
        const int yy = y + dy, xx = x + dx;
        const bool in = yy >= 0 && yy < m.height && xx >= 0 && xx < m.width && m.at(yy, xx);
        if (grow && in) {
          v = true;
          break;
        }
        if (!grow && !in) {
          v = false;
          break;
        }
      }
      out.at(y, x) = v ? 1 : 0;
    }
  return out;
}

}  // namespace

Mask dilate(const Mask& m, int radius) { return morph(m, radius, true); }
Mask erode(const Mask& m, int radius) { return morph(m, radius, false); }

// ---------------------------------------------------------------- splits

void split_patientwise(std::vector<AnnotatedSample>& samples, std::array<int, 3> ratios, std::uint64_t seed) {
  if (ratios[0] < 1 || ratios[1] < 1 || ratios[2] < 1) throw std::invalid_argument("split ratios must be positive");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!s.patient_id || s.patient_id->empty())
      throw std::invalid_argument("sample " + s.sample_id + " has no patient id");
    ids.insert(*s.patient_id);
  }
  const int p = int(ids.size());
  if (p < 3) throw std::invalid_argument("patient-wise split needs at least 3 patients, got " + std::to_string(p));
  std::vector<std::string> patients(ids.begin(), ids.end());
  Rng rng = derive_rng(seed, 0, 0x5917);
  std::shuffle(patients.begin(), patients.end(), rng);

  const double total = ratios[0] + ratios[1] + ratios[2];
  int n_val = std::max(1, int(std::lround(p * ratios[1] / total)));
  int n_test = std::max(1, int(std::lround(p * ratios[2] / total)));
  while (p - n_val - n_test < 1) (n_val >= n_test ? n_val : n_test)--;

  std::map<std::string, Split> assignment;
  for (int i = 0; i < p; ++i)
    assignment[patients[i]] = i < p - n_val - n_test ? Split::train : (i < p - n_test ? Split::val : Split::test);
  for (auto& s : samples) s.split = assignment.at(*s.patient_id);
}

// ---------------------------------------------------------------- real data

std::string to_string(Layout l) {
  switch (l) {
    case Layout::isic2018:
      return "isic2018";
    case Layout::cvc_clinic:
      return "cvc_clinic";
    case Layout::lidc_slices:
      return "lidc_slices";
  }
  return "isic2018";
}

Layout layout_from_string(const std::string& s) {
  if (s == "isic2018") return Layout::isic2018;
  if (s == "cvc_clinic") return Layout::cvc_clinic;
  if (s == "lidc_slices") return Layout::lidc_slices;
  throw std::invalid_argument("unknown dataset layout '" + s + "' (expected isic2018|cvc_clinic|lidc_slices)");
}

namespace {

const std::vector<std::string> kExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".pgm", ".pbm"};

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return std::find(kExtensions.begin(), kExtensions.end(), ext) != kExtensions.end();
}

std::optional<fs::path> find_stem(const fs::path& dir, const std::string& stem) {
  for (const auto& ext : kExtensions) {
    const fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

Tensor load_image(const fs::path& path, bool grayscale, int res) {
  io::Raster8 r = io::read_raster(path, grayscale);
  cv::Mat src(r.height, r.width, r.channels == 1 ? CV_8UC1 : CV_8UC3, r.pixels.data());
  cv::Mat f, dst;
  src.convertTo(f, CV_32F, 1.0 / 255.0);
  cv::resize(f, dst, cv::Size(res, res), 0, 0, cv::INTER_LINEAR);
  Tensor t({1, r.channels, res, res});
  for (int y = 0; y < res; ++y) {
    const float* row = dst.ptr<float>(y);
    for (int x = 0; x < res; ++x)
      for (int c = 0; c < r.channels; ++c) t.at(0, c, y, x) = std::clamp(row[x * r.channels + c], 0.0f, 1.0f);
  }
  return t;
}

Mask load_resized_mask(const fs::path& path, int res) {
  const Mask raw = io::read_mask(path);
  cv::Mat src(raw.height, raw.width, CV_8UC1, const_cast<std::uint8_t*>(raw.pixels.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(res, res), 0, 0, cv::INTER_NEAREST);
  Mask m(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) m.at(y, x) = dst.at<std::uint8_t>(y, x) ? 1 : 0;
  return m;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs) {
  if (!fs::is_directory(dir)) throw std::runtime_error("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (dirs ? e.is_directory() : (e.is_regular_file() && is_image(e.path()))) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<AnnotatedSample> load_real_dataset(const fs::path& root, Layout layout, int resolution) {
  if (resolution < 1) throw std::invalid_argument("resolution must be positive");
  std::vector<AnnotatedSample> out;
  if (layout == Layout::lidc_slices) {
    for (const auto& patient : sorted_entries(root, true))
      for (const auto& slice : sorted_entries(patient, true)) {
        const auto image = find_stem(slice, "image");
        if (!image) throw std::runtime_error("missing image file in " + slice.string());
        AnnotatedSample s;
        s.image = load_image(*image, true, resolution);
        for (int k = 0; k < 4; ++k)
          if (auto m = find_stem(slice, "mask_" + std::to_string(k))) s.masks.push_back(load_resized_mask(*m, resolution));
        if (s.masks.empty()) throw std::runtime_error("missing mask for " + image->string());
        s.patient_id = patient.filename().string();
        s.sample_id = *s.patient_id + "_" + slice.filename().string();
        out.push_back(std::move(s));
      }
    return out;
  }
  const fs::path images = root / "images", masks = root / "masks";
  for (const auto& path : sorted_entries(images, false)) {
    const std::string stem = path.stem().string();
    auto mask = find_stem(masks, stem);
    if (!mask && layout == Layout::isic2018) mask = find_stem(masks, stem + "_segmentation");
    if (!mask) throw std::runtime_error("missing mask for " + path.string());
    AnnotatedSample s;
    s.image = load_image(path, false, resolution);
    s.masks.push_back(load_resized_mask(*mask, resolution));
    s.sample_id = stem;
    s.patient_id = stem;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- targets

std::string to_string(TargetPolicy p) {
  switch (p) {
    case TargetPolicy::majority:
      return "majority";
    case TargetPolicy::random_annotator:
      return "random_annotator";
    case TargetPolicy::first:
      return "first";
  }
  return "majority";
}

TargetPolicy target_policy_from_string(const std::string& s) {
  if (s == "majority") return TargetPolicy::majority;
  if (s == "random_annotator") return TargetPolicy::random_annotator;
  if (s == "first") return TargetPolicy::first;
  throw std::invalid_argument("unknown target policy '" + s + "' (expected majority|random_annotator|first)");
}

std::size_t random_annotator_index(std::size_t annotators, std::uint64_t seed, int epoch, int sample_index) {
  if (annotators == 0) throw std::invalid_argument("random_annotator_index: no annotators");
  Rng rng = derive_rng(seed, std::int64_t(epoch) << 32 | std::uint32_t(sample_index), 0xA770);
  return std::uniform_int_distribution<std::size_t>(0, annotators - 1)(rng);
}

Mask training_target(const AnnotatedSample& sample, TargetPolicy policy, std::uint64_t seed, int epoch,
                     int sample_index) {
  if (sample.masks.empty()) throw std::invalid_argument("training_target: sample has no masks");
  switch (policy) {
    case TargetPolicy::first:
      return sample.masks.front();
    case TargetPolicy::random_annotator:
      return sample.masks[random_annotator_index(sample.masks.size(), seed, epoch, sample_index)];
    case TargetPolicy::majority: {
      const std::size_t k = sample.masks.size();
      Mask out(sample.masks.front().height, sample.masks.front().width);
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t votes = 0;
        for (const auto& m : sample.masks) votes += m.pixels[i];
        out.pixels[i] = 2 * votes >= k ? 1 : 0;
      }
      return out;
    }
  }
  return sample.masks.front();
}

// ---------------------------------------------------------------- manifest

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    json j;
    j["sample_id"] = r.sample_id;
    j["patient_id"] = r.patient_id ? json(*r.patient_id) : json(nullptr);
    j["split"] = to_string(r.split);
    j["image"] = r.image;
    j["masks"] = r.masks;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      if (j.contains("patient_id") && !j["patient_id"].is_null()) r.patient_id = j["patient_id"].get<std::string>();
      r.split = split_from_string(j.at("split").get<std::string>());
      r.image = j.at("image").get<std::string>();
      r.masks = j.at("masks").get<std::vector<std::string>>();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void materialize(const fs::path& dir, const std::vector<AnnotatedSample>& samples) {
  std::vector<ManifestRecord> records;
  for (const auto& s : samples) {
    validate(s);
    ManifestRecord r;
    r.sample_id = s.sample_id;
    r.patient_id = s.patient_id;
    r.split = s.split;
    r.image = "images/" + s.sample_id + (s.image.c() == 1 ? ".pgm" : ".ppm");
    io::write_pnm(dir / r.image, io::to_raster(s.image));
    for (std::size_t k = 0; k < s.masks.size(); ++k) {
      r.masks.push_back("masks/" + s.sample_id + "_" + std::to_string(k) + ".pbm");
      io::write_pbm(dir / r.masks.back(), s.masks[k]);
    }
    records.push_back(std::move(r));
  }
  write_manifest(dir / "manifest.jsonl", records);
}

std::vector<AnnotatedSample> load_manifest(const fs::path& manifest, std::optional<Split> only) {
  const fs::path base = manifest.parent_path();
  std::vector<AnnotatedSample> out;
  for (const auto& r : read_manifest(manifest)) {
    if (only && r.split != *only) continue;
    AnnotatedSample s;
    s.sample_id = r.sample_id;
    s.patient_id = r.patient_id;
    s.split = r.split;
    s.image = io::to_tensor(io::read_image(base / r.image));
    for (const auto& m : r.masks) s.masks.push_back(io::read_mask(base / m));
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace latseg::data
