#pragma once

// Synthetic blob datasets, real-dataset loaders, patient-wise splits and the
// line-delimited JSON manifest shared by every command.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latseg/mask.hpp"
#include "latseg/tensor.hpp"

namespace latseg::data {

namespace fs = std::filesystem;

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct AnnotatedSample {
  Tensor image;             // (1, C, H, W) in [0,1]
  std::vector<Mask> masks;  // one per annotator
  std::string sample_id;
  std::optional<std::string> patient_id;
  Split split = Split::train;
};

void validate(const AnnotatedSample& s);

struct SyntheticSpec {
  int count = 200;
  int resolution = 64;
  int channels = 3;
  int blob_count_min = 1;
  int blob_count_max = 2;
  double blob_radius_min = 6.0;
  double blob_radius_max = 14.0;
  bool tiny_mode = false;  // total foreground <= 0.5% of pixels
  double noise_level = 0.05;
  int annotator_count = 1;
  int annotator_jitter = 0;  // morphological radius
  int samples_per_patient = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Foreground pixel budget in tiny mode: floor(0.005 * H * W).
std::size_t tiny_area_limit(int resolution);

std::vector<AnnotatedSample> generate_synthetic(const SyntheticSpec& spec);

// Disk of the given radius: dilation / erosion with a (2r+1)^2 Euclidean disk.
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);

// Patients are sorted, shuffled with the seed and partitioned by ratio with
// at least one patient per split. Sets `split` on every sample.
void split_patientwise(std::vector<AnnotatedSample>& samples, std::array<int, 3> ratios = {8, 1, 1},
                       std::uint64_t seed = 0);

enum class Layout { isic2018, cvc_clinic, lidc_slices };
std::string to_string(Layout l);
Layout layout_from_string(const std::string& s);

// isic2018:    root/images/<id>.<ext>, root/masks/<id>[_segmentation].<ext>
// cvc_clinic:  root/images/<id>.<ext>, root/masks/<id>.<ext>
// lidc_slices: root/<patient>/<slice>/image.<ext>, mask_0..mask_3.<ext>
// Images are resized bilinearly, masks nearest-neighbor then binarized at
// >= 128. Splits are assigned afterwards with split_patientwise.
std::vector<AnnotatedSample> load_real_dataset(const fs::path& root, Layout layout, int resolution);

enum class TargetPolicy { majority, random_annotator, first };
std::string to_string(TargetPolicy p);
TargetPolicy target_policy_from_string(const std::string& s);

// random_annotator chooses uniformly, seeded by (seed, epoch, sample index).
std::size_t random_annotator_index(std::size_t annotators, std::uint64_t seed, int epoch, int sample_index);
Mask training_target(const AnnotatedSample& sample, TargetPolicy policy, std::uint64_t seed = 0, int epoch = 0,
                     int sample_index = 0);

struct ManifestRecord {
  std::string sample_id;
  std::optional<std::string> patient_id;
  Split split = Split::train;
  std::string image;               // relative to the manifest directory
  std::vector<std::string> masks;  // likewise
};

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const fs::path& path);

// Writes images (PPM/PGM) and masks (PBM) under `dir` plus dir/manifest.jsonl.
void materialize(const fs::path& dir, const std::vector<AnnotatedSample>& samples);

// Loads every sample listed in a manifest, optionally restricted to a split.
std::vector<AnnotatedSample> load_manifest(const fs::path& manifest, std::optional<Split> only = std::nullopt);

}  // namespace latseg::data
