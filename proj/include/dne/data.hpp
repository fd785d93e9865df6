#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dne {

enum class Label : std::uint8_t { Normal = 0, Tumor = 1 };

std::string_view to_string(Label label) noexcept;
/// Accepts "tumor" / "normal"; throws PreconditionError otherwise.
Label parse_label(std::string_view text);

inline constexpr int kImageSide = 40;

/// Single-channel grayscale image, row-major, values in [0, 1].
struct Image {
  int height = kImageSide;
  int width = kImageSide;
  std::vector<float> pixels;

  Image() : pixels(static_cast<std::size_t>(kImageSide) * kImageSide, 0.0f) {}
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int y, int x) noexcept { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const noexcept { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image&) const = default;
};

/// Throws ShapeError/PreconditionError if the image breaks its invariants.
void validate_image(const Image& image);

/// A left/right globe pair with its class label.
struct OrbitSample {
  std::string id;
  Image left;
  Image right;
  Label label = Label::Normal;

  bool operator==(const OrbitSample&) const = default;
};

/// Knobs of the synthetic orbit phantom.
///
/// Each image holds one globe: a bright disk (aqueous humor) on a dark noisy
/// background. Tumor samples carry a dark crescent on the inner rim of exactly
/// one globe, centred near the posterior pole. Normal samples may carry a streak
/// artifact on one globe.
struct PhantomParams {
  double background_intensity = 0.08;
  double globe_radius_mean = 12.0;
  double globe_radius_jitter = 1.0;    ///< per-sample radius spread (uniform +/-)
  double eye_radius_jitter = 0.1;      ///< extra per-eye spread
  double center_jitter = 2.0;          ///< globe center offset from the frame center
  double humor_low = 0.75;
  double humor_high = 0.95;
  double eye_intensity_jitter = 0.01;  ///< per-eye humor spread around the sample level
  double lesion_center_deg = 90.0;         ///< crescent direction; 90 points down the image (posterior)
  double lesion_center_jitter_deg = 40.0;  ///< uniform +/- spread of the crescent direction
  double lesion_angular_width_deg = 160.0;
  double lesion_thickness_px = 6.0;
  double lesion_low = 0.05;
  double lesion_high = 0.25;
  /// Scales the humor-to-lesion contrast; 1 keeps the lesion band, 0.5 halves it.
  double lesion_contrast_scale = 1.0;
  double noise_sigma = 0.03;
  double artifact_probability = 0.0;
  double artifact_strength = 0.6;     ///< fractional darkening of humor under the streak
  double artifact_width_px = 6.0;
  std::uint64_t seed = 0;

  bool operator==(const PhantomParams&) const = default;
};

/// Throws PreconditionError for out-of-range params or ShapeError when a globe
/// can leave the 40x40 frame.
void validate_params(const PhantomParams& params);

/// Ground truth recorded while drawing a phantom (used by tests).
struct PhantomTruth {
  double left_cx = 0, left_cy = 0, left_radius = 0;
  double right_cx = 0, right_cy = 0, right_radius = 0;
  std::optional<int> lesion_eye;    ///< 0 = left, 1 = right
  std::optional<int> artifact_eye;  ///< 0 = left, 1 = right
};

struct Phantom {
  OrbitSample sample;
  PhantomTruth truth;
};

Phantom gen_phantom_detailed(const PhantomParams& params, std::uint64_t sample_index, Label label);
OrbitSample gen_phantom(const PhantomParams& params, std::uint64_t sample_index, Label label);

struct Provenance {
  enum class Kind { Generated, Ingested };
  Kind kind = Kind::Ingested;
  std::optional<PhantomParams> params;
  int n_tumor = 0;
  int n_normal = 0;
  int first_index = 0;

  bool operator==(const Provenance&) const = default;
};

struct Dataset {
  std::vector<OrbitSample> samples;
  Provenance provenance;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::size_t count(Label label) const noexcept;

  bool operator==(const Dataset&) const = default;
};

/// Ids are `tumor_k` / `normal_k` with k counting from `first_index`; tumors
/// come first. Pools drawn with disjoint index ranges share no samples.
Dataset gen_dataset(const PhantomParams& params, int n_tumor, int n_normal, int first_index = 0);

/// Two-fold cross-validation: fold 1 trains on `pool_a`, fold 2 on `pool_b`.
struct Fold {
  Dataset train;
  Dataset test;
};
Fold crossfold(const Dataset& pool_a, const Dataset& pool_b, int fold);

/// OPR1 container. Provenance travels in an optional trailing `PROV` block.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

/// FNV-1a over the encoded container, as 16 hex digits.
std::string dataset_checksum(const Dataset& dataset);

/// JSON text <-> PhantomParams (unknown keys are rejected).
std::string params_to_json(const PhantomParams& params);
PhantomParams params_from_json(std::string_view text);

}  // namespace dne
