#include "dne/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dne/error.hpp"
#include "dne/random.hpp"

namespace dne {

using nlohmann::json;

std::string_view to_string(Label label) noexcept {
  return label == Label::Tumor ? "tumor" : "normal";
}

Label parse_label(std::string_view text) {
  if (text == "tumor") return Label::Tumor;
  if (text == "normal") return Label::Normal;
  throw PreconditionError("unknown label '" + std::string(text) + "'");
}

void validate_image(const Image& image) {
  if (image.height != kImageSide || image.width != kImageSide) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", expected 40x40");
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width) {
    throw ShapeError("image pixel count does not match its dimensions");
  }
  for (float v : image.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw PreconditionError("image value outside [0, 1]");
  }
}

std::size_t Dataset::count(Label label) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [label](const OrbitSample& s) { return s.label == label; }));
}

// ---------------------------------------------------------------------------
// Phantom generator

void validate_params(const PhantomParams& p) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(p.background_intensity) || !in_unit(p.humor_low) || !in_unit(p.humor_high) ||
      !in_unit(p.lesion_low) || !in_unit(p.lesion_high)) {
    throw PreconditionError("phantom intensities must lie in [0, 1]");
  }
  if (p.humor_low > p.humor_high || p.lesion_low > p.lesion_high) {
    throw PreconditionError("phantom intensity bands must have low <= high");
  }
  if (!in_unit(p.artifact_probability) || !in_unit(p.artifact_strength) ||
      !in_unit(p.lesion_contrast_scale)) {
    throw PreconditionError("artifact probability/strength and contrast scale must lie in [0, 1]");
  }
  if (p.noise_sigma < 0.0 || p.globe_radius_jitter < 0.0 || p.eye_radius_jitter < 0.0 ||
      p.center_jitter < 0.0 || p.eye_intensity_jitter < 0.0 || p.artifact_width_px <= 0.0) {
    throw PreconditionError("phantom jitters and widths must be non-negative");
  }
  if (p.lesion_center_jitter_deg < 0.0 || p.lesion_center_jitter_deg > 180.0) {
    throw PreconditionError("lesion direction jitter must lie in [0, 180] degrees");
  }
  if (p.lesion_angular_width_deg <= 0.0 || p.lesion_angular_width_deg > 360.0 ||
      p.lesion_thickness_px <= 0.0) {
    throw PreconditionError("lesion width must lie in (0, 360] degrees and thickness be positive");
  }
  const double min_radius = p.globe_radius_mean - p.globe_radius_jitter - p.eye_radius_jitter;
  if (min_radius <= p.lesion_thickness_px) {
    throw ShapeError("globe radius can fall below the lesion thickness");
  }
  // Frame center is 19.5; the outermost globe pixel must stay inside [0, 39].
  const double reach = p.globe_radius_mean + p.globe_radius_jitter + p.eye_radius_jitter + p.center_jitter;
  if (reach > 19.5) {
    throw ShapeError("globe geometry (reach " + std::to_string(reach) + " px) exceeds the 40x40 frame");
  }
}

namespace {

constexpr double kFrameCenter = 19.5;

struct Globe {
  double cx, cy, radius, humor;
};

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

// Renders one globe image. `lesion` and `artifact` are applied when non-null.
struct LesionShape {
  double center_angle, half_width, thickness, level;
};
struct StreakShape {
  double angle, offset, half_width, strength;
};

Image render_globe(const PhantomParams& p, const Globe& g, const LesionShape* lesion,
                   const StreakShape* streak, CounterRng& noise) {
  Image img;
  const double nx = streak ? -std::sin(streak->angle) : 0.0;
  const double ny = streak ? std::cos(streak->angle) : 0.0;
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      const double dx = x - g.cx;
      const double dy = y - g.cy;
      const double d = std::hypot(dx, dy);
      // Partial-pixel coverage gives the disk a one-pixel soft edge.
      const double coverage = std::clamp(g.radius - d + 0.5, 0.0, 1.0);
      double inside = g.humor;
      if (lesion != nullptr && d <= g.radius) {
        const double off = std::abs(wrap_angle(std::atan2(dy, dx) - lesion->center_angle));
        if (off < lesion->half_width) {
          const double taper = std::cos(0.5 * std::numbers::pi * off / lesion->half_width);
          if (d >= g.radius - lesion->thickness * taper) inside = lesion->level;
        }
      }
      if (streak != nullptr && d <= g.radius) {
        const double dist = std::abs(dx * nx + dy * ny - streak->offset);
        if (dist < streak->half_width) {
          inside *= 1.0 - streak->strength * (1.0 - dist / streak->half_width);
        }
      }
      const double clean = p.background_intensity + (inside - p.background_intensity) * coverage;
      const double value = clean + p.noise_sigma * noise.normal();
      img.at(y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace

Phantom gen_phantom_detailed(const PhantomParams& p, std::uint64_t sample_index, Label label) {
  validate_params(p);
  CounterRng rng(hash_key({p.seed, static_cast<std::uint64_t>(label), sample_index, 0x47454F4DULL}));
  CounterRng noise(hash_key({p.seed, static_cast<std::uint64_t>(label), sample_index, 0x4E4F4953ULL}));

  const double base_radius = p.globe_radius_mean + rng.uniform(-p.globe_radius_jitter, p.globe_radius_jitter);
  const double base_humor = rng.uniform(p.humor_low, p.humor_high);
  Globe globes[2];
  for (Globe& g : globes) {
    g.cx = kFrameCenter + rng.uniform(-p.center_jitter, p.center_jitter);
    g.cy = kFrameCenter + rng.uniform(-p.center_jitter, p.center_jitter);
    g.radius = base_radius + rng.uniform(-p.eye_radius_jitter, p.eye_radius_jitter);
    g.humor = std::clamp(base_humor + rng.uniform(-p.eye_intensity_jitter, p.eye_intensity_jitter), 0.0, 1.0);
  }

  PhantomTruth truth{globes[0].cx, globes[0].cy, globes[0].radius,
                     globes[1].cx, globes[1].cy, globes[1].radius, std::nullopt, std::nullopt};
  LesionShape lesion{};
  StreakShape streak{};
  // Draws are consumed unconditionally so both labels use the same stream layout.
  const int affected_eye = rng.uniform() < 0.5 ? 0 : 1;
  const double angle_draw = rng.uniform();
  const double level_draw = rng.uniform(p.lesion_low, p.lesion_high);
  const double artifact_draw = rng.uniform();
  const double streak_offset_draw = rng.uniform(-0.5, 0.5);

  if (label == Label::Tumor) {
    truth.lesion_eye = affected_eye;
    const double humor = globes[affected_eye].humor;
    lesion.center_angle = (p.lesion_center_deg + p.lesion_center_jitter_deg * (2.0 * angle_draw - 1.0)) *
                          std::numbers::pi / 180.0;
    lesion.half_width = 0.5 * p.lesion_angular_width_deg * std::numbers::pi / 180.0;
    lesion.thickness = p.lesion_thickness_px;
    lesion.level = humor - p.lesion_contrast_scale * (humor - level_draw);
  } else if (artifact_draw < p.artifact_probability) {
    truth.artifact_eye = affected_eye;
    streak.angle = std::numbers::pi * (2.0 * angle_draw - 1.0);
    streak.offset = streak_offset_draw * globes[affected_eye].radius;
    streak.half_width = 0.5 * p.artifact_width_px;
    streak.strength = p.artifact_strength;
  }

  Phantom out;
  out.sample.label = label;
  out.sample.id = std::string(to_string(label)) + "_" + std::to_string(sample_index);
  Image* images[2] = {&out.sample.left, &out.sample.right};
  for (int eye = 0; eye < 2; ++eye) {
    const LesionShape* l = truth.lesion_eye == eye ? &lesion : nullptr;
    const StreakShape* s = truth.artifact_eye == eye ? &streak : nullptr;
    *images[eye] = render_globe(p, globes[eye], l, s, noise);
  }
  out.truth = truth;
  return out;
}

OrbitSample gen_phantom(const PhantomParams& params, std::uint64_t sample_index, Label label) {
  return gen_phantom_detailed(params, sample_index, label).sample;
}

Dataset gen_dataset(const PhantomParams& params, int n_tumor, int n_normal, int first_index) {
  if (n_tumor < 0 || n_normal < 0 || first_index < 0) {
    throw PreconditionError("sample counts and first index must be non-negative");
  }
  validate_params(params);
  Dataset d;
  d.samples.reserve(static_cast<std::size_t>(n_tumor) + n_normal);
  for (int k = 0; k < n_tumor; ++k) d.samples.push_back(gen_phantom(params, first_index + k, Label::Tumor));
  for (int k = 0; k < n_normal; ++k) d.samples.push_back(gen_phantom(params, first_index + k, Label::Normal));
  d.provenance = {Provenance::Kind::Generated, params, n_tumor, n_normal, first_index};
  return d;
}

Fold crossfold(const Dataset& pool_a, const Dataset& pool_b, int fold) {
  if (fold != 1 && fold != 2) throw PreconditionError("fold must be 1 or 2");
  std::set<std::string> ids;
  for (const OrbitSample& s : pool_a.samples) ids.insert(s.id);
  for (const OrbitSample& s : pool_b.samples) {
    if (ids.contains(s.id)) throw PreconditionError("overlapping sample id '" + s.id + "' in both pools");
  }
  if (fold == 1) return {pool_a, pool_b};
  return {pool_b, pool_a};
}

// ---------------------------------------------------------------------------
// JSON for params / provenance

namespace {

json params_json(const PhantomParams& p) {
  return json{{"background_intensity", p.background_intensity},
              {"globe_radius_mean", p.globe_radius_mean},
              {"globe_radius_jitter", p.globe_radius_jitter},
              {"eye_radius_jitter", p.eye_radius_jitter},
              {"center_jitter", p.center_jitter},
              {"humor_low", p.humor_low},
              {"humor_high", p.humor_high},
              {"eye_intensity_jitter", p.eye_intensity_jitter},
              {"lesion_center_deg", p.lesion_center_deg},
              {"lesion_center_jitter_deg", p.lesion_center_jitter_deg},
              {"lesion_angular_width_deg", p.lesion_angular_width_deg},
              {"lesion_thickness_px", p.lesion_thickness_px},
              {"lesion_low", p.lesion_low},
              {"lesion_high", p.lesion_high},
              {"lesion_contrast_scale", p.lesion_contrast_scale},
              {"noise_sigma", p.noise_sigma},
              {"artifact_probability", p.artifact_probability},
              {"artifact_strength", p.artifact_strength},
              {"artifact_width_px", p.artifact_width_px},
              {"seed", p.seed}};
}

PhantomParams params_from(const json& j) {
  PhantomParams p;
  const json defaults = params_json(p);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw PreconditionError("unknown phantom parameter '" + key + "'");
  }
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("background_intensity", p.background_intensity);
  get("globe_radius_mean", p.globe_radius_mean);
  get("globe_radius_jitter", p.globe_radius_jitter);
  get("eye_radius_jitter", p.eye_radius_jitter);
  get("center_jitter", p.center_jitter);
  get("humor_low", p.humor_low);
  get("humor_high", p.humor_high);
  get("eye_intensity_jitter", p.eye_intensity_jitter);
  get("lesion_center_deg", p.lesion_center_deg);
  get("lesion_center_jitter_deg", p.lesion_center_jitter_deg);
  get("lesion_angular_width_deg", p.lesion_angular_width_deg);
  get("lesion_thickness_px", p.lesion_thickness_px);
  get("lesion_low", p.lesion_low);
  get("lesion_high", p.lesion_high);
  get("lesion_contrast_scale", p.lesion_contrast_scale);
  get("noise_sigma", p.noise_sigma);
  get("artifact_probability", p.artifact_probability);
  get("artifact_strength", p.artifact_strength);
  get("artifact_width_px", p.artifact_width_px);
  get("seed", p.seed);
  return p;
}

json provenance_json(const Provenance& prov) {
  json j{{"kind", prov.kind == Provenance::Kind::Generated ? "generated" : "ingested"},
         {"n_tumor", prov.n_tumor},
         {"n_normal", prov.n_normal},
         {"first_index", prov.first_index}};
  if (prov.params) j["params"] = params_json(*prov.params);
  return j;
}

Provenance provenance_from(const json& j) {
  Provenance prov;
  prov.kind = j.at("kind").get<std::string>() == "generated" ? Provenance::Kind::Generated
                                                             : Provenance::Kind::Ingested;
  prov.n_tumor = j.at("n_tumor").get<int>();
  prov.n_normal = j.at("n_normal").get<int>();
  prov.first_index = j.value("first_index", 0);
  if (j.contains("params")) prov.params = params_from(j.at("params"));
  return prov;
}

}  // namespace

std::string params_to_json(const PhantomParams& params) { return params_json(params).dump(2); }

PhantomParams params_from_json(std::string_view text) {
  try {
    return params_from(json::parse(text));
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("invalid phantom parameter JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// OPR1 codec

namespace {

constexpr std::uint8_t kDatasetMagic[4] = {'O', 'P', 'R', '1'};
constexpr std::uint8_t kProvenanceMagic[4] = {'P', 'R', 'O', 'V'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_image(std::vector<std::uint8_t>& out, const Image& img) {
  for (float v : img.pixels) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const std::string& where) const {
    if (remaining() < n) throw FormatError("unexpected end of file in " + where);
  }
  std::uint8_t u8(const std::string& where) {
    need(1, where);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const std::string& where) {
    need(2, where);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& where) {
    need(4, where);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const std::string& where) {
    need(n, where);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  std::vector<std::uint8_t> out(std::begin(kDatasetMagic), std::end(kDatasetMagic));
  put_u32(out, static_cast<std::uint32_t>(dataset.samples.size()));
  for (const OrbitSample& s : dataset.samples) {
    validate_image(s.left);
    validate_image(s.right);
    if (s.id.size() > 0xFFFF) throw PreconditionError("sample id longer than 65535 bytes");
    put_u16(out, static_cast<std::uint16_t>(s.id.size()));
    out.insert(out.end(), s.id.begin(), s.id.end());
    out.push_back(static_cast<std::uint8_t>(s.label));
    put_image(out, s.left);
    put_image(out, s.right);
  }
  const std::string prov = provenance_json(dataset.provenance).dump();
  out.insert(out.end(), std::begin(kProvenanceMagic), std::end(kProvenanceMagic));
  put_u32(out, static_cast<std::uint32_t>(prov.size()));
  out.insert(out.end(), prov.begin(), prov.end());
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kDatasetMagic), std::end(kDatasetMagic), bytes.begin())) {
    throw FormatError("bad magic: not an OPR1 dataset");
  }
  Reader in(bytes.subspan(4));
  const std::uint32_t count = in.u32("header");
  Dataset d;
  d.samples.reserve(std::min<std::uint32_t>(count, 4096));
  std::set<std::string> ids;
  constexpr std::size_t kPixels = static_cast<std::size_t>(kImageSide) * kImageSide;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string where = "record " + std::to_string(k);
    OrbitSample s;
    const std::uint16_t id_len = in.u16(where);
    const auto id = in.take(id_len, where);
    s.id.assign(id.begin(), id.end());
    const std::uint8_t label = in.u8(where);
    if (label > 1) throw FormatError("invalid label byte " + std::to_string(label) + " in " + where);
    s.label = static_cast<Label>(label);
    for (Image* img : {&s.left, &s.right}) {
      for (std::size_t i = 0; i < kPixels; ++i) {
        const float v = std::bit_cast<float>(in.u32(where));
        if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("pixel value outside [0, 1] in " + where);
        img->pixels[i] = v;
      }
    }
    if (!ids.insert(s.id).second) throw FormatError("duplicate sample id '" + s.id + "' in " + where);
    d.samples.push_back(std::move(s));
  }
  if (in.remaining() == 0) {
    d.provenance = {Provenance::Kind::Ingested, std::nullopt, static_cast<int>(d.count(Label::Tumor)),
                    static_cast<int>(d.count(Label::Normal)), 0};
    return d;
  }
  const std::size_t trailing = in.remaining();
  const auto tag = in.take(std::min<std::size_t>(4, trailing), "provenance");
  if (tag.size() < 4 || !std::equal(tag.begin(), tag.end(), std::begin(kProvenanceMagic))) {
    throw FormatError("length mismatch: " + std::to_string(trailing) + " trailing bytes after " +
                      std::to_string(count) + " records");
  }
  const std::uint32_t len = in.u32("provenance");
  if (in.remaining() != len) {
    throw FormatError("length mismatch: provenance block declares " + std::to_string(len) +
                      " bytes, file holds " + std::to_string(in.remaining()));
  }
  const auto text = in.take(len, "provenance");
  try {
    d.provenance = provenance_from(json::parse(text.begin(), text.end()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt provenance block: ") + e.what());
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_dataset(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

std::string dataset_checksum(const Dataset& dataset) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::uint8_t b : encode_dataset(dataset)) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace dne
