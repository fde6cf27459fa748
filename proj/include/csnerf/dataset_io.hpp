#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csnerf/binary_io.hpp"
#include "csnerf/core_types.hpp"
#include "csnerf/data_selection.hpp"
#include "csnerf/marker_nav.hpp"
#include "csnerf/radiance_field.hpp"
#include "csnerf/training.hpp"

// Rasters, manifests and configuration files.
namespace csnerf::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// PNG

struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> bytes;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

inline void png_write_vec(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}
inline void png_flush_noop(png_structp) {}

}  // namespace detail

// Encodes to an in-memory PNG. Compression settings are fixed so equal
// inputs give equal bytes.
inline std::vector<std::uint8_t> encode_png(const PngData& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidArgument("png: 1 or 3 channels supported");
  if (img.bytes.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw InvalidArgument("png: buffer size mismatch");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                            detail::png_warning_fn);
  if (!png) throw FormatError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, detail::png_write_vec, detail::png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
      png_write_row(png, const_cast<png_bytep>(img.bytes.data() + stride * y));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void write_png(const fs::path& path, const PngData& img) {
  const auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline PngData read_png(const fs::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IngestionError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                           detail::png_warning_fn);
  if (!png) throw FormatError("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  PngData out;
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto bit_depth = png_get_bit_depth(png, info);
    const auto color = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y)
      rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
    png_read_image(png, rows.data());
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

inline PngData to_png(const ImageRGB& img) {
  PngData p{img.width, img.height, 3, {}};
  p.bytes.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) p.bytes[i] = to_byte(img.data[i]);
  return p;
}

inline PngData to_png(const SemanticMask& mask) { return {mask.width, mask.height, 1, mask.labels}; }

inline ImageRGB image_from_png(const PngData& p) {
  ImageRGB img(p.width, p.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c)
      img.data[3 * i + c] = p.bytes[i * p.channels + (p.channels == 3 ? c : 0)] / 255.0;
  return img;
}

inline SemanticMask mask_from_png(const PngData& p) {
  if (p.channels != 1) throw FormatError("label mask must be single channel");
  SemanticMask m(p.width, p.height);
  m.labels = p.bytes;
  return m;
}

// Rounds an image to 8 bits per channel, as stored on disk.
inline ImageRGB quantize(const ImageRGB& img) { return image_from_png(to_png(img)); }

// ---------------------------------------------------------------------------
// Per-pixel metric depth: "CSDP" | u32 width | u32 height | f32 depth[w*h];
// non-finite entries mark pixels without depth.

inline void write_depth_raster(const fs::path& path, int width, int height, const std::vector<double>& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + path.string());
  os.write("CSDP", 4);
  binary::put_u32(os, static_cast<std::uint32_t>(width));
  binary::put_u32(os, static_cast<std::uint32_t>(height));
  for (double d : depth) binary::put_f32(os, static_cast<float>(d));
}

inline std::vector<double> read_depth_raster(const fs::path& path, int* width = nullptr, int* height = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path.string());
  char magic[4];
  binary::read_exact(is, magic, 4);
  if (std::string(magic, 4) != "CSDP") throw FormatError(path.string() + ": not a depth raster");
  const auto w = binary::get_u32(is), h = binary::get_u32(is);
  std::vector<double> d(static_cast<std::size_t>(w) * h);
  for (auto& x : d) x = binary::get_f32(is);
  if (width) *width = static_cast<int>(w);
  if (height) *height = static_cast<int>(h);
  return d;
}

// ---------------------------------------------------------------------------
// JSON helpers

inline json mat_to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

inline Mat3 mat_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 9) throw FormatError("rotation must have 9 entries (row-major)");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[3 * r + c];
  return m;
}

inline json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw FormatError("vector must have 3 entries");
  return {v[0], v[1], v[2]};
}

inline json pose_to_json(const Pose& p) {
  return {{"rotation", mat_to_json(p.rotation)}, {"translation", vec_to_json(p.translation)}};
}

inline Pose pose_from_json(const json& j, Frame frame = Frame::kVehicle) {
  Pose p{mat_from_json(j.at("rotation")), vec_from_json(j.at("translation")), frame};
  p.validate();
  return p;
}

inline json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics k;
  j.at("fx").get_to(k.fx);
  j.at("fy").get_to(k.fy);
  j.at("cx").get_to(k.cx);
  j.at("cy").get_to(k.cy);
  j.at("width").get_to(k.width);
  j.at("height").get_to(k.height);
  k.validate();
  return k;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestImage {
  std::string id;
  std::string trip;
  int camera = 0;
  double timestamp = 0.0;
  std::string image;  // paths relative to the manifest directory
  std::string mask;
  Pose prior_pose;
  std::optional<Pose> refined_pose;
  std::string gt_depth;       // optional
  std::string split = "train";  // "train" or "test"
};

struct ManifestTrajectory {
  std::string trip;
  std::string file;
};

struct Manifest {
  fs::path root;  // directory relative paths are resolved against
  std::vector<std::shared_ptr<const CameraModel>> cameras;
  std::vector<ManifestImage> images;
  std::vector<ManifestTrajectory> trajectories;

  std::shared_ptr<const CameraModel> camera(int id) const {
    for (const auto& c : cameras)
      if (c->id == id) return c;
    throw NotFound("camera " + std::to_string(id));
  }
};

inline json to_json(const Manifest& m) {
  json cams = json::array();
  for (const auto& c : m.cameras)
    cams.push_back({{"id", c->id},
                    {"intrinsics", intrinsics_to_json(c->intrinsics)},
                    {"extrinsics", {{"rotation", mat_to_json(c->extrinsics.rotation)},
                                    {"translation", vec_to_json(c->extrinsics.translation)}}}});
  json imgs = json::array();
  for (const auto& i : m.images) {
    json e = {{"id", i.id},         {"trip", i.trip},   {"camera", i.camera},
              {"timestamp", i.timestamp}, {"image", i.image}, {"mask", i.mask},
              {"prior_pose", pose_to_json(i.prior_pose)}, {"split", i.split}};
    if (i.refined_pose) e["refined_pose"] = pose_to_json(*i.refined_pose);
    if (!i.gt_depth.empty()) e["gt_depth"] = i.gt_depth;
    imgs.push_back(std::move(e));
  }
  json trajs = json::array();
  for (const auto& t : m.trajectories) trajs.push_back({{"trip", t.trip}, {"file", t.file}});
  return {{"cameras", cams}, {"images", imgs}, {"trajectories", trajs}};
}

inline Manifest manifest_from_json(const json& j, const fs::path& root) {
  Manifest m;
  m.root = root;
  try {
    for (const auto& c : j.at("cameras")) {
      auto cam = std::make_shared<CameraModel>();
      c.at("id").get_to(cam->id);
      cam->intrinsics = intrinsics_from_json(c.at("intrinsics"));
      cam->extrinsics.rotation = mat_from_json(c.at("extrinsics").at("rotation"));
      cam->extrinsics.translation = vec_from_json(c.at("extrinsics").at("translation"));
      cam->extrinsics.validate();
      m.cameras.push_back(std::move(cam));
    }
    for (const auto& e : j.at("images")) {
      ManifestImage i;
      e.at("id").get_to(i.id);
      e.at("trip").get_to(i.trip);
      e.at("camera").get_to(i.camera);
      e.at("timestamp").get_to(i.timestamp);
      e.at("image").get_to(i.image);
      if (e.contains("mask")) e.at("mask").get_to(i.mask);
      i.prior_pose = pose_from_json(e.at("prior_pose"));
      if (e.contains("refined_pose") && !e.at("refined_pose").is_null())
        i.refined_pose = pose_from_json(e.at("refined_pose"));
      if (e.contains("gt_depth")) e.at("gt_depth").get_to(i.gt_depth);
      if (e.contains("split")) e.at("split").get_to(i.split);
      m.images.push_back(std::move(i));
    }
    if (j.contains("trajectories"))
      for (const auto& t : j.at("trajectories")) m.trajectories.push_back({t.at("trip"), t.at("file")});
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline Manifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open manifest " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << to_json(m).dump(2) << '\n';
}

// Loads pixels, mask and camera for one manifest entry. A missing raster
// is an ingestion error naming the image.
inline ImageRecord load_image(const Manifest& m, const ManifestImage& e) {
  ImageRecord img;
  img.id = e.id;
  img.trip = e.trip;
  img.camera_id = e.camera;
  img.timestamp = e.timestamp;
  img.prior_pose = e.prior_pose;
  img.refined_pose = e.refined_pose;
  img.camera = m.camera(e.camera);
  const fs::path image_path = m.root / e.image;
  if (!fs::exists(image_path)) throw IngestionError("image " + e.id + ": missing image file " + image_path.string());
  img.pixels = image_from_png(read_png(image_path));
  if (e.mask.empty()) throw IngestionError("image " + e.id + ": no mask file listed");
  const fs::path mask_path = m.root / e.mask;
  if (!fs::exists(mask_path)) throw IngestionError("image " + e.id + ": missing mask file " + mask_path.string());
  img.mask = mask_from_png(read_png(mask_path));
  const auto& k = img.camera->intrinsics;
  if (img.pixels.width != k.width || img.pixels.height != k.height)
    throw IngestionError("image " + e.id + ": raster size differs from camera intrinsics");
  img.validate();
  return img;
}

inline std::vector<ImageRecord> load_images(const Manifest& m, const std::string& split = "") {
  std::vector<ImageRecord> out;
  for (const auto& e : m.images)
    if (split.empty() || e.split == split) out.push_back(load_image(m, e));
  return out;
}

inline std::vector<GuidanceTrajectory> load_trajectories(const Manifest& m) {
  std::vector<GuidanceTrajectory> out;
  for (const auto& t : m.trajectories) {
    std::ifstream is(m.root / t.file);
    if (!is) throw IngestionError("trajectory " + t.trip + ": cannot open " + (m.root / t.file).string());
    out.push_back(read_trajectory(is, t.trip));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

inline json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_rays", c.batch_rays},
          {"n_samples", c.n_samples},
          {"near", c.near},
          {"far", c.far},
          {"lr_grid", c.lr_grid},
          {"lr_head", c.lr_head},
          {"lr_embedding", c.lr_embedding},
          {"final_lr_fraction", c.final_lr_fraction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"lambda_depth", c.lambda_depth},
          {"depth_fraction", c.depth_fraction},
          {"depth_target", c.depth_target == DepthTarget::kDirac ? "dirac" : "gaussian"},
          {"use_embeddings", c.use_embeddings},
          {"stratified", c.stratified},
          {"seed", c.seed},
          {"eval_every", c.eval_every}};
}

inline void update_from_json(TrainConfig& c, const json& j) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("iterations", c.iterations);
  get("batch_rays", c.batch_rays);
  get("n_samples", c.n_samples);
  get("near", c.near);
  get("far", c.far);
  get("lr_grid", c.lr_grid);
  get("lr_head", c.lr_head);
  get("lr_embedding", c.lr_embedding);
  get("final_lr_fraction", c.final_lr_fraction);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_epsilon", c.adam_epsilon);
  get("lambda_depth", c.lambda_depth);
  get("depth_fraction", c.depth_fraction);
  if (j.contains("depth_target")) {
    const auto s = j.at("depth_target").get<std::string>();
    if (s == "dirac") {
      c.depth_target = DepthTarget::kDirac;
    } else if (s == "gaussian") {
      c.depth_target = DepthTarget::kGaussian;
    } else {
      throw FormatError("depth_target must be dirac or gaussian");
    }
  }
  get("use_embeddings", c.use_embeddings);
  get("stratified", c.stratified);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
}

inline json to_json(const SelectionConfig& c) {
  return {{"dynamic_threshold", c.dynamic_threshold},
          {"max_translation", c.max_translation},
          {"max_rotation_deg", c.max_rotation * 180.0 / kPi},
          {"diversity_radius", c.diversity.pos_radius},
          {"diversity_time_window", c.diversity.time_window},
          {"diversity_view_angle_deg", c.diversity.view_angle * 180.0 / kPi},
          {"diversity_keep", c.diversity.keep_per_cluster}};
}

inline void update_from_json(SelectionConfig& c, const json& j) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("dynamic_threshold", c.dynamic_threshold);
  get("max_translation", c.max_translation);
  if (j.contains("max_rotation_deg")) c.max_rotation = j.at("max_rotation_deg").get<double>() * kPi / 180.0;
  get("diversity_radius", c.diversity.pos_radius);
  get("diversity_time_window", c.diversity.time_window);
  if (j.contains("diversity_view_angle_deg"))
    c.diversity.view_angle = j.at("diversity_view_angle_deg").get<double>() * kPi / 180.0;
  get("diversity_keep", c.diversity.keep_per_cluster);
}

struct PipelineOptions {
  double block_side = 80.0;
  double block_overlap = kDefaultBlockOverlap;
  bool occlusion_fill = true;
  double max_ground_depth = kDefaultMaxGroundDepth;
};

inline json to_json(const PipelineOptions& p) {
  return {{"block_side", p.block_side},
          {"block_overlap", p.block_overlap},
          {"occlusion_fill", p.occlusion_fill},
          {"max_ground_depth", p.max_ground_depth}};
}

inline void update_from_json(PipelineOptions& p, const json& j) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("block_side", p.block_side);
  get("block_overlap", p.block_overlap);
  get("occlusion_fill", p.occlusion_fill);
  get("max_ground_depth", p.max_ground_depth);
}

// Every tunable of the pipeline in one document:
// {"field": {...}, "train": {...}, "selection": {...}, "pipeline": {...}}.
struct Config {
  FieldConfig field;
  TrainConfig train;
  SelectionConfig selection;
  PipelineOptions pipeline;
};

inline json to_json(const Config& c) {
  return {{"field", to_json(c.field)},
          {"train", to_json(c.train)},
          {"selection", to_json(c.selection)},
          {"pipeline", to_json(c.pipeline)}};
}

inline void update_from_json(Config& c, const json& j) {
  try {
    if (j.contains("field")) update_from_json(c.field, j.at("field"));
    if (j.contains("train")) update_from_json(c.train, j.at("train"));
    if (j.contains("selection")) update_from_json(c.selection, j.at("selection"));
    if (j.contains("pipeline")) update_from_json(c.pipeline, j.at("pipeline"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

inline Config read_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  Config c;
  update_from_json(c, j);
  return c;
}

inline void write_config(const fs::path& path, const Config& c) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_field(const fs::path& path, const RadianceField& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + path.string());
  field.save(os);
}

inline RadianceField load_field(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFound("checkpoint " + path.string());
  return RadianceField::load(is);
}

}  // namespace csnerf::io
