#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtgs/camera.hpp"
#include "rtgs/image.hpp"
#include "rtgs/splat.hpp"

namespace rtgs {

/// One input view. Masks and monocular normals are optional; a zero normal
/// marks a pixel without an estimate.
struct SceneView {
  Camera camera;
  ImageF image;
  std::optional<std::vector<uint8_t>> mask;
  std::optional<std::vector<Vec3>> mono_normals;

  friend bool operator==(const SceneView&, const SceneView&) = default;
};

struct SceneBundle {
  std::vector<SceneView> views;
  std::vector<ColoredPoint> points;
  Aabb bbox;
  std::vector<std::string> notes;  // skipped optional assets

  bool has_masks() const {
    for (const auto& v : views)
      if (v.mask) return true;
    return false;
  }
};

inline constexpr double kNormalUnitTol = 1e-3;

// ---------------------------------------------------------------------------
// ASCII PLY point clouds (x y z and an RGB triple).

inline std::vector<ColoredPoint> read_ply_points(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("read_ply_points: cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  if (line.rfind("ply", 0) != 0) throw Error("read_ply_points: " + path.string() + " is not a PLY file");
  size_t count = 0;
  bool ascii = false, in_vertex = false;
  std::vector<std::pair<std::string, std::string>> props;  // (type, name)
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      std::string name;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (!in_vertex) throw Error("read_ply_points: unsupported element '" + name + "' in " + path.string());
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back({type, name});
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error("read_ply_points: only ASCII PLY is supported (" + path.string() + ")");
  auto find = [&](std::initializer_list<const char*> names) -> int {
    for (size_t i = 0; i < props.size(); ++i)
      for (const char* n : names)
        if (props[i].second == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = find({"x"}), iy = find({"y"}), iz = find({"z"});
  const int ir = find({"red", "r"}), ig = find({"green", "g"}), ib = find({"blue", "b"});
  if (ix < 0 || iy < 0 || iz < 0 || ir < 0 || ig < 0 || ib < 0)
    throw Error("read_ply_points: " + path.string() + " needs x y z and r g b properties");
  std::vector<ColoredPoint> pts(count);
  std::vector<double> vals(props.size());
  for (size_t i = 0; i < count; ++i) {
    for (double& v : vals)
      if (!(f >> v)) throw Error("read_ply_points: truncated vertex list in " + path.string() + " at vertex " + std::to_string(i));
    auto color = [&](int k) { return props[k].first == "uchar" || props[k].first == "uint8" ? vals[k] / 255.0 : vals[k]; };
    pts[i] = {{vals[ix], vals[iy], vals[iz]}, {color(ir), color(ig), color(ib)}};
  }
  return pts;
}

inline void write_ply_points(const std::filesystem::path& path, const std::vector<ColoredPoint>& pts) {
  std::ofstream f(path);
  if (!f) throw Error("write_ply_points: cannot open " + path.string());
  f << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
    << "\nproperty double x\nproperty double y\nproperty double z\n"
       "property double red\nproperty double green\nproperty double blue\nend_header\n";
  f.precision(17);
  for (const auto& p : pts)
    f << p.position.x << ' ' << p.position.y << ' ' << p.position.z << ' ' << p.color.x << ' ' << p.color.y
      << ' ' << p.color.z << '\n';
  if (!f) throw Error("write_ply_points: write failed for " + path.string());
}

// ---------------------------------------------------------------------------

namespace scene_io_detail {

inline std::vector<uint8_t> read_mask(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::vector<uint8_t> m;
  if (ext == ".png" || ext == ".PNG") {
    const auto raw = read_png8(p);
    m.resize(static_cast<size_t>(raw.width) * raw.height);
    for (size_t i = 0; i < m.size(); ++i) m[i] = raw.data[i * raw.channels] >= 128;
    return m;
  }
  const auto img = read_image(p);
  m.resize(static_cast<size_t>(img.width) * img.height);
  for (size_t i = 0; i < m.size(); ++i) m[i] = img.data[i * img.channels] > 0.5f;
  return m;
}

inline std::pair<int, int> mask_size(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  if (ext == ".png" || ext == ".PNG") {
    const auto raw = read_png8(p);
    return {raw.width, raw.height};
  }
  const auto img = read_image(p);
  return {img.width, img.height};
}

inline std::optional<std::filesystem::path> optional_path(const nlohmann::json& arr, size_t i) {
  if (!arr.is_array() || i >= arr.size() || arr[i].is_null()) return std::nullopt;
  return std::filesystem::path(arr[i].get<std::string>());
}

}  // namespace scene_io_detail

/// Loads and validates `dir/scene.json` and the files it references.
inline SceneBundle load_scene(const std::filesystem::path& dir) {
  using namespace scene_io_detail;
  using nlohmann::json;
  const auto path = dir / "scene.json";
  std::ifstream f(path);
  if (!f) throw Error("load_scene: cannot open " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error("load_scene: parse error in " + path.string() + ": " + e.what());
  }
  SceneBundle b;
  try {
    const auto& cams = j.at("cameras");
    const auto& imgs = j.at("images");
    if (!cams.is_array() || !imgs.is_array() || cams.size() != imgs.size())
      throw Error("load_scene: 'cameras' and 'images' must be arrays of equal length in " + path.string());
    const json masks = j.value("masks", json());
    const json normals = j.value("mono_normals", json());
    for (size_t i = 0; i < cams.size(); ++i) {
      const std::string what = "view " + std::to_string(i);
      SceneView v;
      const auto& c = cams[i];
      v.camera.fx = c.at("fx").get<double>();
      v.camera.fy = c.at("fy").get<double>();
      v.camera.cx = c.at("cx").get<double>();
      v.camera.cy = c.at("cy").get<double>();
      v.camera.width = c.at("width").get<int>();
      v.camera.height = c.at("height").get<int>();
      const auto m = c.at("world_to_camera").get<std::vector<double>>();
      if (m.size() != 16) throw Error("load_scene: " + what + ": world_to_camera needs 16 values");
      std::array<double, 16> mm;
      std::copy(m.begin(), m.end(), mm.begin());
      v.camera.set_world_to_camera(mm);
      v.camera.validate("load_scene: " + what);
      v.image = read_image(dir / imgs[i].get<std::string>());
      if (v.image.width != v.camera.width || v.image.height != v.camera.height)
        throw Error("load_scene: " + what + ": image is " + std::to_string(v.image.width) + "x" +
                    std::to_string(v.image.height) + " but the camera is " + std::to_string(v.camera.width) +
                    "x" + std::to_string(v.camera.height));
      if (v.image.channels != 3) throw Error("load_scene: " + what + ": image must be RGB");
      const size_t np = static_cast<size_t>(v.camera.width) * v.camera.height;
      if (auto mp = optional_path(masks, i)) {
        if (std::filesystem::exists(dir / *mp)) {
          const auto [mw, mh] = mask_size(dir / *mp);
          if (mw != v.camera.width || mh != v.camera.height)
            throw Error("load_scene: " + what + ": mask size does not match the camera");
          v.mask = read_mask(dir / *mp);
        } else {
          b.notes.push_back(what + ": mask " + mp->string() + " missing, treated as absent");
        }
      }
      if (auto np_path = optional_path(normals, i)) {
        if (std::filesystem::exists(dir / *np_path)) {
          const auto img = read_image(dir / *np_path);
          if (img.width != v.camera.width || img.height != v.camera.height || img.channels != 3)
            throw Error("load_scene: " + what + ": mono-normal map size does not match the camera");
          std::vector<Vec3> n(np);
          for (size_t p = 0; p < np; ++p) {
            n[p] = {img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]};
            if (dot(n[p], n[p]) != 0.0 && std::abs(norm(n[p]) - 1.0) > kNormalUnitTol)
              throw Error("load_scene: " + what + ": mono-normal at pixel " + std::to_string(p) + " is not unit length");
          }
          v.mono_normals = std::move(n);
        } else {
          b.notes.push_back(what + ": mono-normals " + np_path->string() + " missing, treated as absent");
        }
      }
      b.views.push_back(std::move(v));
    }
    if (j.contains("points") && !j["points"].is_null())
      b.points = read_ply_points(dir / j["points"].get<std::string>());
    const auto bb = j.at("bbox").get<std::vector<double>>();
    if (bb.size() != 6) throw Error("load_scene: bbox needs 6 values");
    b.bbox = {{bb[0], bb[1], bb[2]}, {bb[3], bb[4], bb[5]}};
    if (!(b.bbox.extent().x > 0.0 && b.bbox.extent().y > 0.0 && b.bbox.extent().z > 0.0))
      throw Error("load_scene: bbox must have positive extent");
  } catch (const json::exception& e) {
    throw Error("load_scene: malformed field in " + path.string() + ": " + e.what());
  }
  if (b.views.empty()) throw Error("load_scene: " + path.string() + " lists no views");
  return b;
}

/// Writes the bundle as PFM images and normals, PNG masks, a PLY point file
/// and scene.json. load_scene returns the same bundle, except that normals
/// come back at single precision.
inline void save_scene(const std::filesystem::path& dir, const SceneBundle& b) {
  using nlohmann::json;
  std::filesystem::create_directories(dir);
  json j;
  j["cameras"] = json::array();
  j["images"] = json::array();
  j["masks"] = json::array();
  j["mono_normals"] = json::array();
  for (size_t i = 0; i < b.views.size(); ++i) {
    const auto& v = b.views[i];
    const std::string tag = std::to_string(i);
    const auto m = v.camera.world_to_camera();
    j["cameras"].push_back({{"fx", v.camera.fx},
                            {"fy", v.camera.fy},
                            {"cx", v.camera.cx},
                            {"cy", v.camera.cy},
                            {"width", v.camera.width},
                            {"height", v.camera.height},
                            {"world_to_camera", std::vector<double>(m.begin(), m.end())}});
    const std::string img = "image_" + tag + ".pfm";
    write_pfm(dir / img, v.image);
    j["images"].push_back(img);
    if (v.mask) {
      Image<uint8_t> mk(v.camera.width, v.camera.height, 1);
      for (size_t p = 0; p < v.mask->size(); ++p) mk.data[p] = (*v.mask)[p] ? 255 : 0;
      const std::string name = "mask_" + tag + ".png";
      write_png8(dir / name, mk);
      j["masks"].push_back(name);
    } else {
      j["masks"].push_back(nullptr);
    }
    if (v.mono_normals) {
      ImageF n(v.camera.width, v.camera.height, 3);
      for (size_t p = 0; p < v.mono_normals->size(); ++p)
        for (int k = 0; k < 3; ++k) n.data[p * 3 + k] = static_cast<float>((*v.mono_normals)[p][k]);
      const std::string name = "normal_" + tag + ".pfm";
      write_pfm(dir / name, n);
      j["mono_normals"].push_back(name);
    } else {
      j["mono_normals"].push_back(nullptr);
    }
  }
  write_ply_points(dir / "points.ply", b.points);
  j["points"] = "points.ply";
  j["bbox"] = {b.bbox.lo.x, b.bbox.lo.y, b.bbox.lo.z, b.bbox.hi.x, b.bbox.hi.y, b.bbox.hi.z};
  std::ofstream f(dir / "scene.json");
  if (!f) throw Error("save_scene: cannot write " + (dir / "scene.json").string());
  f << j.dump(2) << '\n';
}

}  // namespace rtgs
