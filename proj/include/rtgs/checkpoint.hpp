#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rtgs/adam.hpp"
#include "rtgs/densify.hpp"
#include "rtgs/pipeline.hpp"
#include "rtgs/schedule.hpp"
#include "rtgs/triangle_mesh.hpp"

namespace rtgs {

/// Complete optimizer state plus what is needed to render without the
/// source scene (cameras, masks, ray offset).
struct TrainState {
  int step = 0;
  uint64_t seed = 0;
  ScheduleConfig schedule;
  double ray_eps = 0.0;
  Aabb bbox;
  std::vector<Camera> cameras;
  std::vector<std::optional<std::vector<uint8_t>>> masks;
  SceneSets sets;
  std::array<AdamMoments, 3> moments;
  std::array<GradStats, 3> stats;
  std::optional<TriangleMesh> mesh;

  GaussianSet& set(int k) { return k == 0 ? sets.diffuse : (k == 1 ? sets.reflection : sets.transmittance); }
  const GaussianSet& set(int k) const {
    return k == 0 ? sets.diffuse : (k == 1 ? sets.reflection : sets.transmittance);
  }

  friend bool operator==(const TrainState& a, const TrainState& b) {
    return a.step == b.step && a.seed == b.seed && a.schedule.scale == b.schedule.scale &&
           std::memcmp(&a.schedule.bounds, &b.schedule.bounds, sizeof(StageBoundaries)) == 0 &&
           a.schedule.perc == b.schedule.perc &&
           std::memcmp(&a.schedule.ablate, &b.schedule.ablate, sizeof(Ablations)) == 0 &&
           a.ray_eps == b.ray_eps && a.bbox.lo == b.bbox.lo && a.bbox.hi == b.bbox.hi &&
           a.cameras == b.cameras && a.masks == b.masks && a.sets == b.sets && a.moments == b.moments &&
           a.stats == b.stats && a.mesh == b.mesh;
  }
};

inline constexpr char kCheckpointMagic[8] = {'R', 'T', 'G', 'S', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  template <typename T>
  void array(const T* p, size_t n) {
    const auto* c = reinterpret_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n * sizeof(T));
  }
  void params(const std::vector<SplatParams>& ps) {
    pod<uint64_t>(ps.size());
    for (const auto& p : ps)
      visit_params(p, [&](ParamGroup, std::span<const double> s) { array(s.data(), s.size()); });
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string name) : buf_(std::move(data)), name_(std::move(name)) {}

  template <typename T>
  T pod() {
    T v;
    array(&v, 1);
    return v;
  }
  template <typename T>
  void array(T* p, size_t n) {
    const size_t bytes = n * sizeof(T);
    if (n > buf_.size() || bytes > buf_.size() - pos_)
      throw Error("load_checkpoint: " + name_ + " truncated at offset " + std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, bytes);
    pos_ += bytes;
  }
  size_t count(size_t max_elem_bytes) {
    const auto n = pod<uint64_t>();
    if (max_elem_bytes > 0 && n > (buf_.size() - pos_) / max_elem_bytes)
      throw Error("load_checkpoint: " + name_ + " has an implausible count at offset " + std::to_string(pos_ - 8));
    return static_cast<size_t>(n);
  }
  std::vector<SplatParams> params() {
    const size_t n = count(kParamsPerSplat * sizeof(double));
    std::vector<SplatParams> ps(n, zero_grad());
    for (auto& p : ps) visit_params(p, [&](ParamGroup, std::span<double> s) { array(s.data(), s.size()); });
    return ps;
  }
  size_t offset() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::string name_;
  size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  ckpt_detail::Writer w;
  w.array(kCheckpointMagic, 8);
  w.pod(kCheckpointVersion);
  w.pod<int32_t>(s.step);
  w.pod<uint64_t>(s.seed);
  w.pod(s.schedule.scale);
  w.pod(s.schedule.bounds);
  w.pod(s.schedule.ablate);
  w.pod<uint8_t>(s.schedule.perc);
  w.pod(s.ray_eps);
  w.pod(s.bbox);
  w.pod<uint64_t>(s.cameras.size());
  for (size_t i = 0; i < s.cameras.size(); ++i) {
    const auto& c = s.cameras[i];
    w.pod(c.fx), w.pod(c.fy), w.pod(c.cx), w.pod(c.cy);
    w.pod<int32_t>(c.width), w.pod<int32_t>(c.height);
    const auto m = c.world_to_camera();
    w.array(m.data(), 12);
    const bool has_mask = i < s.masks.size() && s.masks[i];
    w.pod<uint8_t>(has_mask);
    if (has_mask) {
      w.pod<uint64_t>(s.masks[i]->size());
      w.array(s.masks[i]->data(), s.masks[i]->size());
    }
  }
  for (int k = 0; k < 3; ++k) {
    const auto& set = s.set(k);
    w.pod<uint8_t>(static_cast<uint8_t>(set.role()));
    w.pod<int32_t>(set.sh_degree());
    w.params(set.primitives);
    w.params(s.moments[k].m);
    w.params(s.moments[k].v);
    w.pod<uint64_t>(s.stats[k].size());
    w.array(s.stats[k].accum.data(), s.stats[k].size());
    w.array(s.stats[k].count.data(), s.stats[k].size());
  }
  w.pod<uint8_t>(s.mesh.has_value());
  if (s.mesh) {
    w.pod<uint64_t>(s.mesh->vertices().size());
    w.array(s.mesh->vertices().data(), s.mesh->vertices().size());
    w.pod<uint64_t>(s.mesh->triangles().size());
    w.array(s.mesh->triangles().data(), s.mesh->triangles().size());
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("save_checkpoint: cannot open " + path.string());
  f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!f) throw Error("save_checkpoint: write failed for " + path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_checkpoint: cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ckpt_detail::Reader r(std::move(data), path.string());
  char magic[8];
  r.array(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error("load_checkpoint: " + path.string() + " is not a checkpoint (bad magic at offset 0)");
  const auto version = r.pod<uint32_t>();
  if (version != kCheckpointVersion)
    throw Error("load_checkpoint: " + path.string() + " has version " + std::to_string(version) +
                ", expected " + std::to_string(kCheckpointVersion));
  TrainState s;
  s.step = r.pod<int32_t>();
  s.seed = r.pod<uint64_t>();
  s.schedule.scale = r.pod<double>();
  s.schedule.bounds = r.pod<StageBoundaries>();
  s.schedule.ablate = r.pod<Ablations>();
  s.schedule.perc = r.pod<uint8_t>() != 0;
  s.ray_eps = r.pod<double>();
  s.bbox = r.pod<Aabb>();
  const size_t nc = r.count(4 * 8 + 8 + 12 * 8 + 1);
  for (size_t i = 0; i < nc; ++i) {
    Camera c;
    c.fx = r.pod<double>(), c.fy = r.pod<double>(), c.cx = r.pod<double>(), c.cy = r.pod<double>();
    c.width = r.pod<int32_t>(), c.height = r.pod<int32_t>();
    std::array<double, 16> m{};
    r.array(m.data(), 12);
    m[15] = 1.0;
    c.set_world_to_camera(m);
    s.cameras.push_back(c);
    if (r.pod<uint8_t>()) {
      std::vector<uint8_t> mask(r.count(1));
      r.array(mask.data(), mask.size());
      s.masks.push_back(std::move(mask));
    } else {
      s.masks.push_back(std::nullopt);
    }
  }
  for (int k = 0; k < 3; ++k) {
    const auto role = static_cast<Role>(r.pod<uint8_t>());
    const int degree = r.pod<int32_t>();
    if (static_cast<int>(role) != k || degree < 0 || degree > 3)
      throw Error("load_checkpoint: corrupt set header at offset " + std::to_string(r.offset()));
    s.set(k) = GaussianSet(role, degree);
    s.set(k).primitives = r.params();
    s.moments[k].m = r.params();
    s.moments[k].v = r.params();
    const size_t n = r.count(12);
    s.stats[k] = GradStats(n);
    r.array(s.stats[k].accum.data(), n);
    r.array(s.stats[k].count.data(), n);
    if (s.moments[k].size() != s.set(k).size() || n != s.set(k).size())
      throw Error("load_checkpoint: buffer sizes disagree at offset " + std::to_string(r.offset()));
  }
  if (r.pod<uint8_t>()) {
    MeshData md;
    md.vertices.resize(r.count(sizeof(Vec3)));
    r.array(md.vertices.data(), md.vertices.size());
    md.triangles.resize(r.count(sizeof(std::array<int, 3>)));
    r.array(md.triangles.data(), md.triangles.size());
    s.mesh = TriangleMesh(std::move(md));
  }
  if (!r.done()) throw Error("load_checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  return s;
}

}  // namespace rtgs
