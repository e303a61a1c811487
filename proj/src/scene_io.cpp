#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "splatkit/common.hpp"
#include "splatkit/io.hpp"

namespace splatkit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json matrix_to_json(const Eigen::Matrix4d& m) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) {
    json row = json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix4d matrix_from_json(const json& j) {
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

}  // namespace

void write_manifest(const Manifest& manifest, const std::string& path) {
  json j;
  j["background"] = {manifest.background[0], manifest.background[1], manifest.background[2]};
  j["t_steps"] = manifest.t_steps;
  if (manifest.aabb) {
    j["aabb"] = {{"lo", {manifest.aabb->lo[0], manifest.aabb->lo[1], manifest.aabb->lo[2]}},
                 {"hi", {manifest.aabb->hi[0], manifest.aabb->hi[1], manifest.aabb->hi[2]}}};
  }
  if (manifest.init_points) j["init_points"] = *manifest.init_points;
  j["frames"] = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    json f;
    f["file_path"] = e.file_path;
    f["transform_matrix"] = matrix_to_json(e.transform);
    f["fl_x"] = e.fl_x;
    f["fl_y"] = e.fl_y;
    f["cx"] = e.cx;
    f["cy"] = e.cy;
    f["w"] = e.width;
    f["h"] = e.height;
    f["split"] = e.split;
    if (e.time) f["time"] = *e.time;
    if (e.mask_path) f["mask_path"] = *e.mask_path;
    j["frames"].push_back(f);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  Manifest m;
  if (j.contains("background"))
    for (int c = 0; c < 3; ++c) m.background[c] = j["background"].at(c).get<double>();
  m.t_steps = j.value("t_steps", 1);
  if (j.contains("aabb")) {
    SceneAabb box;
    for (int c = 0; c < 3; ++c) {
      box.lo[c] = j["aabb"]["lo"].at(c).get<double>();
      box.hi[c] = j["aabb"]["hi"].at(c).get<double>();
    }
    m.aabb = box;
  }
  if (j.contains("init_points")) m.init_points = j["init_points"].get<std::string>();
  for (const json& f : j.at("frames")) {
    ManifestEntry e;
    e.file_path = f.at("file_path").get<std::string>();
    e.transform = matrix_from_json(f.at("transform_matrix"));
    e.fl_x = f.at("fl_x").get<double>();
    e.fl_y = f.at("fl_y").get<double>();
    e.cx = f.at("cx").get<double>();
    e.cy = f.at("cy").get<double>();
    e.width = f.at("w").get<int>();
    e.height = f.at("h").get<int>();
    e.split = f.value("split", "train");
    if (f.contains("time")) e.time = f["time"].get<double>();
    if (f.contains("mask_path")) e.mask_path = f["mask_path"].get<std::string>();
    m.entries.push_back(e);
  }
  return m;
}

Camera camera_from_entry(const ManifestEntry& entry) {
  Mat3 r_c2w = entry.transform.block<3, 3>(0, 0);
  Vec3 t_c2w = entry.transform.block<3, 1>(0, 3);
  Camera cam;
  cam.rotation = r_c2w.transpose();
  cam.translation = -cam.rotation * t_c2w;
  cam.fx = entry.fl_x;
  cam.fy = entry.fl_y;
  cam.cx = entry.cx;
  cam.cy = entry.cy;
  cam.width = entry.width;
  cam.height = entry.height;
  cam.validate(1e-4);
  return cam;
}

SceneData load_scene(const std::string& scene_dir) {
  fs::path root(scene_dir);
  Manifest manifest = read_manifest((root / "manifest.json").string());

  SceneData scene;
  scene.background = manifest.background;
  scene.t_steps = manifest.t_steps;
  scene.aabb = manifest.aabb;

  for (const ManifestEntry& e : manifest.entries) {
    SceneView view;
    view.camera = camera_from_entry(e);
    fs::path img_path = root / e.file_path;
    if (!fs::exists(img_path)) throw DataError("missing image file: " + img_path.string());
    ImageData img = read_png(img_path.string());
    if (img.pixels.dim(0) != e.height || img.pixels.dim(1) != e.width)
      throw DataError("image dimensions disagree with manifest: " + img_path.string());
    view.frame.pixels = std::move(img.pixels);
    if (e.mask_path) {
      fs::path mask_path = root / *e.mask_path;
      if (!fs::exists(mask_path)) throw DataError("missing mask file: " + mask_path.string());
      ImageData mask = read_png(mask_path.string());
      Tensor m({mask.pixels.dim(0), mask.pixels.dim(1)});
      for (int y = 0; y < m.dim(0); ++y)
        for (int x = 0; x < m.dim(1); ++x) m.at(y, x) = mask.pixels.at(y, x, 0);
      view.frame.mask = std::move(m);
    } else if (img.alpha) {
      view.frame.mask = std::move(*img.alpha);
    }
    view.frame.validate();
    if (e.time) {
      view.time.t = *e.time;
      view.time.frame_index =
          scene.t_steps > 1
              ? static_cast<int>(std::lround(*e.time * (scene.t_steps - 1)))
              : 0;
    }
    view.is_test = e.split == "test";
    scene.views.push_back(std::move(view));
  }

  if (manifest.init_points) {
    fs::path pts_path = root / *manifest.init_points;
    if (!fs::exists(pts_path)) throw DataError("missing init points: " + pts_path.string());
    SplatSet pts = read_splat_ply(pts_path.string());
    scene.init_points = to_attributes(pts).position;
  }
  return scene;
}

void write_trajectory_csv(const Tensor& trajectory, const std::string& path) {
  if (trajectory.rank() != 3 || trajectory.dim(2) != 3)
    throw DataError("trajectory must be {T,K,3}");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory: " + path);
  out << "frame_index,splat_id,x,y,z\n";
  out.precision(17);
  for (int frame = 0; frame < trajectory.dim(0); ++frame)
    for (int i = 0; i < trajectory.dim(1); ++i)
      out << frame << ',' << i << ',' << trajectory.at(frame, i, 0) << ','
          << trajectory.at(frame, i, 1) << ',' << trajectory.at(frame, i, 2) << '\n';
  if (!out) throw DataError("trajectory write failed: " + path);
}

}  // namespace splatkit
