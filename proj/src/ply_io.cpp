#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "splatkit/common.hpp"
#include "splatkit/io.hpp"

namespace splatkit {

namespace {

const char* kProperties[] = {"x",       "y",       "z",       "scale_0", "scale_1",
                             "scale_2", "rot_0",   "rot_1",   "rot_2",   "rot_3",
                             "opacity", "f_dc_0",  "f_dc_1",  "f_dc_2"};
constexpr int kPropertyCount = 14;

}  // namespace

void write_splat_ply(const SplatSet& set, const std::string& path) {
  if (set.count() == 0) throw DataError("write_splat_ply: empty splat set");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);

  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << set.count() << "\n";
  for (const char* prop : kProperties) out << "property float " << prop << "\n";
  out << "end_header\n";

  std::vector<float> row(kPropertyCount);
  for (const Splat& s : set.splats) {
    int i = 0;
    for (int c = 0; c < 3; ++c) row[static_cast<size_t>(i++)] = static_cast<float>(s.position[c]);
    for (int c = 0; c < 3; ++c) row[static_cast<size_t>(i++)] = static_cast<float>(s.log_scale[c]);
    for (int c = 0; c < 4; ++c) row[static_cast<size_t>(i++)] = static_cast<float>(s.rotation[c]);
    row[static_cast<size_t>(i++)] = static_cast<float>(s.opacity_logit);
    for (int c = 0; c < 3; ++c) row[static_cast<size_t>(i++)] = static_cast<float>(s.color[c]);
    out.write(reinterpret_cast<const char*>(row.data()), kPropertyCount * sizeof(float));
  }
  if (!out) throw DataError("write failed: " + path);
}

SplatSet read_splat_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PLY: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply") throw DataError("not a PLY file: " + path);

  int count = -1;
  std::vector<std::string> props;
  bool little_endian = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      little_endian = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string kind;
      ls >> kind >> count;
      if (kind != "vertex") throw DataError("unsupported PLY element: " + kind);
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type != "float") throw DataError("unsupported PLY property type: " + type);
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!little_endian) throw DataError("PLY must be binary little-endian: " + path);
  if (count < 0) throw DataError("PLY missing vertex element: " + path);

  // Column lookup; position is required, splat attributes are optional so
  // plain point clouds load as default splats.
  auto find = [&](const char* name) {
    for (size_t i = 0; i < props.size(); ++i)
      if (props[i] == name) return static_cast<int>(i);
    return -1;
  };
  int idx[kPropertyCount];
  for (int i = 0; i < kPropertyCount; ++i) idx[i] = find(kProperties[i]);
  if (idx[0] < 0 || idx[1] < 0 || idx[2] < 0) throw DataError("PLY missing x/y/z: " + path);

  std::vector<float> row(props.size());
  SplatSet set;
  set.splats.reserve(static_cast<size_t>(count));
  for (int v = 0; v < count; ++v) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(props.size() * sizeof(float)));
    if (!in) throw DataError("truncated PLY payload: " + path);
    auto get = [&](int slot, double fallback) {
      return idx[slot] >= 0 ? static_cast<double>(row[static_cast<size_t>(idx[slot])]) : fallback;
    };
    Splat s;
    for (int c = 0; c < 3; ++c) s.position[c] = get(c, 0.0);
    for (int c = 0; c < 3; ++c) s.log_scale[c] = get(3 + c, std::log(0.05));
    for (int c = 0; c < 4; ++c) s.rotation[c] = get(6 + c, c == 0 ? 1.0 : 0.0);
    s.opacity_logit = get(10, logit(0.1));
    for (int c = 0; c < 3; ++c) s.color[c] = get(11 + c, 0.5);
    set.splats.push_back(s);
  }
  return set;
}

}  // namespace splatkit
