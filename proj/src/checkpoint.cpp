#include <cstring>
#include <fstream>

#include "json.hpp"
#include "splatkit/common.hpp"
#include "splatkit/trainer.hpp"

namespace splatkit {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'P', 'L', 'A', 'T', 'K', 'I', 'T'};

json config_to_json(const TrainConfig& c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["lr_start"] = c.lr_start;
  j["lr_end"] = c.lr_end;
  j["lr_end_iteration"] = c.lr_end_iteration;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["densify_interval"] = c.densify_interval;
  j["densify_until"] = c.densify_until;
  j["prune_opacity"] = c.prune_opacity;
  j["clone_grad_threshold"] = c.clone_grad_threshold;
  j["init_count"] = c.init_count;
  j["lr_scale_position"] = c.lr_scale_position;
  j["lr_scale_color"] = c.lr_scale_color;
  j["lr_scale_opacity"] = c.lr_scale_opacity;
  j["lr_scale_scale"] = c.lr_scale_scale;
  j["lr_scale_rotation"] = c.lr_scale_rotation;
  j["seed"] = c.seed;
  j["eval_interval"] = c.eval_interval;
  j["moran_neighbors"] = c.moran_neighbors;
  j["loss"] = {{"lambda_dssim", c.loss.lambda_dssim},
               {"lambda_mask", c.loss.lambda_mask},
               {"lambda_norm", c.loss.lambda_norm},
               {"lambda_moran", c.loss.lambda_moran},
               {"background", {c.loss.background[0], c.loss.background[1], c.loss.background[2]}}};
  j["fields"] = {{"pe_levels", c.fields.pe_levels},
                 {"fuser_width", c.fields.fuser_width},
                 {"deform_layers", c.fields.deform_layers},
                 {"deform_width", c.fields.deform_width},
                 {"color_layers", c.fields.color_layers},
                 {"color_width", c.fields.color_width},
                 {"scale_layers", c.fields.scale_layers},
                 {"scale_width", c.fields.scale_width},
                 {"opacity_layers", c.fields.opacity_layers},
                 {"opacity_width", c.fields.opacity_width},
                 {"rotation_layers", c.fields.rotation_layers},
                 {"rotation_width", c.fields.rotation_width},
                 {"width_scale", c.fields.width_scale},
                 {"base_scale", c.fields.base_scale},
                 {"use_triplane", c.fields.use_triplane},
                 {"time_conditioned", c.fields.time_conditioned},
                 {"resfield_rank", c.fields.resfield_rank},
                 {"t_steps", c.fields.t_steps},
                 {"relu", c.fields.act == Activation::Relu}};
  j["triplane"] = {{"noise_res", c.fields.triplane.noise_res},
                   {"noise_channels", c.fields.triplane.noise_channels},
                   {"channels", c.fields.triplane.channels},
                   {"n_up", c.fields.triplane.n_up},
                   {"feature_dim", c.fields.triplane.feature_dim},
                   {"relu", c.fields.triplane.act == Activation::Relu}};
  j["flow"] = {{"variant", to_string(c.flow.variant)},
               {"layers", c.flow.layers},
               {"width", c.flow.width},
               {"width_scale", c.flow.width_scale},
               {"feature_dim", c.flow.feature_dim},
               {"pe_levels", c.flow.pe_levels},
               {"dct_basis", c.flow.dct_basis},
               {"t_steps", c.flow.t_steps},
               {"resfield_rank", c.flow.resfield_rank},
               {"relu", c.flow.act == Activation::Relu}};
  j["raster"] = {{"z_near", c.raster.z_near},
                 {"dilation", c.raster.dilation},
                 {"sigma_extent", c.raster.sigma_extent},
                 {"weight_cutoff", c.raster.weight_cutoff},
                 {"alpha_min", c.raster.alpha_min},
                 {"alpha_max", c.raster.alpha_max}};
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  c.iterations = j.at("iterations").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr_start = j.at("lr_start").get<double>();
  c.lr_end = j.at("lr_end").get<double>();
  c.lr_end_iteration = j.at("lr_end_iteration").get<int>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.densify_interval = j.at("densify_interval").get<int>();
  c.densify_until = j.at("densify_until").get<int>();
  c.prune_opacity = j.at("prune_opacity").get<double>();
  c.clone_grad_threshold = j.at("clone_grad_threshold").get<double>();
  c.init_count = j.at("init_count").get<int>();
  c.lr_scale_position = j.at("lr_scale_position").get<double>();
  c.lr_scale_color = j.at("lr_scale_color").get<double>();
  c.lr_scale_opacity = j.at("lr_scale_opacity").get<double>();
  c.lr_scale_scale = j.at("lr_scale_scale").get<double>();
  c.lr_scale_rotation = j.at("lr_scale_rotation").get<double>();
  c.seed = j.at("seed").get<unsigned long long>();
  c.eval_interval = j.at("eval_interval").get<int>();
  c.moran_neighbors = j.at("moran_neighbors").get<int>();
  const json& l = j.at("loss");
  c.loss.lambda_dssim = l.at("lambda_dssim").get<double>();
  c.loss.lambda_mask = l.at("lambda_mask").get<double>();
  c.loss.lambda_norm = l.at("lambda_norm").get<double>();
  c.loss.lambda_moran = l.at("lambda_moran").get<double>();
  for (int i = 0; i < 3; ++i) c.loss.background[i] = l.at("background").at(i).get<double>();
  const json& f = j.at("fields");
  c.fields.pe_levels = f.at("pe_levels").get<int>();
  c.fields.fuser_width = f.at("fuser_width").get<int>();
  c.fields.deform_layers = f.at("deform_layers").get<int>();
  c.fields.deform_width = f.at("deform_width").get<int>();
  c.fields.color_layers = f.at("color_layers").get<int>();
  c.fields.color_width = f.at("color_width").get<int>();
  c.fields.scale_layers = f.at("scale_layers").get<int>();
  c.fields.scale_width = f.at("scale_width").get<int>();
  c.fields.opacity_layers = f.at("opacity_layers").get<int>();
  c.fields.opacity_width = f.at("opacity_width").get<int>();
  c.fields.rotation_layers = f.at("rotation_layers").get<int>();
  c.fields.rotation_width = f.at("rotation_width").get<int>();
  c.fields.width_scale = f.at("width_scale").get<double>();
  c.fields.base_scale = f.at("base_scale").get<double>();
  c.fields.use_triplane = f.at("use_triplane").get<bool>();
  c.fields.time_conditioned = f.at("time_conditioned").get<bool>();
  c.fields.resfield_rank = f.at("resfield_rank").get<int>();
  c.fields.t_steps = f.at("t_steps").get<int>();
  c.fields.act = f.at("relu").get<bool>() ? Activation::Relu : Activation::Softplus;
  const json& tp = j.at("triplane");
  c.fields.triplane.noise_res = tp.at("noise_res").get<int>();
  c.fields.triplane.noise_channels = tp.at("noise_channels").get<int>();
  c.fields.triplane.channels = tp.at("channels").get<int>();
  c.fields.triplane.n_up = tp.at("n_up").get<int>();
  c.fields.triplane.feature_dim = tp.at("feature_dim").get<int>();
  c.fields.triplane.act = tp.at("relu").get<bool>() ? Activation::Relu : Activation::Softplus;
  const json& fl = j.at("flow");
  c.flow.variant = flow_variant_from_string(fl.at("variant").get<std::string>());
  c.flow.layers = fl.at("layers").get<int>();
  c.flow.width = fl.at("width").get<int>();
  c.flow.width_scale = fl.at("width_scale").get<double>();
  c.flow.feature_dim = fl.at("feature_dim").get<int>();
  c.flow.pe_levels = fl.at("pe_levels").get<int>();
  c.flow.dct_basis = fl.at("dct_basis").get<int>();
  c.flow.t_steps = fl.at("t_steps").get<int>();
  c.flow.resfield_rank = fl.at("resfield_rank").get<int>();
  c.flow.act = fl.at("relu").get<bool>() ? Activation::Relu : Activation::Softplus;
  const json& r = j.at("raster");
  c.raster.z_near = r.at("z_near").get<double>();
  c.raster.dilation = r.at("dilation").get<double>();
  c.raster.sigma_extent = r.at("sigma_extent").get<double>();
  c.raster.weight_cutoff = r.at("weight_cutoff").get<double>();
  c.raster.alpha_min = r.at("alpha_min").get<double>();
  c.raster.alpha_max = r.at("alpha_max").get<double>();
  c.raster.background = c.loss.background;
  return c;
}

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ostream& out, int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) write_u32(out, static_cast<uint32_t>(t.dim(d)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  uint32_t rank = read_u32(in);
  std::vector<int> shape(rank);
  for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(in));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  write_u32(out, static_cast<uint32_t>(ckpt.version));
  write_string(out, config_to_json(ckpt.config).dump());
  write_u32(out, static_cast<uint32_t>(ckpt.iteration));
  write_i64(out, ckpt.adam_steps);

  write_u32(out, static_cast<uint32_t>(ckpt.params.size()));
  for (const Parameter& p : ckpt.params) {
    write_string(out, p.name);
    out.put(p.learnable ? 1 : 0);
    write_tensor(out, p.value);
  }
  write_u32(out, static_cast<uint32_t>(ckpt.adam.size()));
  for (const AdamState& st : ckpt.adam) {
    out.put(st.m.empty() ? 0 : 1);
    if (!st.m.empty()) {
      write_tensor(out, st.m);
      write_tensor(out, st.v);
    }
  }
  write_string(out, ckpt.rng_state);
  write_u32(out, static_cast<uint32_t>(ckpt.grad_accum.size()));
  out.write(reinterpret_cast<const char*>(ckpt.grad_accum.data()),
            static_cast<std::streamsize>(ckpt.grad_accum.size() * sizeof(double)));
  write_u32(out, static_cast<uint32_t>(ckpt.grad_count.size()));
  out.write(reinterpret_cast<const char*>(ckpt.grad_count.data()),
            static_cast<std::streamsize>(ckpt.grad_count.size() * sizeof(int)));
  write_u32(out, static_cast<uint32_t>(ckpt.last_densify));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);

  Checkpoint ckpt;
  ckpt.version = static_cast<int>(read_u32(in));
  if (ckpt.version != 1) throw DataError("unsupported checkpoint version");
  try {
    ckpt.config = config_from_json(json::parse(read_string(in)));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint config parse error: ") + e.what());
  }
  ckpt.iteration = static_cast<int>(read_u32(in));
  ckpt.adam_steps = read_i64(in);

  uint32_t n_params = read_u32(in);
  for (uint32_t i = 0; i < n_params; ++i) {
    Parameter p;
    p.name = read_string(in);
    p.learnable = in.get() != 0;
    p.value = read_tensor(in);
    p.grad = Tensor(p.value.shape());
    ckpt.params.push_back(std::move(p));
  }
  uint32_t n_adam = read_u32(in);
  ckpt.adam.resize(n_adam);
  for (uint32_t i = 0; i < n_adam; ++i) {
    if (in.get() != 0) {
      ckpt.adam[i].m = read_tensor(in);
      ckpt.adam[i].v = read_tensor(in);
    }
  }
  ckpt.rng_state = read_string(in);
  uint32_t n = read_u32(in);
  ckpt.grad_accum.resize(n);
  in.read(reinterpret_cast<char*>(ckpt.grad_accum.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  n = read_u32(in);
  ckpt.grad_count.resize(n);
  in.read(reinterpret_cast<char*>(ckpt.grad_count.data()),
          static_cast<std::streamsize>(n * sizeof(int)));
  ckpt.last_densify = static_cast<int>(read_u32(in));
  if (!in) throw DataError("truncated checkpoint: " + path);
  return ckpt;
}

}  // namespace splatkit
