#include "splatkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "splatkit/common.hpp"

namespace splatkit {

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "free_3dgs") return TrainMode::Free3dgs;
  if (name == "free_3dgs_moran") return TrainMode::Free3dgsMoran;
  if (name == "splatfields3d") return TrainMode::SplatFields3d;
  if (name == "splatfields4d") return TrainMode::SplatFields4d;
  throw ConfigError("unknown train mode: " + name);
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Free3dgs: return "free_3dgs";
    case TrainMode::Free3dgsMoran: return "free_3dgs_moran";
    case TrainMode::SplatFields3d: return "splatfields3d";
    case TrainMode::SplatFields4d: return "splatfields4d";
  }
  throw ConfigError("unknown train mode");
}

std::vector<int> SceneData::split_indices(bool test) const {
  std::vector<int> out;
  for (size_t i = 0; i < views.size(); ++i)
    if (views[i].is_test == test) out.push_back(static_cast<int>(i));
  return out;
}

double lr_at(int iteration, double lr_start, double lr_end, int end_iteration) {
  double frac = std::min(iteration, end_iteration) / static_cast<double>(end_iteration);
  return lr_start * std::pow(lr_end / lr_start, frac);
}

double lr_at(int iteration, const TrainConfig& cfg) {
  return lr_at(iteration, cfg.lr_start, cfg.lr_end, cfg.lr_end_iteration);
}

void adam_step(Tensor& value, const Tensor& grad, AdamState& state, int64_t step, double lr,
               double beta1, double beta2, double eps) {
  if (!grad.all_finite()) throw NumericalError("adam_step: non-finite gradient");
  if (state.m.empty()) {
    state.m = Tensor(value.shape());
    state.v = Tensor(value.shape());
  }
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (int64_t i = 0; i < value.numel(); ++i) {
    double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

Value total_loss(Tape& tape, const RenderValues& rendered, const Frame& target, Value p_hat,
                 const LossConfig& cfg, LossBreakdown* breakdown) {
  if (!rendered.color.val().same_shape(target.pixels))
    throw DataError("total_loss: render/target dimension mismatch");
  Value target_v = tape.constant(target.pixels);
  Value l1 = mean(abs(sub(rendered.color, target_v)));
  if (breakdown) breakdown->l1 += l1.val().item();
  Value loss = mul_scalar(l1, 1.0 - cfg.lambda_dssim);
  if (cfg.lambda_dssim > 0.0) {
    Value dssim = d_ssim(rendered.color, target_v);
    if (breakdown) breakdown->dssim += dssim.val().item();
    loss = add(loss, mul_scalar(dssim, cfg.lambda_dssim));
  }
  if (cfg.lambda_mask > 0.0) {
    if (!target.mask) throw ConfigError("mask loss enabled but the frame carries no mask");
    int h = target.height(), w = target.width();
    Tensor mask3({h, w, 1});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) mask3.at(y, x, 0) = target.mask->at(y, x);
    Value mask_term = mean(abs(sub(rendered.opacity, tape.constant(mask3))));
    if (breakdown) breakdown->mask += mask_term.val().item();
    loss = add(loss, mul_scalar(mask_term, cfg.lambda_mask));
  }
  if (cfg.lambda_norm > 0.0) {
    if (!p_hat.valid()) throw UsageError("norm regularizer requires p_hat");
    Value norms = mean(sqrt(row_sum(mul(p_hat, p_hat))));
    if (breakdown) breakdown->norm += norms.val().item();
    loss = add(loss, mul_scalar(norms, cfg.lambda_norm));
  }
  return loss;
}

// ---- trainer ----

Trainer::Trainer(SceneData scene, TrainConfig cfg, const Checkpoint* resume)
    : scene_(std::move(scene)), cfg_(std::move(cfg)) {
  if (resume && scene_.init_points.empty()) {
    // Checkpoint-only construction: recover the point layout from the
    // stored parameters so no scene is needed for export or analysis.
    for (const auto& p : resume->params)
      if (p.name == "latent.positions" || p.name == "splat.position") {
        scene_.init_points = p.value;
        break;
      }
  }
  if (resume) scene_.t_steps = std::max(scene_.t_steps, resume->config.fields.t_steps);
  cfg_.raster.background = cfg_.loss.background;
  cfg_.fields.time_conditioned = cfg_.mode == TrainMode::SplatFields4d;
  if (scene_.t_steps > 1) cfg_.fields.t_steps = scene_.t_steps;
  cfg_.flow.t_steps = std::max(2, scene_.t_steps);
  cfg_.flow.feature_dim =
      std::max(4, static_cast<int>(std::lround(cfg_.fields.fuser_width * cfg_.fields.width_scale)));
  cfg_.flow.width_scale = cfg_.fields.width_scale;
  init_parameters();
  if (resume) restore(*resume);
}

void Trainer::init_parameters() {
  rng_.seed(cfg_.seed);
  Tensor points = scene_.init_points;
  if (points.empty()) {
    if (field_mode())
      throw ConfigError("splatfields modes require an initial point cloud");
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    points = Tensor({cfg_.init_count, 3});
    for (int64_t i = 0; i < points.numel(); ++i) points[i] = unit(rng_);
  }
  int k = points.dim(0);
  aabb_ = scene_.aabb ? *scene_.aabb : SceneAabb::from_points(points, 0.1);

  if (field_mode()) {
    latent_ = store_.add("latent.positions", points, /*learnable=*/false);
    field_model_ = SplatFieldModel(store_, cfg_.fields, rng_);
    if (cfg_.mode == TrainMode::SplatFields4d) flow_ = FlowField(store_, cfg_.flow, rng_);
  } else {
    pos_ = store_.add("splat.position", points);
    log_scale_ = store_.add(
        "splat.log_scale", Tensor::full({k, 3}, std::log(cfg_.fields.base_scale)));
    Tensor rot({k, 4});
    for (int i = 0; i < k; ++i) rot.at(i, 0) = 1.0;
    rot_ = store_.add("splat.rotation", std::move(rot));
    opacity_ = store_.add("splat.opacity_logit", Tensor::full({k, 1}, logit(0.1)));
    std::uniform_real_distribution<double> tone(0.25, 0.75);
    Tensor col({k, 3});
    for (int64_t i = 0; i < col.numel(); ++i) col[i] = tone(rng_);
    color_ = store_.add("splat.color", std::move(col));
  }
  adam_.resize(static_cast<size_t>(store_.size()));
  grad_accum_.assign(static_cast<size_t>(k), 0.0);
  grad_count_.assign(static_cast<size_t>(k), 0);
}

int Trainer::splat_count() const {
  int id = field_mode() ? latent_ : pos_;
  return store_[id].value.dim(0);
}

double Trainer::lr_multiplier(int param_id) const {
  if (field_mode()) return 1.0;
  if (param_id == pos_) return cfg_.lr_scale_position;
  if (param_id == color_) return cfg_.lr_scale_color;
  if (param_id == opacity_) return cfg_.lr_scale_opacity;
  if (param_id == log_scale_) return cfg_.lr_scale_scale;
  if (param_id == rot_) return cfg_.lr_scale_rotation;
  return 1.0;
}

namespace {

Tensor view_directions(const Tensor& positions, const Camera& cam) {
  int k = positions.dim(0);
  Vec3 origin = cam.position();
  Tensor dirs({k, 3});
  for (int i = 0; i < k; ++i) {
    Vec3 d(positions.at(i, 0) - origin.x(), positions.at(i, 1) - origin.y(),
           positions.at(i, 2) - origin.z());
    double n = d.norm();
    if (n < 1e-12) d = Vec3(0, 0, 1); else d /= n;
    for (int c = 0; c < 3; ++c) dirs.at(i, c) = d[c];
  }
  return dirs;
}

}  // namespace

Value Trainer::build_step_loss(Tape& tape, const std::vector<int>& view_ids,
                               std::vector<ProjectionRecord>* projections) {
  LossConfig per_view = cfg_.loss;
  per_view.lambda_norm = 0.0;  // the norm term is added once per step
  breakdown_ = LossBreakdown{};
  Value image_total;

  if (!field_mode()) {
    Value pos = tape.param(store_, pos_);
    Value ls = tape.param(store_, log_scale_);
    Value rot = tape.param(store_, rot_);
    Value col = tape.param(store_, color_);
    Value alpha = sigmoid(tape.param(store_, opacity_));
    for (int id : view_ids) {
      const SceneView& v = scene_.views[static_cast<size_t>(id)];
      Value packed = ewa_project(pos, ls, rot, v.camera, cfg_.raster);
      if (projections) projections->push_back({packed, v.camera.width, v.camera.height});
      RenderValues rv = composite_node(packed, col, alpha, v.camera, cfg_.raster);
      Value lv = total_loss(tape, rv, v.frame, Value{}, per_view, &breakdown_);
      image_total = image_total.valid() ? add(image_total, lv) : lv;
    }
    double inv_batch = 1.0 / static_cast<double>(view_ids.size());
    breakdown_.l1 *= inv_batch;
    breakdown_.dssim *= inv_batch;
    breakdown_.mask *= inv_batch;
    Value loss = mul_scalar(image_total, inv_batch);
    if (cfg_.loss.lambda_norm > 0.0) {
      Value norms = mean(sqrt(row_sum(mul(pos, pos))));
      breakdown_.norm = norms.val().item();
      loss = add(loss, mul_scalar(norms, cfg_.loss.lambda_norm));
    }
    if (cfg_.mode == TrainMode::Free3dgsMoran && cfg_.loss.lambda_moran > 0.0) {
      MoranGraph graph = build_moran_graph(store_[pos_].value, cfg_.moran_neighbors);
      std::vector<Value> groups{moran_score(col, graph), moran_score(alpha, graph),
                                moran_score(covariance6(ls, rot), graph)};
      Value moran_term = moran_loss(groups, cfg_.loss.lambda_moran);
      breakdown_.moran = moran_term.val().item();
      loss = add(loss, moran_term);
    }
    return loss;
  }

  const Tensor& latent = store_[latent_].value;
  bool dynamic = cfg_.mode == TrainMode::SplatFields4d;
  std::map<int, std::pair<FieldGeometry, Value>> cache;  // frame index -> (geometry, positions)
  for (int id : view_ids) {
    const SceneView& v = scene_.views[static_cast<size_t>(id)];
    int key = dynamic ? v.time.frame_index : -1;
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::optional<TimeStamp> t = dynamic ? std::optional<TimeStamp>(v.time) : std::nullopt;
      FieldGeometry geom = field_model_.evaluate_geometry(tape, store_, latent, aabb_, t);
      Value rpos = dynamic ? flow_.warp(tape, store_, geom.p_hat, geom.features, v.time)
                           : geom.p_hat;
      it = cache.emplace(key, std::make_pair(geom, rpos)).first;
    }
    const FieldGeometry& geom = it->second.first;
    Value rpos = it->second.second;
    std::optional<TimeStamp> t = dynamic ? std::optional<TimeStamp>(v.time) : std::nullopt;
    Value color = field_model_.evaluate_color(tape, store_, geom,
                                              view_directions(rpos.val(), v.camera), t);
    Value packed = ewa_project(rpos, geom.log_scale, geom.rotation, v.camera, cfg_.raster);
    if (projections) projections->push_back({packed, v.camera.width, v.camera.height});
    RenderValues rv = composite_node(packed, color, geom.alpha, v.camera, cfg_.raster);
    Value lv = total_loss(tape, rv, v.frame, Value{}, per_view, &breakdown_);
    image_total = image_total.valid() ? add(image_total, lv) : lv;
  }
  double inv_batch = 1.0 / static_cast<double>(view_ids.size());
  breakdown_.l1 *= inv_batch;
  breakdown_.dssim *= inv_batch;
  breakdown_.mask *= inv_batch;
  Value loss = mul_scalar(image_total, inv_batch);
  if (cfg_.loss.lambda_norm > 0.0 && !cache.empty()) {
    Value p_hat = cache.begin()->second.first.p_hat;
    Value norms = mean(sqrt(row_sum(mul(p_hat, p_hat))));
    breakdown_.norm = norms.val().item();
    loss = add(loss, mul_scalar(norms, cfg_.loss.lambda_norm));
  }
  return loss;
}

void Trainer::step() {
  std::vector<int> train = scene_.split_indices(false);
  if (train.empty()) throw DataError("train: no training views");
  std::uniform_int_distribution<size_t> pick(0, train.size() - 1);
  int batch = cfg_.batch_size > 0
                  ? cfg_.batch_size
                  : (cfg_.mode == TrainMode::SplatFields4d ? 5 : 1);
  std::vector<int> ids;
  for (int b = 0; b < batch; ++b) ids.push_back(train[pick(rng_)]);

  store_.zero_grads();
  Tape tape;
  std::vector<ProjectionRecord> projections;
  Value loss = build_step_loss(tape, ids, &projections);
  last_loss_ = loss.val().item();
  tape.backward(loss);
  tape.accumulate_param_grads(store_);

  // Density-control statistics: per-splat screen-space positional gradient,
  // converted from pixels to NDC so the clone threshold matches the usual
  // splatting-optimizer convention.
  for (const ProjectionRecord& pr : projections) {
    const Tensor& g = tape.grad(pr.packed);
    double sx = pr.width / 2.0, sy = pr.height / 2.0;
    for (int i = 0; i < g.dim(0); ++i) {
      grad_accum_[static_cast<size_t>(i)] +=
          Vec2(g.at(i, 0) * sx, g.at(i, 1) * sy).norm();
      ++grad_count_[static_cast<size_t>(i)];
    }
  }

  ++adam_steps_;
  double lr = lr_at(iteration_, cfg_);
  for (int id = 0; id < store_.size(); ++id) {
    Parameter& p = store_[id];
    if (!p.learnable) continue;
    adam_step(p.value, p.grad, adam_[static_cast<size_t>(id)], adam_steps_,
              lr * lr_multiplier(id), cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
  }
  ++iteration_;

  int densify_limit = cfg_.densify_until > 0 ? cfg_.densify_until : cfg_.iterations / 2;
  if (cfg_.densify_interval > 0 && iteration_ % cfg_.densify_interval == 0 &&
      iteration_ <= densify_limit)
    density_control();
}

void Trainer::density_control() {
  int k = splat_count();
  std::vector<double> alphas(static_cast<size_t>(k));
  if (!field_mode()) {
    for (int i = 0; i < k; ++i) alphas[static_cast<size_t>(i)] = sigmoid(store_[opacity_].value.at(i, 0));
  } else {
    TimeStamp t0;
    SplatAttributes baked = field_model_.bake(store_, store_[latent_].value, aabb_,
                                              cfg_.mode == TrainMode::SplatFields4d
                                                  ? std::optional<TimeStamp>(t0)
                                                  : std::nullopt);
    for (int i = 0; i < k; ++i) alphas[static_cast<size_t>(i)] = sigmoid(baked.opacity_logit.at(i, 0));
  }

  std::vector<int> keep;
  for (int i = 0; i < k; ++i)
    if (alphas[static_cast<size_t>(i)] >= cfg_.prune_opacity) keep.push_back(i);
  if (keep.empty()) {
    std::cerr << "density control: pruning would empty the set; skipped\n";
    keep.resize(static_cast<size_t>(k));
    std::iota(keep.begin(), keep.end(), 0);
  }

  std::vector<int> clones;
  for (int i : keep) {
    int count = grad_count_[static_cast<size_t>(i)];
    if (count == 0) continue;
    if (grad_accum_[static_cast<size_t>(i)] / count > cfg_.clone_grad_threshold)
      clones.push_back(i);
  }

  if (static_cast<int>(keep.size()) != k || !clones.empty()) apply_row_edit(keep, clones);

  int new_k = splat_count();
  grad_accum_.assign(static_cast<size_t>(new_k), 0.0);
  grad_count_.assign(static_cast<size_t>(new_k), 0);
  last_densify_ = iteration_;
}

void Trainer::apply_row_edit(const std::vector<int>& keep, const std::vector<int>& clones) {
  std::vector<int> param_ids;
  if (field_mode())
    param_ids = {latent_};
  else
    param_ids = {pos_, log_scale_, rot_, opacity_, color_};

  // Clone offsets drawn within the source splat's 1-sigma ellipsoid
  // (free modes); latent clones are exact copies.
  std::vector<Vec3> offsets(clones.size(), Vec3::Zero());
  if (!field_mode()) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (size_t c = 0; c < clones.size(); ++c) {
      int i = clones[c];
      Vec4 q(store_[rot_].value.at(i, 0), store_[rot_].value.at(i, 1),
             store_[rot_].value.at(i, 2), store_[rot_].value.at(i, 3));
      Mat3 rot = quat_to_matrix(q / q.norm());
      Vec3 s(std::exp(store_[log_scale_].value.at(i, 0)),
             std::exp(store_[log_scale_].value.at(i, 1)),
             std::exp(store_[log_scale_].value.at(i, 2)));
      Vec3 eps(gauss(rng_), gauss(rng_), gauss(rng_));
      offsets[c] = rot * s.cwiseProduct(eps);
    }
  }

  int new_k = static_cast<int>(keep.size() + clones.size());
  for (int pid : param_ids) {
    Parameter& p = store_[pid];
    int cols = p.value.dim(1);
    Tensor value({new_k, cols});
    AdamState& st = adam_[static_cast<size_t>(pid)];
    bool has_state = !st.m.empty();
    Tensor m({new_k, cols}), v({new_k, cols});
    int row = 0;
    auto copy_row = [&](int src, bool fresh_state) {
      for (int c = 0; c < cols; ++c) {
        value.at(row, c) = p.value.at(src, c);
        if (has_state && !fresh_state) {
          m.at(row, c) = st.m.at(src, c);
          v.at(row, c) = st.v.at(src, c);
        }
      }
      ++row;
    };
    for (int i : keep) copy_row(i, false);
    for (size_t c = 0; c < clones.size(); ++c) {
      copy_row(clones[c], true);
      if (pid == pos_)
        for (int ax = 0; ax < 3; ++ax) value.at(row - 1, ax) += offsets[c][ax];
    }
    p.value = std::move(value);
    p.grad = Tensor(p.value.shape());
    if (has_state) {
      st.m = std::move(m);
      st.v = std::move(v);
    }
  }
}

SplatAttributes Trainer::current_attributes(std::optional<TimeStamp> time) const {
  if (!field_mode()) {
    SplatAttributes attrs;
    attrs.position = store_[pos_].value;
    attrs.log_scale = store_[log_scale_].value;
    attrs.rotation = store_[rot_].value;
    attrs.opacity_logit = store_[opacity_].value;
    attrs.color = store_[color_].value;
    return attrs;
  }
  bool dynamic = cfg_.mode == TrainMode::SplatFields4d;
  std::optional<TimeStamp> t = dynamic ? time : std::nullopt;
  if (dynamic && !t) t = TimeStamp{};
  SplatAttributes attrs = field_model_.bake(store_, store_[latent_].value, aabb_, t);
  if (dynamic) {
    Tape tape;
    FieldGeometry geom = field_model_.evaluate_geometry(tape, store_, store_[latent_].value,
                                                        aabb_, t);
    Value warped = flow_.warp(tape, store_, geom.p_hat, geom.features, *t);
    attrs.position = warped.val();
  }
  return attrs;
}

RenderOutput Trainer::render_view(const SceneView& view) const {
  if (!field_mode()) return render(current_attributes(), view.camera, cfg_.raster);

  bool dynamic = cfg_.mode == TrainMode::SplatFields4d;
  std::optional<TimeStamp> t = dynamic ? std::optional<TimeStamp>(view.time) : std::nullopt;
  Tape tape;
  FieldGeometry geom = field_model_.evaluate_geometry(tape, store_, store_[latent_].value,
                                                      aabb_, t);
  Value rpos = dynamic ? flow_.warp(tape, store_, geom.p_hat, geom.features, view.time)
                       : geom.p_hat;
  Value color = field_model_.evaluate_color(tape, store_, geom,
                                            view_directions(rpos.val(), view.camera), t);
  int k = rpos.val().dim(0);
  Tensor alphas({k, 1});
  for (int i = 0; i < k; ++i) alphas.at(i, 0) = geom.alpha.val().at(i, 0);

  SplatAttributes attrs;
  attrs.position = rpos.val();
  attrs.log_scale = geom.log_scale.val();
  attrs.rotation = geom.rotation.val();
  attrs.color = color.val();
  attrs.opacity_logit = Tensor({k, 1});
  for (int i = 0; i < k; ++i) attrs.opacity_logit.at(i, 0) = logit(alphas.at(i, 0));
  std::vector<ProjectedSplat> projected = project_splats(attrs, view.camera, cfg_.raster);
  return composite(projected, attrs.color, alphas, view.camera, cfg_.raster);
}

MoranReport Trainer::moran_report(std::optional<TimeStamp> time) const {
  return morans_i(current_attributes(time), cfg_.moran_neighbors);
}

Tensor Trainer::flow_trajectory() const {
  if (cfg_.mode != TrainMode::SplatFields4d)
    throw ConfigError("trajectory export requires a splatfields4d checkpoint");
  Tape tape;
  TimeStamp t0{};
  FieldGeometry geom =
      field_model_.evaluate_geometry(tape, store_, store_[latent_].value, aabb_, t0);
  return flow_.trajectory(store_, geom.p_hat.val(), geom.features.val());
}

EvalRow Trainer::evaluate(double last_loss) {
  EvalRow row;
  row.iteration = iteration_;
  row.loss = last_loss == 0.0 ? last_loss_ : last_loss;
  row.splat_count = splat_count();

  auto metrics_over = [&](bool test, double* out_psnr, double* out_ssim) {
    std::vector<int> ids = scene_.split_indices(test);
    if (ids.empty()) return;
    double p = 0.0, s = 0.0;
    for (int id : ids) {
      const SceneView& v = scene_.views[static_cast<size_t>(id)];
      RenderOutput out = render_view(v);
      p += psnr(out.color, v.frame.pixels);
      s += ssim(out.color, v.frame.pixels);
    }
    *out_psnr = p / ids.size();
    *out_ssim = s / ids.size();
  };
  metrics_over(false, &row.train_psnr, &row.train_ssim);
  metrics_over(true, &row.test_psnr, &row.test_ssim);
  if (splat_count() > cfg_.moran_neighbors) row.moran = moran_report();
  return row;
}

void Trainer::run(const std::string& metrics_csv, const std::string& rescue_path) {
  if (scene_.split_indices(false).empty()) throw DataError("train: no training views");
  std::ofstream csv;
  if (!metrics_csv.empty()) {
    csv.open(metrics_csv);
    if (!csv) throw DataError("cannot open metrics log: " + metrics_csv);
    csv << "iteration,loss,l1,dssim,mask,norm,moran_term,"
           "train_psnr,train_ssim,test_psnr,test_ssim,"
           "moran_color,moran_opacity,moran_covariance,splat_count\n";
  }
  auto log_row = [&]() {
    if (!csv.is_open()) return;
    EvalRow row = evaluate();
    csv << row.iteration << ',' << row.loss << ',' << breakdown_.l1 << ',' << breakdown_.dssim
        << ',' << breakdown_.mask << ',' << breakdown_.norm << ',' << breakdown_.moran << ','
        << row.train_psnr << ',' << row.train_ssim << ',' << row.test_psnr << ','
        << row.test_ssim << ',' << row.moran.color.score.value_or(std::nan("")) << ','
        << row.moran.opacity.score.value_or(std::nan("")) << ','
        << row.moran.covariance.score.value_or(std::nan("")) << ',' << row.splat_count << '\n';
    csv.flush();
  };

  Checkpoint last_good = snapshot();
  try {
    while (iteration_ < cfg_.iterations) {
      step();
      if (cfg_.eval_interval > 0 &&
          (iteration_ % cfg_.eval_interval == 0 || iteration_ == cfg_.iterations)) {
        log_row();
        last_good = snapshot();
      }
    }
    if (cfg_.eval_interval <= 0 || cfg_.iterations % cfg_.eval_interval != 0) log_row();
  } catch (const NumericalError&) {
    if (!rescue_path.empty()) save_checkpoint(last_good, rescue_path);
    throw;
  }
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  ckpt.iteration = iteration_;
  ckpt.adam_steps = adam_steps_;
  for (int i = 0; i < store_.size(); ++i) ckpt.params.push_back(store_[i]);
  ckpt.adam = adam_;
  std::ostringstream rng_out;
  rng_out << rng_;
  ckpt.rng_state = rng_out.str();
  ckpt.grad_accum = grad_accum_;
  ckpt.grad_count = grad_count_;
  ckpt.last_densify = last_densify_;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.params.size() != static_cast<size_t>(store_.size()))
    throw DataError("checkpoint parameter layout does not match this configuration");
  for (int i = 0; i < store_.size(); ++i) {
    const Parameter& src = ckpt.params[static_cast<size_t>(i)];
    if (src.name != store_[i].name)
      throw DataError("checkpoint parameter mismatch: " + src.name + " vs " + store_[i].name);
    store_[i].value = src.value;
    store_[i].grad = Tensor(src.value.shape());
  }
  adam_ = ckpt.adam;
  adam_steps_ = ckpt.adam_steps;
  iteration_ = ckpt.iteration;
  std::istringstream rng_in(ckpt.rng_state);
  rng_in >> rng_;
  grad_accum_ = ckpt.grad_accum;
  grad_count_ = ckpt.grad_count;
  last_densify_ = ckpt.last_densify;
  int k = splat_count();
  grad_accum_.resize(static_cast<size_t>(k), 0.0);
  grad_count_.resize(static_cast<size_t>(k), 0);
}

}  // namespace splatkit
