#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "splatkit/rasterizer.hpp"

using namespace splatkit;

namespace {

Camera test_camera(int size = 64, double focal = 100.0) {
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.cx = cam.cy = size / 2.0;
  cam.width = cam.height = size;
  return cam;
}

SplatSet random_set(int count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> pos01(0.0, 1.0);
  SplatSet set;
  for (int i = 0; i < count; ++i) {
    Splat s;
    s.position = Vec3(0.4 * unit(rng), 0.4 * unit(rng), 2.0 + 0.5 * unit(rng));
    s.log_scale = Vec3::Constant(std::log(0.08)) + Vec3(0.3 * unit(rng), 0.3 * unit(rng), 0.3 * unit(rng));
    s.rotation = Vec4(1.0 + unit(rng), unit(rng), unit(rng), unit(rng));
    s.opacity_logit = 1.5 * unit(rng);
    s.color = Vec3(pos01(rng), pos01(rng), pos01(rng));
    set.splats.push_back(s);
  }
  return set;
}

}  // namespace

TEST_CASE("project_point examples") {
  Camera cam = test_camera();
  cam.cx = cam.cy = 32.0;
  Vec2 p2;
  double z = 0.0;

  CHECK(project_point(Vec3(0, 0, 2), cam, 0.01, &p2, &z));
  CHECK(p2.x() == doctest::Approx(32.0));
  CHECK(p2.y() == doctest::Approx(32.0));
  CHECK(z == doctest::Approx(2.0));

  CHECK(project_point(Vec3(1, 0, 2), cam, 0.01, &p2, &z));
  CHECK(p2.x() == doctest::Approx(82.0));
  CHECK(p2.y() == doctest::Approx(32.0));

  CHECK_FALSE(project_point(Vec3(0, 0, -1), cam, 0.01, &p2, &z));
}

TEST_CASE("projection_jacobian examples") {
  auto j = projection_jacobian(Vec3(0, 0, 1), 1.0, 1.0);
  CHECK(j(0, 0) == doctest::Approx(1.0));
  CHECK(j(1, 1) == doctest::Approx(1.0));
  CHECK(j(0, 2) == doctest::Approx(0.0));

  j = projection_jacobian(Vec3(0, 0, 2), 1.0, 1.0);
  CHECK(j(0, 0) == doctest::Approx(0.5));
  CHECK(j(1, 1) == doctest::Approx(0.5));

  j = projection_jacobian(Vec3(1, 0, 1), 1.0, 1.0);
  CHECK(j(0, 2) == doctest::Approx(-1.0));
  CHECK(j(1, 2) == doctest::Approx(0.0));
}

TEST_CASE("project_covariance examples") {
  Eigen::Matrix<double, 2, 3> j;
  j << 1, 0, 0, 0, 1, 0;
  Mat2 c = project_covariance(Mat3::Identity(), Mat3::Identity(), j, 0.0);
  CHECK((c - Mat2::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  Mat3 d = Vec3(4, 1, 1).asDiagonal();
  c = project_covariance(d, Mat3::Identity(), j, 0.0);
  CHECK(c(0, 0) == doctest::Approx(4.0));
  CHECK(c(1, 1) == doctest::Approx(1.0));
  CHECK(c(0, 1) == doctest::Approx(0.0));

  // J at p_cam=(1,0,1), fx=fy=1; oracle is the direct J J^T product plus dilation.
  auto j2 = projection_jacobian(Vec3(1, 0, 1), 1.0, 1.0);
  Mat2 jjt = j2 * j2.transpose();
  CHECK(jjt(0, 0) == doctest::Approx(2.0));
  CHECK(jjt(1, 1) == doctest::Approx(1.0));
  c = project_covariance(Mat3::Identity(), Mat3::Identity(), j2, 0.3);
  CHECK(c(0, 0) == doctest::Approx(2.3));
  CHECK(c(1, 1) == doctest::Approx(1.3));
  CHECK(c(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("eval_gaussian_2d examples") {
  Mat2 id = Mat2::Identity();
  CHECK(eval_gaussian_2d(Vec2(3, 4), Vec2(3, 4), id) == doctest::Approx(1.0));
  CHECK(eval_gaussian_2d(Vec2(1, 0), Vec2(0, 0), id) == doctest::Approx(std::exp(-0.5)));
  Mat2 aniso;
  aniso << 4, 0, 0, 1;
  CHECK(eval_gaussian_2d(Vec2(2, 0), Vec2(0, 0), aniso) == doctest::Approx(std::exp(-0.5)));
  Mat2 singular = Mat2::Zero();
  CHECK_THROWS_AS(eval_gaussian_2d(Vec2(0, 0), Vec2(1, 1), singular), SingularCovarianceError);
}

TEST_CASE("depth_sort examples and oracle") {
  auto with_depths = [](std::vector<double> ds) {
    std::vector<ProjectedSplat> ps(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
      ps[i].depth = ds[i];
      ps[i].valid = true;
    }
    return ps;
  };
  CHECK(depth_sort(with_depths({3, 1, 2})) == std::vector<int>{1, 2, 0});
  CHECK(depth_sort(with_depths({1, 1})) == std::vector<int>{0, 1});

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(0.0, 10.0);
  std::vector<double> depths(1000);
  for (auto& d : depths) d = dist(rng);
  auto order = depth_sort(with_depths(depths));
  // Independent oracle: a plain comparison sort over index pairs.
  std::vector<int> expect(1000);
  std::iota(expect.begin(), expect.end(), 0);
  std::sort(expect.begin(), expect.end(), [&](int a, int b) {
    return depths[static_cast<size_t>(a)] != depths[static_cast<size_t>(b)]
               ? depths[static_cast<size_t>(a)] < depths[static_cast<size_t>(b)]
               : a < b;
  });
  CHECK(order == expect);
}

TEST_CASE("single splat compositing hits the stated pixel value") {
  Camera cam = test_camera(9, 50.0);
  cam.cx = cam.cy = 4.5;  // center of pixel (4,4)
  SplatSet set;
  Splat s;
  s.position = Vec3(0, 0, 1);
  s.log_scale = Vec3::Constant(std::log(0.05));
  s.opacity_logit = 100.0;  // saturates; alpha clamps at 0.999
  s.color = Vec3(1, 0, 0);
  set.splats.push_back(s);

  RenderOutput out = render(set, cam);
  CHECK(out.color.at(4, 4, 0) == doctest::Approx(0.999).epsilon(1e-6));
  CHECK(out.color.at(4, 4, 1) == doctest::Approx(0.0));
  CHECK(out.accumulated_opacity.at(4, 4) == doctest::Approx(0.999).epsilon(1e-6));
}

TEST_CASE("two coincident splats blend front to back") {
  Camera cam = test_camera(9, 50.0);
  cam.cx = cam.cy = 4.5;
  SplatSet set;
  Splat front;
  front.position = Vec3(0, 0, 1);
  front.log_scale = Vec3::Constant(std::log(0.5));  // flat at the pixel: G ~ 1
  front.opacity_logit = 0.0;                        // alpha 0.5
  front.color = Vec3(1, 1, 1);
  Splat back = front;
  back.position = Vec3(0, 0, 2);
  back.log_scale = Vec3::Constant(std::log(1.0));
  back.opacity_logit = 100.0;  // alpha 0.999
  back.color = Vec3(0, 0, 0);
  set.splats.push_back(back);  // input order deliberately back-first
  set.splats.push_back(front);

  RenderOutput out = render(set, cam);
  // 0.5*G_f*white + (1-0.5*G_f)*0.999*G_b*black + leftover*bg(black)
  CHECK(out.color.at(4, 4, 0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(out.accumulated_opacity.at(4, 4) == doctest::Approx(0.5 + 0.5 * 0.999).epsilon(1e-3));
}

TEST_CASE("render is invariant to input order over all K! permutations") {
  std::mt19937_64 rng(42);
  SplatSet base = random_set(4, rng);
  Camera cam = test_camera(16, 30.0);
  cam.cx = cam.cy = 8.0;
  RenderOutput ref = render(base, cam);

  std::vector<int> perm{0, 1, 2, 3};
  std::sort(perm.begin(), perm.end());
  do {
    SplatSet permuted;
    for (int i : perm) permuted.splats.push_back(base.splats[static_cast<size_t>(i)]);
    RenderOutput out = render(permuted, cam);
    bool identical = true;
    for (int64_t i = 0; i < ref.color.numel(); ++i)
      identical &= out.color[i] == ref.color[i];
    for (int64_t i = 0; i < ref.accumulated_opacity.numel(); ++i)
      identical &= out.accumulated_opacity[i] == ref.accumulated_opacity[i];
    CHECK(identical);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("per-pixel weights are non-negative and sum to at most one") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    SplatSet set = random_set(8, rng);
    Camera cam = test_camera(24, 40.0);
    cam.cx = cam.cy = 12.0;
    RenderOutput out = render(set, cam);
    for (const auto& list : out.contributors) {
      double total = 0.0;
      double prev_t = 1.0;
      for (const auto& c : list) {
        CHECK(c.weight >= 0.0);
        CHECK(c.transmittance <= prev_t + 1e-15);
        prev_t = c.transmittance;
        total += c.weight;
      }
      CHECK(total <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("translating the scene and camera together leaves the image unchanged") {
  std::mt19937_64 rng(13);
  SplatSet set = random_set(6, rng);
  Camera cam = test_camera(24, 40.0);
  cam.cx = cam.cy = 12.0;
  RenderOutput ref = render(set, cam);

  Vec3 offset(0.7, -1.3, 2.1);
  SplatSet moved = set;
  for (auto& s : moved.splats) s.position += offset;
  Camera cam2 = cam;
  // Same world offset on the camera: t' = t - R*offset keeps p_cam fixed.
  cam2.translation = cam.translation - cam.rotation * offset;
  RenderOutput out = render(moved, cam2);
  for (int64_t i = 0; i < ref.color.numel(); ++i)
    CHECK(std::fabs(out.color[i] - ref.color[i]) < 1e-6);
}

TEST_CASE("zero-opacity splats are removable without changing the render") {
  std::mt19937_64 rng(29);
  SplatSet set = random_set(5, rng);
  Camera cam = test_camera(24, 40.0);
  cam.cx = cam.cy = 12.0;

  SplatSet with_ghosts = set;
  for (int i = 0; i < 3; ++i) {
    Splat ghost = set.splats[static_cast<size_t>(i)];
    ghost.opacity_logit = -20.0;  // alpha ~ 2e-9, below the 1/255 cutoff everywhere
    with_ghosts.splats.push_back(ghost);
  }
  RenderOutput a = render(set, cam);
  RenderOutput b = render(with_ghosts, cam);
  for (int64_t i = 0; i < a.color.numel(); ++i) CHECK(a.color[i] == b.color[i]);
  for (int64_t i = 0; i < a.accumulated_opacity.numel(); ++i)
    CHECK(a.accumulated_opacity[i] == b.accumulated_opacity[i]);
}

TEST_CASE("taped render reproduces the eager rasterizer exactly") {
  std::mt19937_64 rng(55);
  SplatSet set = random_set(2, rng);
  Camera cam = test_camera(16, 30.0);
  cam.cx = cam.cy = 8.0;
  RasterConfig cfg;
  RenderOutput eager = render(set, cam, cfg);

  SplatAttributes attrs = to_attributes(set);
  Tape tape;
  Value pos = tape.constant(attrs.position);
  Value ls = tape.constant(attrs.log_scale);
  Value rot = tape.constant(attrs.rotation);
  Value col = tape.constant(attrs.color);
  Value alpha = sigmoid(tape.constant(attrs.opacity_logit));
  Value packed = ewa_project(pos, ls, rot, cam, cfg);
  RenderValues rv = composite_node(packed, col, alpha, cam, cfg);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c)
        CHECK(rv.color.val().at(y, x, c) == eager.color.at(y, x, c));
      CHECK(rv.opacity.val().at(y, x, 0) == eager.accumulated_opacity.at(y, x));
    }
}

TEST_CASE("rendered-pixel L1 gradients match finite differences on a 5-splat scene") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 3; ++trial) {
    SplatSet set = random_set(5, rng);
    SplatSet target_set = random_set(5, rng);
    Camera cam = test_camera(16, 30.0);
    cam.cx = cam.cy = 8.0;
    RasterConfig cfg;
    Tensor target = render(target_set, cam, cfg).color;

    SplatAttributes attrs = to_attributes(set);
    ParameterStore store;
    int pos = store.add("position", attrs.position);
    int ls = store.add("log_scale", attrs.log_scale);
    int rot = store.add("rotation", attrs.rotation);
    int col = store.add("color", attrs.color);
    int opa = store.add("opacity", attrs.opacity_logit);

    auto forward = [&](Tape& t) {
      Value packed = ewa_project(t.param(store, pos), t.param(store, ls), t.param(store, rot),
                                 cam, cfg);
      RenderValues rv = composite_node(packed, t.param(store, col),
                                       sigmoid(t.param(store, opa)), cam, cfg);
      return mean(abs(sub(rv.color, t.constant(target))));
    };
    double err = gradient_check(store, {pos, ls, rot, col, opa}, forward, 1e-4);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("2D gaussian evaluation differentiates w.r.t. center and covariance at 1e-5") {
  // Feed the packed projection directly as a leaf so finite differences hit
  // the quadratic-form derivatives of the screen-space Gaussian alone.
  Camera cam = test_camera(5, 10.0);
  cam.cx = cam.cy = 2.5;
  ParameterStore store;
  // [u, v, cov_a, cov_b, cov_c, depth]
  int packed = store.add("packed", Tensor::from({1, 6}, {2.7, 2.2, 2.0, 0.4, 1.5, 1.0}));
  Tensor color = Tensor::from({1, 3}, {0.8, 0.3, 0.5});
  Tensor alpha = Tensor::from({1, 1}, {0.7});
  RasterConfig cfg;
  cfg.dilation = 0.0;
  double err = gradient_check(
      store, {packed},
      [&](Tape& t) {
        RenderValues rv = composite_node(t.param(store, packed), t.constant(color),
                                         t.constant(alpha), cam, cfg);
        return mean(rv.rgba);
      },
      1e-4);
  CHECK(err < 1e-5);
}

TEST_CASE("clamped alphas carry a flat subgradient") {
  Camera cam = test_camera(9, 50.0);
  cam.cx = cam.cy = 4.5;
  SplatSet set;
  Splat s;
  s.position = Vec3(0, 0, 1);
  s.log_scale = Vec3::Constant(std::log(0.05));
  s.opacity_logit = 10.0;  // sigmoid ~ 0.99995, clamped to alpha_max
  s.color = Vec3(0.8, 0.1, 0.2);
  set.splats.push_back(s);
  SplatAttributes attrs = to_attributes(set);

  ParameterStore store;
  int opa = store.add("opa", attrs.opacity_logit);
  int col = store.add("col", attrs.color);
  Tape tape;
  RasterConfig cfg;
  Value packed = ewa_project(tape.constant(attrs.position), tape.constant(attrs.log_scale),
                             tape.constant(attrs.rotation), cam, cfg);
  RenderValues rv = composite_node(packed, tape.param(store, col),
                                   sigmoid(tape.param(store, opa)), cam, cfg);
  tape.backward(mean(rv.rgba));
  tape.accumulate_param_grads(store);
  CHECK(store[opa].grad[0] == 0.0);
  CHECK(store[col].grad[0] != 0.0);
}

TEST_CASE("covariance6 node gradients match finite differences") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  ParameterStore store;
  Tensor ls({4, 3}), q({4, 4});
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 3; ++c) ls.at(i, c) = 0.4 * unit(rng);
    for (int c = 0; c < 4; ++c) q.at(i, c) = unit(rng) + (c == 0 ? 1.5 : 0.0);
  }
  int lsid = store.add("ls", ls);
  int qid = store.add("q", q);
  double err = gradient_check(
      store, {lsid, qid},
      [&](Tape& t) {
        Value cov = covariance6(t.param(store, lsid), t.param(store, qid));
        return mean(mul(cov, cov));
      },
      1e-5);
  CHECK(err < 1e-5);
}
