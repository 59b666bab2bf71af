#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <excb/checkpoint.hpp>
#include <excb/model.hpp>
#include <excb/schedule.hpp>
#include <excb/synthdata.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

using excb::ModelConfig;
using excb::ModelPair;
using excb::Tape;
using Tensor = excb::Tensor<double>;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_dim = 8;
  cfg.encoder_hidden = {8};
  cfg.embedding_dim = 8;
  cfg.projector_hidden = 8;
  cfg.projector_out = 8;
  cfg.clusters = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<Tensor> random_views(int64_t count, int64_t n, int64_t d, uint64_t seed) {
  excb::Rng rng(seed);
  std::vector<Tensor> out;
  for (int64_t v = 0; v < count; ++v) {
    std::vector<double> vals(static_cast<size_t>(n * d));
    for (auto& x : vals) x = rng.next_normal();
    out.push_back(Tensor::constant({n, d}, std::move(vals)));
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.clusters = 1;
  CHECK_THROWS_AS(ModelPair<double>{cfg}, std::invalid_argument);
  cfg = tiny_config();
  cfg.encoder_hidden = {8, 8, 8};
  CHECK_THROWS_AS(ModelPair<double>{cfg}, std::invalid_argument);
}

TEST_CASE("matching projector output and centroid row give similarity one") {
  // both rows are the same axis vector, so the cosine is exactly 1
  Tensor x = Tensor::constant({1, 3}, {0.0, 2.0, 0.0});
  Tensor c = Tensor::constant({2, 3}, {0.0, 5.0, 0.0, 1.0, 0.0, 0.0});
  Tensor z = excb::centroid_similarities(x, c, true);
  CHECK(z.at(0, 0) == 1.0);
  CHECK(z.at(0, 1) == 0.0);
}

TEST_CASE("teacher and student forward agree bitwise at initialization") {
  ModelPair<double> model(tiny_config());
  auto views = random_views(2, 4, 8, 21);
  Tape<double> tape;
  auto student = model.student_similarities(tape, views, {});
  auto teacher = model.teacher_similarities(views);
  REQUIRE(student.z_h_global.size() == 2);
  REQUIRE(teacher.size() == 2);
  for (size_t v = 0; v < 2; ++v) {
    auto zs = student.z_h_global[v].values();
    auto zt = teacher[v].values();
    REQUIRE(zs.size() == zt.size());
    CHECK(std::memcmp(zs.data(), zt.data(), zs.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("teacher evaluation allocates zero tape nodes") {
  ModelPair<double> model(tiny_config());
  auto views = random_views(2, 4, 8, 22);
  Tape<double> tape;
  auto zt = model.teacher_similarities(views);
  CHECK(tape.size() == 0);
  for (const auto& z : zt) CHECK_FALSE(z.on_tape());
}

TEST_CASE("similarities stay within the cosine range") {
  ModelPair<double> model(tiny_config());
  auto views = random_views(3, 16, 8, 23);
  Tape<double> tape;
  auto out = model.student_similarities(tape, {views[0], views[1]}, {views[2]});
  auto check_range = [](const Tensor& z) {
    for (int64_t i = 0; i < z.numel(); ++i) {
      CHECK(z.values()[i] <= 1.0 + 1e-12);
      CHECK(z.values()[i] >= -1.0 - 1e-12);
    }
  };
  for (const auto& z : out.z_h_global) check_range(z);
  for (const auto& z : out.z_h_local) check_range(z);
  for (const auto& z : out.z_g) check_range(z);
  CHECK(out.z_g.size() == 3);
}

TEST_CASE("centroid gradients come only from global projector paths") {
  ModelPair<double> model(tiny_config());
  auto views = random_views(3, 4, 8, 24);

  SUBCASE("local projector and predictor paths leave centroids untouched") {
    Tape<double> tape;
    auto out = model.student_similarities(tape, {views[0], views[1]}, {views[2]});
    // loss built only from local z_h and every z_g
    Tensor target = excb::softmax_rows(Tensor::constant({4, 8}, std::vector<double>(32, 0.1)), 1.0);
    Tensor loss = excb::cross_entropy_rows(target, excb::softmax_rows(out.z_h_local[0], 0.1));
    for (const auto& zg : out.z_g)
      loss = excb::add(loss, excb::cross_entropy_rows(target, excb::softmax_rows(zg, 0.1)));
    model.zero_grad();
    excb::backward(loss);
    auto grad = model.student_centroids().grad;
    REQUIRE(!grad->empty());
    for (double g : *grad) CHECK(g == 0.0);
  }

  SUBCASE("global projector path reaches the centroids") {
    Tape<double> tape;
    auto out = model.student_similarities(tape, {views[0], views[1]}, {views[2]});
    Tensor target = excb::softmax_rows(Tensor::constant({4, 8}, std::vector<double>(32, 0.1)), 1.0);
    model.zero_grad();
    excb::backward(excb::cross_entropy_rows(target, excb::softmax_rows(out.z_h_global[0], 0.1)));
    bool any = false;
    for (double g : *model.student_centroids().grad) any = any || g != 0.0;
    CHECK(any);
  }
}

TEST_CASE("ema endpoints are exact") {
  ModelPair<double> model(tiny_config());
  // push the student away from the teacher
  excb::Rng rng(31);
  for (auto* p : model.student_parameters())
    for (auto& v : p->value) v += 0.5 * rng.next_normal();

  auto snapshot = [](std::vector<excb::Parameter<double>*> ps) {
    std::vector<std::vector<double>> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
  };

  SUBCASE("m = 1 keeps the teacher bitwise") {
    auto before = snapshot(model.teacher_parameters());
    model.ema_update(1.0);
    auto after = snapshot(model.teacher_parameters());
    CHECK(before == after);
  }
  SUBCASE("m = 0 copies the student bitwise") {
    model.ema_update(0.0);
    auto s = model.student_parameters();
    auto t = model.teacher_parameters();
    REQUIRE(s.size() == t.size() + 2);  // predictor W and b have no teacher twin
    // teacher order: encoder, projector, centroids
    size_t ti = 0;
    for (auto* sp : s) {
      if (sp->name.rfind("pred.", 0) == 0) continue;
      CHECK(sp->value == t[ti]->value);
      ++ti;
    }
  }
  SUBCASE("base momentum hand value") {
    auto* ts = model.teacher_parameters()[0];
    auto* ss = model.student_parameters()[0];
    ts->value[0] = 1.0;
    ss->value[0] = 0.0;
    model.ema_update(0.996);
    CHECK(ts->value[0] == doctest::Approx(0.996).epsilon(1e-15));
  }
  SUBCASE("interior momentum lands strictly between the endpoints") {
    auto t_before = snapshot(model.teacher_parameters());
    model.ema_update(0.5);
    auto t = model.teacher_parameters();
    auto s = model.student_parameters();
    size_t ti = 0;
    for (auto* sp : s) {
      if (sp->name.rfind("pred.", 0) == 0) continue;
      for (size_t i = 0; i < sp->value.size(); ++i) {
        const double prev = t_before[ti][i];
        const double cur = t[ti]->value[i];
        const double stu = sp->value[i];
        if (std::abs(prev - stu) > 1e-9) {
          CHECK(cur > std::min(prev, stu));
          CHECK(cur < std::max(prev, stu));
        }
      }
      ++ti;
    }
  }
}

TEST_CASE("sgd fixed point and single-step decrease") {
  ModelPair<double> model(tiny_config());
  auto params = model.student_parameters();

  SUBCASE("zero grad and zero decay leave parameters unchanged") {
    auto before = params[0]->value;
    for (auto* p : params) p->grad->assign(p->value.size(), 0.0);
    model.sgd_step(0.1, 0.9, 0.0, 0.0);
    CHECK(params[0]->value == before);
  }

  SUBCASE("first step moves by lr * (g + wd * p)") {
    auto* p = params[0];
    const double p0 = p->value[0];
    for (auto* q : params) q->grad->assign(q->value.size(), 0.0);
    (*p->grad)[0] = 0.25;
    model.sgd_step(0.1, 0.9, 0.01, 0.01);
    CHECK(p->value[0] == doctest::Approx(p0 - 0.1 * (0.25 + 0.01 * p0)).epsilon(1e-14));
  }

  SUBCASE("two steps reproduce the velocity recursion") {
    auto* p = params[0];
    const double g = 0.5;
    double value = p->value[0];
    double velocity = 0.0;
    for (int step = 0; step < 2; ++step) {
      for (auto* q : params) q->grad->assign(q->value.size(), 0.0);
      (*p->grad)[0] = g;
      model.sgd_step(0.05, 0.9, 0.0, 0.0);
      velocity = 0.9 * velocity + g;  // decay is decoupled, so velocity sees only g
      value -= 0.05 * velocity;
      CHECK(p->value[0] == doctest::Approx(value).epsilon(1e-14));
    }
  }

  SUBCASE("missing gradients are a state error") {
    model.zero_grad();
    CHECK_THROWS_AS(model.sgd_step(0.1, 0.9, 0.0, 0.0), std::logic_error);
  }
}

TEST_CASE("schedule endpoints and midpoint") {
  excb::ScheduleConfig cfg;
  cfg.total_steps = 1000;
  cfg.warmup_steps = 100;
  cfg.base_lr = 0.15;
  cfg.final_lr = 0.0;

  auto s0 = excb::schedules(cfg, 0);
  CHECK(s0.lr == 0.0);
  CHECK(s0.ema_momentum == doctest::Approx(0.996).epsilon(1e-15));
  CHECK(s0.centroid_wd == doctest::Approx(1e-3).epsilon(1e-15));

  auto send = excb::schedules(cfg, cfg.total_steps);
  CHECK(send.ema_momentum == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(send.centroid_wd == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(send.lr == doctest::Approx(0.0).epsilon(1e-15));

  // cosine midpoint of the decay is the arithmetic mean of the endpoints
  auto mid = excb::schedules(cfg, 500);
  CHECK(mid.centroid_wd == doctest::Approx((1e-3 + 1e-4) / 2.0).epsilon(1e-12));

  CHECK_THROWS_AS(excb::schedules(cfg, 1001), std::invalid_argument);
  CHECK_THROWS_AS(excb::schedules(cfg, -1), std::invalid_argument);
}

TEST_CASE("schedule outputs stay within their endpoints") {
  excb::ScheduleConfig cfg;
  cfg.total_steps = 777;
  cfg.warmup_steps = 77;
  for (int64_t step = 0; step <= cfg.total_steps; ++step) {
    auto v = excb::schedules(cfg, step);
    CHECK(v.lr >= cfg.final_lr - 1e-15);
    CHECK(v.lr <= cfg.base_lr + 1e-15);
    CHECK(v.ema_momentum >= cfg.ema_base - 1e-15);
    CHECK(v.ema_momentum <= 1.0 + 1e-15);
    CHECK(v.centroid_wd <= cfg.centroid_wd_start + 1e-15);
    CHECK(v.centroid_wd >= cfg.centroid_wd_end - 1e-15);
  }
  // warmup is linear
  auto half = excb::schedules(cfg, 38);
  CHECK(half.lr == doctest::Approx(cfg.base_lr * 38.0 / 77.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelPair<double> model(tiny_config());
  auto sizes = excb::init_sizes(8, 0.99);
  sizes.s = {0.1, 0.2, 0.05, 0.15, 0.1, 0.1, 0.05, 0.25};
  // give velocities and values some history
  for (auto* p : model.student_parameters()) p->grad->assign(p->value.size(), 0.125);
  model.sgd_step(0.1, 0.9, 1e-3, 1e-4);
  model.ema_update(0.5);

  const std::string path = (std::filesystem::temp_directory_path() / "excb_ckpt_test.json").string();
  excb::save_checkpoint(path, model, sizes, 42);

  ModelPair<double> restored(tiny_config());
  excb::RelativeSizeVector sizes2;
  int64_t step = -1;
  excb::load_checkpoint(path, restored, sizes2, step);

  CHECK(step == 42);
  CHECK(sizes2.momentum == sizes.momentum);
  CHECK(sizes2.s == sizes.s);
  auto a = model.student_parameters();
  auto b = restored.student_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->value == b[i]->value);
    CHECK(a[i]->velocity == b[i]->velocity);
  }
  auto ta = model.teacher_parameters();
  auto tb = restored.teacher_parameters();
  for (size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->value == tb[i]->value);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects precision and shape mismatches") {
  ModelPair<double> model(tiny_config());
  auto sizes = excb::init_sizes(8);
  auto j = excb::checkpoint_to_json(model, sizes, 0);

  ModelPair<float> wrong(tiny_config());
  excb::RelativeSizeVector s2;
  int64_t step = 0;
  CHECK_THROWS_AS(excb::checkpoint_from_json(j, wrong, s2, step), std::runtime_error);

  ModelConfig other = tiny_config();
  other.projector_out = 4;
  other.embedding_dim = 4;
  ModelPair<double> mismatched(other);
  CHECK_THROWS_AS(excb::checkpoint_from_json(j, mismatched, s2, step), std::runtime_error);
}

TEST_CASE("float32 checkpoint round-trip is bit-exact") {
  ModelConfig cfg = tiny_config();
  ModelPair<float> model(cfg);
  auto sizes = excb::init_sizes(8);
  const std::string path = (std::filesystem::temp_directory_path() / "excb_ckpt_f32.json").string();
  excb::save_checkpoint(path, model, sizes, 7);
  ModelPair<float> restored(cfg);
  // wipe so equality below proves the load
  for (auto* p : restored.student_parameters())
    for (auto& v : p->value) v = -1.0f;
  excb::RelativeSizeVector s2;
  int64_t step = 0;
  excb::load_checkpoint(path, restored, s2, step);
  auto a = model.student_parameters();
  auto b = restored.student_parameters();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  std::filesystem::remove(path);
}
