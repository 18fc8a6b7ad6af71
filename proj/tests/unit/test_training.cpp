#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cll/baselines.hpp"
#include "cll/ops.hpp"
#include "cll/optim.hpp"
#include "cll/train.hpp"

using namespace cll;

namespace {

// Small enough that a handful of steps run in well under a second.
TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.patch_size = 8;
  c.steps_phase1 = 3;
  c.steps_phase2 = 2;
  c.validation_images = 2;
  c.validation_size = 8;
  return c;
}

const NetworkSpec kTinySpec{4, 1, 3, 1};

}  // namespace

TEST_CASE("noise level conversions and validation") {
  CHECK(NoiseLevel::from_8bit(20).sigma == doctest::Approx(20.0 / 255.0));
  CHECK(NoiseLevel::from_8bit(80).as_8bit() == doctest::Approx(80.0));
  CHECK_THROWS_AS(NoiseLevel{-0.1}.validate(), RangeError);
  CHECK_THROWS_AS(NoiseLevel{NAN}.validate(), RangeError);
}

TEST_CASE("synthetic images lie in [0, 1] and streams are disjoint") {
  const SyntheticDataset data(7);
  const auto train = data.clean_batch(Stream::train, 0, 4, 16);
  const auto val = data.clean_batch(Stream::validation, 0, 4, 16);
  for (float v : train.data()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_FALSE(train.bitwise_equal(val));
  CHECK(data.sample_seed(Stream::train, 3) != data.sample_seed(Stream::validation, 3));
  // Samples are a pure function of their index.
  const auto shifted = data.clean_batch(Stream::train, 2, 1, 16);
  for (std::size_t i = 0; i < shifted.size(); ++i) CHECK(shifted[i] == train[2 * 256 + i]);
}

TEST_CASE("sigma 0 gives noisy == clean") {
  const SyntheticDataset data(1);
  const Batch b = make_noisy(data, Stream::train, 0, 3, 12, 0.0);
  CHECK(b.noisy.bitwise_equal(b.clean));
}

TEST_CASE("injected noise has the requested standard deviation") {
  const SyntheticDataset data(2);
  const double sigma = 25.0 / 255.0;
  // 1024 images of 32x32 = 1,048,576 samples.
  const Batch b = make_noisy(data, Stream::train, 0, 1024, 32, sigma);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < b.noisy.size(); ++i) {
    const double d = static_cast<double>(b.noisy[i]) - static_cast<double>(b.clean[i]);
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(b.noisy.size());
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(std::sqrt(var) - sigma) <= 0.01 * sigma);

  // Per batch: sample variance within 3 standard errors of sigma^2.
  const Batch small = make_noisy(data, Stream::train, 5000, 16, 32, sigma);
  double s2 = 0.0;
  for (std::size_t i = 0; i < small.noisy.size(); ++i) {
    const double d = static_cast<double>(small.noisy[i]) - static_cast<double>(small.clean[i]);
    s2 += d * d;
  }
  const double m = static_cast<double>(small.noisy.size());
  const double se = sigma * sigma * std::sqrt(2.0 / m);
  CHECK(std::abs(s2 / m - sigma * sigma) <= 3.0 * se);
}

TEST_CASE("batches are reproducible per seed and index") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset a(11), b(11), c(12);
  CHECK(sample_batch(a, cfg, 0.1, 4).noisy.bitwise_equal(sample_batch(b, cfg, 0.1, 4).noisy));
  CHECK_FALSE(sample_batch(a, cfg, 0.1, 4).noisy.bitwise_equal(sample_batch(c, cfg, 0.1, 4).noisy));
  CHECK_FALSE(sample_batch(a, cfg, 0.1, 4).noisy.bitwise_equal(sample_batch(a, cfg, 0.1, 5).noisy));
}

TEST_CASE("validation set keeps one frozen noise draw") {
  const SyntheticDataset data(3);
  const auto val = ValidationSet::make(data, 3, 10);
  CHECK(val.size() == 3);
  const auto lo = val.noisy(0.1);
  const auto hi = val.noisy(0.2);
  for (std::size_t i = 0; i < lo.size(); ++i) {
    CHECK(hi[i] - val.clean[i] == doctest::Approx(2.0 * (lo[i] - val.clean[i])).epsilon(1e-4));
  }
}

TEST_CASE("plain SGD one-step oracle on a single 1x1 convolution") {
  // y = w * x with w = 1, x = 1, target 0: dL/dw = 2 w x^2 = 2, so w' = 1 - 0.1 * 2.
  ParameterStore store;
  store.add("w", Tensor<Real>(Shape{1, 1, 1, 1}, 1.0f));
  store.add("b", Tensor<Real>(Shape{1, 1, 1, 1}, 0.0f));
  Tape<Real> tape;
  const std::vector<std::string> names{"w"};
  ParameterBinding params(tape, store, names);
  const Var x = tape.leaf(Tensor<Real>(Shape{1, 1, 1, 1}, 1.0f));
  const Var y = ops::conv2d(tape, x, params("w"), params("b"), 0);
  tape.backward(ops::loss_l2(tape, y, tape.leaf(Tensor<Real>(Shape{1, 1, 1, 1}, 0.0f))));
  Optimizer(OptimizerKind::sgd, AdamConfig{0.1}).step(store, names, {params.grad("w")});
  CHECK(store.at("w")[0] == doctest::Approx(0.8).epsilon(1e-7));
}

TEST_CASE("Adam: zero gradients leave parameters and moments untouched") {
  Tensor<Real> p(Shape{3, 1, 1, 1}, 0.5f);
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, Tensor<Real>(p.shape()), st, AdamConfig{});
  for (float v : p.data()) CHECK(v == 0.5f);
  for (float v : st.m.data()) CHECK(v == 0.0f);
  for (float v : st.v.data()) CHECK(v == 0.0f);
}

TEST_CASE("Adam: first step moves by lr against the gradient sign") {
  Tensor<Real> p(Shape{4, 1, 1, 1}, 1.0f);
  Tensor<Real> g(Shape{4, 1, 1, 1}, std::vector<Real>{3.0f, -0.5f, 100.0f, -1e-3f});
  AdamState st;
  adam_step(p, g, st, AdamConfig{0.01});
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = 1.0 - 0.01 * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(p[i] == doctest::Approx(expected).epsilon(1e-5));
  }
  CHECK(st.t == 1);
}

TEST_CASE("Adam converges on a scalar quadratic") {
  Tensor<Real> w(Shape{1, 1, 1, 1}, 0.0f);
  AdamState st;
  for (int i = 0; i < 100; ++i) {
    Tensor<Real> g(w.shape(), 2.0f * (w[0] - 3.0f));
    adam_step(w, g, st, AdamConfig{0.1});
  }
  CHECK(std::abs(w[0] - 3.0f) < 0.1);
}

TEST_CASE("optimizer rejects non-finite gradients without touching anything") {
  Tensor<Real> p(Shape{2, 1, 1, 1}, 1.0f);
  AdamState st;
  Tensor<Real> g(p.shape(), std::vector<Real>{1.0f, NAN});
  CHECK_THROWS_AS(adam_step(p, g, st, AdamConfig{}), NonFiniteError);
  CHECK(p[0] == 1.0f);
  CHECK(st.t == 0);
  CHECK_THROWS_AS(AdamConfig{-1.0}.validate(), ConfigError);
  CHECK_THROWS_AS((AdamConfig{1e-3, 1.0}.validate()), ConfigError);
}

TEST_CASE("zero steps leave the network unchanged") {
  TrainConfig cfg = tiny_config();
  cfg.steps_phase1 = 0;
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  Network net = Network::build(kTinySpec, 1);
  const ParameterStore before = net.store();
  const auto r = train_phase1(net, data, val, cfg);
  CHECK(r.losses.empty());
  CHECK(net.store().bitwise_equal(before));
}

TEST_CASE("phase 1 trains main filters and is deterministic") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  Network a = Network::build(kTinySpec, 1);
  Network b = Network::build(kTinySpec, 1);
  const ParameterStore before = a.store();
  std::size_t calls = 0;
  const auto ra = train_phase1(a, data, val, cfg, [&](std::size_t, double) { ++calls; });
  const auto rb = train_phase1(b, data, val, cfg);
  CHECK(calls == cfg.steps_phase1);
  CHECK(ra.losses.size() == cfg.steps_phase1);
  for (double l : ra.losses) CHECK(std::isfinite(l));
  CHECK_FALSE(a.store().bitwise_equal(before));
  CHECK(a.store().bitwise_equal(b.store()));
  CHECK(ra.val_psnr_after == rb.val_psnr_after);
  CHECK(ra.sigma == cfg.sigma_low);
  CHECK(ra.alpha == 0.0);
}

TEST_CASE("a NaN loss raises TrainingError with the step index") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  Network net = Network::build(kTinySpec, 1);
  net.store().at("conv0.weight")[0] = NAN;
  try {
    train_phase1(net, data, val, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("phase 2 freezes the main filters and starts from the phase-1 function") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  Network net = Network::build(kTinySpec, 1);
  train_phase1(net, data, val, cfg);

  Network plain_copy = net;
  CHECK_THROWS_AS(train_phase2(plain_copy, data, val, cfg), ConfigError);

  net.attach_ftn(FtnConfig{2, 2});
  auto main_hash = [&] {
    ParameterStore m;
    for (const auto& n : net.collect_parameters(Phase::main)) m.add(n, net.store().at(n));
    return m.hash();
  };
  const std::uint64_t before = main_hash();
  const Batch first = sample_batch(data, cfg, cfg.sigma_high, cfg.steps_phase1);
  const double phase1_loss = batch_loss(net, first, 0.0, cfg.loss);
  const auto r = train_phase2(net, data, val, cfg);
  CHECK(main_hash() == before);
  CHECK(r.losses.front() == doctest::Approx(phase1_loss).epsilon(1e-5));
  CHECK(r.alpha == 1.0);
  CHECK(r.sigma == cfg.sigma_high);
}

TEST_CASE("from-scratch baseline uses the combined budget") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  PhaseResult r;
  const Network a = train_from_scratch(kTinySpec, data, val, cfg, &r);
  const Network b = train_from_scratch(kTinySpec, data, val, cfg);
  CHECK(r.losses.size() == cfg.steps_phase1 + cfg.steps_phase2);
  CHECK(a.store().bitwise_equal(b.store()));
}

TEST_CASE("loss csv") {
  PhaseResult r;
  r.losses = {0.5, 0.25};
  std::ostringstream os;
  write_loss_csv(os, r);
  CHECK(os.str() == "step,loss\n0,0.5\n1,0.25\n");
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(std::string(to_string(LossKind::l1)) == "l1");
}

TEST_CASE("DNI blends every parameter with one alpha") {
  DniPair pair;
  pair.theta_a.add("p", Tensor<Real>(Shape{1, 1, 1, 1}, 1.0f));
  pair.theta_b.add("p", Tensor<Real>(Shape{1, 1, 1, 1}, 3.0f));
  CHECK(dni_interpolate(pair, 0.5).at("p")[0] == 2.0f);

  const Network a = Network::build(kTinySpec, 1);
  const Network b = Network::build(kTinySpec, 2);
  const DniPair nets{a.store(), b.store()};
  CHECK(dni_interpolate(nets, 0.0).bitwise_equal(a.store()));
  CHECK(dni_interpolate(nets, 1.0).bitwise_equal(b.store()));
  CHECK_THROWS_AS(dni_interpolate(nets, 1.2), RangeError);

  DniPair bad{a.store(), Network::build(NetworkSpec{8, 1, 3, 1}, 1).store()};
  CHECK_THROWS_AS(bad.validate(), StoreMismatchError);
  CHECK_THROWS_AS(dni_interpolate(bad, 0.5), StoreMismatchError);
}

TEST_CASE("unconstrained fine-tune") {
  const TrainConfig cfg = tiny_config();
  const SyntheticDataset data(cfg.seed);
  const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
  Network base = Network::build(kTinySpec, 1);
  base.attach_ftn(FtnConfig{1, 2});
  const Network zero = finetune_unconstrained(base, data, val, cfg, 0);
  CHECK(zero.provider_count() == 0);
  for (const auto& [name, t] : zero.store().entries()) CHECK(t.bitwise_equal(base.store().at(name)));

  PhaseResult r;
  const Network x = finetune_unconstrained(base, data, val, cfg, 2, &r);
  const Network y = finetune_unconstrained(base, data, val, cfg, 2);
  CHECK(r.losses.size() == 2);
  CHECK(x.store().bitwise_equal(y.store()));
  CHECK_FALSE(x.store().bitwise_equal(zero.store()));
}
