#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "rowsteal/errors.hpp"
#include "rowsteal/ledger.hpp"
#include "rowsteal/rng.hpp"
#include "rowsteal/subtrain.hpp"

using namespace rowsteal;

namespace {

TinyNet random_net(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  TinyNet net;
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer dl;
    dl.w = Mat(dims[l + 1], dims[l]);
    for (double& v : dl.w.v) v = u(rng);
    dl.b.assign(dims[l + 1], 0.0);
    for (double& b : dl.b) b = 0.1 * u(rng);
    dl.relu = l + 2 < dims.size();
    net.layers.push_back(std::move(dl));
  }
  net.validate();
  return net;
}

// Range tensors shaped like the net with classes cycling Full/Partial/None.
// Full weights pin w_mean to the true value; Partial means sit 0.3 away inside
// a +-1 interval so the penalty term is active.
RangeTensors mixed_ranges(const TinyNet& net) {
  RangeTensors rt;
  for (const DenseLayer& dl : net.layers) {
    LayerRanges lr;
    lr.w_min = Mat(dl.w.rows, dl.w.cols);
    lr.w_max = Mat(dl.w.rows, dl.w.cols);
    lr.w_mean = Mat(dl.w.rows, dl.w.cols);
    lr.set_class.resize(dl.w.size());
    for (std::size_t i = 0; i < dl.w.size(); ++i) {
      const int cls = static_cast<int>(i % 3) + 1;
      lr.set_class[i] = static_cast<std::uint8_t>(cls);
      if (cls == 1) {
        lr.w_min.v[i] = lr.w_max.v[i] = lr.w_mean.v[i] = dl.w.v[i];
      } else if (cls == 2) {
        lr.w_mean.v[i] = dl.w.v[i] + 0.3;
        lr.w_min.v[i] = lr.w_mean.v[i] - 1.0;
        lr.w_max.v[i] = lr.w_mean.v[i] + 1.0;
      } else {
        lr.w_min.v[i] = -2.0;
        lr.w_max.v[i] = 2.0;
        lr.w_mean.v[i] = 0.0;
      }
    }
    rt.layers.push_back(std::move(lr));
  }
  return rt;
}

Dataset uniform_data(std::size_t n, std::size_t dims, std::size_t classes, std::uint64_t seed) {
  Dataset ds;
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ds.x = Mat(n, dims);
  for (double& v : ds.x.v) v = u(rng);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < n; ++i) ds.y.push_back(lab(rng));
  ds.classes = classes;
  return ds;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

TEST_CASE("cross-entropy matches the closed form on a hand computed batch") {
  TinyNet net;
  DenseLayer dl;
  dl.w = Mat(2, 2);
  dl.w.v = {1.0, 0.0, 0.0, 1.0};  // identity: logits == inputs
  dl.b = {0.0, 0.0};
  dl.relu = false;
  net.layers = {dl};

  Mat x(2, 2);
  x.v = {1.0, 0.0, 0.0, 1.0};
  std::vector<int> y{0, 0};  // second sample is mislabeled on purpose

  GradView grad = zero_grad_like(net);
  const double loss = loss_and_grad(net, x, y, all_indices(2), nullptr, 0.0, grad);
  // Sample 1: -log(e/(e+1)); sample 2: -log(1/(1+e)); mean of the two.
  const double expect = 0.5 * (std::log(1.0 + std::exp(-1.0)) + std::log(1.0 + std::exp(1.0)));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("analytic gradients agree with central differences everywhere") {
  struct Shape {
    std::vector<std::size_t> dims;
    std::uint64_t seed;
  };
  const Shape shapes[] = {{{4, 5, 3}, 101}, {{3, 3}, 102}, {{5, 7, 4, 2}, 103}};
  const double h = 1e-6;
  const double lambda = 0.37;

  for (const Shape& sh : shapes) {
    TinyNet net = random_net(sh.dims, sh.seed);
    RangeTensors rt = mixed_ranges(net);
    Dataset ds = uniform_data(12, sh.dims.front(), sh.dims.back(), sh.seed + 7);
    const auto batch = all_indices(ds.size());

    GradView grad = zero_grad_like(net);
    // Scribble over the gradient to prove loss_and_grad zeroes it first.
    for (Mat& m : grad.dw)
      for (double& v : m.v) v = 1e9;
    const double base = loss_and_grad(net, ds.x, ds.y, batch, &rt, lambda, grad);
    CHECK(std::isfinite(base));

    auto loss_with = [&](const TinyNet& n2) {
      GradView g2 = zero_grad_like(n2);
      return loss_and_grad(n2, ds.x, ds.y, batch, &rt, lambda, g2);
    };

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (std::size_t i = 0; i < net.layers[l].w.size(); ++i) {
        if (rt.layers[l].set_class[i] == 1) {
          CHECK(grad.dw[l].v[i] == 0.0);  // fully known weights stay frozen
          continue;
        }
        TinyNet up = net, dn = net;
        up.layers[l].w.v[i] += h;
        dn.layers[l].w.v[i] -= h;
        const double numeric = (loss_with(up) - loss_with(dn)) / (2.0 * h);
        const double analytic = grad.dw[l].v[i];
        REQUIRE(std::fabs(numeric - analytic) <=
                1e-5 * std::max({1.0, std::fabs(numeric), std::fabs(analytic)}));
      }
      for (std::size_t i = 0; i < net.layers[l].b.size(); ++i) {
        TinyNet up = net, dn = net;
        up.layers[l].b[i] += h;
        dn.layers[l].b[i] -= h;
        const double numeric = (loss_with(up) - loss_with(dn)) / (2.0 * h);
        const double analytic = grad.db[l][i];
        REQUIRE(std::fabs(numeric - analytic) <=
                1e-5 * std::max({1.0, std::fabs(numeric), std::fabs(analytic)}));
      }
    }
  }
}

TEST_CASE("the interval penalty adds exactly lambda times the squared distances") {
  TinyNet net = random_net({4, 6, 3}, 55);
  RangeTensors rt = mixed_ranges(net);
  Dataset ds = uniform_data(10, 4, 3, 56);
  const auto batch = all_indices(ds.size());
  GradView grad = zero_grad_like(net);

  const double plain = loss_and_grad(net, ds.x, ds.y, batch, &rt, 0.0, grad);
  const double with = loss_and_grad(net, ds.x, ds.y, batch, &rt, 0.3, grad);
  double sq = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i)
      if (rt.layers[l].set_class[i] == 2) {
        const double d = net.layers[l].w.v[i] - rt.layers[l].w_mean.v[i];
        sq += d * d;
      }
  CHECK(with == doctest::Approx(plain + 0.3 * sq).epsilon(1e-12));

  // Without range tensors lambda has nothing to act on.
  const double no_ranges = loss_and_grad(net, ds.x, ds.y, batch, nullptr, 5.0, grad);
  const double no_ranges0 = loss_and_grad(net, ds.x, ds.y, batch, nullptr, 0.0, grad);
  CHECK(no_ranges == doctest::Approx(no_ranges0).epsilon(1e-15));
}

TEST_CASE("loss rejects malformed batches and labels") {
  TinyNet net = random_net({3, 2}, 1);
  Dataset ds = uniform_data(4, 3, 2, 2);
  GradView grad = zero_grad_like(net);
  CHECK_THROWS_AS(loss_and_grad(net, ds.x, ds.y, {}, nullptr, 0.0, grad), ParameterError);
  CHECK_THROWS_AS(loss_and_grad(net, ds.x, ds.y, {99}, nullptr, 0.0, grad), ParameterError);
  auto bad = ds;
  bad.y[0] = 7;
  CHECK_THROWS_AS(loss_and_grad(net, bad.x, bad.y, all_indices(4), nullptr, 0.0, grad),
                  ParameterError);
}

TEST_CASE("fully leaked weights train to an exact frozen copy of the victim") {
  TinyNet victim = random_net({6, 8, 3}, 42);
  VictimModel model = quantize(victim, 7);
  TinyNet vf = dequantize(model);
  auto ledger = LeakLedger::full(model);
  RangeTensors rt = build_range_tensors(ledger, model);

  BlobModes modes = make_blob_modes(6, 3, 2, 1);
  Dataset ds = sample_blobs(modes, 64, 0.2, 2);

  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.finetune_epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.train_biases = false;
  TinyNet sub = train_substitute(rt, ds, cfg, &model.biases);
  CHECK(sub == vf);
  CHECK(fidelity(sub, vf, ds) == doctest::Approx(100.0));

  // Training biases moves them, but the weights stay pinned bit for bit.
  cfg.train_biases = true;
  TinyNet sub2 = train_substitute(rt, ds, cfg, &model.biases);
  for (std::size_t l = 0; l < vf.layers.size(); ++l) CHECK(sub2.layers[l].w == vf.layers[l].w);
  CHECK(sub2 != vf);
}

TEST_CASE("training is a pure function of its seed") {
  TinyNet shape_net = random_net({5, 7, 2}, 8);
  VictimModel model = quantize(shape_net, 9);
  LeakLedger empty(model);
  RangeTensors rt = build_range_tensors(empty, model);
  BlobModes modes = make_blob_modes(5, 2, 2, 4);
  Dataset ds = sample_blobs(modes, 80, 0.2, 5);

  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.finetune_epochs = 3;
  cfg.seed = 11;
  TinyNet a = train_substitute(rt, ds, cfg);
  TinyNet b = train_substitute(rt, ds, cfg);
  CHECK(a == b);
  cfg.seed = 12;
  TinyNet c = train_substitute(rt, ds, cfg);
  CHECK(a != c);
}

TEST_CASE("partially known weights stay inside their intervals through the main phase") {
  TinyNet victim = random_net({5, 6, 2}, 21);
  VictimModel model = quantize(victim, 3);
  LeakLedger ledger(model);
  // Leak the sign bit of every other weight, plus a few full bytes.
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    for (std::size_t r = 0; r < model.layers[l].rows; ++r)
      for (std::size_t c = 0; c < model.layers[l].cols; ++c) {
        const std::size_t i = r * model.layers[l].cols + c;
        const auto code = static_cast<std::uint8_t>(model.layers[l].code(r, c));
        if (i % 2 == 0) ledger.set(l, r, c, 7, (code >> 7) & 1, 1);
        if (i % 5 == 0)
          for (int bit = 0; bit < 8; ++bit) ledger.set(l, r, c, bit, (code >> bit) & 1, 1);
      }
  RangeTensors rt = build_range_tensors(ledger, model);
  REQUIRE(rt.count_class(WeightSetClass::Partial) > 0);
  REQUIRE(rt.count_class(WeightSetClass::Full) > 0);

  BlobModes modes = make_blob_modes(5, 2, 2, 6);
  Dataset ds = sample_blobs(modes, 96, 0.2, 7);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.finetune_epochs = 0;  // clipping applies to every epoch that runs
  cfg.lr = 0.5;             // large steps so excursions would show
  cfg.lambda = 0.01;
  cfg.seed = 2;
  TinyNet sub = train_substitute(rt, ds, cfg);

  for (std::size_t l = 0; l < sub.layers.size(); ++l)
    for (std::size_t i = 0; i < sub.layers[l].w.size(); ++i) {
      const auto cls = rt.layers[l].set_class[i];
      if (cls == 1) CHECK(sub.layers[l].w.v[i] == rt.layers[l].w_mean.v[i]);
      if (cls == 2) {
        CHECK(sub.layers[l].w.v[i] >= rt.layers[l].w_min.v[i]);
        CHECK(sub.layers[l].w.v[i] <= rt.layers[l].w_max.v[i]);
      }
    }
}

TEST_CASE("training configs validate their numeric ranges") {
  TrainConfig cfg;
  cfg.validate();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.finetune_epochs = cfg.epochs + 1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("symmetric quantization hits exact codes and survives a round trip") {
  Mat w(2, 2);
  w.v = {127.0, -3.0, 5.0, 0.0};
  QuantizedLayer q = quantize_layer(w);
  CHECK(q.scale == doctest::Approx(1.0));
  CHECK(q.codes == std::vector<std::int8_t>{127, -3, 5, 0});

  Mat zero(3, 1);
  QuantizedLayer qz = quantize_layer(zero);
  CHECK(qz.scale == doctest::Approx(1.0));
  CHECK(qz.codes == std::vector<std::int8_t>{0, 0, 0});

  TinyNet net = random_net({4, 6, 2}, 31);
  VictimModel model = quantize(net, 17);
  CHECK(model.seed == 17);
  REQUIRE(model.biases.size() == net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(model.biases[l] == net.layers[l].b);
    double maxabs = 0.0;
    for (double v : net.layers[l].w.v) maxabs = std::max(maxabs, std::fabs(v));
    CHECK(model.layers[l].scale == doctest::Approx(maxabs / 127.0));
    for (std::int8_t code : model.layers[l].codes) {
      CHECK(code >= -127);
      CHECK(code <= 127);
    }
  }

  TinyNet back = dequantize(model);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.layers[l].b == net.layers[l].b);
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i)
      CHECK(std::fabs(back.layers[l].w.v[i] - net.layers[l].w.v[i]) <=
            model.layers[l].scale / 2.0 + 1e-12);
  }
  // Re-quantizing the float view reproduces the codes and scales exactly.
  VictimModel again = quantize(back, 17);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(again.layers[l].codes == model.layers[l].codes);
    CHECK(again.layers[l].scale == doctest::Approx(model.layers[l].scale).epsilon(1e-12));
  }

  VictimModel no_bias = model;
  no_bias.biases.clear();
  CHECK_THROWS_AS(dequantize(no_bias), ParameterError);
}

TEST_CASE("float nets survive their binary sidecar") {
  TinyNet net = random_net({3, 5, 4}, 61);
  const std::string path = "subtrain_test_net.bin";
  save_net(net, path);
  CHECK(load_net(path) == net);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.put('x');
  }
  CHECK_THROWS_AS(load_net(path), FormatError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_net(path), FormatError);
}

TEST_CASE("blob sampling balances labels and respects the unit box") {
  BlobModes modes = make_blob_modes(4, 3, 2, 9);
  CHECK(modes.means.rows == 6);
  CHECK(modes.means.cols == 4);
  for (double v : modes.means.v) {
    CHECK(v >= 0.15);
    CHECK(v <= 0.85);
  }

  Dataset ds = sample_blobs(modes, 90, 0.1, 5);
  CHECK(ds.size() == 90);
  CHECK(ds.classes == 3);
  std::vector<int> counts(3, 0);
  for (int label : ds.y) counts[static_cast<std::size_t>(label)]++;
  CHECK(counts == std::vector<int>{30, 30, 30});
  for (double v : ds.x.v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  Dataset same = sample_blobs(modes, 90, 0.1, 5);
  CHECK(same.x == ds.x);
  CHECK(same.y == ds.y);
  Dataset other = sample_blobs(modes, 90, 0.1, 6);
  CHECK(other.x != ds.x);

  // Zero noise puts every sample exactly on one of its class's mode means.
  Dataset crisp = sample_blobs(modes, 30, 0.0, 8);
  for (std::size_t i = 0; i < crisp.size(); ++i) {
    const auto label = static_cast<std::size_t>(crisp.y[i]);
    bool found = false;
    for (std::size_t m = 0; m < modes.modes_per_class && !found; ++m) {
      const std::size_t row = label * modes.modes_per_class + m;
      bool eq = true;
      for (std::size_t d = 0; d < 4; ++d)
        eq = eq && crisp.x.at(i, d) == modes.means.at(row, d);
      found = eq;
    }
    CHECK(found);
  }

  CHECK_THROWS_AS(make_blob_modes(0, 2, 1, 1), ParameterError);
  CHECK_THROWS_AS(make_blob_modes(4, 1, 1, 1), ParameterError);
  CHECK_THROWS_AS(make_blob_modes(4, 2, 0, 1), ParameterError);
  CHECK_THROWS_AS(sample_blobs(modes, 0, 0.1, 1), ParameterError);
  CHECK_THROWS_AS(sample_blobs(modes, 10, -0.1, 1), ParameterError);
}

TEST_CASE("subsetting rounds the sample count and draws from the original") {
  BlobModes modes = make_blob_modes(3, 2, 2, 14);
  Dataset ds = sample_blobs(modes, 100, 0.1, 15);
  Dataset s = subset(ds, 0.08, 7);
  CHECK(s.size() == 8);
  CHECK(s.classes == ds.classes);
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < ds.size() && !found; ++j) {
      if (ds.y[j] != s.y[i]) continue;
      bool eq = true;
      for (std::size_t d = 0; d < 3; ++d) eq = eq && ds.x.at(j, d) == s.x.at(i, d);
      found = eq;
    }
    CHECK(found);
  }
  Dataset all = subset(ds, 1.0, 7);
  CHECK(all.size() == 100);
  Dataset again = subset(ds, 0.08, 7);
  CHECK(again.x == s.x);
  CHECK_THROWS_AS(subset(ds, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(subset(ds, 1.5, 1), ParameterError);
  CHECK_THROWS_AS(subset(ds, 0.001, 1), ParameterError);  // rounds to zero samples
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax_class({1.0, 3.0, 3.0}) == 1);
  CHECK(argmax_class({2.0, 2.0}) == 0);
  CHECK(argmax_class({5.0}) == 0);
  CHECK(argmax_class({-1.0, -1.0, -1.0}) == 0);
}

TEST_CASE("accuracy and fidelity count argmax agreement in percent") {
  TinyNet net;
  DenseLayer dl;
  dl.w = Mat(2, 2);
  dl.w.v = {1.0, 0.0, 0.0, 1.0};
  dl.b = {0.0, 0.0};
  dl.relu = false;
  net.layers = {dl};

  Dataset ds;
  ds.x = Mat(4, 2);
  ds.x.v = {1, 0, 0, 1, 1, 0, 0, 1};
  ds.y = {0, 1, 1, 1};  // third sample mislabeled
  ds.classes = 2;
  CHECK(accuracy(net, ds.x, ds.y) == doctest::Approx(75.0));
  CHECK(accuracy(net, ds) == doctest::Approx(75.0));
  CHECK(fidelity(net, net, ds) == doctest::Approx(100.0));

  TinyNet flipped = net;
  flipped.layers[0].w.v = {0.0, 1.0, 1.0, 0.0};  // swaps the two classes
  CHECK(fidelity(flipped, net, ds) == doctest::Approx(0.0));
}

TEST_CASE("adversarial perturbations stay inside the epsilon ball exactly") {
  TinyNet net = random_net({6, 10, 3}, 71);
  Dataset ds = uniform_data(200, 6, 3, 72);
  // Force boundary-hugging inputs into the mix.
  for (std::size_t d = 0; d < 6; ++d) {
    ds.x.at(0, d) = 0.0;
    ds.x.at(1, d) = 1.0;
    ds.x.at(2, d) = d % 2 ? 0.001 : 0.999;
  }

  for (double eps : {0.031, 0.25}) {
    PgdConfig cfg;
    cfg.epsilon = eps;
    Mat adv = pgd_attack(net, ds.x, ds.y, cfg);
    REQUIRE(adv.rows == ds.x.rows);
    REQUIRE(adv.cols == ds.x.cols);
    double max_delta = 0.0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      REQUIRE(adv.v[i] >= 0.0);
      REQUIRE(adv.v[i] <= 1.0);
      REQUIRE(adv.v[i] - ds.x.v[i] <= eps);  // exact, no tolerance
      REQUIRE(ds.x.v[i] - adv.v[i] <= eps);
      max_delta = std::max(max_delta, std::fabs(adv.v[i] - ds.x.v[i]));
    }
    CHECK(max_delta > 0.0);
  }

  PgdConfig zero;
  zero.epsilon = 0.0;
  CHECK(pgd_attack(net, ds.x, ds.y, zero) == ds.x);

  PgdConfig cfg;
  CHECK(cfg.effective_step() == doctest::Approx(2.0 * 0.031 / 7.0));
  cfg.step_size = 0.01;
  CHECK(cfg.effective_step() == doctest::Approx(0.01));
  cfg.step_size = 0.05;  // exceeds epsilon
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("a trained classifier is measurably hurt by its own adversarial inputs") {
  BlobModes modes = make_blob_modes(8, 3, 2, 11);
  Dataset train = sample_blobs(modes, 300, 0.15, 12);
  Dataset test = sample_blobs(modes, 200, 0.15, 13);

  TinyNet shape_net = random_net({8, 16, 3}, 14);
  VictimModel model = quantize(shape_net, 15);
  LeakLedger empty(model);
  RangeTensors rt = build_range_tensors(empty, model);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.finetune_epochs = 10;
  cfg.seed = 16;
  TinyNet net = train_substitute(rt, train, cfg);

  const double clean = accuracy(net, test);
  CHECK(clean > 70.0);

  PgdConfig pgd;
  pgd.epsilon = 0.1;
  Mat adv = pgd_attack(net, test.x, test.y, pgd);
  const double attacked = accuracy(net, adv, test.y);
  CHECK(attacked < clean);

  Metrics m = evaluate(net, net, test, pgd);
  CHECK(m.accuracy == doctest::Approx(clean));
  CHECK(m.fidelity == doctest::Approx(100.0));
  CHECK(m.accuracy_under_attack == doctest::Approx(attacked));
}
