#include "rowsteal/subtrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "rowsteal/errors.hpp"
#include "rowsteal/rng.hpp"

namespace rowsteal {

std::size_t TinyNet::input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
std::size_t TinyNet::output_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }

void TinyNet::validate() const {
  if (layers.empty()) throw ParameterError("net: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& dl = layers[l];
    if (dl.w.rows == 0 || dl.w.cols == 0) throw ParameterError("net: empty weight matrix");
    if (dl.b.size() != dl.w.rows) throw ParameterError("net: bias length != output dim");
    if (l > 0 && dl.w.cols != layers[l - 1].w.rows)
      throw ParameterError("net: layer dimensions do not chain");
  }
}

std::vector<double> TinyNet::logits(const double* x) const {
  std::vector<double> in(x, x + input_dim());
  std::vector<double> out;
  for (const DenseLayer& dl : layers) {
    out.assign(dl.w.rows, 0.0);
    for (std::size_t r = 0; r < dl.w.rows; ++r) {
      double s = dl.b[r];
      for (std::size_t c = 0; c < dl.w.cols; ++c) s += dl.w.at(r, c) * in[c];
      out[r] = dl.relu ? std::max(0.0, s) : s;
    }
    in.swap(out);
  }
  return in;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& s;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos >= s.size()) throw FormatError("net: truncated file");
    return static_cast<std::uint8_t>(s[pos++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

constexpr char kNetMagic[4] = {'f', 'n', 'e', 't'};

}  // namespace

void save_net(const TinyNet& net, const std::string& path) {
  net.validate();
  std::string out;
  out.append(kNetMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const DenseLayer& dl : net.layers) {
    put_u64(out, dl.w.rows);
    put_u64(out, dl.w.cols);
    out.push_back(dl.relu ? 1 : 0);
  }
  for (const DenseLayer& dl : net.layers) {
    for (double v : dl.w.v) put_f64(out, v);
    for (double v : dl.b) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("net: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("net: write failed for '" + path + "'");
}

TinyNet load_net(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("net: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string s = buf.str();
  Reader r{s};
  for (char m : kNetMagic)
    if (r.u8() != static_cast<std::uint8_t>(m)) throw FormatError("net: bad magic");
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 64) throw FormatError("net: implausible layer count");
  TinyNet net;
  for (std::uint32_t l = 0; l < count; ++l) {
    DenseLayer dl;
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
      throw FormatError("net: implausible layer shape");
    dl.w = Mat(rows, cols);
    dl.relu = r.u8() != 0;
    dl.b.assign(rows, 0.0);
    net.layers.push_back(std::move(dl));
  }
  for (DenseLayer& dl : net.layers) {
    for (double& v : dl.w.v) v = r.f64();
    for (double& v : dl.b) v = r.f64();
  }
  if (r.pos != s.size()) throw FormatError("net: trailing bytes");
  net.validate();
  return net;
}

TinyNet dequantize(const VictimModel& model) {
  model.validate();
  if (model.biases.size() != model.layers.size())
    throw ParameterError("dequantize: model carries no biases");
  TinyNet net;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const QuantizedLayer& q = model.layers[l];
    if (model.biases[l].size() != q.rows)
      throw ParameterError("dequantize: bias length != layer outputs");
    DenseLayer dl;
    dl.w = Mat(q.rows, q.cols);
    for (std::size_t i = 0; i < q.codes.size(); ++i)
      dl.w.v[i] = static_cast<double>(q.codes[i]) * q.scale;
    dl.b = model.biases[l];
    dl.relu = l + 1 < model.layers.size();
    net.layers.push_back(std::move(dl));
  }
  net.validate();
  return net;
}

QuantizedLayer quantize_layer(const Mat& w) {
  if (w.rows == 0 || w.cols == 0) throw ParameterError("quantize: empty matrix");
  double maxabs = 0.0;
  for (double v : w.v) maxabs = std::max(maxabs, std::fabs(v));
  QuantizedLayer q;
  q.rows = w.rows;
  q.cols = w.cols;
  q.scale = maxabs > 0.0 ? maxabs / 127.0 : 1.0;
  q.codes.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const long code = std::lround(w.v[i] / q.scale);
    q.codes[i] = static_cast<std::int8_t>(std::clamp(code, -127L, 127L));
  }
  return q;
}

VictimModel quantize(const TinyNet& net, std::uint64_t seed) {
  net.validate();
  VictimModel model;
  model.seed = seed;
  for (const DenseLayer& dl : net.layers) {
    model.layers.push_back(quantize_layer(dl.w));
    model.biases.push_back(dl.b);
  }
  model.validate();
  return model;
}

BlobModes make_blob_modes(std::size_t dims, std::size_t classes, std::size_t modes_per_class,
                          std::uint64_t seed) {
  if (dims == 0) throw ParameterError("blobs: dims must be positive");
  if (classes < 2) throw ParameterError("blobs: need at least two classes");
  if (modes_per_class == 0) throw ParameterError("blobs: modes_per_class must be positive");
  BlobModes bm;
  bm.dims = dims;
  bm.classes = classes;
  bm.modes_per_class = modes_per_class;
  bm.means = Mat(classes * modes_per_class, dims);
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.15, 0.85);
  for (double& v : bm.means.v) v = u(rng);
  return bm;
}

Dataset sample_blobs(const BlobModes& modes, std::size_t n, double noise_std,
                     std::uint64_t seed) {
  if (n == 0) throw ParameterError("blobs: sample count must be positive");
  if (noise_std < 0.0) throw ParameterError("blobs: noise_std must be non-negative");
  Dataset ds;
  ds.classes = modes.classes;
  ds.x = Mat(n, modes.dims);
  ds.y.resize(n);
  auto rng = make_rng(seed);
  std::uniform_int_distribution<std::size_t> pick_mode(0, modes.modes_per_class - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % modes.classes;
    const std::size_t m = label * modes.modes_per_class + pick_mode(rng);
    ds.y[i] = static_cast<int>(label);
    for (std::size_t d = 0; d < modes.dims; ++d) {
      const double v = modes.means.at(m, d) + noise_std * noise(rng);
      ds.x.at(i, d) = std::clamp(v, 0.0, 1.0);
    }
  }
  return ds;
}

Dataset subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ParameterError("subset: fraction must lie in (0, 1]");
  const std::size_t n = ds.size();
  const std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0) throw ParameterError("subset: fraction selects zero samples");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Dataset out;
  out.classes = ds.classes;
  out.x = Mat(k, ds.x.cols);
  out.y.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.y[i] = ds.y[idx[i]];
    for (std::size_t d = 0; d < ds.x.cols; ++d) out.x.at(i, d) = ds.x.at(idx[i], d);
  }
  return out;
}

int argmax_class(const std::vector<double>& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

GradView zero_grad_like(const TinyNet& net) {
  GradView g;
  for (const DenseLayer& dl : net.layers) {
    g.dw.emplace_back(dl.w.rows, dl.w.cols);
    g.db.emplace_back(dl.w.rows, 0.0);
  }
  return g;
}

double loss_and_grad(const TinyNet& net, const Mat& x, const std::vector<int>& y,
                     const std::vector<std::size_t>& batch, const RangeTensors* ranges,
                     double lambda, GradView& grad) {
  net.validate();
  if (batch.empty()) throw ParameterError("loss: empty batch");
  if (x.cols != net.input_dim()) throw ParameterError("loss: input width != net input dim");
  if (y.size() != x.rows) throw ParameterError("loss: label count != sample count");
  if (ranges && ranges->layers.size() != net.layers.size())
    throw ParameterError("loss: range tensors do not match the net");
  const std::size_t L = net.layers.size();
  const std::size_t m = batch.size();
  const std::size_t classes = net.output_dim();

  grad.dw.assign(L, Mat());
  grad.db.assign(L, {});
  for (std::size_t l = 0; l < L; ++l) {
    grad.dw[l] = Mat(net.layers[l].w.rows, net.layers[l].w.cols);
    grad.db[l].assign(net.layers[l].w.rows, 0.0);
  }

  // Forward, keeping pre-activations and activations per layer.
  std::vector<Mat> act(L + 1);
  std::vector<Mat> pre(L);
  act[0] = Mat(m, x.cols);
  for (std::size_t i = 0; i < m; ++i) {
    if (batch[i] >= x.rows) throw ParameterError("loss: batch index out of range");
    for (std::size_t d = 0; d < x.cols; ++d) act[0].at(i, d) = x.at(batch[i], d);
  }
  for (std::size_t l = 0; l < L; ++l) {
    const DenseLayer& dl = net.layers[l];
    pre[l] = Mat(m, dl.w.rows);
    act[l + 1] = Mat(m, dl.w.rows);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < dl.w.rows; ++r) {
        double s = dl.b[r];
        for (std::size_t c = 0; c < dl.w.cols; ++c) s += dl.w.at(r, c) * act[l].at(i, c);
        pre[l].at(i, r) = s;
        act[l + 1].at(i, r) = dl.relu ? std::max(0.0, s) : s;
      }
    }
  }

  // Cross-entropy and the output delta (softmax - onehot) / m.
  double loss = 0.0;
  Mat delta(m, classes);
  for (std::size_t i = 0; i < m; ++i) {
    const int label = y[batch[i]];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw ParameterError("loss: label out of range");
    double mx = pre[L - 1].at(i, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, pre[L - 1].at(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(pre[L - 1].at(i, c) - mx);
    const double lse = mx + std::log(sum);
    loss += lse - pre[L - 1].at(i, static_cast<std::size_t>(label));
    for (std::size_t c = 0; c < classes; ++c) {
      double p = std::exp(pre[L - 1].at(i, c) - lse);
      if (c == static_cast<std::size_t>(label)) p -= 1.0;
      delta.at(i, c) = p / static_cast<double>(m);
    }
  }
  loss /= static_cast<double>(m);

  // Backward.
  Mat dz = std::move(delta);
  for (std::size_t l = L; l-- > 0;) {
    const DenseLayer& dl = net.layers[l];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t r = 0; r < dl.w.rows; ++r) {
        const double d = dz.at(i, r);
        if (d == 0.0) continue;
        grad.db[l][r] += d;
        for (std::size_t c = 0; c < dl.w.cols; ++c) grad.dw[l].at(r, c) += d * act[l].at(i, c);
      }
    if (l == 0) break;
    Mat prev(m, dl.w.cols);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < dl.w.cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < dl.w.rows; ++r) s += dz.at(i, r) * dl.w.at(r, c);
        if (net.layers[l - 1].relu && pre[l - 1].at(i, c) <= 0.0) s = 0.0;
        prev.at(i, c) = s;
      }
    dz = std::move(prev);
  }

  // Interval penalty on partially-known weights; fully-known weights frozen.
  if (ranges) {
    for (std::size_t l = 0; l < L; ++l) {
      const LayerRanges& lr = ranges->layers[l];
      if (lr.w_mean.rows != net.layers[l].w.rows || lr.w_mean.cols != net.layers[l].w.cols)
        throw ParameterError("loss: range tensor shape mismatch");
      for (std::size_t i = 0; i < lr.set_class.size(); ++i) {
        if (lr.set_class[i] == static_cast<std::uint8_t>(WeightSetClass::Partial) &&
            lambda != 0.0) {
          const double dv = net.layers[l].w.v[i] - lr.w_mean.v[i];
          loss += lambda * dv * dv;
          grad.dw[l].v[i] += 2.0 * lambda * dv;
        } else if (lr.set_class[i] == static_cast<std::uint8_t>(WeightSetClass::Full)) {
          grad.dw[l].v[i] = 0.0;
        }
      }
    }
  }
  return loss;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ParameterError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ParameterError("train: lr must be positive");
  if (lambda < 0.0) throw ParameterError("train: lambda must be non-negative");
  if (finetune_epochs > epochs)
    throw ParameterError("train: finetune_epochs must not exceed epochs");
}

TinyNet train_substitute(const RangeTensors& ranges, const Dataset& train,
                         const TrainConfig& cfg,
                         const std::vector<std::vector<double>>* bias_init) {
  cfg.validate();
  if (ranges.layers.empty()) throw ParameterError("train: no layers in range tensors");
  if (train.size() == 0) throw ParameterError("train: empty training set");

  TinyNet net;
  auto rng = make_rng(cfg.seed);
  for (std::size_t l = 0; l < ranges.layers.size(); ++l) {
    const LayerRanges& lr = ranges.layers[l];
    DenseLayer dl;
    dl.w = Mat(lr.w_mean.rows, lr.w_mean.cols);
    dl.b.assign(lr.w_mean.rows, 0.0);
    dl.relu = l + 1 < ranges.layers.size();
    const double bound = 1.0 / std::sqrt(static_cast<double>(lr.w_mean.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < lr.set_class.size(); ++i)
      dl.w.v[i] = lr.set_class[i] == static_cast<std::uint8_t>(WeightSetClass::None)
                      ? u(rng)
                      : lr.w_mean.v[i];
    net.layers.push_back(std::move(dl));
  }
  if (bias_init) {
    if (bias_init->size() != net.layers.size())
      throw ParameterError("train: bias_init layer count mismatch");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if ((*bias_init)[l].size() != net.layers[l].b.size())
        throw ParameterError("train: bias_init length mismatch");
      net.layers[l].b = (*bias_init)[l];
    }
  }
  net.validate();
  if (train.x.cols != net.input_dim()) throw ParameterError("train: data width != net input dim");
  if (train.classes != net.output_dim())
    throw ParameterError("train: class count != net output dim");

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  GradView grad;
  const std::size_t main_epochs = cfg.epochs - cfg.finetune_epochs;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool finetune = epoch >= main_epochs;
    const double lr = finetune ? cfg.lr * 0.1 : cfg.lr;
    const double lambda = finetune ? 0.0 : cfg.lambda;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      loss_and_grad(net, train.x, train.y, batch, &ranges, lambda, grad);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (std::size_t i = 0; i < net.layers[l].w.size(); ++i)
          net.layers[l].w.v[i] -= lr * grad.dw[l].v[i];
        if (cfg.train_biases)
          for (std::size_t r = 0; r < net.layers[l].b.size(); ++r)
            net.layers[l].b[r] -= lr * grad.db[l][r];
      }
    }
    if (!finetune) {
      // Keep partially-known weights inside their leaked intervals.
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerRanges& lr_t = ranges.layers[l];
        for (std::size_t i = 0; i < lr_t.set_class.size(); ++i)
          if (lr_t.set_class[i] == static_cast<std::uint8_t>(WeightSetClass::Partial))
            net.layers[l].w.v[i] =
                std::clamp(net.layers[l].w.v[i], lr_t.w_min.v[i], lr_t.w_max.v[i]);
      }
    }
  }
  return net;
}

double accuracy(const TinyNet& net, const Mat& x, const std::vector<int>& y) {
  if (x.rows == 0) throw ParameterError("accuracy: empty evaluation set");
  if (y.size() != x.rows) throw ParameterError("accuracy: label count != sample count");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.rows; ++i)
    if (argmax_class(net.logits(&x.v[i * x.cols])) == y[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(x.rows);
}

double accuracy(const TinyNet& net, const Dataset& ds) { return accuracy(net, ds.x, ds.y); }

double fidelity(const TinyNet& net, const TinyNet& reference, const Dataset& ds) {
  if (ds.size() == 0) throw ParameterError("fidelity: empty evaluation set");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ds.x.rows; ++i) {
    const double* x = &ds.x.v[i * ds.x.cols];
    if (argmax_class(net.logits(x)) == argmax_class(reference.logits(x))) ++agree;
  }
  return 100.0 * static_cast<double>(agree) / static_cast<double>(ds.x.rows);
}

double PgdConfig::effective_step() const {
  return step_size > 0.0 ? step_size : 2.0 * epsilon / static_cast<double>(steps);
}

void PgdConfig::validate() const {
  if (epsilon < 0.0) throw ParameterError("pgd: epsilon must be non-negative");
  if (steps == 0) throw ParameterError("pgd: steps must be positive");
  if (step_size < 0.0) throw ParameterError("pgd: step_size must be non-negative");
  if (step_size > epsilon) throw ParameterError("pgd: step_size must not exceed epsilon");
}

namespace {

// d(cross-entropy)/d(input) for one sample.
void input_gradient(const TinyNet& net, const double* x, int label, std::vector<double>& gx) {
  const std::size_t L = net.layers.size();
  std::vector<std::vector<double>> act(L + 1);
  std::vector<std::vector<double>> pre(L);
  act[0].assign(x, x + net.input_dim());
  for (std::size_t l = 0; l < L; ++l) {
    const DenseLayer& dl = net.layers[l];
    pre[l].assign(dl.w.rows, 0.0);
    act[l + 1].assign(dl.w.rows, 0.0);
    for (std::size_t r = 0; r < dl.w.rows; ++r) {
      double s = dl.b[r];
      for (std::size_t c = 0; c < dl.w.cols; ++c) s += dl.w.at(r, c) * act[l][c];
      pre[l][r] = s;
      act[l + 1][r] = dl.relu ? std::max(0.0, s) : s;
    }
  }
  const std::vector<double>& z = pre[L - 1];
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> dz(z.size());
  for (std::size_t c = 0; c < z.size(); ++c)
    dz[c] = std::exp(z[c] - lse) - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0);
  for (std::size_t l = L; l-- > 0;) {
    const DenseLayer& dl = net.layers[l];
    std::vector<double> prev(dl.w.cols, 0.0);
    for (std::size_t c = 0; c < dl.w.cols; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < dl.w.rows; ++r) s += dz[r] * dl.w.at(r, c);
      if (l > 0 && net.layers[l - 1].relu && pre[l - 1][c] <= 0.0) s = 0.0;
      prev[c] = s;
    }
    dz = std::move(prev);
  }
  gx = std::move(dz);
}

}  // namespace

Mat pgd_attack(const TinyNet& net, const Mat& x, const std::vector<int>& y,
               const PgdConfig& cfg) {
  cfg.validate();
  net.validate();
  if (x.cols != net.input_dim()) throw ParameterError("pgd: input width != net input dim");
  if (y.size() != x.rows) throw ParameterError("pgd: label count != sample count");
  const double step = cfg.effective_step();
  const std::size_t d = x.cols;
  Mat adv = x;
  std::vector<double> lo(d), hi(d), xa(d), gx;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* orig = &x.v[i * d];
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::max(0.0, orig[j] - cfg.epsilon);
      while (orig[j] - lo[j] > cfg.epsilon)
        lo[j] = std::nextafter(lo[j], std::numeric_limits<double>::infinity());
      hi[j] = std::min(1.0, orig[j] + cfg.epsilon);
      while (hi[j] - orig[j] > cfg.epsilon)
        hi[j] = std::nextafter(hi[j], -std::numeric_limits<double>::infinity());
      xa[j] = orig[j];
    }
    for (std::size_t s = 0; s < cfg.steps; ++s) {
      input_gradient(net, xa.data(), y[i], gx);
      for (std::size_t j = 0; j < d; ++j) {
        const double g = gx[j];
        if (g > 0.0)
          xa[j] += step;
        else if (g < 0.0)
          xa[j] -= step;
        xa[j] = std::clamp(xa[j], lo[j], hi[j]);
      }
    }
    for (std::size_t j = 0; j < d; ++j) adv.at(i, j) = xa[j];
  }
  return adv;
}

Metrics evaluate(const TinyNet& victim, const TinyNet& substitute, const Dataset& test,
                 const PgdConfig& pgd) {
  if (victim.input_dim() != substitute.input_dim() ||
      victim.output_dim() != substitute.output_dim())
    throw ParameterError("evaluate: victim and substitute dimensions differ");
  Metrics m;
  m.accuracy = accuracy(substitute, test);
  m.fidelity = fidelity(substitute, victim, test);
  const Mat adv = pgd_attack(substitute, test.x, test.y, pgd);
  m.accuracy_under_attack = accuracy(victim, adv, test.y);
  return m;
}

}  // namespace rowsteal
