#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rowsteal/bitprofile.hpp"
#include "rowsteal/mat.hpp"
#include "rowsteal/victim.hpp"

namespace rowsteal {

/// Dense layer of a small float MLP.  w is out x in; hidden layers apply ReLU,
/// the output layer stays linear.
struct DenseLayer {
  Mat w;
  std::vector<double> b;
  bool relu = true;

  bool operator==(const DenseLayer&) const = default;
};

struct TinyNet {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;
  /// Logits for one sample (x has input_dim entries).
  std::vector<double> logits(const double* x) const;

  bool operator==(const TinyNet&) const = default;
};

/// Binary sidecar for float nets (substitutes, and the victim's float twin
/// that carries the biases).  Little-endian throughout.
void save_net(const TinyNet& net, const std::string& path);
TinyNet load_net(const std::string& path);

/// Float view of the victim: w = code * scale per layer, biases copied.
/// Requires the model to carry biases.
TinyNet dequantize(const VictimModel& model);

/// Symmetric signed-8-bit quantization with scale = max|w| / 127 (scale 1 for
/// an all-zero matrix); codes land in [-127, 127].
QuantizedLayer quantize_layer(const Mat& w);
VictimModel quantize(const TinyNet& net, std::uint64_t seed);

struct Dataset {
  Mat x;               // n x dims, every feature in [0, 1]
  std::vector<int> y;  // n labels in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
};

/// Mixture-of-blobs generator: each class owns modes_per_class Gaussian modes
/// with means drawn uniformly from [0.15, 0.85]^dims.
struct BlobModes {
  std::size_t dims = 0;
  std::size_t classes = 0;
  std::size_t modes_per_class = 0;
  Mat means;  // (classes * modes_per_class) x dims
};

BlobModes make_blob_modes(std::size_t dims, std::size_t classes, std::size_t modes_per_class,
                          std::uint64_t seed);

/// Draws n samples: labels round-robin (balanced), a uniform mode per sample,
/// isotropic Gaussian noise, features clamped to [0, 1].
Dataset sample_blobs(const BlobModes& modes, std::size_t n, double noise_std, std::uint64_t seed);

/// Deterministic random subset with round(fraction * n) samples.
Dataset subset(const Dataset& ds, double fraction, std::uint64_t seed);

/// Index of the largest logit; ties go to the lowest index.
int argmax_class(const std::vector<double>& logits);

struct GradView {
  std::vector<Mat> dw;
  std::vector<std::vector<double>> db;
};

GradView zero_grad_like(const TinyNet& net);

/// Batch-mean softmax cross-entropy.  With `ranges`, adds
/// lambda * sum over partially-known weights of (w - w_mean)^2 and zeroes
/// the gradient of fully-known weights so they stay frozen.  Returns the loss;
/// `grad` (zeroed inside) receives d loss / d params.
double loss_and_grad(const TinyNet& net, const Mat& x, const std::vector<int>& y,
                     const std::vector<std::size_t>& batch, const RangeTensors* ranges,
                     double lambda, GradView& grad);

struct TrainConfig {
  std::size_t epochs = 100;          // total, including the finetune tail
  std::size_t finetune_epochs = 40;  // last epochs: penalty off, clip off, lr / 10
  std::size_t batch_size = 32;
  double lr = 0.05;
  double lambda = 0.05;  // interval-penalty weight
  std::uint64_t seed = 0;
  bool train_biases = true;  // off: biases frozen at bias_init

  void validate() const;  // finetune_epochs must not exceed epochs
};

/// Interval-guided substitute training.  Initialization per weight class:
/// fully known -> exact value, frozen; partially known -> interval midpoint,
/// clipped back into [w_min, w_max] after every main epoch; unknown ->
/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).  Biases start at zero unless
/// bias_init is given.  SGD over seeded shuffles; the last finetune_epochs
/// drop the penalty and the clip and cut the rate tenfold.
TinyNet train_substitute(const RangeTensors& ranges, const Dataset& train,
                         const TrainConfig& cfg,
                         const std::vector<std::vector<double>>* bias_init = nullptr);

/// Percent of samples classified correctly.
double accuracy(const TinyNet& net, const Mat& x, const std::vector<int>& y);
double accuracy(const TinyNet& net, const Dataset& ds);

/// Percent of samples where both nets pick the same class.
double fidelity(const TinyNet& net, const TinyNet& reference, const Dataset& ds);

struct PgdConfig {
  double epsilon = 0.031;
  std::size_t steps = 7;
  double step_size = 0.0;  // 0 = 2 * epsilon / steps

  double effective_step() const;
  void validate() const;  // an explicit step_size must not exceed epsilon
};

/// L-infinity projected gradient descent on the cross-entropy loss, one sample
/// at a time, sign(0) = 0, no random start.  Every output feature lands inside
/// both [0, 1] and the closed epsilon-ball around the input (exactly, under
/// double arithmetic).
Mat pgd_attack(const TinyNet& net, const Mat& x, const std::vector<int>& y,
               const PgdConfig& cfg);

struct Metrics {
  double accuracy = 0.0;              // substitute top-1, percent
  double fidelity = 0.0;              // argmax agreement with the victim, percent
  double accuracy_under_attack = 0.0; // victim top-1 on substitute-crafted inputs
};

/// The three report metrics: substitute accuracy, victim/substitute agreement,
/// and the victim's accuracy on adversarial inputs crafted with the
/// substitute.
Metrics evaluate(const TinyNet& victim, const TinyNet& substitute, const Dataset& test,
                 const PgdConfig& pgd);

}  // namespace rowsteal
