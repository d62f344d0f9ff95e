#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrsys/random.hpp"
#include "mrsys/tensor.hpp"

namespace mrsys {

enum class Activation { Identity, ReLU, Tanh, Sigmoid, Softmax };

/// y = act(W x + b), applied row-wise to an [N x in] batch (or a single [in] vector).
class Dense {
 public:
  struct Cache {
    Tensor input;
    Tensor output;
  };

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Activation activation);

  /// Glorot-uniform weights for saturating activations, He-uniform for ReLU; zero bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  /// Accumulates weight/bias gradients and returns dL/dx.
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  Tensor weight_grad;
  Tensor bias_grad;
  Activation activation = Activation::Identity;
};

/// Single GRU layer (update gate z, reset gate r, tanh candidate):
///   h_t = (1 - z) * h_{t-1} + z * tanh(W_h x + U_h (r * h_{t-1}) + b_h)
class Gru {
 public:
  struct Cache {
    Tensor inputs;  // [T x D]
    Tensor h0;      // [H]
    Tensor z, r, candidate, states;  // [T x H]
  };
  struct InputGrads {
    Tensor inputs;  // [T x D]
    Tensor h0;      // [H]
  };

  Gru() = default;
  Gru(std::size_t input_dim, std::size_t hidden_dim);
  void init(Rng& rng);

  /// Returns all hidden states [T x H]. T >= 1.
  Tensor forward(const Tensor& sequence, const Tensor& h0, Cache* cache = nullptr) const;
  /// Backpropagation through time; `d_states` holds dL/dh_t for every step.
  InputGrads backward(const Cache& cache, const Tensor& d_states);
  void collect(const std::string& prefix, ParamList& out);

  std::size_t input_dim() const { return w_z.cols(); }
  std::size_t hidden_dim() const { return w_z.rows(); }

  Tensor w_z, w_r, w_h;  // [H x D]
  Tensor u_z, u_r, u_h;  // [H x H]
  Tensor b_z, b_r, b_h;  // [H]
  Tensor gw_z, gw_r, gw_h, gu_z, gu_r, gu_h, gb_z, gb_r, gb_h;
};

enum class NormMode { Train, Infer };

/// Per-feature batch normalization with learned scale and shift.
class BatchNorm {
 public:
  struct Cache {
    Tensor normalized;
    std::vector<double> inv_std;
  };

  BatchNorm() = default;
  explicit BatchNorm(std::size_t features);

  /// Train mode needs a batch of at least 2 and updates the running statistics.
  Tensor forward(const Tensor& x, NormMode mode, Cache* cache = nullptr);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  std::size_t features() const { return gamma.size(); }

  Tensor gamma, beta, gamma_grad, beta_grad;
  Tensor running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.9;
};

/// Softmax gating over feature blocks. One logit per block is computed from the
/// concatenated input; absent blocks get weight 0 and present weights sum to 1.
class AttentionGate {
 public:
  struct Cache {
    Tensor input;    // absent blocks zeroed
    Tensor mask;     // [N x blocks], 1 = present
    Tensor weights;  // [N x blocks]
    Dense::Cache scorer;
  };

  AttentionGate() = default;
  explicit AttentionGate(std::vector<std::size_t> block_dims);
  void init(Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& mask, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  std::size_t blocks() const { return block_dims_.size(); }
  std::size_t total_dim() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::span<const std::size_t> block_dims() const { return block_dims_; }
  std::size_t offset(std::size_t block) const { return offsets_[block]; }

  Dense scorer;

 private:
  std::vector<std::size_t> block_dims_;
  std::vector<std::size_t> offsets_;  // blocks + 1 entries
};

/// 1-D convolution over a token sequence followed by ReLU and max-over-time pooling.
class Conv1dMaxPool {
 public:
  struct Cache {
    Tensor padded;  // [max(T, width) x in]
    std::vector<std::size_t> argmax;
    std::vector<double> best;  // pre-activation maxima
    std::size_t length = 0;    // original T
  };

  Conv1dMaxPool() = default;
  Conv1dMaxPool(std::size_t width, std::size_t input_dim, std::size_t filters);
  void init(Rng& rng);

  /// Sequences shorter than the filter width are zero-padded to one window.
  Tensor forward(const Tensor& sequence, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  std::size_t width() const { return width_; }
  std::size_t filters() const { return weight.rows(); }

  Tensor weight;  // [filters x width*in]
  Tensor bias;    // [filters]
  Tensor weight_grad, bias_grad;

 private:
  std::size_t width_ = 0;
  std::size_t input_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { MSE, WeightedBCE, CosineContrastive };

struct LossOptions {
  double positive_weight = 1.0;  // WeightedBCE w+
  double negative_weight = 1.0;  // WeightedBCE w-
  double margin = 0.2;           // CosineContrastive
};

struct LossResult {
  double value = 0.0;
  Tensor grad;  // dL/dprediction, same shape as prediction
};

/// MSE: mean over all elements.
/// WeightedBCE: prediction holds probabilities, target holds 0/1 labels.
/// CosineContrastive: prediction is [2N x d] with rows [0,N) the left items and
/// [N,2N) the right items; target holds N labels (1 co-converted, 0 negative).
LossResult loss_eval(LossKind kind, const Tensor& prediction, const Tensor& target,
                     const LossOptions& options = {});

LossResult mse_loss(const Tensor& prediction, const Tensor& target);
LossResult weighted_bce_loss(const Tensor& probability, const Tensor& target, double w_pos,
                             double w_neg);
LossResult cosine_contrastive_loss(const Tensor& pairs, const Tensor& labels, double margin);

/// Mean categorical cross-entropy of softmax(logits) against integer labels.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Mean over rows of (1 - cos(prediction_row, target_row)).
LossResult cosine_distance_loss(const Tensor& prediction, const Tensor& target);

// ---------------------------------------------------------------------------
// Optimization and verification

/// p <- p - lr * (g + l2 * p). Throws RuntimeError on a non-finite gradient.
void sgd_step(const ParamList& params, double learning_rate, double l2);

/// Central-difference gradient check. `loss` evaluates the objective at the
/// current parameter values; `analytic` must zero and refill every grad.
/// Returns max |a - n| / max(|a|, |n|, floor) over all parameter entries.
double grad_check(const ParamList& params, const std::function<double()>& loss,
                  const std::function<void()>& analytic, double h = 1e-5, double floor = 1e-3);

double sigmoid(double x);

}  // namespace mrsys
