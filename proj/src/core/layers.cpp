#include "mrsys/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Dense>

#include "mrsys/error.hpp"

namespace mrsys {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return x;
  return Tensor({1, x.size()}, std::vector<double>(x.data().begin(), x.data().end()));
}

Tensor like_input(Tensor y, const Tensor& x) {
  if (x.rank() == 2) return y;
  return Tensor({y.cols()}, std::vector<double>(y.data().begin(), y.data().end()));
}

void uniform_fill(Tensor& t, Rng& rng, double limit) {
  for (double& v : t.data()) v = uniform(rng, -limit, limit);
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("shape mismatch: ") + what);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

MatMap view(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
ConstMatMap view(const Tensor& t) { return view(t, t.rows(), t.cols()); }
MatMap view(Tensor& t) { return view(t, t.rows(), t.cols()); }

}  // namespace

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::size_t in, std::size_t out, Activation act)
    : weight({out, in}), bias({out}), weight_grad({out, in}), bias_grad({out}), activation(act) {}

void Dense::init(Rng& rng) {
  const double fan = static_cast<double>(in_dim() + out_dim());
  const double limit = activation == Activation::ReLU ? std::sqrt(6.0 / in_dim())
                                                      : std::sqrt(6.0 / fan);
  uniform_fill(weight, rng, limit);
  bias.fill(0.0);
}

Tensor Dense::forward(const Tensor& x_in, Cache* cache) const {
  const Tensor x = as_batch(x_in);
  require_shape(x.cols() == in_dim(), "dense input width");
  const std::size_t n = x.rows(), out = out_dim();
  Tensor y({n, out});
  view(y).noalias() = view(x) * view(weight).transpose();
  view(y).rowwise() += ConstVecMap(bias.data().data(), static_cast<Eigen::Index>(out)).transpose();
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.data().data() + r * out;
    switch (activation) {
      case Activation::Identity: break;
      case Activation::ReLU:
        for (std::size_t o = 0; o < out; ++o) yr[o] = std::max(0.0, yr[o]);
        break;
      case Activation::Tanh:
        for (std::size_t o = 0; o < out; ++o) yr[o] = std::tanh(yr[o]);
        break;
      case Activation::Sigmoid:
        for (std::size_t o = 0; o < out; ++o) yr[o] = sigmoid(yr[o]);
        break;
      case Activation::Softmax: {
        const double m = *std::max_element(yr, yr + out);
        double z = 0.0;
        for (std::size_t o = 0; o < out; ++o) z += (yr[o] = std::exp(yr[o] - m));
        for (std::size_t o = 0; o < out; ++o) yr[o] /= z;
        break;
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return like_input(std::move(y), x_in);
}

Tensor Dense::backward(const Cache& cache, const Tensor& dy_in) {
  const Tensor dy = as_batch(dy_in);
  const Tensor& x = cache.input;
  const Tensor& y = cache.output;
  const std::size_t n = x.rows(), in = in_dim(), out = out_dim();
  require_shape(dy.rows() == n && dy.cols() == out, "dense upstream gradient");
  Tensor dz_all({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const double* yr = y.data().data() + r * out;
    const double* gr = dy.data().data() + r * out;
    double* dz = dz_all.data().data() + r * out;
    switch (activation) {
      case Activation::Identity:
        for (std::size_t o = 0; o < out; ++o) dz[o] = gr[o];
        break;
      case Activation::ReLU:
        for (std::size_t o = 0; o < out; ++o) dz[o] = yr[o] > 0.0 ? gr[o] : 0.0;
        break;
      case Activation::Tanh:
        for (std::size_t o = 0; o < out; ++o) dz[o] = gr[o] * (1.0 - yr[o] * yr[o]);
        break;
      case Activation::Sigmoid:
        for (std::size_t o = 0; o < out; ++o) dz[o] = gr[o] * yr[o] * (1.0 - yr[o]);
        break;
      case Activation::Softmax: {
        double s = 0.0;
        for (std::size_t o = 0; o < out; ++o) s += gr[o] * yr[o];
        for (std::size_t o = 0; o < out; ++o) dz[o] = yr[o] * (gr[o] - s);
        break;
      }
    }
  }
  const auto dzm = view(std::as_const(dz_all));
  view(weight_grad).noalias() += dzm.transpose() * view(x);
  VecMap(bias_grad.data().data(), static_cast<Eigen::Index>(out)) += dzm.colwise().sum().transpose();
  Tensor dx({n, in});
  view(dx).noalias() = dzm * view(weight);
  return like_input(std::move(dx), dy_in);
}

void Dense::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, &weight_grad});
  out.push_back({prefix + ".bias", &bias, &bias_grad});
}

// ---------------------------------------------------------------------------
// GRU

Gru::Gru(std::size_t d, std::size_t h)
    : w_z({h, d}), w_r({h, d}), w_h({h, d}),
      u_z({h, h}), u_r({h, h}), u_h({h, h}),
      b_z({h}), b_r({h}), b_h({h}),
      gw_z({h, d}), gw_r({h, d}), gw_h({h, d}),
      gu_z({h, h}), gu_r({h, h}), gu_h({h, h}),
      gb_z({h}), gb_r({h}), gb_h({h}) {}

void Gru::init(Rng& rng) {
  const double lw = std::sqrt(6.0 / static_cast<double>(input_dim() + hidden_dim()));
  const double lu = std::sqrt(3.0 / static_cast<double>(hidden_dim()));
  for (Tensor* t : {&w_z, &w_r, &w_h}) uniform_fill(*t, rng, lw);
  for (Tensor* t : {&u_z, &u_r, &u_h}) uniform_fill(*t, rng, lu);
  for (Tensor* t : {&b_z, &b_r, &b_h}) t->fill(0.0);
}

Tensor Gru::forward(const Tensor& sequence, const Tensor& h0, Cache* cache) const {
  const Tensor seq = as_batch(sequence);
  const std::size_t steps = seq.rows(), d = input_dim(), h = hidden_dim();
  require(steps >= 1, "GRU needs at least one step");
  require_shape(seq.cols() == d, "GRU input width");
  require_shape(h0.size() == h, "GRU initial state");

  // Input projections for every step at once; recurrent terms are added per step.
  Tensor z({steps, h}), r({steps, h}), cand({steps, h}), states({steps, h});
  const auto x = view(seq);
  view(z).noalias() = x * view(w_z).transpose();
  view(r).noalias() = x * view(w_r).transpose();
  view(cand).noalias() = x * view(w_h).transpose();
  const auto uz = view(u_z), ur = view(u_r), uh = view(u_h);
  Eigen::VectorXd prev = ConstVecMap(h0.data().data(), static_cast<Eigen::Index>(h));
  Eigen::VectorXd az(h), ar(h), ah(h), rh(h);
  for (std::size_t t = 0; t < steps; ++t) {
    double* zt = z.data().data() + t * h;
    double* rt = r.data().data() + t * h;
    double* ct = cand.data().data() + t * h;
    double* st = states.data().data() + t * h;
    az.noalias() = uz * prev;
    ar.noalias() = ur * prev;
    for (std::size_t j = 0; j < h; ++j) {
      zt[j] = sigmoid(zt[j] + az[j] + b_z[j]);
      rt[j] = sigmoid(rt[j] + ar[j] + b_r[j]);
      rh[j] = rt[j] * prev[j];
    }
    ah.noalias() = uh * rh;
    for (std::size_t j = 0; j < h; ++j) {
      ct[j] = std::tanh(ct[j] + ah[j] + b_h[j]);
      st[j] = (1.0 - zt[j]) * prev[j] + zt[j] * ct[j];
      prev[j] = st[j];
    }
  }
  if (cache) {
    cache->inputs = seq;
    cache->h0 = h0;
    cache->z = z;
    cache->r = r;
    cache->candidate = cand;
    cache->states = states;
  }
  return states;
}

Gru::InputGrads Gru::backward(const Cache& cache, const Tensor& d_states) {
  const std::size_t steps = cache.states.rows(), d = input_dim(), h = hidden_dim();
  require_shape(d_states.size() == steps * h, "GRU upstream gradient");
  // Pre-activation gradients per step; input-side products are done as GEMMs afterwards.
  Tensor daz_all({steps, h}), dar_all({steps, h}), dah_all({steps, h}), prev_all({steps, h}),
      rh_all({steps, h});
  const auto uz = view(u_z), ur = view(u_r), uh = view(u_h);
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h));
  Eigen::VectorXd dprev(h), drh(h);
  for (std::size_t t = steps; t-- > 0;) {
    const double* prev = t == 0 ? cache.h0.data().data() : cache.states.data().data() + (t - 1) * h;
    const double* zt = cache.z.data().data() + t * h;
    const double* rt = cache.r.data().data() + t * h;
    const double* ct = cache.candidate.data().data() + t * h;
    const double* gs = d_states.data().data() + t * h;
    double* daz = daz_all.data().data() + t * h;
    double* dar = dar_all.data().data() + t * h;
    double* dah = dah_all.data().data() + t * h;
    double* rh = rh_all.data().data() + t * h;
    std::copy(prev, prev + h, prev_all.data().data() + t * h);

    for (std::size_t j = 0; j < h; ++j) {
      dh[j] += gs[j];
      const double dz = dh[j] * (ct[j] - prev[j]);
      const double dc = dh[j] * zt[j];
      dprev[j] = dh[j] * (1.0 - zt[j]);
      dah[j] = dc * (1.0 - ct[j] * ct[j]);
      daz[j] = dz * zt[j] * (1.0 - zt[j]);
      rh[j] = rt[j] * prev[j];
    }
    const ConstVecMap dah_v(dah, static_cast<Eigen::Index>(h));
    drh.noalias() = uh.transpose() * dah_v;
    for (std::size_t j = 0; j < h; ++j) {
      dprev[j] += drh[j] * rt[j];
      dar[j] = drh[j] * prev[j] * rt[j] * (1.0 - rt[j]);
    }
    dprev.noalias() += uz.transpose() * ConstVecMap(daz, static_cast<Eigen::Index>(h));
    dprev.noalias() += ur.transpose() * ConstVecMap(dar, static_cast<Eigen::Index>(h));
    dh = dprev;
  }
  const auto x = view(cache.inputs);
  const auto daz_m = view(std::as_const(daz_all)), dar_m = view(std::as_const(dar_all)),
             dah_m = view(std::as_const(dah_all));
  view(gw_z).noalias() += daz_m.transpose() * x;
  view(gw_r).noalias() += dar_m.transpose() * x;
  view(gw_h).noalias() += dah_m.transpose() * x;
  view(gu_z).noalias() += daz_m.transpose() * view(std::as_const(prev_all));
  view(gu_r).noalias() += dar_m.transpose() * view(std::as_const(prev_all));
  view(gu_h).noalias() += dah_m.transpose() * view(std::as_const(rh_all));
  VecMap(gb_z.data().data(), static_cast<Eigen::Index>(h)) += daz_m.colwise().sum().transpose();
  VecMap(gb_r.data().data(), static_cast<Eigen::Index>(h)) += dar_m.colwise().sum().transpose();
  VecMap(gb_h.data().data(), static_cast<Eigen::Index>(h)) += dah_m.colwise().sum().transpose();

  InputGrads out{Tensor({steps, d}), Tensor({h})};
  auto dx = view(out.inputs);
  dx.noalias() = daz_m * view(w_z);
  dx.noalias() += dar_m * view(w_r);
  dx.noalias() += dah_m * view(w_h);
  std::copy(dh.data(), dh.data() + h, out.h0.data().begin());
  return out;
}

void Gru::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w_z", &w_z, &gw_z});
  out.push_back({prefix + ".w_r", &w_r, &gw_r});
  out.push_back({prefix + ".w_h", &w_h, &gw_h});
  out.push_back({prefix + ".u_z", &u_z, &gu_z});
  out.push_back({prefix + ".u_r", &u_r, &gu_r});
  out.push_back({prefix + ".u_h", &u_h, &gu_h});
  out.push_back({prefix + ".b_z", &b_z, &gb_z});
  out.push_back({prefix + ".b_r", &b_r, &gb_r});
  out.push_back({prefix + ".b_h", &b_h, &gb_h});
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::size_t f)
    : gamma({f}, 1.0), beta({f}), gamma_grad({f}), beta_grad({f}),
      running_mean({f}), running_var({f}, 1.0) {}

Tensor BatchNorm::forward(const Tensor& x_in, NormMode mode, Cache* cache) {
  if (mode == NormMode::Infer) return infer(x_in);
  const Tensor x = as_batch(x_in);
  const std::size_t n = x.rows(), f = features();
  require_shape(x.cols() == f, "batch-norm width");
  require(n >= 2, "batch normalization in train mode needs a batch of at least 2");
  Tensor xhat({n, f}), y({n, f});
  std::vector<double> inv_std(f);
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += x(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= static_cast<double>(n);
    inv_std[j] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t r = 0; r < n; ++r) {
      xhat(r, j) = (x(r, j) - mean) * inv_std[j];
      y(r, j) = gamma[j] * xhat(r, j) + beta[j];
    }
    running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mean;
    running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var;
  }
  if (cache) {
    cache->normalized = xhat;
    cache->inv_std = std::move(inv_std);
  }
  return like_input(std::move(y), x_in);
}

Tensor BatchNorm::infer(const Tensor& x_in) const {
  const Tensor x = as_batch(x_in);
  const std::size_t n = x.rows(), f = features();
  require_shape(x.cols() == f, "batch-norm width");
  Tensor y({n, f});
  for (std::size_t j = 0; j < f; ++j) {
    const double s = gamma[j] / std::sqrt(running_var[j] + epsilon);
    for (std::size_t r = 0; r < n; ++r) y(r, j) = (x(r, j) - running_mean[j]) * s + beta[j];
  }
  return like_input(std::move(y), x_in);
}

Tensor BatchNorm::backward(const Cache& cache, const Tensor& dy_in) {
  const Tensor dy = as_batch(dy_in);
  const Tensor& xhat = cache.normalized;
  const std::size_t n = xhat.rows(), f = features();
  Tensor dx({n, f});
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < f; ++j) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      gamma_grad[j] += dy(r, j) * xhat(r, j);
      beta_grad[j] += dy(r, j);
      const double g = dy(r, j) * gamma[j];
      sum_dxhat += g;
      sum_dxhat_xhat += g * xhat(r, j);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const double g = dy(r, j) * gamma[j];
      dx(r, j) = cache.inv_std[j] * inv_n *
                 (static_cast<double>(n) * g - sum_dxhat - xhat(r, j) * sum_dxhat_xhat);
    }
  }
  return like_input(std::move(dx), dy_in);
}

void BatchNorm::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".gamma", &gamma, &gamma_grad});
  out.push_back({prefix + ".beta", &beta, &beta_grad});
}

// ---------------------------------------------------------------------------
// AttentionGate

AttentionGate::AttentionGate(std::vector<std::size_t> block_dims)
    : block_dims_(std::move(block_dims)) {
  require(!block_dims_.empty(), "attention gate needs at least one block");
  offsets_.push_back(0);
  for (auto d : block_dims_) offsets_.push_back(offsets_.back() + d);
  scorer = Dense(total_dim(), blocks(), Activation::Identity);
}

void AttentionGate::init(Rng& rng) { scorer.init(rng); }

Tensor AttentionGate::forward(const Tensor& x_in, const Tensor& mask_in, Cache* cache) const {
  Tensor x = as_batch(x_in);
  const Tensor mask = as_batch(mask_in);
  const std::size_t n = x.rows(), m = blocks();
  require_shape(x.cols() == total_dim(), "attention input width");
  require_shape(mask.rows() == n && mask.cols() == m, "attention mask");
  for (std::size_t r = 0; r < n; ++r) {
    bool any = false;
    for (std::size_t b = 0; b < m; ++b) {
      if (mask(r, b) != 0.0) {
        any = true;
        continue;
      }
      for (std::size_t i = offsets_[b]; i < offsets_[b + 1]; ++i) x(r, i) = 0.0;
    }
    require(any, "attention gate: all blocks absent");
  }

  Dense::Cache scorer_cache;
  const Tensor logits = scorer.forward(x, cache ? &scorer_cache : nullptr);
  Tensor weights({n, m});
  Tensor y({n, total_dim()});
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < m; ++b)
      if (mask(r, b) != 0.0) mx = std::max(mx, logits(r, b));
    double z = 0.0;
    for (std::size_t b = 0; b < m; ++b)
      if (mask(r, b) != 0.0) z += (weights(r, b) = std::exp(logits(r, b) - mx));
    for (std::size_t b = 0; b < m; ++b) {
      weights(r, b) /= z;
      for (std::size_t i = offsets_[b]; i < offsets_[b + 1]; ++i) y(r, i) = weights(r, b) * x(r, i);
    }
  }
  if (cache) {
    cache->input = x;
    cache->mask = mask;
    cache->weights = weights;
    cache->scorer = std::move(scorer_cache);
  }
  return like_input(std::move(y), x_in);
}

Tensor AttentionGate::backward(const Cache& cache, const Tensor& dy_in) {
  const Tensor dy = as_batch(dy_in);
  const Tensor& x = cache.input;
  const std::size_t n = x.rows(), m = blocks();
  Tensor dx({n, total_dim()});
  Tensor dlogits({n, m});
  std::vector<double> dw(m);
  for (std::size_t r = 0; r < n; ++r) {
    double weighted = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
      dw[b] = 0.0;
      if (cache.mask(r, b) == 0.0) continue;
      const double w = cache.weights(r, b);
      for (std::size_t i = offsets_[b]; i < offsets_[b + 1]; ++i) {
        dw[b] += dy(r, i) * x(r, i);
        dx(r, i) = w * dy(r, i);
      }
      weighted += w * dw[b];
    }
    for (std::size_t b = 0; b < m; ++b)
      if (cache.mask(r, b) != 0.0) dlogits(r, b) = cache.weights(r, b) * (dw[b] - weighted);
  }
  const Tensor dx_scorer = scorer.backward(cache.scorer, dlogits);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t b = 0; b < m; ++b) {
      if (cache.mask(r, b) == 0.0) continue;
      for (std::size_t i = offsets_[b]; i < offsets_[b + 1]; ++i) dx(r, i) += dx_scorer(r, i);
    }
  return like_input(std::move(dx), dy_in);
}

void AttentionGate::collect(const std::string& prefix, ParamList& out) {
  scorer.collect(prefix + ".scorer", out);
}

// ---------------------------------------------------------------------------
// Conv1dMaxPool

Conv1dMaxPool::Conv1dMaxPool(std::size_t width, std::size_t input_dim, std::size_t filters)
    : weight({filters, width * input_dim}), bias({filters}),
      weight_grad({filters, width * input_dim}), bias_grad({filters}),
      width_(width), input_dim_(input_dim) {
  require(width >= 1 && filters >= 1, "convolution needs width >= 1 and filters >= 1");
}

void Conv1dMaxPool::init(Rng& rng) {
  uniform_fill(weight, rng, std::sqrt(6.0 / static_cast<double>(width_ * input_dim_)));
  bias.fill(0.0);
}

Tensor Conv1dMaxPool::forward(const Tensor& sequence, Cache* cache) const {
  const Tensor seq = as_batch(sequence);
  require_shape(seq.cols() == input_dim_, "convolution input width");
  const std::size_t length = seq.rows();
  const std::size_t padded_len = std::max(length, width_);
  Tensor padded({padded_len, input_dim_});
  std::copy(seq.data().begin(), seq.data().end(), padded.data().begin());

  const std::size_t windows = padded_len - width_ + 1;
  const std::size_t span = width_ * input_dim_;
  const std::size_t f = filters();
  std::vector<std::size_t> argmax(f, 0);
  std::vector<double> best(f, -std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < windows; ++p) {
    const double* window = padded.data().data() + p * input_dim_;
    for (std::size_t k = 0; k < f; ++k) {
      const double* w = weight.data().data() + k * span;
      double s = bias[k];
      for (std::size_t i = 0; i < span; ++i) s += w[i] * window[i];
      if (s > best[k]) {
        best[k] = s;
        argmax[k] = p;
      }
    }
  }
  Tensor y({f});
  for (std::size_t k = 0; k < f; ++k) y[k] = std::max(0.0, best[k]);
  if (cache) {
    cache->padded = std::move(padded);
    cache->argmax = std::move(argmax);
    cache->best = std::move(best);
    cache->length = length;
  }
  return y;
}

Tensor Conv1dMaxPool::backward(const Cache& cache, const Tensor& dy) {
  const std::size_t span = width_ * input_dim_;
  Tensor dpadded({cache.padded.rows(), input_dim_});
  for (std::size_t k = 0; k < filters(); ++k) {
    if (cache.best[k] <= 0.0 || dy[k] == 0.0) continue;
    const double g = dy[k];
    const std::size_t p = cache.argmax[k];
    const double* window = cache.padded.data().data() + p * input_dim_;
    double* dwin = dpadded.data().data() + p * input_dim_;
    const double* w = weight.data().data() + k * span;
    double* gw = weight_grad.data().data() + k * span;
    bias_grad[k] += g;
    for (std::size_t i = 0; i < span; ++i) {
      gw[i] += g * window[i];
      dwin[i] += g * w[i];
    }
  }
  Tensor dx({cache.length, input_dim_});
  std::copy_n(dpadded.data().begin(), dx.size(), dx.data().begin());
  return dx;
}

void Conv1dMaxPool::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, &weight_grad});
  out.push_back({prefix + ".bias", &bias, &bias_grad});
}

// ---------------------------------------------------------------------------
// Losses

LossResult mse_loss(const Tensor& prediction, const Tensor& target) {
  require_shape(prediction.size() == target.size(), "MSE prediction/target");
  LossResult out{0.0, Tensor(prediction.shape())};
  const double inv = 1.0 / static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    out.value += d * d * inv;
    out.grad[i] = 2.0 * d * inv;
  }
  return out;
}

LossResult weighted_bce_loss(const Tensor& probability, const Tensor& target, double w_pos,
                             double w_neg) {
  require_shape(probability.size() == target.size(), "BCE prediction/target");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  LossResult out{0.0, Tensor(probability.shape())};
  const double inv = 1.0 / static_cast<double>(probability.size());
  for (std::size_t i = 0; i < probability.size(); ++i) {
    const double y = target[i];
    require(y == 0.0 || y == 1.0, "weighted BCE target must be 0 or 1");
    const double raw = probability[i];
    const double p = std::clamp(raw, lo, hi);
    const bool clamped = raw < lo || raw > hi;
    if (y == 1.0) {
      out.value -= w_pos * std::log(p) * inv;
      out.grad[i] = clamped ? 0.0 : -w_pos / p * inv;
    } else {
      out.value -= w_neg * std::log(1.0 - p) * inv;
      out.grad[i] = clamped ? 0.0 : w_neg / (1.0 - p) * inv;
    }
  }
  return out;
}

namespace {

// d cos(a,b) / d a
void cosine_grad(std::span<const double> a, std::span<const double> b, double cos_ab,
                 double scale, std::span<double> out) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] += scale * (b[i] / (na * nb) - cos_ab * a[i] / (na * na));
}

}  // namespace

LossResult cosine_contrastive_loss(const Tensor& pairs, const Tensor& labels, double margin) {
  const std::size_t n = labels.size();
  require_shape(pairs.rank() == 2 && pairs.rows() == 2 * n, "contrastive pairs must be [2N x d]");
  LossResult out{0.0, Tensor(pairs.shape())};
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = pairs.row(i);
    const auto b = pairs.row(n + i);
    const double c = cosine(a, b);
    double scale = 0.0;
    if (labels[i] == 1.0) {
      out.value += (1.0 - c) * inv;
      scale = -inv;
    } else {
      require(labels[i] == 0.0, "contrastive label must be 0 or 1");
      if (c > margin) {
        out.value += (c - margin) * inv;
        scale = inv;
      }
    }
    if (scale != 0.0) {
      cosine_grad(a, b, c, scale, out.grad.row(i));
      cosine_grad(b, a, c, scale, out.grad.row(n + i));
    }
  }
  return out;
}

LossResult cosine_distance_loss(const Tensor& prediction, const Tensor& target) {
  require_shape(prediction.size() == target.size() && prediction.rank() == 2,
                "cosine distance prediction/target");
  const std::size_t n = prediction.rows();
  LossResult out{0.0, Tensor(prediction.shape())};
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cosine(prediction.row(i), target.row(i));
    out.value += (1.0 - c) * inv;
    cosine_grad(prediction.row(i), target.row(i), c, -inv, out.grad.row(i));
  }
  return out;
}

LossResult softmax_cross_entropy(const Tensor& logits_in, std::span<const std::size_t> labels) {
  const Tensor logits = as_batch(logits_in);
  const std::size_t n = logits.rows(), c = logits.cols();
  require_shape(labels.size() == n, "cross-entropy labels");
  LossResult out{0.0, Tensor(logits.shape())};
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    require(labels[r] < c, "cross-entropy label out of range");
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    out.value += (log_z - row[labels[r]]) * inv;
    for (std::size_t k = 0; k < c; ++k)
      out.grad(r, k) = (std::exp(row[k] - log_z) - (k == labels[r] ? 1.0 : 0.0)) * inv;
  }
  if (logits_in.rank() != 2) out.grad = like_input(std::move(out.grad), logits_in);
  return out;
}

LossResult loss_eval(LossKind kind, const Tensor& prediction, const Tensor& target,
                     const LossOptions& options) {
  switch (kind) {
    case LossKind::MSE: return mse_loss(prediction, target);
    case LossKind::WeightedBCE:
      return weighted_bce_loss(prediction, target, options.positive_weight, options.negative_weight);
    case LossKind::CosineContrastive:
      return cosine_contrastive_loss(prediction, target, options.margin);
  }
  throw ValidationError("unknown loss kind");
}

// ---------------------------------------------------------------------------

void sgd_step(const ParamList& params, double learning_rate, double l2) {
  require(learning_rate > 0.0, "learning rate must be positive");
  require(l2 >= 0.0, "l2 coefficient must be non-negative");
  for (const auto& p : params)
    if (!p.grad->all_finite()) throw RuntimeError("non-finite gradient in " + p.name);
  for (const auto& p : params) {
    auto v = p.value->data();
    auto g = p.grad->data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * (g[i] + l2 * v[i]);
  }
}

double grad_check(const ParamList& params, const std::function<double()>& loss,
                  const std::function<void()>& analytic, double h, double floor) {
  require(h > 0.0, "finite-difference step must be positive");
  analytic();
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(*p.grad);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].value->data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss();
      values[i] = saved - h;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mrsys
