#pragma once

// Minimal reverse-mode layer library. No autograd tape: each layer caches
// what its hand-written backward pass needs, and backward calls mirror the
// forward calls in reverse order. A batch of sequences is folded into the
// rows of a single matrix so every layer runs as a handful of large GEMMs;
// attention interprets the rows as fixed-size blocks.
//
// Parameters live in a ParamStore keyed by hierarchical names. Gradients
// accumulate into Tensor::grad until zero_grads().

#include "cast/common.hpp"
#include "cast/rng.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace cast::nn {

template <class S>
struct Tensor {
  Mat<S> value;
  Mat<S> grad;

  void zero_grad() { grad.setZero(); }
  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
  Index size() const { return value.size(); }
};

template <class S>
class ParamStore {
 public:
  Tensor<S>& add(const std::string& name, Index rows, Index cols) {
    require(!params_.count(name), Err::invalid_argument, "parameter '" + name + "' already exists");
    Tensor<S>& t = params_[name];
    t.value = Mat<S>::Zero(rows, cols);
    t.grad = Mat<S>::Zero(rows, cols);
    return t;
  }

  Tensor<S>& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), Err::index, "unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), Err::index, "unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  // Drop every parameter whose name starts with prefix (used when the
  // decoder is rebuilt for a new channel set).
  void erase_prefix(const std::string& prefix) {
    for (auto it = params_.begin(); it != params_.end();) {
      if (it->first.rfind(prefix, 0) == 0)
        it = params_.erase(it);
      else
        ++it;
    }
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  Index total_size() const {
    Index n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  size_t count() const { return params_.size(); }

  // Deterministic (lexicographic) iteration.
  template <class F>
  void for_each(F&& f) {
    for (auto& [name, t] : params_) f(name, t);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& [name, t] : params_) f(name, t);
  }

 private:
  std::map<std::string, Tensor<S>> params_;
};

// ---------------------------------------------------------------------------
// initializers

template <class S>
void init_glorot_uniform(Tensor<S>& t, Rng rng) {
  double limit = std::sqrt(6.0 / double(t.rows() + t.cols()));
  for (Index i = 0; i < t.size(); ++i) t.value.data()[i] = S(rng.uniform(-limit, limit));
}

template <class S>
void init_normal(Tensor<S>& t, Rng rng, double sd) {
  for (Index i = 0; i < t.size(); ++i) t.value.data()[i] = S(rng.normal(0.0, sd));
}

// ---------------------------------------------------------------------------
// stateless pieces

// Fixed sin/cos position table: even columns sine, odd columns cosine,
// geometric frequency ladder from 1 to 1/10000.
template <class S>
Mat<S> sinusoidal_positions(Index n, Index d) {
  require(n >= 0 && d > 0 && d % 2 == 0, Err::invalid_argument,
          "sinusoidal_positions: d must be positive and even");
  Mat<S> pe(n, d);
  for (Index i = 0; i < d / 2; ++i) {
    double omega = std::pow(10000.0, -2.0 * double(i) / double(d));
    for (Index p = 0; p < n; ++p) {
      pe(p, 2 * i) = S(std::sin(double(p) * omega));
      pe(p, 2 * i + 1) = S(std::cos(double(p) * omega));
    }
  }
  return pe;
}

template <class S>
void softmax_rows_inplace(Mat<S>& x) {
  for (Index r = 0; r < x.rows(); ++r) {
    S m = x.row(r).maxCoeff();
    x.row(r) = (x.row(r).array() - m).exp();
    x.row(r) /= x.row(r).sum();
  }
}

template <class S>
Mat<S> softmax_rows(Mat<S> x) {
  softmax_rows_inplace(x);
  return x;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

// tanh form of GELU; the cached tanh makes the backward pass cheap.
template <class S>
void gelu_forward(const Mat<S>& x, Mat<S>& y, Mat<S>& tanh_cache) {
  tanh_cache = (S(kGeluC) * (x.array() + S(kGeluA) * x.array().cube())).tanh();
  y = S(0.5) * x.array() * (S(1) + tanh_cache.array());
}

template <class S>
void gelu_backward(const Mat<S>& x, const Mat<S>& tanh_cache, const Mat<S>& dy, Mat<S>& dx) {
  auto t = tanh_cache.array();
  auto u = S(kGeluC) * (S(1) + S(3.0 * kGeluA) * x.array().square());
  dx = dy.array() * (S(0.5) * (S(1) + t) + S(0.5) * x.array() * (S(1) - t.square()) * u);
}

// ---------------------------------------------------------------------------
// layers

template <class S>
struct Linear {
  Tensor<S>* W = nullptr;  // [d_in, d_out]
  Tensor<S>* b = nullptr;  // [1, d_out]

  void bind(ParamStore<S>& ps, const std::string& prefix, Index d_in, Index d_out, const Rng& init) {
    W = &ps.add(prefix + ".W", d_in, d_out);
    init_glorot_uniform(*W, init.stream(prefix + ".W"));
    b = &ps.add(prefix + ".b", 1, d_out);
  }

  // Rebind to existing parameters (after a checkpoint load or store copy).
  void rebind(ParamStore<S>& ps, const std::string& prefix) {
    W = &ps.at(prefix + ".W");
    b = &ps.at(prefix + ".b");
  }

  const Mat<S>& forward(const Mat<S>& x) {
    require(x.cols() == W->rows(), Err::shape,
            "linear: input width " + std::to_string(x.cols()) + " != " + std::to_string(W->rows()));
    x_ = x;
    y_.resize(x.rows(), W->cols());
    y_.noalias() = x * W->value;
    y_.rowwise() += b->value.row(0);
    return y_;
  }

  const Mat<S>& backward(const Mat<S>& dy) {
    require(dy.rows() == x_.rows() && dy.cols() == W->cols(), Err::shape, "linear: bad upstream shape");
    W->grad.noalias() += x_.transpose() * dy;
    b->grad.row(0) += dy.colwise().sum();
    dx_.resize(x_.rows(), x_.cols());
    dx_.noalias() = dy * W->value.transpose();
    return dx_;
  }

  Mat<S> x_, y_, dx_;
};

template <class S>
struct LayerNorm {
  Tensor<S>* gamma = nullptr;  // [1, d]
  Tensor<S>* beta = nullptr;   // [1, d]
  S eps = S(1e-5);

  void bind(ParamStore<S>& ps, const std::string& prefix, Index d) {
    gamma = &ps.add(prefix + ".gamma", 1, d);
    gamma->value.setOnes();
    beta = &ps.add(prefix + ".beta", 1, d);
  }
  void rebind(ParamStore<S>& ps, const std::string& prefix) {
    gamma = &ps.at(prefix + ".gamma");
    beta = &ps.at(prefix + ".beta");
  }

  const Mat<S>& forward(const Mat<S>& x) {
    require(x.cols() == gamma->cols(), Err::shape, "layer_norm: bad width");
    Index d = x.cols();
    xhat_.resize(x.rows(), d);
    inv_sd_.resize(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
      S mean = x.row(r).mean();
      S var = (x.row(r).array() - mean).square().sum() / S(d);
      S inv = S(1) / std::sqrt(var + eps);
      inv_sd_[r] = inv;
      xhat_.row(r) = (x.row(r).array() - mean) * inv;
    }
    y_ = xhat_.array().rowwise() * gamma->value.row(0).array();
    y_.rowwise() += beta->value.row(0);
    return y_;
  }

  const Mat<S>& backward(const Mat<S>& dy) {
    Index d = dy.cols();
    gamma->grad.row(0) += (dy.array() * xhat_.array()).colwise().sum().matrix();
    beta->grad.row(0) += dy.colwise().sum();
    dx_.resize(dy.rows(), d);
    for (Index r = 0; r < dy.rows(); ++r) {
      auto g = dy.row(r).array() * gamma->value.row(0).array();  // d loss / d xhat
      S m1 = g.mean();
      S m2 = (g * xhat_.row(r).array()).mean();
      dx_.row(r) = ((g - m1 - xhat_.row(r).array() * m2) * inv_sd_[r]).matrix();
    }
    return dx_;
  }

  Mat<S> xhat_, y_, dx_;
  Vec<S> inv_sd_;
};

template <class S>
struct Dropout {
  double p = 0.0;

  explicit Dropout(double prob = 0.0) : p(prob) {
    require(p >= 0.0 && p < 1.0, Err::config, "dropout: p must be in [0,1)");
  }

  const Mat<S>& forward(const Mat<S>& x, bool training, Rng* rng) {
    active_ = training && p > 0.0;
    if (!active_) {
      y_ = x;
      return y_;
    }
    require(rng != nullptr, Err::invalid_argument, "dropout: training forward needs an rng");
    S keep_scale = S(1.0 / (1.0 - p));
    mask_.resize(x.rows(), x.cols());
    for (Index i = 0; i < mask_.size(); ++i)
      mask_.data()[i] = rng->bernoulli(p) ? S(0) : keep_scale;
    y_ = x.array() * mask_.array();
    return y_;
  }

  const Mat<S>& backward(const Mat<S>& dy) {
    if (!active_) {
      dx_ = dy;
      return dx_;
    }
    dx_ = dy.array() * mask_.array();
    return dx_;
  }

  bool active_ = false;
  Mat<S> mask_, y_, dx_;
};

template <class S>
struct FeedForward {
  Linear<S> l1, l2;

  void bind(ParamStore<S>& ps, const std::string& prefix, Index d, Index hidden, const Rng& init) {
    l1.bind(ps, prefix + ".l1", d, hidden, init);
    l2.bind(ps, prefix + ".l2", hidden, d, init);
  }
  void rebind(ParamStore<S>& ps, const std::string& prefix) {
    l1.rebind(ps, prefix + ".l1");
    l2.rebind(ps, prefix + ".l2");
  }

  const Mat<S>& forward(const Mat<S>& x) {
    const Mat<S>& h = l1.forward(x);
    gelu_forward(h, act_, tanh_);
    return l2.forward(act_);
  }

  const Mat<S>& backward(const Mat<S>& dy) {
    const Mat<S>& da = l2.backward(dy);
    gelu_backward(l1.y_, tanh_, da, dh_);
    return l1.backward(dh_);
  }

  Mat<S> act_, tanh_, dh_;
};

// Multi-head attention over row blocks. Query rows are consumed q_block at
// a time and key/value rows kv_block at a time; when there are more query
// blocks than key/value blocks, consecutive query blocks share one
// key/value block (used for per-channel queries over a shared memory).
template <class S>
struct MultiHeadAttention {
  Index d = 0;
  int heads = 0;
  Linear<S> wq, wk, wv, wo;

  void bind(ParamStore<S>& ps, const std::string& prefix, Index d_model, int n_heads, const Rng& init) {
    require(n_heads > 0 && d_model % n_heads == 0, Err::config,
            "attention: head count must divide model width");
    d = d_model;
    heads = n_heads;
    wq.bind(ps, prefix + ".wq", d, d, init);
    wk.bind(ps, prefix + ".wk", d, d, init);
    wv.bind(ps, prefix + ".wv", d, d, init);
    wo.bind(ps, prefix + ".wo", d, d, init);
  }
  void rebind(ParamStore<S>& ps, const std::string& prefix) {
    wq.rebind(ps, prefix + ".wq");
    wk.rebind(ps, prefix + ".wk");
    wv.rebind(ps, prefix + ".wv");
    wo.rebind(ps, prefix + ".wo");
  }

  const Mat<S>& forward(const Mat<S>& xq, const Mat<S>& xkv, Index q_block, Index kv_block) {
    require(q_block > 0 && xq.rows() % q_block == 0, Err::shape, "attention: bad query block");
    require(kv_block > 0 && xkv.rows() % kv_block == 0, Err::shape, "attention: bad kv block");
    n_qb_ = xq.rows() / q_block;
    Index n_kb = xkv.rows() / kv_block;
    require(n_qb_ % n_kb == 0, Err::shape, "attention: query blocks must be a multiple of kv blocks");
    group_ = n_qb_ / n_kb;
    qb_ = q_block;
    kb_ = kv_block;

    const Mat<S>& q = wq.forward(xq);
    const Mat<S>& k = wk.forward(xkv);
    const Mat<S>& v = wv.forward(xkv);

    Index dk = d / heads;
    S scale = S(1.0 / std::sqrt(double(dk)));
    attn_.resize(size_t(n_qb_ * heads));
    concat_.resize(xq.rows(), d);
    for (Index b = 0; b < n_qb_; ++b) {
      Index kv = b / group_;
      for (int h = 0; h < heads; ++h) {
        auto Qb = q.block(b * qb_, h * dk, qb_, dk);
        auto Kb = k.block(kv * kb_, h * dk, kb_, dk);
        auto Vb = v.block(kv * kb_, h * dk, kb_, dk);
        Mat<S>& A = attn_[size_t(b * heads + h)];
        A.resize(qb_, kb_);
        A.noalias() = Qb * Kb.transpose();
        A *= scale;
        softmax_rows_inplace(A);
        concat_.block(b * qb_, h * dk, qb_, dk).noalias() = A * Vb;
      }
    }
    return wo.forward(concat_);
  }

  // dxq and dxkv are overwritten. For self-attention pass the same matrix
  // to xq and xkv on forward and add the two gradients yourself.
  void backward(const Mat<S>& dy, Mat<S>& dxq, Mat<S>& dxkv) {
    const Mat<S>& dconcat = wo.backward(dy);
    Index dk = d / heads;
    S scale = S(1.0 / std::sqrt(double(dk)));

    dq_.setZero(wq.y_.rows(), d);
    dkm_.setZero(wk.y_.rows(), d);
    dvm_.setZero(wv.y_.rows(), d);
    const Mat<S>& q = wq.y_;
    const Mat<S>& k = wk.y_;
    const Mat<S>& v = wv.y_;

    for (Index b = 0; b < n_qb_; ++b) {
      Index kv = b / group_;
      for (int h = 0; h < heads; ++h) {
        const Mat<S>& A = attn_[size_t(b * heads + h)];
        auto dO = dconcat.block(b * qb_, h * dk, qb_, dk);
        auto Vb = v.block(kv * kb_, h * dk, kb_, dk);
        dA_.resize(qb_, kb_);
        dA_.noalias() = dO * Vb.transpose();
        dvm_.block(kv * kb_, h * dk, kb_, dk).noalias() += A.transpose() * dO;

        rowdot_ = (dA_.array() * A.array()).rowwise().sum();
        dS_ = A.array() * (dA_.array().colwise() - rowdot_.array());
        dS_ *= scale;

        auto Qb = q.block(b * qb_, h * dk, qb_, dk);
        auto Kb = k.block(kv * kb_, h * dk, kb_, dk);
        dq_.block(b * qb_, h * dk, qb_, dk).noalias() = dS_ * Kb;
        dkm_.block(kv * kb_, h * dk, kb_, dk).noalias() += dS_.transpose() * Qb;
      }
    }

    dxq = wq.backward(dq_);
    dxkv = wk.backward(dkm_);
    dxkv += wv.backward(dvm_);
  }

  Mat<S> concat_, dq_, dkm_, dvm_, dA_, dS_;
  Vec<S> rowdot_;
  std::vector<Mat<S>> attn_;
  Index n_qb_ = 0, group_ = 1, qb_ = 0, kb_ = 0;
};

}  // namespace cast::nn
