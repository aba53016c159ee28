#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "affordrep/rng.hpp"

// Minimal dense/conv layers with hand-written backward passes. Activations are
// column-per-sample: dense tensors are [features, B]; conv tensors are
// [C, B*H*W] with column b*H*W + y*W + x, which reinterprets for free as a
// [C*H*W, B] matrix when flattening.
namespace affordrep::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct ParamRef {
  std::string name;
  Mat<T>* value = nullptr;
  Mat<T>* grad = nullptr;
};
template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
void zero_grads(const ParamList<T>& ps) {
  for (const auto& p : ps) p.grad->setZero();
}

template <typename T>
std::size_t param_count(const ParamList<T>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += static_cast<std::size_t>(p.value->size());
  return n;
}

template <typename T>
void init_uniform(Mat<T>& m, double bound, Rng& rng) {
  // column-major fill order is part of the determinism contract
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
Mat<T> elu(const Mat<T>& x) {
  // max/min form vectorizes; select() and expm1 do not
  const auto a = x.array();
  return (a.max(T(0)) + (a.min(T(0)).exp() - T(1))).matrix();
}

// Backward through ELU given its output y: dy/dx = 1 for x > 0, y + 1 otherwise.
template <typename T>
Mat<T> elu_backward(const Mat<T>& y, const Mat<T>& dy) {
  return (dy.array() * (y.array().min(T(0)) + T(1))).matrix();
}

template <typename T>
struct Linear {
  Mat<T> W, b, gW, gb;

  Linear() = default;
  Linear(int in, int out)
      : W(Mat<T>::Zero(out, in)), b(Mat<T>::Zero(out, 1)), gW(Mat<T>::Zero(out, in)), gb(Mat<T>::Zero(out, 1)) {}

  int in() const { return static_cast<int>(W.cols()); }
  int out() const { return static_cast<int>(W.rows()); }

  void init(Rng& rng) {
    init_uniform(W, std::sqrt(3.0 / std::max(1, in())), rng);
    b.setZero();
  }
  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = W * x;
    y.colwise() += b.col(0);
    return y;
  }
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    gW.noalias() += dy * x.transpose();
    gb += dy.rowwise().sum();
    return W.transpose() * dy;
  }
  void collect(ParamList<T>& ps, const std::string& name) {
    ps.push_back({name + ".W", &W, &gW});
    ps.push_back({name + ".b", &b, &gb});
  }
  template <typename U>
  Linear<U> cast() const {
    Linear<U> o(in(), out());
    o.W = W.template cast<U>();
    o.b = b.template cast<U>();
    return o;
  }
};

// 3x3 kernel, stride 2, zero padding 1.
template <typename T>
struct Conv {
  int cin = 0, cout = 0, h = 0, w = 0;
  Mat<T> W, b, gW, gb;  // W is [cout, cin*9], row index ci*9 + ky*3 + kx

  Conv() = default;
  Conv(int cin_, int cout_, int h_, int w_)
      : cin(cin_), cout(cout_), h(h_), w(w_), W(Mat<T>::Zero(cout_, cin_ * 9)), b(Mat<T>::Zero(cout_, 1)),
        gW(Mat<T>::Zero(cout_, cin_ * 9)), gb(Mat<T>::Zero(cout_, 1)) {}

  int ho() const { return (h - 1) / 2 + 1; }
  int wo() const { return (w - 1) / 2 + 1; }

  void init(Rng& rng) {
    init_uniform(W, std::sqrt(3.0 / (cin * 9)), rng);
    b.setZero();
  }

  Mat<T> im2col(const Mat<T>& x, int batch) const {
    const int oh = ho(), ow = wo(), hw = h * w, ohw = oh * ow;
    Mat<T> cols = Mat<T>::Zero(cin * 9, static_cast<Eigen::Index>(batch) * ohw);
    for (int bi = 0; bi < batch; ++bi)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = static_cast<Eigen::Index>(bi) * ohw + oy * ow + ox;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox - 1 + kx;
              if (ix < 0 || ix >= w) continue;
              const Eigen::Index src = static_cast<Eigen::Index>(bi) * hw + iy * w + ix;
              for (int c = 0; c < cin; ++c) cols(c * 9 + ky * 3 + kx, col) = x(c, src);
            }
          }
        }
    return cols;
  }

  Mat<T> col2im(const Mat<T>& cols, int batch) const {
    const int oh = ho(), ow = wo(), hw = h * w, ohw = oh * ow;
    Mat<T> x = Mat<T>::Zero(cin, static_cast<Eigen::Index>(batch) * hw);
    for (int bi = 0; bi < batch; ++bi)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = static_cast<Eigen::Index>(bi) * ohw + oy * ow + ox;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox - 1 + kx;
              if (ix < 0 || ix >= w) continue;
              const Eigen::Index dst = static_cast<Eigen::Index>(bi) * hw + iy * w + ix;
              for (int c = 0; c < cin; ++c) x(c, dst) += cols(c * 9 + ky * 3 + kx, col);
            }
          }
        }
    return x;
  }

  Mat<T> forward(const Mat<T>& x, int batch, Mat<T>& cols) const {
    cols = im2col(x, batch);
    Mat<T> y = W * cols;
    y.colwise() += b.col(0);
    return y;
  }
  Mat<T> backward(const Mat<T>& cols, const Mat<T>& dy, int batch) {
    gW.noalias() += dy * cols.transpose();
    gb += dy.rowwise().sum();
    return col2im(W.transpose() * dy, batch);
  }
  void collect(ParamList<T>& ps, const std::string& name) {
    ps.push_back({name + ".W", &W, &gW});
    ps.push_back({name + ".b", &b, &gb});
  }
  template <typename U>
  Conv<U> cast() const {
    Conv<U> o(cin, cout, h, w);
    o.W = W.template cast<U>();
    o.b = b.template cast<U>();
    return o;
  }
};

template <typename T>
struct MlpCache {
  std::vector<Mat<T>> inputs;
  std::vector<Mat<T>> activated;  // post-ELU, pre-dropout
  Mat<T> mask;
};

// Stack of Linear layers with ELU between them (and after the last one when
// act_last is set). Inverted dropout after layer `dropout_after` in training.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  bool act_last = false;
  int dropout_after = -1;
  double dropout = 0.0;

  Mlp() = default;
  Mlp(const std::vector<int>& dims, bool act_last_ = false, int dropout_after_ = -1, double p = 0.0)
      : act_last(act_last_), dropout_after(dropout_after_), dropout(p) {
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1]);
  }

  bool activated(std::size_t i) const { return i + 1 < layers.size() || act_last; }
  int out() const { return layers.back().out(); }

  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  // rng == nullptr means eval mode (no dropout).
  Mat<T> forward(const Mat<T>& x, MlpCache<T>& c, Rng* rng) const {
    c.inputs.resize(layers.size());
    c.activated.resize(layers.size());
    Mat<T> a = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      c.inputs[i] = a;
      a = layers[i].forward(a);
      if (activated(i)) a = elu(a);
      c.activated[i] = a;
      if (static_cast<int>(i) == dropout_after && rng && dropout > 0.0) {
        const T scale = static_cast<T>(1.0 / (1.0 - dropout));
        c.mask.resize(a.rows(), a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j)
          for (Eigen::Index r = 0; r < a.rows(); ++r) c.mask(r, j) = rng->bernoulli(dropout) ? T(0) : scale;
        a = a.cwiseProduct(c.mask);
      } else if (static_cast<int>(i) == dropout_after) {
        c.mask.resize(0, 0);
      }
    }
    return a;
  }
  Mat<T> forward(const Mat<T>& x) const {
    MlpCache<T> c;
    return forward(x, c, nullptr);
  }

  Mat<T> backward(const Mat<T>& dy, const MlpCache<T>& c) {
    Mat<T> g = dy;
    for (std::size_t k = layers.size(); k-- > 0;) {
      if (static_cast<int>(k) == dropout_after && c.mask.size() > 0) g = g.cwiseProduct(c.mask);
      if (activated(k)) g = elu_backward(c.activated[k], g);
      g = layers[k].backward(c.inputs[k], g);
    }
    return g;
  }

  void collect(ParamList<T>& ps, const std::string& name) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(ps, name + "." + std::to_string(i));
  }
  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> o;
    o.act_last = act_last;
    o.dropout_after = dropout_after;
    o.dropout = dropout;
    for (const auto& l : layers) o.layers.push_back(l.template cast<U>());
    return o;
  }
};

// Adam with bias correction.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const ParamList<float>& ps, double lr) {
    if (m_.empty()) {
      for (const auto& p : ps) {
        m_.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
        v_.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
      }
    }
    if (m_.size() != ps.size()) throw std::logic_error("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const float step = static_cast<float>(lr * std::sqrt(c2) / c1);
    const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
    const float eps = static_cast<float>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Mat<float>& g = *ps[i].grad;
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
      ps[i].value->array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }
  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Mat<float>> m_, v_;
};

}  // namespace affordrep::nn
