#pragma once

// Feed-forward regression network mapping patch vectors of one modality
// onto the other:
//
//   h0 = x,  hk = tanh(Wk h(k-1) + bk)  for k = 1..N,  y = W_out hN
//
// trained by plain minibatch SGD on
//
//   J = (1/M) sum_i |y_i - t_i|^2 + (lambda/N) sum_{k=1..N} (|Wk|_F^2 + |bk|^2).
//
// The output map has no bias and is not regularized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/numerics.hpp"

namespace dpm {

struct DpmConfig {
  std::size_t input_dim = 66;
  std::vector<std::size_t> hidden_sizes{200, 200};
  double lambda = 1e-4;
  double learning_rate = 0.01;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 10;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    require(input_dim >= 1, "DpmConfig: input_dim must be >= 1");
    require(!hidden_sizes.empty(), "DpmConfig: need at least one hidden layer");
    for (std::size_t m : hidden_sizes) require(m >= 1, "DpmConfig: hidden sizes must be >= 1");
    require(lambda >= 0.0, "DpmConfig: lambda must be >= 0");
    require(learning_rate > 0.0, "DpmConfig: learning_rate must be > 0");
    require(lr_decay > 0.0, "DpmConfig: lr_decay must be > 0");
    require(lr_decay_every >= 1, "DpmConfig: lr_decay_every must be >= 1");
    require(batch_size >= 1, "DpmConfig: batch_size must be >= 1");
  }

  static DpmConfig shallow() {
    DpmConfig c;
    c.hidden_sizes = {1000};
    return c;
  }
};

struct DenseLayer {
  Matrix weights;  // fan_out x fan_in
  Vector bias;     // fan_out
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct DpmModel {
  std::vector<DenseLayer> layers;  // hidden layers 1..N
  Matrix output;                   // d x m(N)
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols(); }
  std::size_t output_dim() const { return output.rows(); }
  std::size_t depth() const { return layers.size(); }

  friend bool operator==(const DpmModel&, const DpmModel&) = default;
};

// Shape validation shared by load and by the gradient routines.
inline void check_shapes(const DpmModel& model) {
  if (model.layers.empty()) fail(ErrorKind::numeric, "DpmModel: no hidden layers");
  std::size_t fan_in = model.layers.front().weights.cols();
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    if (l.weights.cols() != fan_in || l.bias.size() != l.weights.rows() || l.weights.rows() == 0)
      fail(ErrorKind::numeric, "DpmModel: layer " + std::to_string(k + 1) + " shape does not chain");
    fan_in = l.weights.rows();
  }
  if (model.output.cols() != fan_in || model.output.rows() != model.input_dim())
    fail(ErrorKind::numeric, "DpmModel: output map shape does not chain back to input_dim");
}

inline bool all_finite(const DpmModel& model) {
  for (const auto& l : model.layers) {
    if (!l.weights.all_finite()) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return model.output.all_finite();
}

inline double tanh_activation(double z) { return std::tanh(z); }

inline Vector tanh_activation(std::span<const double> z) {
  Vector out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [](double v) { return std::tanh(v); });
  return out;
}

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0) / std::sqrt(static_cast<double>(fan_in + fan_out));
}

// Draws W1..WN then W_out from one stream, row-major; biases start at 0.
inline DpmModel init_glorot(const DpmConfig& cfg, Rng& rng) {
  cfg.validate();
  DpmModel m;
  m.seed = cfg.seed;
  std::size_t fan_in = cfg.input_dim;
  for (std::size_t fan_out : cfg.hidden_sizes) {
    const double r = glorot_bound(fan_in, fan_out);
    m.layers.push_back({uniform_fill(rng, -r, r, fan_out, fan_in), Vector(fan_out, 0.0)});
    fan_in = fan_out;
  }
  const double r = glorot_bound(fan_in, cfg.input_dim);
  m.output = uniform_fill(rng, -r, r, cfg.input_dim, fan_in);
  return m;
}

inline DpmModel init_glorot(const DpmConfig& cfg) {
  Rng rng(cfg.seed);
  return init_glorot(cfg, rng);
}

// Same shapes as the model; one entry per parameter.
struct Gradients {
  std::vector<DenseLayer> layers;
  Matrix output;

  static Gradients zeros_like(const DpmModel& m) {
    Gradients g;
    for (const auto& l : m.layers)
      g.layers.push_back({Matrix(l.weights.rows(), l.weights.cols()), Vector(l.bias.size(), 0.0)});
    g.output = Matrix(m.output.rows(), m.output.cols());
    return g;
  }

  void add(const Gradients& o) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      auto& w = layers[k].weights.data();
      const auto& ow = o.layers[k].weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
      for (std::size_t i = 0; i < layers[k].bias.size(); ++i) layers[k].bias[i] += o.layers[k].bias[i];
    }
    auto& w = output.data();
    const auto& ow = o.output.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weights.all_finite()) return false;
      for (double b : l.bias)
        if (!std::isfinite(b)) return false;
    }
    return output.all_finite();
  }
};

namespace detail {

// out(i, :) = sum_k in(i, k) * wt(k, :) [+ bias], k ascending.
inline void affine_rows(const Matrix& in, std::size_t r0, std::size_t r1, const Matrix& wt,
                        const Vector* bias, Matrix& out) {
  const std::size_t kdim = wt.rows(), n = wt.cols();
  for (std::size_t i = r0; i < r1; ++i) {
    double* o = &out(i - r0, 0);
    std::fill(o, o + n, 0.0);
    const double* x = &in(i, 0);
    for (std::size_t k = 0; k < kdim; ++k) {
      const double xk = x[k];
      const double* w = &wt(k, 0);
      for (std::size_t j = 0; j < n; ++j) o[j] += xk * w[j];
    }
    if (bias)
      for (std::size_t j = 0; j < n; ++j) o[j] += (*bias)[j];
  }
}

struct Transposed {
  std::vector<Matrix> layers;
  Matrix output;

  explicit Transposed(const DpmModel& m) : output(m.output.transposed()) {
    for (const auto& l : m.layers) layers.push_back(l.weights.transposed());
  }
};

// Activations of rows [r0, r1) for every hidden layer, plus the output.
struct ForwardTrace {
  std::vector<Matrix> hidden;
  Matrix output;
};

inline ForwardTrace forward_trace(const DpmModel& m, const Transposed& t, const Matrix& x,
                                  std::size_t r0, std::size_t r1) {
  const std::size_t rows = r1 - r0;
  ForwardTrace tr;
  tr.hidden.reserve(m.layers.size());
  const Matrix* in = &x;
  std::size_t in0 = r0;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    Matrix h(rows, m.layers[k].weights.rows());
    affine_rows(*in, in0, in0 + rows, t.layers[k], &m.layers[k].bias, h);
    for (double& v : h.data()) v = std::tanh(v);
    tr.hidden.push_back(std::move(h));
    in = &tr.hidden.back();
    in0 = 0;
  }
  tr.output = Matrix(rows, m.output.rows());
  affine_rows(*in, 0, rows, t.output, nullptr, tr.output);
  return tr;
}

// Data-term gradient for rows [r0, r1) with the global 2/M scale, summed
// over rows in ascending order. Returns the chunk's sum of squared errors.
inline double backward_chunk(const DpmModel& m, const Matrix& x, const Matrix& t, std::size_t r0,
                             std::size_t r1, double scale, const Transposed& tp, Gradients& g) {
  const ForwardTrace tr = forward_trace(m, tp, x, r0, r1);
  const std::size_t rows = r1 - r0, d = m.output.rows();
  const std::size_t depth = m.layers.size();

  double sse = 0.0;
  Matrix delta(rows, d);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      const double e = tr.output(i, o) - t(r0 + i, o);
      sse += e * e;
      delta(i, o) = scale * e;
    }

  // output map
  {
    const Matrix& h = tr.hidden.back();
    const std::size_t mn = h.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t o = 0; o < d; ++o) {
        const double dv = delta(i, o);
        double* gw = &g.output(o, 0);
        const double* hv = &h(i, 0);
        for (std::size_t j = 0; j < mn; ++j) gw[j] += dv * hv[j];
      }
    Matrix dh(rows, mn);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t o = 0; o < d; ++o) {
        const double dv = delta(i, o);
        const double* w = &m.output(o, 0);
        double* out = &dh(i, 0);
        for (std::size_t j = 0; j < mn; ++j) out[j] += dv * w[j];
      }
    delta = std::move(dh);
  }

  for (std::size_t kk = depth; kk-- > 0;) {
    const Matrix& h = tr.hidden[kk];
    for (std::size_t idx = 0; idx < delta.size(); ++idx) {
      const double a = h.data()[idx];
      delta.data()[idx] *= 1.0 - a * a;
    }
    const std::size_t fan_out = h.cols();
    const std::size_t fan_in = m.layers[kk].weights.cols();
    auto input_row = [&](std::size_t i) -> const double* {
      return kk == 0 ? &x(r0 + i, 0) : &tr.hidden[kk - 1](i, 0);
    };
    auto& gl = g.layers[kk];
    for (std::size_t i = 0; i < rows; ++i) {
      const double* in = input_row(i);
      for (std::size_t o = 0; o < fan_out; ++o) {
        const double dv = delta(i, o);
        gl.bias[o] += dv;
        double* gw = &gl.weights(o, 0);
        for (std::size_t j = 0; j < fan_in; ++j) gw[j] += dv * in[j];
      }
    }
    if (kk == 0) break;
    Matrix dh(rows, fan_in);
    const Matrix& w = m.layers[kk].weights;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t o = 0; o < fan_out; ++o) {
        const double dv = delta(i, o);
        const double* wr = &w(o, 0);
        double* out = &dh(i, 0);
        for (std::size_t j = 0; j < fan_in; ++j) out[j] += dv * wr[j];
      }
    delta = std::move(dh);
  }
  return sse;
}

inline double regularizer(const DpmModel& m) {
  double s = 0.0;
  for (const auto& l : m.layers) s += squared_norm(l.weights.data()) + squared_norm(l.bias);
  return s;
}

inline void check_batch(const DpmModel& m, const Matrix& x, const Matrix& t) {
  require(x.rows() >= 1, "empty batch");
  require(x.rows() == t.rows(), "batch size mismatch between inputs and targets");
  require(x.cols() == m.input_dim() && t.cols() == m.output_dim(),
          "batch width does not match model dimension");
}

}  // namespace detail

// Rows are mapped independently, so each row's result does not depend on
// the rest of the batch.
inline Matrix map_batch(const DpmModel& model, const Matrix& rows) {
  if (rows.cols() != model.input_dim())
    fail(ErrorKind::contract, "map_batch: row width " + std::to_string(rows.cols()) +
                                  " != model input_dim " + std::to_string(model.input_dim()));
  const detail::Transposed t(model);
  if (rows.rows() == 0) return Matrix(0, model.output_dim());
  return detail::forward_trace(model, t, rows, 0, rows.rows()).output;
}

inline Vector forward(const DpmModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    fail(ErrorKind::contract, "forward: input length " + std::to_string(x.size()) +
                                  " != model input_dim " + std::to_string(model.input_dim()));
  return map_batch(model, Matrix(1, x.size(), Vector(x.begin(), x.end()))).data();
}

inline double loss(const DpmModel& model, const Matrix& x, const Matrix& t, double lambda) {
  detail::check_batch(model, x, t);
  const Matrix y = map_batch(model, x);
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y.data()[i] - t.data()[i];
    sse += e * e;
  }
  return sse / static_cast<double>(x.rows()) +
         lambda / static_cast<double>(model.depth()) * detail::regularizer(model);
}

inline constexpr std::size_t kGradientChunk = 32;

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

// Rows are processed in fixed chunks of kGradientChunk; chunk partial sums
// are added in chunk order, so results do not depend on `threads`.
inline LossAndGradients loss_and_gradients(const DpmModel& model, const Matrix& x, const Matrix& t,
                                           double lambda, unsigned threads = 1) {
  detail::check_batch(model, x, t);
  const std::size_t m = x.rows();
  const double scale = 2.0 / static_cast<double>(m);
  const std::size_t chunks = (m + kGradientChunk - 1) / kGradientChunk;
  const detail::Transposed tp(model);

  std::vector<Gradients> partial(chunks, Gradients::zeros_like(model));
  std::vector<double> sse(chunks, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t r0 = c * kGradientChunk, r1 = std::min(m, r0 + kGradientChunk);
    sse[c] = detail::backward_chunk(model, x, t, r0, r1, scale, tp, partial[c]);
  });

  LossAndGradients out{0.0, std::move(partial[0])};
  double total = sse[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    out.grads.add(partial[c]);
    total += sse[c];
  }

  const double reg = lambda / static_cast<double>(model.depth());
  for (std::size_t k = 0; k < model.depth(); ++k) {
    auto& g = out.grads.layers[k];
    const auto& p = model.layers[k];
    for (std::size_t i = 0; i < g.weights.size(); ++i) g.weights.data()[i] += 2.0 * reg * p.weights.data()[i];
    for (std::size_t i = 0; i < g.bias.size(); ++i) g.bias[i] += 2.0 * reg * p.bias[i];
  }
  out.loss = total / static_cast<double>(m) + reg * detail::regularizer(model);
  return out;
}

inline Gradients backward(const DpmModel& model, const Matrix& x, const Matrix& t, double lambda,
                          unsigned threads = 1) {
  return loss_and_gradients(model, x, t, lambda, threads).grads;
}

inline void sgd_step(DpmModel& model, const Gradients& g, double lr) {
  require(g.layers.size() == model.layers.size(), "sgd_step: layer count mismatch");
  auto step = [lr](std::vector<double>& p, const std::vector<double>& d) {
    require(p.size() == d.size(), "sgd_step: parameter shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * d[i];
  };
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    require(g.layers[k].weights.rows() == model.layers[k].weights.rows(),
            "sgd_step: parameter shape mismatch");
    step(model.layers[k].weights.data(), g.layers[k].weights.data());
    step(model.layers[k].bias, g.layers[k].bias);
  }
  require(g.output.rows() == model.output.rows(), "sgd_step: parameter shape mismatch");
  step(model.output.data(), g.output.data());
}

struct TrainReport {
  std::vector<double> epoch_loss;  // size-weighted mean minibatch J per epoch
  double final_loss = 0.0;
  std::size_t epochs_run = 0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  DpmModel model;
  TrainReport report;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch)
      : Error(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

inline double learning_rate_at(const DpmConfig& cfg, std::size_t epoch) {
  return cfg.learning_rate *
         std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// inputs.row(i) and targets.row(i) are one corresponding patch pair. One
// Rng(seed) stream initializes the weights, then drives the per-epoch
// shuffles.
inline TrainResult train(const DpmConfig& cfg, const Matrix& inputs, const Matrix& targets,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  require(inputs.rows() >= 1, "train: no training pairs");
  require(inputs.rows() == targets.rows(), "train: inputs and targets differ in length");
  require(inputs.cols() == cfg.input_dim && targets.cols() == cfg.input_dim,
          "train: pair width != input_dim");

  Rng rng(cfg.seed);
  TrainResult res{init_glorot(cfg, rng), {}};
  res.report.seed = cfg.seed;

  const std::size_t n = inputs.rows(), d = cfg.input_dim;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix bx, bt;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = learning_rate_at(cfg, epoch);
    double weighted = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t rows = std::min(cfg.batch_size, n - start);
      bx = Matrix(rows, d);
      bt = Matrix(rows, d);
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t src = order[start + i];
        std::copy_n(&inputs(src, 0), d, &bx(i, 0));
        std::copy_n(&targets(src, 0), d, &bt(i, 0));
      }
      auto lg = loss_and_gradients(res.model, bx, bt, cfg.lambda, cfg.threads);
      if (!std::isfinite(lg.loss) || !lg.grads.all_finite()) throw TrainingDiverged(epoch + 1, batch_index);
      sgd_step(res.model, lg.grads, lr);
      if (!all_finite(res.model)) throw TrainingDiverged(epoch + 1, batch_index);
      weighted += lg.loss * static_cast<double>(rows);
    }
    const double mean = weighted / static_cast<double>(n);
    res.report.epoch_loss.push_back(mean);
    res.report.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  res.report.final_loss = res.report.epoch_loss.empty() ? 0.0 : res.report.epoch_loss.back();
  return res;
}

}  // namespace dpm
