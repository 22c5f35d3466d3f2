#pragma once

// Complex-valued feed-forward networks trained with split real/imaginary backpropagation.
// Complex tensors are carried as (real, imag) pairs of real matrices, one column per sample.

#include <bistatic/core.hpp>
#include <bistatic/csi.hpp>

#include <boost/multiprecision/cpp_int.hpp>

#include <fstream>
#include <optional>

namespace bistatic {

using BigInt = boost::multiprecision::cpp_int;

struct ComplexLinearLayer {
  RMatrix w_real, w_imag;  // out x in
  RVector b_real, b_imag;  // out

  Eigen::Index in_size() const { return w_real.cols(); }
  Eigen::Index out_size() const { return w_real.rows(); }

  static ComplexLinearLayer zeros(Eigen::Index in, Eigen::Index out) {
    return {RMatrix::Zero(out, in), RMatrix::Zero(out, in), RVector::Zero(out), RVector::Zero(out)};
  }

  void check() const {
    require(w_imag.rows() == w_real.rows() && w_imag.cols() == w_real.cols() && b_real.size() == w_real.rows() &&
                b_imag.size() == w_real.rows(),
            Errc::dimension_mismatch, "complex layer parts disagree in shape");
  }
};

/// A batch of complex vectors, one per column.
struct ComplexBatch {
  RMatrix re;
  RMatrix im;

  Eigen::Index features() const { return re.rows(); }
  Eigen::Index samples() const { return re.cols(); }
};

inline ComplexBatch to_batch(const CMatrix& columns) { return {columns.real(), columns.imag()}; }

inline ComplexBatch complex_linear_forward(const ComplexLinearLayer& layer, const ComplexBatch& in) {
  require(in.features() == layer.in_size(), Errc::dimension_mismatch, "layer input size mismatch");
  ComplexBatch out;
  out.re = layer.w_real * in.re - layer.w_imag * in.im;
  out.re.colwise() += layer.b_real;
  out.im = layer.w_real * in.im + layer.w_imag * in.re;
  out.im.colwise() += layer.b_imag;
  return out;
}

inline CVector complex_linear_forward(const ComplexLinearLayer& layer, const CVector& z) {
  const ComplexBatch out = complex_linear_forward(layer, ComplexBatch{z.real(), z.imag()});
  CVector r(out.features());
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = cd(out.re(i, 0), out.im(i, 0));
  return r;
}

/// Valid-mode complex convolution, out[k] = sum_m f[m] s[k + L - 1 - m], built from four
/// real convolutions.
struct ComplexConv1dLayer {
  RVector f_real, f_imag;
};

inline RVector real_conv_valid(const RVector& f, const RVector& s) {
  const auto len = f.size();
  RVector out = RVector::Zero(s.size() - len + 1);
  for (Eigen::Index k = 0; k < out.size(); ++k)
    for (Eigen::Index m = 0; m < len; ++m) out(k) += f(m) * s(k + len - 1 - m);
  return out;
}

inline CVector complex_conv_forward(const ComplexConv1dLayer& filter, const CVector& signal) {
  require(filter.f_real.size() == filter.f_imag.size() && filter.f_real.size() >= 1, Errc::dimension_mismatch,
          "filter parts disagree in length");
  require(filter.f_real.size() <= signal.size(), Errc::dimension_mismatch, "filter longer than signal");
  const RVector x = signal.real();
  const RVector y = signal.imag();
  const RVector re = real_conv_valid(filter.f_real, x) - real_conv_valid(filter.f_imag, y);
  const RVector im = real_conv_valid(filter.f_imag, x) + real_conv_valid(filter.f_real, y);
  CVector out(re.size());
  for (Eigen::Index i = 0; i < re.size(); ++i) out(i) = cd(re(i), im(i));
  return out;
}

inline cd crelu(cd z) { return {std::max(z.real(), 0.0), std::max(z.imag(), 0.0)}; }

inline CVector crelu(const CVector& z) { return z.unaryExpr([](cd v) { return crelu(v); }); }

inline ComplexBatch crelu(ComplexBatch b) {
  b.re = b.re.cwiseMax(0.0);
  b.im = b.im.cwiseMax(0.0);
  return b;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

enum class HeadKind : std::uint32_t { regression = 0, classifier = 1 };

/// How a raw N_r x N_t snapshot becomes the network input.
enum class InputTransform : std::uint32_t {
  none = 0,        // column-major snapshot as is
  phase_norm = 1,  // rotate so entry 0 is real positive, rescale to norm sqrt(S)
  gram = 2,        // N_t x N_t matrix N_t H^H H / ||H||_F^2, column-major
  spectrum = 3,    // log10 eigenvalues of that matrix, descending, as real entries
};

inline const char* transform_name(InputTransform t) {
  switch (t) {
    case InputTransform::none: return "none";
    case InputTransform::phase_norm: return "phase_norm";
    case InputTransform::gram: return "gram";
    case InputTransform::spectrum: return "spectrum";
  }
  return "unknown";
}

struct NetworkSpec {
  int n_rx = 10;
  int n_tx = 8;
  int input_size = 80;
  std::vector<int> hidden{40, 20, 10};
  HeadKind head = HeadKind::regression;
  int n_out = 2;
  InputTransform transform = InputTransform::none;

  static constexpr int kClasses = 5;

  /// Hidden sizes floor(S/2), floor(S/4), floor(S/8) for input size S.
  static std::vector<int> halving_widths(int s) { return {s / 2, s / 4, s / 8}; }

  static NetworkSpec regression(int n_rx, int n_tx, int q, InputTransform t = InputTransform::none) {
    NetworkSpec s;
    s.n_rx = n_rx;
    s.n_tx = n_tx;
    s.transform = t;
    s.input_size = input_size_for(t, n_rx, n_tx);
    // the spectrum is short, so it keeps the widths of the raw snapshot
    s.hidden = halving_widths(t == InputTransform::spectrum ? n_rx * n_tx : s.input_size);
    s.head = HeadKind::regression;
    s.n_out = 2 * q;
    return s;
  }

  static NetworkSpec classifier(int n_rx, int n_tx, InputTransform t = InputTransform::spectrum) {
    NetworkSpec s = regression(n_rx, n_tx, 1, t);
    s.head = HeadKind::classifier;
    s.n_out = kClasses;
    return s;
  }

  int raw_size() const { return n_rx * n_tx; }

  static int input_size_for(InputTransform t, int n_rx, int n_tx) {
    switch (t) {
      case InputTransform::gram: return n_tx * n_tx;
      case InputTransform::spectrum: return n_tx;
      default: return n_rx * n_tx;
    }
  }

  void validate() const {
    require(!hidden.empty(), Errc::invalid_argument, "network needs hidden layers");
    for (int h : hidden) require(h >= 1, Errc::invalid_argument, "hidden sizes must be >= 1");
    require(n_out >= 1, Errc::invalid_argument, "network needs outputs");
    require(head != HeadKind::classifier || n_out == kClasses, Errc::invalid_argument,
            "classifier head has exactly 5 classes");
    require(head != HeadKind::regression || n_out % 2 == 0, Errc::invalid_argument,
            "regression head outputs come in (AoA, AoD) pairs");
    require(input_size == input_size_for(transform, n_rx, n_tx), Errc::dimension_mismatch, "input size does not match the input transform");
  }
};

struct Network {
  NetworkSpec spec;
  std::vector<ComplexLinearLayer> layers;
};

/// Weights and biases uniform in [-1/sqrt(S_in), 1/sqrt(S_in)], real and imaginary parts independent.
inline Network make_network(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Network net{spec, {}};
  std::vector<int> dims{spec.input_size};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.n_out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double k = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    std::uniform_real_distribution<double> u(-k, k);
    auto draw = [&](Eigen::Index r, Eigen::Index c) {
      RMatrix m(r, c);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
      return m;
    };
    ComplexLinearLayer layer;
    layer.w_real = draw(dims[l + 1], dims[l]);
    layer.w_imag = draw(dims[l + 1], dims[l]);
    layer.b_real = draw(dims[l + 1], 1);
    layer.b_imag = draw(dims[l + 1], 1);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Network make_network(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0, "nn-init");
  return make_network(spec, rng);
}

inline CVector transform_input(const NetworkSpec& spec, const CVector& snapshot_vec) {
  require(snapshot_vec.size() == spec.raw_size(), Errc::dimension_mismatch, "snapshot length does not match network");
  switch (spec.transform) {
    case InputTransform::none:
      return snapshot_vec;
    case InputTransform::phase_norm: {
      const double mag0 = std::abs(snapshot_vec(0));
      const double nrm = snapshot_vec.norm();
      if (mag0 == 0.0 || nrm == 0.0) return snapshot_vec;
      const cd rot = std::conj(snapshot_vec(0)) / mag0;
      return snapshot_vec * rot * (std::sqrt(static_cast<double>(snapshot_vec.size())) / nrm);
    }
    case InputTransform::gram: {
      const CMatrix h = unvec(snapshot_vec, spec.n_rx, spec.n_tx);
      const double e = h.squaredNorm();
      const CMatrix r = e > 0.0 ? CMatrix(h.adjoint() * h * (spec.n_tx / e)) : CMatrix::Zero(spec.n_tx, spec.n_tx);
      return vec(r);
    }
    case InputTransform::spectrum: {
      const CMatrix h = unvec(snapshot_vec, spec.n_rx, spec.n_tx);
      const double e = h.squaredNorm();
      CVector out = CVector::Constant(spec.n_tx, cd(-12.0, 0.0));
      if (e == 0.0) return out;
      const CMatrix r = h.adjoint() * h * (spec.n_tx / e);
      const RVector ev = Eigen::SelfAdjointEigenSolver<CMatrix>(r, Eigen::EigenvaluesOnly).eigenvalues();
      for (Eigen::Index i = 0; i < spec.n_tx; ++i) out(i) = std::log10(std::max(ev(spec.n_tx - 1 - i), 1e-12));
      return out;
    }
  }
  return snapshot_vec;
}

/// Raw snapshots (one per column) to a transformed input batch.
inline ComplexBatch prepare_inputs(const NetworkSpec& spec, const CMatrix& raw) {
  CMatrix feat(spec.input_size, raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) feat.col(j) = transform_input(spec, raw.col(j));
  return to_batch(feat);
}

struct ForwardCache {
  std::vector<ComplexBatch> inputs;  // input to each layer (post-activation of the previous one)
  std::vector<ComplexBatch> pre;     // pre-activation output of each layer
};

/// Hidden layers use CReLU; the output layer is linear.
inline ComplexBatch forward_batch(const Network& net, const ComplexBatch& input, ForwardCache* cache = nullptr) {
  require(input.features() == net.spec.input_size, Errc::dimension_mismatch, "network input size mismatch");
  ComplexBatch cur = input;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    ComplexBatch z = complex_linear_forward(net.layers[l], cur);
    if (cache) {
      cache->inputs.push_back(cur);
      cache->pre.push_back(z);
    }
    cur = l + 1 < net.layers.size() ? crelu(std::move(z)) : std::move(z);
  }
  return cur;
}

inline RMatrix softmax_columns(const RMatrix& logits) {
  RMatrix p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const RVector e = (logits.col(j).array() - mx).exp().matrix();
    p.col(j) = e / e.sum();
  }
  return p;
}

/// Regression: real parts of the outputs, ordered (AoA_1..AoA_q, AoD_1..AoD_q).
/// Classifier: softmax over output magnitudes.
inline RMatrix forward(const Network& net, const CMatrix& raw_snapshots) {
  const ComplexBatch out = forward_batch(net, prepare_inputs(net.spec, raw_snapshots));
  if (net.spec.head == HeadKind::regression) return out.re;
  return softmax_columns((out.re.array().square() + out.im.array().square()).sqrt().matrix());
}

/// Single N_r x N_t snapshot.
inline RVector predict(const Network& net, const CMatrix& snapshot) {
  return forward(net, CMatrix(vec(snapshot))).col(0);
}

/// Class 1..5 from the largest softmax probability; ties go to the lowest class.
inline int classify_from_probabilities(const RVector& p) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i)
    if (p(i) > p(best)) best = i;
  return static_cast<int>(best) + 1;
}

inline int classify_num_targets(const Network& net, const CMatrix& snapshot) {
  require(net.spec.head == HeadKind::classifier, Errc::invalid_argument, "model has no classifier head");
  return classify_from_probabilities(predict(net, snapshot));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct SortedMse {
  double aoa = 0.0;
  double aod = 0.0;
  double combined = 0.0;  // mean over every angle output
};

/// Per-sample order of the q (AoA, AoD) tuples sorted by AoA, ties by AoD.
inline std::vector<int> angle_order(const RMatrix& m, Eigen::Index col, int q) {
  std::vector<int> idx(static_cast<std::size_t>(q));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double ta = m(a, col), tb = m(b, col);
    if (ta != tb) return ta < tb;
    return m(q + a, col) < m(q + b, col);
  });
  return idx;
}

/// Both sides sorted by AoA before pairing. If `grad` is given it receives d(combined)/d(pred).
inline SortedMse sorted_mse_loss(const RMatrix& pred, const RMatrix& truth, RMatrix* grad = nullptr) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), Errc::dimension_mismatch,
          "prediction and truth shapes differ");
  require(pred.rows() % 2 == 0 && pred.rows() > 0, Errc::dimension_mismatch, "angle outputs come in pairs");
  const int q = static_cast<int>(pred.rows() / 2);
  const auto n = pred.cols();
  if (grad) *grad = RMatrix::Zero(pred.rows(), n);
  SortedMse out;
  if (n == 0) return out;
  const double denom = static_cast<double>(q) * static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto po = angle_order(pred, j, q);
    const auto to = angle_order(truth, j, q);
    for (int i = 0; i < q; ++i) {
      const int p = po[static_cast<std::size_t>(i)];
      const int t = to[static_cast<std::size_t>(i)];
      const double ea = pred(p, j) - truth(t, j);
      const double ed = pred(q + p, j) - truth(q + t, j);
      out.aoa += ea * ea;
      out.aod += ed * ed;
      if (grad) {
        (*grad)(p, j) = ea / denom;
        (*grad)(q + p, j) = ed / denom;
      }
    }
  }
  out.aoa /= denom;
  out.aod /= denom;
  out.combined = 0.5 * (out.aoa + out.aod);
  return out;
}

/// Mean cross-entropy of softmax(|z|) against classes 1..5 in `labels`.
inline double classifier_loss(const ComplexBatch& out, const RVector& labels, ComplexBatch* grad = nullptr) {
  const RMatrix mag = (out.re.array().square() + out.im.array().square()).sqrt().matrix();
  const RMatrix p = softmax_columns(mag);
  const auto n = out.samples();
  double loss = 0.0;
  if (grad) *grad = {RMatrix::Zero(out.re.rows(), n), RMatrix::Zero(out.re.rows(), n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto cls = static_cast<Eigen::Index>(std::lround(labels(j))) - 1;
    require(cls >= 0 && cls < p.rows(), Errc::invalid_argument, "class label out of range");
    loss -= std::log(std::max(p(cls, j), 1e-300));
    if (grad) {
      for (Eigen::Index k = 0; k < p.rows(); ++k) {
        const double dm = (p(k, j) - (k == cls ? 1.0 : 0.0)) / static_cast<double>(n);
        const double m = mag(k, j);
        if (m > 0.0) {
          grad->re(k, j) = dm * out.re(k, j) / m;
          grad->im(k, j) = dm * out.im(k, j) / m;
        }
      }
    }
  }
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Backpropagation
// ---------------------------------------------------------------------------

using Gradients = std::vector<ComplexLinearLayer>;

inline Gradients zero_gradients(const Network& net) {
  Gradients g;
  for (const auto& l : net.layers) g.push_back(ComplexLinearLayer::zeros(l.in_size(), l.out_size()));
  return g;
}

/// Gradients w.r.t. (W_r, W_i, b_r, b_i) of every layer given dL/d(output) in split form.
inline Gradients backward(const Network& net, const ForwardCache& cache, ComplexBatch out_grad) {
  Gradients g = zero_gradients(net);
  ComplexBatch cur = std::move(out_grad);
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    const auto& in = cache.inputs[li];
    g[li].w_real = cur.re * in.re.transpose() + cur.im * in.im.transpose();
    g[li].w_imag = cur.im * in.re.transpose() - cur.re * in.im.transpose();
    g[li].b_real = cur.re.rowwise().sum();
    g[li].b_imag = cur.im.rowwise().sum();
    if (li == 0) break;
    ComplexBatch next;
    next.re = layer.w_real.transpose() * cur.re + layer.w_imag.transpose() * cur.im;
    next.im = layer.w_real.transpose() * cur.im - layer.w_imag.transpose() * cur.re;
    const auto& pre = cache.pre[li - 1];
    next.re = next.re.cwiseProduct((pre.re.array() > 0.0).cast<double>().matrix());
    next.im = next.im.cwiseProduct((pre.im.array() > 0.0).cast<double>().matrix());
    cur = std::move(next);
  }
  return g;
}

/// Loss and gradients on one batch of prepared inputs; labels are angle rows (regression)
/// or a single row of classes (classifier).
inline double loss_and_gradients(const Network& net, const ComplexBatch& input, const RMatrix& labels,
                                 Gradients* grads) {
  ForwardCache cache;
  const ComplexBatch out = forward_batch(net, input, grads ? &cache : nullptr);
  double loss = 0.0;
  ComplexBatch og;
  if (net.spec.head == HeadKind::regression) {
    RMatrix d;
    loss = sorted_mse_loss(out.re, labels, grads ? &d : nullptr).combined;
    if (grads) og = {std::move(d), RMatrix::Zero(out.im.rows(), out.im.cols())};
  } else {
    loss = classifier_loss(out, labels.row(0).transpose(), grads ? &og : nullptr);
  }
  if (grads) *grads = backward(net, cache, std::move(og));
  return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Gradients m, v;

  explicit AdamState(const Network& net) : m(zero_gradients(net)), v(zero_gradients(net)) {}
};

namespace detail {

template <class Fn>
void for_each_param(ComplexLinearLayer& p, ComplexLinearLayer& g, ComplexLinearLayer& m, ComplexLinearLayer& v,
                    Fn fn) {
  fn(p.w_real, g.w_real, m.w_real, v.w_real);
  fn(p.w_imag, g.w_imag, m.w_imag, v.w_imag);
  fn(p.b_real, g.b_real, m.b_real, v.b_real);
  fn(p.b_imag, g.b_imag, m.b_imag, v.b_imag);
}

}  // namespace detail

inline void adam_step(Network& net, AdamState& st, Gradients& grads, double lr) {
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    detail::for_each_param(net.layers[l], grads[l], st.m[l], st.v[l], [&](auto& p, auto& g, auto& m, auto& v) {
      m = st.beta1 * m + (1.0 - st.beta1) * g;
      v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseAbs2();
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
    });
  }
}

// ---------------------------------------------------------------------------
// Datasets and training
// ---------------------------------------------------------------------------

/// Raw snapshots (column-major N_r x N_t, one per column) with real labels.
struct Dataset {
  CMatrix inputs;         // raw_size x n
  RMatrix labels;         // n_out x n
  std::vector<double> snr_db;  // per sample, may be empty

  Eigen::Index size() const { return inputs.cols(); }

  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset d{CMatrix(inputs.rows(), static_cast<Eigen::Index>(idx.size())),
              RMatrix(labels.rows(), static_cast<Eigen::Index>(idx.size())), {}};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      d.inputs.col(static_cast<Eigen::Index>(i)) = inputs.col(idx[i]);
      d.labels.col(static_cast<Eigen::Index>(i)) = labels.col(idx[i]);
      if (!snr_db.empty()) d.snr_db.push_back(snr_db[static_cast<std::size_t>(idx[i])]);
    }
    return d;
  }
};

struct TrainConfig {
  int epochs = 300;
  double base_lr = 1e-4;
  std::vector<std::pair<int, double>> lr_drops{{200, 0.5}, {250, 0.5}};
  int batch_size = 256;
  std::vector<double> train_snrs_db{5, 10, 15, 20, 25, 30, 40};
  std::uint64_t seed = 1;

  void validate() const {
    require(epochs >= 1, Errc::invalid_argument, "epochs must be >= 1");
    require(batch_size >= 1, Errc::invalid_argument, "batch size must be >= 1");
    require(base_lr >= 0.0, Errc::invalid_argument, "learning rate must be >= 0");
    for (const auto& [e, f] : lr_drops) require(f > 0.0, Errc::invalid_argument, "lr drop factors must be > 0");
  }

  /// Halvings at 2/3 and 5/6 of the run, the same relative positions as the 300-epoch schedule.
  static std::vector<std::pair<int, double>> proportional_drops(int epochs) {
    return {{epochs * 2 / 3, 0.5}, {epochs * 5 / 6, 0.5}};
  }

  double lr_at(int epoch) const {
    double lr = base_lr;
    for (const auto& [e, f] : lr_drops)
      if (epoch >= e) lr *= f;
    return lr;
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

inline double evaluate_loss(const Network& net, const ComplexBatch& input, const RMatrix& labels) {
  if (input.samples() == 0) return 0.0;
  return loss_and_gradients(net, input, labels, nullptr);
}

namespace detail {

inline ComplexBatch take_columns(const ComplexBatch& b, std::span<const Eigen::Index> idx) {
  ComplexBatch out{RMatrix(b.re.rows(), static_cast<Eigen::Index>(idx.size())),
                   RMatrix(b.im.rows(), static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.re.col(static_cast<Eigen::Index>(i)) = b.re.col(idx[i]);
    out.im.col(static_cast<Eigen::Index>(i)) = b.im.col(idx[i]);
  }
  return out;
}

inline RMatrix take_columns(const RMatrix& m, std::span<const Eigen::Index> idx) {
  RMatrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

}  // namespace detail

/// Mini-batch Adam. Loss history is the full-set loss after every epoch (sorted MSE for
/// regression, cross-entropy for the classifier).
inline TrainHistory train(Network& net, const Dataset& train_set, const Dataset* val_set, const TrainConfig& tc) {
  tc.validate();
  require(train_set.size() > 0, Errc::invalid_argument, "training set is empty");
  require(train_set.labels.rows() == (net.spec.head == HeadKind::regression ? net.spec.n_out : 1),
          Errc::dimension_mismatch, "label rows do not match the network head");
  const ComplexBatch x = prepare_inputs(net.spec, train_set.inputs);
  std::optional<ComplexBatch> xv;
  if (val_set && val_set->size() > 0) xv = prepare_inputs(net.spec, val_set->inputs);

  AdamState adam(net);
  Rng rng = make_rng(tc.seed, 0, "nn-shuffle");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  TrainHistory hist;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = tc.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
      const auto len = std::min(order.size() - b, static_cast<std::size_t>(tc.batch_size));
      const std::span<const Eigen::Index> idx(order.data() + b, len);
      Gradients g;
      const double loss =
          loss_and_gradients(net, detail::take_columns(x, idx), detail::take_columns(train_set.labels, idx), &g);
      require(std::isfinite(loss), Errc::divergence, "non-finite loss at epoch " + std::to_string(epoch), epoch);
      adam_step(net, adam, g, lr);
    }
    const double tl = evaluate_loss(net, x, train_set.labels);
    require(std::isfinite(tl), Errc::divergence, "non-finite loss at epoch " + std::to_string(epoch), epoch);
    hist.train_loss.push_back(tl);
    if (xv) hist.val_loss.push_back(evaluate_loss(net, *xv, val_set->labels));
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Operation counts of the three-hidden-layer MLP
// ---------------------------------------------------------------------------

struct MlpOps {
  BigInt mults;
  BigInt adds;
};

inline MlpOps mlp_op_counts(const NetworkSpec& spec) {
  const int s = spec.input_size;
  require(spec.hidden == NetworkSpec::halving_widths(s), Errc::unsupported_shape,
          "operation counts are defined only for hidden widths S/2, S/4, S/8");
  const BigInt S = s, a = s / 2, b = s / 4, c = s / 8, n_out = spec.n_out;
  MlpOps ops;
  ops.mults = 4 * (S * a + a * b + b * c + 2 * c) + 2 * (S + a + b + 2 * n_out);
  ops.adds = 3 * S + 7 * (a + b) + 4 * c + 8 * n_out;
  return ops;
}

// ---------------------------------------------------------------------------
// Binary model and dataset files (little-endian)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_real_matrix(std::ostream& os, const RMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
}

inline RMatrix get_real_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  RMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_f64(is);
  return m;
}

}  // namespace detail

/// "CNN1", u32 layer count, then per layer u32 rows, u32 cols, W_r, W_i (row-major), b_r, b_i.
/// A trailer carries the head kind, input transform and array sizes.
inline void write_network(std::ostream& os, const Network& net) {
  detail::put_magic(os, "CNN1");
  detail::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_size()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.in_size()));
    detail::put_real_matrix(os, l.w_real);
    detail::put_real_matrix(os, l.w_imag);
    detail::put_real_matrix(os, l.b_real);
    detail::put_real_matrix(os, l.b_imag);
  }
  detail::put_u32(os, static_cast<std::uint32_t>(net.spec.head));
  detail::put_u32(os, static_cast<std::uint32_t>(net.spec.transform));
  detail::put_u32(os, static_cast<std::uint32_t>(net.spec.n_rx));
  detail::put_u32(os, static_cast<std::uint32_t>(net.spec.n_tx));
  require(os.good(), Errc::io_error, "failed writing model");
}

inline Network read_network(std::istream& is) {
  detail::expect_magic(is, "CNN1");
  const auto count = detail::get_u32(is);
  require(count >= 2 && count < 64, Errc::io_error, "implausible layer count in model file");
  Network net;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = detail::get_u32(is);
    const auto cols = detail::get_u32(is);
    ComplexLinearLayer l;
    l.w_real = detail::get_real_matrix(is, rows, cols);
    l.w_imag = detail::get_real_matrix(is, rows, cols);
    l.b_real = detail::get_real_matrix(is, rows, 1);
    l.b_imag = detail::get_real_matrix(is, rows, 1);
    net.layers.push_back(std::move(l));
  }
  auto& s = net.spec;
  s.head = static_cast<HeadKind>(detail::get_u32(is));
  const std::uint32_t transform = detail::get_u32(is);
  require(transform <= static_cast<std::uint32_t>(InputTransform::spectrum), Errc::io_error,
          "unknown input transform in model file");
  s.transform = static_cast<InputTransform>(transform);
  s.n_rx = static_cast<int>(detail::get_u32(is));
  s.n_tx = static_cast<int>(detail::get_u32(is));
  s.input_size = static_cast<int>(net.layers.front().in_size());
  s.hidden.clear();
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) s.hidden.push_back(static_cast<int>(net.layers[i].out_size()));
  s.n_out = static_cast<int>(net.layers.back().out_size());
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(Errc::io_error, std::string("inconsistent model file: ") + e.what());
  }
  return net;
}

inline void save_network(const std::string& path, const Network& net) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::io_error, "cannot open '" + path + "' for writing");
  write_network(os, net);
}

inline Network load_network(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::missing_model, "cannot open model file '" + path + "'");
  return read_network(is);
}

/// "DSET", u32 n_samples, u32 s_inp, u32 n_out, then per sample interleaved re/im input
/// followed by n_out real labels.
inline void write_dataset(std::ostream& os, const Dataset& d) {
  detail::put_magic(os, "DSET");
  detail::put_u32(os, static_cast<std::uint32_t>(d.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(d.inputs.rows()));
  detail::put_u32(os, static_cast<std::uint32_t>(d.labels.rows()));
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
      detail::put_f64(os, d.inputs(i, j).real());
      detail::put_f64(os, d.inputs(i, j).imag());
    }
    for (Eigen::Index i = 0; i < d.labels.rows(); ++i) detail::put_f64(os, d.labels(i, j));
  }
  require(os.good(), Errc::io_error, "failed writing dataset");
}

inline Dataset read_dataset(std::istream& is) {
  detail::expect_magic(is, "DSET");
  const auto n = detail::get_u32(is);
  const auto s = detail::get_u32(is);
  const auto o = detail::get_u32(is);
  Dataset d{CMatrix(s, n), RMatrix(o, n), {}};
  for (std::uint32_t j = 0; j < n; ++j) {
    for (std::uint32_t i = 0; i < s; ++i) {
      const double re = detail::get_f64(is);
      const double im = detail::get_f64(is);
      d.inputs(i, j) = cd(re, im);
    }
    for (std::uint32_t i = 0; i < o; ++i) d.labels(i, j) = detail::get_f64(is);
  }
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::io_error, "cannot open '" + path + "' for writing");
  write_dataset(os, d);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::io_error, "cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace bistatic
