#pragma once

// Convolutional encoder: strided 2-D conv blocks (conv -> batch norm ->
// activation) over a (mel x time) input, mean over time, then two fully
// connected layers. Forward caches what backward needs; all batches are
// channel-major matrices with columns ordered (sample, freq, time).

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/features.hpp"
#include "instrsim/nn/parameters.hpp"

namespace instrsim::nn {

struct EncoderConfig {
  int n_mels = 64;
  std::vector<int> channels{16, 32, 64, 128};
  int kernel = 3;
  int stride = 2;
  bool batch_norm = true;
  std::string activation = "relu";
  int fc_hidden = 256;
  int out_dim = 80;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  bool operator==(const EncoderConfig&) const = default;

  int pad() const { return kernel / 2; }
  int out_size(int in) const { return (in + 2 * pad() - kernel) / stride + 1; }
  int min_frames() const {
    int m = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) m *= stride;
    return m;
  }
  int final_freq() const {
    int h = n_mels;
    for (std::size_t i = 0; i < channels.size(); ++i) h = out_size(h);
    return h;
  }
  int pooled_dim() const { return channels.back() * final_freq(); }

  void validate() const {
    if (n_mels < 1 || channels.empty() || kernel < 1 || stride < 1 || fc_hidden < 1 || out_dim < 1)
      throw ParameterError("encoder dimensions must be positive");
    for (int c : channels)
      if (c < 1) throw ParameterError("channel counts must be positive");
    if (activation != "relu" && activation != "leaky_relu")
      throw ParameterError("unknown activation '" + activation + "'");
    if (final_freq() < 1) throw ParameterError("frequency axis collapses to zero");
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"n_mels", c.n_mels},   {"channels", c.channels},     {"kernel", c.kernel},
       {"stride", c.stride},   {"batch_norm", c.batch_norm}, {"activation", c.activation},
       {"fc_hidden", c.fc_hidden}, {"out_dim", c.out_dim},   {"bn_momentum", c.bn_momentum},
       {"bn_eps", c.bn_eps}};
}
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.n_mels = j.at("n_mels");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.kernel = j.at("kernel");
  c.stride = j.at("stride");
  c.batch_norm = j.at("batch_norm");
  c.activation = j.at("activation");
  c.fc_hidden = j.at("fc_hidden");
  c.out_dim = j.at("out_dim");
  c.bn_momentum = j.value("bn_momentum", 0.1);
  c.bn_eps = j.value("bn_eps", 1e-5);
}

enum class Mode { train, eval };

template <typename T>
class Encoder {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  struct LayerCache {
    int hin = 0, win = 0, hout = 0, wout = 0;
    Mat cols;   // im2col of the layer input
    Mat xhat;   // normalized pre-activation (batch norm only)
    Vec invstd;
    Mat act;    // post-activation output
  };

  struct Tape {
    int batch = 0;
    std::vector<LayerCache> layers;
    Mat pooled;  // pooled_dim x N
    Mat z1;      // fc_hidden x N, pre-activation
    Mat a1;
  };

  Encoder() = default;
  explicit Encoder(EncoderConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layout();
    initialize(seed);
  }

  const EncoderConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& buffers() { return buffers_; }
  const ParameterSet<T>& buffers() const { return buffers_; }
  int out_dim() const { return cfg_.out_dim; }

  /// Fan-in scaled uniform initialization.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](const std::string& name, double bound) {
      const auto& t = params_.info(name);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < t.size; ++i) params_.values[t.offset + i] = static_cast<T>(u(rng));
    };
    int cin = 1;
    for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
      const double fan_in = cin * cfg_.kernel * cfg_.kernel;
      fill(conv_name(l), std::sqrt(6.0 / fan_in));
      if (cfg_.batch_norm) {
        std::fill_n(params_.data(gamma_name(l)), cfg_.channels[l], T(1));
        std::fill_n(buffers_.data(var_name(l)), cfg_.channels[l], T(1));
      }
      cin = cfg_.channels[l];
    }
    fill("fc1.weight", std::sqrt(6.0 / cfg_.pooled_dim()));
    fill("fc2.weight", std::sqrt(3.0 / cfg_.fc_hidden));
  }

  /// Forward pass over equally shaped inputs. Returns out_dim x N.
  Mat forward(std::span<const MelSegment* const> batch, Mode mode, Tape* tape = nullptr) {
    if (batch.empty()) throw ShapeError("empty batch");
    const int n = static_cast<int>(batch.size());
    const int h0 = batch[0]->n_mels, w0 = batch[0]->n_frames;
    if (h0 != cfg_.n_mels)
      throw ShapeError("input has " + std::to_string(h0) + " mel bands, encoder expects " +
                       std::to_string(cfg_.n_mels));
    if (w0 < cfg_.min_frames())
      throw ShapeError("input has " + std::to_string(w0) + " frames, stride stack needs >= " +
                       std::to_string(cfg_.min_frames()));
    Mat x(1, static_cast<Eigen::Index>(n) * h0 * w0);
    for (int i = 0; i < n; ++i) {
      if (batch[static_cast<std::size_t>(i)]->n_mels != h0 || batch[static_cast<std::size_t>(i)]->n_frames != w0)
        throw ShapeError("batch inputs differ in shape");
      const auto& d = batch[static_cast<std::size_t>(i)]->data;
      for (std::size_t k = 0; k < d.size(); ++k)
        x(0, static_cast<Eigen::Index>(static_cast<std::size_t>(i) * d.size() + k)) = static_cast<T>(d[k]);
    }
    if (tape) {
      tape->batch = n;
      tape->layers.assign(cfg_.channels.size(), {});
    }
    int h = h0, w = w0, cin = 1;
    LayerCache scratch;
    for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
      LayerCache& lc = tape ? tape->layers[l] : scratch;
      const int cout = cfg_.channels[l];
      lc.hin = h;
      lc.win = w;
      lc.hout = cfg_.out_size(h);
      lc.wout = cfg_.out_size(w);
      im2col(x, n, cin, h, w, lc.hout, lc.wout, lc.cols);
      CMapMat wt(params_.data(conv_name(l)), cout, static_cast<Eigen::Index>(cin) * cfg_.kernel * cfg_.kernel);
      Mat z = wt * lc.cols;
      if (cfg_.batch_norm) {
        batch_norm_forward(l, z, mode, lc);
      } else {
        Eigen::Map<const Vec> b(params_.data(bias_name(l)), cout);
        z.colwise() += b;
      }
      activate(z);
      h = lc.hout;
      w = lc.wout;
      cin = cout;
      if (tape) lc.act = z;
      x = std::move(z);
    }
    // mean over time -> (C*H) x N
    const int feat = cin * h;
    Mat pooled = Mat::Zero(feat, n);
    const T inv_w = T(1) / static_cast<T>(w);
    for (int c = 0; c < cin; ++c)
      for (int s = 0; s < n; ++s)
        for (int f = 0; f < h; ++f) {
          const auto base = (static_cast<Eigen::Index>(s) * h + f) * w;
          pooled(c * h + f, s) = x.row(c).segment(base, w).sum() * inv_w;
        }
    CMapMat w1(params_.data("fc1.weight"), cfg_.fc_hidden, feat);
    Eigen::Map<const Vec> b1(params_.data("fc1.bias"), cfg_.fc_hidden);
    Mat z1 = w1 * pooled;
    z1.colwise() += b1;
    Mat a1 = z1;
    activate(a1);
    CMapMat w2(params_.data("fc2.weight"), cfg_.out_dim, cfg_.fc_hidden);
    Eigen::Map<const Vec> b2(params_.data("fc2.bias"), cfg_.out_dim);
    Mat out = w2 * a1;
    out.colwise() += b2;
    if (tape) {
      tape->pooled = std::move(pooled);
      tape->z1 = std::move(z1);
      tape->a1 = std::move(a1);
    }
    return out;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, const Mat& d_out, std::vector<T>& grad) const {
    if (grad.size() != params_.size()) grad.assign(params_.size(), T(0));
    const int n = tape.batch;
    if (d_out.rows() != cfg_.out_dim || d_out.cols() != n) throw ShapeError("gradient shape mismatch");
    auto gmat = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
      return MapMat(grad.data() + params_.info(name).offset, r, c);
    };
    auto gvec = [&](const std::string& name, Eigen::Index r) {
      return Eigen::Map<Vec>(grad.data() + params_.info(name).offset, r);
    };
    const int feat = cfg_.pooled_dim();
    gmat("fc2.weight", cfg_.out_dim, cfg_.fc_hidden).noalias() += d_out * tape.a1.transpose();
    gvec("fc2.bias", cfg_.out_dim) += d_out.rowwise().sum();
    CMapMat w2(params_.data("fc2.weight"), cfg_.out_dim, cfg_.fc_hidden);
    Mat dz1 = w2.transpose() * d_out;
    activation_backward(tape.a1, dz1);
    gmat("fc1.weight", cfg_.fc_hidden, feat).noalias() += dz1 * tape.pooled.transpose();
    gvec("fc1.bias", cfg_.fc_hidden) += dz1.rowwise().sum();
    CMapMat w1(params_.data("fc1.weight"), cfg_.fc_hidden, feat);
    Mat dpooled = w1.transpose() * dz1;

    const std::size_t L = cfg_.channels.size();
    const auto& last = tape.layers[L - 1];
    const int cl = cfg_.channels[L - 1], h = last.hout, w = last.wout;
    Mat dx(cl, static_cast<Eigen::Index>(n) * h * w);
    const T inv_w = T(1) / static_cast<T>(w);
    for (int c = 0; c < cl; ++c)
      for (int s = 0; s < n; ++s)
        for (int f = 0; f < h; ++f) {
          const auto base = (static_cast<Eigen::Index>(s) * h + f) * w;
          dx.row(c).segment(base, w).setConstant(dpooled(c * h + f, s) * inv_w);
        }

    for (std::size_t li = L; li-- > 0;) {
      const auto& lc = tape.layers[li];
      const int cout = cfg_.channels[li];
      const int cin = li == 0 ? 1 : cfg_.channels[li - 1];
      const Eigen::Index kdim = static_cast<Eigen::Index>(cin) * cfg_.kernel * cfg_.kernel;
      activation_backward(lc.act, dx);
      if (cfg_.batch_norm) {
        batch_norm_backward(li, lc, dx, grad);
      } else {
        gvec(bias_name(li), cout) += dx.rowwise().sum();
      }
      gmat(conv_name(li), cout, kdim).noalias() += dx * lc.cols.transpose();
      if (li == 0) break;
      CMapMat wt(params_.data(conv_name(li)), cout, kdim);
      Mat dcols = wt.transpose() * dx;
      Mat dprev;
      col2im(dcols, n, cin, lc.hin, lc.win, lc.hout, lc.wout, dprev);
      dx = std::move(dprev);
    }
  }

  /// Encodes segments one shape-group at a time in eval mode.
  std::vector<std::vector<float>> encode_all(const std::vector<const MelSegment*>& mels,
                                             std::size_t chunk = 32) {
    std::vector<std::vector<float>> out(mels.size());
    std::size_t i = 0;
    while (i < mels.size()) {
      std::size_t j = i;
      while (j < mels.size() && j - i < chunk && mels[j]->n_frames == mels[i]->n_frames) ++j;
      Mat e = forward(std::span<const MelSegment* const>(mels.data() + i, j - i), Mode::eval);
      for (std::size_t k = i; k < j; ++k) {
        out[k].resize(static_cast<std::size_t>(cfg_.out_dim));
        for (int d = 0; d < cfg_.out_dim; ++d)
          out[k][static_cast<std::size_t>(d)] = static_cast<float>(e(d, static_cast<Eigen::Index>(k - i)));
      }
      i = j;
    }
    return out;
  }

  std::vector<float> encode(const MelSegment& mel) {
    const MelSegment* p = &mel;
    return encode_all({p}).front();
  }

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> e;
    e.cfg_ = cfg_;
    e.params_ = params_.template cast<U>();
    e.buffers_ = buffers_.template cast<U>();
    return e;
  }

 private:
  template <typename>
  friend class Encoder;

  static std::string conv_name(std::size_t l) { return "conv" + std::to_string(l) + ".weight"; }
  static std::string bias_name(std::size_t l) { return "conv" + std::to_string(l) + ".bias"; }
  static std::string gamma_name(std::size_t l) { return "bn" + std::to_string(l) + ".gamma"; }
  static std::string beta_name(std::size_t l) { return "bn" + std::to_string(l) + ".beta"; }
  static std::string mean_name(std::size_t l) { return "bn" + std::to_string(l) + ".running_mean"; }
  static std::string var_name(std::size_t l) { return "bn" + std::to_string(l) + ".running_var"; }

  void build_layout() {
    int cin = 1;
    for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
      const int cout = cfg_.channels[l];
      params_.add(conv_name(l), {cout, cin, cfg_.kernel, cfg_.kernel});
      if (cfg_.batch_norm) {
        params_.add(gamma_name(l), {cout});
        params_.add(beta_name(l), {cout});
        buffers_.add(mean_name(l), {cout});
        buffers_.add(var_name(l), {cout});
      } else {
        params_.add(bias_name(l), {cout});
      }
      cin = cout;
    }
    params_.add("fc1.weight", {cfg_.fc_hidden, cfg_.pooled_dim()});
    params_.add("fc1.bias", {cfg_.fc_hidden});
    params_.add("fc2.weight", {cfg_.out_dim, cfg_.fc_hidden});
    params_.add("fc2.bias", {cfg_.out_dim});
  }

  T slope() const { return cfg_.activation == "leaky_relu" ? T(0.01) : T(0); }

  void activate(Mat& z) const {
    const T a = slope();
    z = z.unaryExpr([a](T v) { return v > T(0) ? v : a * v; });
  }

  // Uses the post-activation sign, which matches the pre-activation sign for
  // both supported activations.
  void activation_backward(const Mat& act, Mat& d) const {
    const T a = slope();
    d = d.binaryExpr(act, [a](T g, T v) { return v > T(0) ? g : a * g; });
  }

  void im2col(const Mat& x, int n, int cin, int h, int w, int ho, int wo, Mat& cols) const {
    const int k = cfg_.kernel, s = cfg_.stride, p = cfg_.pad();
    cols.setZero(static_cast<Eigen::Index>(cin) * k * k, static_cast<Eigen::Index>(n) * ho * wo);
    for (int c = 0; c < cin; ++c)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T* row = cols.row((c * k + kh) * k + kw).data();
          const T* src = x.row(c).data();
          for (int b = 0; b < n; ++b)
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * s - p + kh;
              if (ih < 0 || ih >= h) continue;
              const T* srow = src + (static_cast<std::ptrdiff_t>(b) * h + ih) * w;
              T* drow = row + (static_cast<std::ptrdiff_t>(b) * ho + oh) * wo;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * s - p + kw;
                if (iw >= 0 && iw < w) drow[ow] = srow[iw];
              }
            }
        }
  }

  void col2im(const Mat& cols, int n, int cin, int h, int w, int ho, int wo, Mat& x) const {
    const int k = cfg_.kernel, s = cfg_.stride, p = cfg_.pad();
    x.setZero(cin, static_cast<Eigen::Index>(n) * h * w);
    for (int c = 0; c < cin; ++c)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          const T* row = cols.row((c * k + kh) * k + kw).data();
          T* dst = x.row(c).data();
          for (int b = 0; b < n; ++b)
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * s - p + kh;
              if (ih < 0 || ih >= h) continue;
              T* drow = dst + (static_cast<std::ptrdiff_t>(b) * h + ih) * w;
              const T* srow = row + (static_cast<std::ptrdiff_t>(b) * ho + oh) * wo;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * s - p + kw;
                if (iw >= 0 && iw < w) drow[iw] += srow[ow];
              }
            }
        }
  }

  void batch_norm_forward(std::size_t l, Mat& z, Mode mode, LayerCache& lc) {
    const int c = static_cast<int>(z.rows());
    const Eigen::Index m = z.cols();
    Eigen::Map<const Vec> gamma(params_.data(gamma_name(l)), c), beta(params_.data(beta_name(l)), c);
    Eigen::Map<Vec> rmean(buffers_.data(mean_name(l)), c), rvar(buffers_.data(var_name(l)), c);
    const T eps = static_cast<T>(cfg_.bn_eps);
    if (mode == Mode::eval) {
      for (int i = 0; i < c; ++i) {
        const T inv = T(1) / std::sqrt(rvar(i) + eps);
        z.row(i) = ((z.row(i).array() - rmean(i)) * (inv * gamma(i)) + beta(i)).matrix();
      }
      return;
    }
    lc.invstd.resize(c);
    lc.xhat.resize(c, m);
    const T mom = static_cast<T>(cfg_.bn_momentum);
    for (int i = 0; i < c; ++i) {
      const T mean = z.row(i).mean();
      const T var = (z.row(i).array() - mean).square().mean();
      const T inv = T(1) / std::sqrt(var + eps);
      lc.invstd(i) = inv;
      lc.xhat.row(i) = (z.row(i).array() - mean) * inv;
      z.row(i) = (lc.xhat.row(i).array() * gamma(i) + beta(i)).matrix();
      const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
      rmean(i) = (T(1) - mom) * rmean(i) + mom * mean;
      rvar(i) = (T(1) - mom) * rvar(i) + mom * unbiased;
    }
  }

  void batch_norm_backward(std::size_t l, const LayerCache& lc, Mat& d, std::vector<T>& grad) const {
    const int c = static_cast<int>(d.rows());
    const T m = static_cast<T>(d.cols());
    Eigen::Map<const Vec> gamma(params_.data(gamma_name(l)), c);
    T* dgamma = grad.data() + params_.info(gamma_name(l)).offset;
    T* dbeta = grad.data() + params_.info(beta_name(l)).offset;
    for (int i = 0; i < c; ++i) {
      const T sg = (d.row(i).array() * lc.xhat.row(i).array()).sum();
      const T sb = d.row(i).sum();
      dgamma[i] += sg;
      dbeta[i] += sb;
      d.row(i) = ((d.row(i).array() * m - sb - lc.xhat.row(i).array() * sg) * (gamma(i) * lc.invstd(i) / m)).matrix();
    }
  }

  EncoderConfig cfg_;
  ParameterSet<T> params_;
  ParameterSet<T> buffers_;
};

}  // namespace instrsim::nn
