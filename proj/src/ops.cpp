#include "dunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dunet {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[' << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << ']';
  return os.str();
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "' (expected relu|sigmoid)");
}

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

struct ConvGeometry {
  Index cin, h, w, kh, kw, stride, pad, dil, ho, wo;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// cols(k, p) with k = (ci, ky, kx), p = (oy, ox).
template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.patch(), g.pixels());
  for (Index ci = 0; ci < g.cin; ++ci) {
    const Scalar* plane = img + ci * g.h * g.w;
    for (Index ky = 0; ky < g.kh; ++ky) {
      for (Index kx = 0; kx < g.kw; ++kx) {
        Scalar* row = cols.data() + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky * g.dil;
          Scalar* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, Scalar(0));
            continue;
          }
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx * g.dil;
            out[ox] = (ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* img) {
  for (Index ci = 0; ci < g.cin; ++ci) {
    Scalar* plane = img + ci * g.h * g.w;
    for (Index ky = 0; ky < g.kh; ++ky) {
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Scalar* row = cols.data() + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          const Scalar* in = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void check_channel_vector(const Tensor<Scalar>& t, Index channels, const char* what) {
  if (t.shape() != Shape{1, channels, 1, 1}) {
    throw ShapeError(std::string(what) + " must have shape " + to_string({1, channels, 1, 1}) + ", got " +
                     to_string(t.shape()));
  }
}

// Broadcast rule shared by mul and add: equal shapes, or b has C = 1.
template <typename Scalar>
bool broadcast_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (b.c() == 1 && a.n() == b.n() && a.h() == b.h() && a.w() == b.w()) return true;
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride, Index padding, Index dilation) {
  if (stride < 1 || dilation < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1 and padding >= 0");
  }
  const Index cout = weight.n();
  if (weight.c() != input.c()) {
    throw ShapeError("conv2d: input has " + std::to_string(input.c()) + " channels, weight expects " +
                     std::to_string(weight.c()));
  }
  const bool has_bias = !bias.empty();
  if (has_bias) check_channel_vector(bias, cout, "conv2d bias");
  ConvGeometry g{input.c(), input.h(), input.w(), weight.h(), weight.w(), stride, padding, dilation, 0, 0};
  g.ho = (g.h + 2 * padding - dilation * (g.kh - 1) - 1) / stride + 1;
  g.wo = (g.w + 2 * padding - dilation * (g.kw - 1) - 1) / stride + 1;
  if (g.h + 2 * padding - dilation * (g.kh - 1) - 1 < 0 || g.w + 2 * padding - dilation * (g.kw - 1) - 1 < 0 ||
      g.ho <= 0 || g.wo <= 0) {
    throw ShapeError("conv2d: non-positive output size for input " + to_string(input.shape()) + " and kernel " +
                     to_string(weight.shape()));
  }

  const Index batch = input.n();
  Tensor<Scalar> out({batch, cout, g.ho, g.wo});
  ConstRowMap<Scalar> wmat(weight.data(), cout, g.patch());
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < batch; ++n) {
    const Scalar* img = input.data() + n * g.cin * g.h * g.w;
    RowMap<Scalar> y(out.data() + n * cout * g.pixels(), cout, g.pixels());
    if (g.pointwise()) {
      y.noalias() = wmat * ConstRowMap<Scalar>(img, g.cin, g.pixels());
    } else {
      im2col(img, g, cols);
      y.noalias() = wmat * cols;
    }
    if (has_bias) {
      y.colwise() += Eigen::Map<const Vector<Scalar>>(bias.data(), cout);
    }
  }

  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input, &weight, &bias})) {
    auto xin = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    tape.record("conv2d", {input, weight, bias}, out, [xin, wn, bn, g, batch, cout, has_bias](const Vector<Scalar>& dy) {
      ConstRowMap<Scalar> wmat(wn->value.data(), cout, g.patch());
      RowMatrix<Scalar> cols;
      RowMatrix<Scalar> dcols;
      for (Index n = 0; n < batch; ++n) {
        const Scalar* img = xin->value.data() + n * g.cin * g.h * g.w;
        ConstRowMap<Scalar> dyn(dy.data() + n * cout * g.pixels(), cout, g.pixels());
        if (has_bias) {
          accumulate_if(bn, [&](Vector<Scalar>& gb) { gb += dyn.rowwise().sum(); });
        }
        accumulate_if(wn, [&](Vector<Scalar>& gw) {
          RowMap<Scalar> dw(gw.data(), cout, g.patch());
          if (g.pointwise()) {
            dw.noalias() += dyn * ConstRowMap<Scalar>(img, g.cin, g.pixels()).transpose();
          } else {
            im2col(img, g, cols);
            dw.noalias() += dyn * cols.transpose();
          }
        });
        accumulate_if(xin, [&](Vector<Scalar>& gx) {
          Scalar* dimg = gx.data() + n * g.cin * g.h * g.w;
          if (g.pointwise()) {
            RowMap<Scalar>(dimg, g.cin, g.pixels()).noalias() += wmat.transpose() * dyn;
          } else {
            dcols.noalias() = wmat.transpose() * dyn;
            col2im_add(dcols, g, dimg);
          }
        });
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2x2(const Tensor<Scalar>& input) {
  if (input.h() % 2 != 0 || input.w() % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dims must be even, got " + to_string(input.shape()));
  }
  const Index planes = input.n() * input.c();
  const Index h = input.h(), w = input.w(), ho = h / 2, wo = w / 2;
  Tensor<Scalar> out({input.n(), input.c(), ho, wo});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* x = input.data();
  Scalar* y = out.data();
  for (Index p = 0; p < planes; ++p) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index base = p * h * w + 2 * oy * w + 2 * ox;
        Index best = base;
        for (Index cand : {base + 1, base + w, base + w + 1}) {
          if (x[cand] > x[best]) best = cand;
        }
        const Index o = (p * ho + oy) * wo + ox;
        y[o] = x[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("maxpool2x2", {input}, out, [xin, argmax = std::move(argmax)](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& gx) {
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += dy[static_cast<Index>(i)];
      });
    });
  }
  return out;
}

namespace {

struct Taps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

Taps half_pixel_taps(Index in, Index out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = hi;
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& input, Index out_h, Index out_w) {
  if (input.h() < 1 || input.w() < 1 || out_h < 1 || out_w < 1) {
    throw ShapeError("resize_bilinear: empty spatial dims in " + to_string(input.shape()));
  }
  const Index planes = input.n() * input.c();
  const Index h = input.h(), w = input.w();
  Taps ty = half_pixel_taps(h, out_h);
  Taps tx = half_pixel_taps(w, out_w);
  Tensor<Scalar> out({input.n(), input.c(), out_h, out_w});
  const Scalar* x = input.data();
  Scalar* y = out.data();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* plane = x + p * h * w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const auto ky = static_cast<std::size_t>(oy);
      const Scalar fy = static_cast<Scalar>(ty.frac[ky]);
      const Scalar* r0 = plane + ty.lo[ky] * w;
      const Scalar* r1 = plane + ty.hi[ky] * w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const auto kx = static_cast<std::size_t>(ox);
        const Scalar fx = static_cast<Scalar>(tx.frac[kx]);
        const Scalar top = (Scalar(1) - fx) * r0[tx.lo[kx]] + fx * r0[tx.hi[kx]];
        const Scalar bot = (Scalar(1) - fx) * r1[tx.lo[kx]] + fx * r1[tx.hi[kx]];
        y[(p * out_h + oy) * out_w + ox] = (Scalar(1) - fy) * top + fy * bot;
      }
    }
  }
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("resize_bilinear", {input}, out,
                [xin, ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h, out_w](const Vector<Scalar>& dy) {
                  accumulate_if(xin, [&](Vector<Scalar>& gx) {
                    for (Index p = 0; p < planes; ++p) {
                      Scalar* plane = gx.data() + p * h * w;
                      for (Index oy = 0; oy < out_h; ++oy) {
                        const auto ky = static_cast<std::size_t>(oy);
                        const Scalar fy = static_cast<Scalar>(ty.frac[ky]);
                        Scalar* r0 = plane + ty.lo[ky] * w;
                        Scalar* r1 = plane + ty.hi[ky] * w;
                        for (Index ox = 0; ox < out_w; ++ox) {
                          const auto kx = static_cast<std::size_t>(ox);
                          const Scalar fx = static_cast<Scalar>(tx.frac[kx]);
                          const Scalar g = dy[(p * out_h + oy) * out_w + ox];
                          r0[tx.lo[kx]] += (Scalar(1) - fy) * (Scalar(1) - fx) * g;
                          r0[tx.hi[kx]] += (Scalar(1) - fy) * fx * g;
                          r1[tx.lo[kx]] += fy * (Scalar(1) - fx) * g;
                          r1[tx.hi[kx]] += fy * fx * g;
                        }
                      }
                    }
                  });
                });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape());
  out.values() = input.values().cwiseMax(Scalar(0));
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("relu", {input}, out, [xin](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& gx) {
        gx.array() += (xin->value.array() > Scalar(0)).select(dy.array(), Scalar(0));
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape());
  out.values() = input.values().unaryExpr([](Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    auto yn = out.node();
    // Holding the output node is safe: nodes never reference the tape.
    tape.record("sigmoid", {input}, out, [xin, yn](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& gx) {
        gx.array() += dy.array() * yn->value.array() * (Scalar(1) - yn->value.array());
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           BatchNormState<Scalar>& state, Mode mode, BatchNormOptions options) {
  const Index n = input.n(), c = input.c(), hw = input.h() * input.w();
  check_channel_vector(gamma, c, "batchnorm gamma");
  check_channel_vector(beta, c, "batchnorm beta");
  check_channel_vector(state.running_mean, c, "batchnorm running mean");
  check_channel_vector(state.running_var, c, "batchnorm running var");
  const Index count = n * hw;
  if (count == 0) throw ShapeError("batchnorm2d: empty input");
  const auto eps = static_cast<Scalar>(options.eps);
  const auto mom = static_cast<Scalar>(options.momentum);

  Vector<Scalar> mu(c), inv_std(c);
  if (mode == Mode::train) {
    for (Index ch = 0; ch < c; ++ch) {
      Scalar s = 0;
      for (Index b = 0; b < n; ++b) {
        s += Eigen::Map<const Vector<Scalar>>(input.data() + (b * c + ch) * hw, hw).sum();
      }
      const Scalar m = s / static_cast<Scalar>(count);
      Scalar v = 0;
      for (Index b = 0; b < n; ++b) {
        v += (Eigen::Map<const Vector<Scalar>>(input.data() + (b * c + ch) * hw, hw).array() - m).square().sum();
      }
      v /= static_cast<Scalar>(count);
      mu[ch] = m;
      inv_std[ch] = Scalar(1) / std::sqrt(v + eps);
      state.running_mean.data()[ch] = mom * state.running_mean.data()[ch] + (Scalar(1) - mom) * m;
      state.running_var.data()[ch] = mom * state.running_var.data()[ch] + (Scalar(1) - mom) * v;
    }
  } else {
    for (Index ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean.data()[ch];
      inv_std[ch] = Scalar(1) / std::sqrt(state.running_var.data()[ch] + eps);
    }
  }

  Tensor<Scalar> out(input.shape());
  Vector<Scalar> xhat(input.size());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * hw;
      auto xh = xhat.segment(off, hw);
      xh = (Eigen::Map<const Vector<Scalar>>(input.data() + off, hw).array() - mu[ch]) * inv_std[ch];
      Eigen::Map<Vector<Scalar>>(out.data() + off, hw) =
          (xh.array() * gamma.data()[ch] + beta.data()[ch]).matrix();
    }
  }

  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input, &gamma, &beta})) {
    auto xin = input.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    const bool train = mode == Mode::train;
    tape.record("batchnorm2d", {input, gamma, beta}, out,
                [xin, gn, bn, xhat = std::move(xhat), inv_std, n, c, hw, count, train](const Vector<Scalar>& dy) {
                  Vector<Scalar> sum_dy = Vector<Scalar>::Zero(c), sum_dy_xhat = Vector<Scalar>::Zero(c);
                  for (Index b = 0; b < n; ++b) {
                    for (Index ch = 0; ch < c; ++ch) {
                      const Index off = (b * c + ch) * hw;
                      sum_dy[ch] += dy.segment(off, hw).sum();
                      sum_dy_xhat[ch] += dy.segment(off, hw).dot(xhat.segment(off, hw));
                    }
                  }
                  accumulate_if(gn, [&](Vector<Scalar>& g) { g += sum_dy_xhat; });
                  accumulate_if(bn, [&](Vector<Scalar>& g) { g += sum_dy; });
                  accumulate_if(xin, [&](Vector<Scalar>& gx) {
                    const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
                    for (Index b = 0; b < n; ++b) {
                      for (Index ch = 0; ch < c; ++ch) {
                        const Index off = (b * c + ch) * hw;
                        const Scalar k = gn->value[ch] * inv_std[ch];
                        if (train) {
                          gx.segment(off, hw).array() +=
                              k * (dy.segment(off, hw).array() - sum_dy[ch] * inv_count -
                                   xhat.segment(off, hw).array() * sum_dy_xhat[ch] * inv_count);
                        } else {
                          gx.segment(off, hw) += k * dy.segment(off, hw);
                        }
                      }
                    }
                  });
                });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  const Index planes = input.n() * input.c(), hw = input.h() * input.w();
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial dims");
  Tensor<Scalar> out({input.n(), input.c(), 1, 1});
  ConstRowMap<Scalar> x(input.data(), planes, hw);
  out.values() = x.rowwise().sum() / static_cast<Scalar>(hw);
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("global_avg_pool", {input}, out, [xin, planes, hw](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& gx) {
        RowMap<Scalar>(gx.data(), planes, hw).colwise() += dy / static_cast<Scalar>(hw);
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  if (input.h() != 1 || input.w() != 1) {
    throw ShapeError("dense: input must be (N, C, 1, 1), got " + to_string(input.shape()));
  }
  if (weight.h() != 1 || weight.w() != 1 || weight.c() != input.c()) {
    throw ShapeError("dense: weight " + to_string(weight.shape()) + " does not accept input " +
                     to_string(input.shape()));
  }
  const Index n = input.n(), cin = input.c(), cout = weight.n();
  check_channel_vector(bias, cout, "dense bias");
  Tensor<Scalar> out({n, cout, 1, 1});
  ConstRowMap<Scalar> x(input.data(), n, cin);
  ConstRowMap<Scalar> wmat(weight.data(), cout, cin);
  RowMap<Scalar> y(out.data(), n, cout);
  y.noalias() = x * wmat.transpose();
  y.rowwise() += Eigen::Map<const Vector<Scalar>>(bias.data(), cout).transpose();
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input, &weight, &bias})) {
    auto xin = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    tape.record("dense", {input, weight, bias}, out, [xin, wn, bn, n, cin, cout](const Vector<Scalar>& dy) {
      ConstRowMap<Scalar> g(dy.data(), n, cout);
      accumulate_if(bn, [&](Vector<Scalar>& gb) { gb += g.colwise().sum().transpose(); });
      accumulate_if(wn, [&](Vector<Scalar>& gw) {
        RowMap<Scalar>(gw.data(), cout, cin).noalias() += g.transpose() * ConstRowMap<Scalar>(xin->value.data(), n, cin);
      });
      accumulate_if(xin, [&](Vector<Scalar>& gx) {
        RowMap<Scalar>(gx.data(), n, cin).noalias() += g * ConstRowMap<Scalar>(wn->value.data(), cout, cin);
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const bool bcast = broadcast_channels(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  const Index n = a.n(), c = a.c(), hw = a.h() * a.w();
  if (!bcast) {
    out.values() = a.values().cwiseProduct(b.values());
  } else {
    for (Index i = 0; i < n; ++i) {
      ConstRowMap<Scalar> av(a.data() + i * c * hw, c, hw);
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bv(b.data() + i * hw, hw);
      RowMap<Scalar>(out.data() + i * c * hw, c, hw) = av.array().rowwise() * bv.array();
    }
  }
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    tape.record("mul", {a, b}, out, [an, bn, bcast, n, c, hw](const Vector<Scalar>& dy) {
      if (!bcast) {
        accumulate_if(an, [&](Vector<Scalar>& g) { g += dy.cwiseProduct(bn->value); });
        accumulate_if(bn, [&](Vector<Scalar>& g) { g += dy.cwiseProduct(an->value); });
        return;
      }
      for (Index i = 0; i < n; ++i) {
        ConstRowMap<Scalar> dyi(dy.data() + i * c * hw, c, hw);
        Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bv(bn->value.data() + i * hw, hw);
        accumulate_if(an, [&](Vector<Scalar>& g) {
          RowMap<Scalar>(g.data() + i * c * hw, c, hw).array() += dyi.array().rowwise() * bv.array();
        });
        accumulate_if(bn, [&](Vector<Scalar>& g) {
          ConstRowMap<Scalar> ai(an->value.data() + i * c * hw, c, hw);
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.data() + i * hw, hw) +=
              dyi.cwiseProduct(ai).colwise().sum();
        });
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const bool bcast = broadcast_channels(a, b, "add");
  Tensor<Scalar> out(a.shape());
  const Index n = a.n(), c = a.c(), hw = a.h() * a.w();
  if (!bcast) {
    out.values() = a.values() + b.values();
  } else {
    for (Index i = 0; i < n; ++i) {
      ConstRowMap<Scalar> av(a.data() + i * c * hw, c, hw);
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bv(b.data() + i * hw, hw);
      RowMap<Scalar>(out.data() + i * c * hw, c, hw) = av.rowwise() + bv;
    }
  }
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    tape.record("add", {a, b}, out, [an, bn, bcast, n, c, hw](const Vector<Scalar>& dy) {
      accumulate_if(an, [&](Vector<Scalar>& g) { g += dy; });
      if (!bcast) {
        accumulate_if(bn, [&](Vector<Scalar>& g) { g += dy; });
        return;
      }
      accumulate_if(bn, [&](Vector<Scalar>& g) {
        for (Index i = 0; i < n; ++i) {
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.data() + i * hw, hw) +=
              ConstRowMap<Scalar>(dy.data() + i * c * hw, c, hw).colwise().sum();
        }
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& scale) {
  if (scale.shape() != Shape{x.n(), x.c(), 1, 1}) {
    throw ShapeError("scale_channels: scale " + to_string(scale.shape()) + " does not match " + to_string(x.shape()));
  }
  const Index planes = x.n() * x.c(), hw = x.h() * x.w();
  Tensor<Scalar> out(x.shape());
  RowMap<Scalar>(out.data(), planes, hw) =
      Eigen::Map<const Vector<Scalar>>(scale.data(), planes).asDiagonal() * ConstRowMap<Scalar>(x.data(), planes, hw);
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&x, &scale})) {
    auto xn = x.node();
    auto sn = scale.node();
    tape.record("scale_channels", {x, scale}, out, [xn, sn, planes, hw](const Vector<Scalar>& dy) {
      ConstRowMap<Scalar> g(dy.data(), planes, hw);
      accumulate_if(xn, [&](Vector<Scalar>& gx) {
        RowMap<Scalar>(gx.data(), planes, hw) += sn->value.asDiagonal() * g;
      });
      accumulate_if(sn, [&](Vector<Scalar>& gs) {
        gs += g.cwiseProduct(ConstRowMap<Scalar>(xn->value.data(), planes, hw)).rowwise().sum();
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Index n = parts[0].n(), h = parts[0].h(), w = parts[0].w(), hw = h * w;
  Index c = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.n() != n || p.h() != h || p.w() != w) {
      throw ShapeError("concat_channels: " + to_string(p.shape()) + " does not match " + to_string(parts[0].shape()));
    }
    widths.push_back(p.c());
    c += p.c();
  }
  Tensor<Scalar> out({n, c, h, w});
  for (Index b = 0; b < n; ++b) {
    Index off = 0;
    for (const auto& p : parts) {
      const Index len = p.c() * hw;
      std::copy_n(p.data() + b * len, len, out.data() + (b * c) * hw + off);
      off += len;
    }
  }
  auto& tape = Tape<Scalar>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    std::vector<std::shared_ptr<detail::TensorNode<Scalar>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    std::vector<Tensor<Scalar>> inputs(parts.begin(), parts.end());
    tape.record("concat_channels", std::move(inputs), out, [nodes, widths, n, c, hw](const Vector<Scalar>& dy) {
      Index first = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Index len = widths[k] * hw;
        accumulate_if(nodes[k], [&](Vector<Scalar>& g) {
          for (Index b = 0; b < n; ++b) g.segment(b * len, len) += dy.segment(b * c * hw + first, len);
        });
        first += len;
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input) {
  Tensor<Scalar> out({1, 1, 1, 1});
  out.values()[0] = input.values().sum();
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("sum", {input}, out, [xin](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& g) { g.array() += dy[0]; });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& input, Scalar factor) {
  Tensor<Scalar> out(input.shape());
  out.values() = input.values() * factor;
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&input})) {
    auto xin = input.node();
    tape.record("scale", {input}, out, [xin, factor](const Vector<Scalar>& dy) {
      accumulate_if(xin, [&](Vector<Scalar>& g) { g += dy * factor; });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input) {
  if (input.empty()) throw ShapeError("mean of empty tensor");
  return scale(sum(input), Scalar(1) / static_cast<Scalar>(input.size()));
}

#define DUNET_INSTANTIATE_OPS(S)                                                                                  \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index, Index);           \
  template Tensor<S> maxpool2x2(const Tensor<S>&);                                                                \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                                             \
  template Tensor<S> relu(const Tensor<S>&);                                                                      \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                                   \
  template Tensor<S> batchnorm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, BatchNormState<S>&, Mode,  \
                                 BatchNormOptions);                                                               \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                                           \
  template Tensor<S> dense(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                     \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                     \
  template Tensor<S> scale_channels(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> concat_channels(std::span<const Tensor<S>>);                                                 \
  template Tensor<S> sum(const Tensor<S>&);                                                                       \
  template Tensor<S> mean(const Tensor<S>&);                                                                      \
  template Tensor<S> scale(const Tensor<S>&, S);

DUNET_INSTANTIATE_OPS(float)
DUNET_INSTANTIATE_OPS(double)

}  // namespace dunet
