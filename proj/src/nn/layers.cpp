#include "veil/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "veil/errors.hpp"

namespace veil::nn {

namespace {

using Mat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

// Gathers K*K patches of `src` [B,C,SH,SW] over a GHxGW grid into
// col [C*K*K, B*GH*GW], where source row index = gh*stride - pad + kh.
// This is conv-forward im2col and, with the grid set to the transposed
// convolution's *input* resolution, also the tconv-backward gather.
Tensor im2col(const Tensor& src, std::size_t kernel, std::size_t stride, std::size_t pad,
              std::size_t grid_h, std::size_t grid_w) {
    const std::size_t batch = src.dim(0), ch = src.dim(1), sh = src.dim(2), sw = src.dim(3);
    Tensor col({ch * kernel * kernel, batch * grid_h * grid_w});
    const std::size_t cols = batch * grid_h * grid_w;
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t kh = 0; kh < kernel; ++kh) {
            for (std::size_t kw = 0; kw < kernel; ++kw) {
                const std::size_t row = (c * kernel + kh) * kernel + kw;
                real* dst = col.data() + row * cols;
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t gh = 0; gh < grid_h; ++gh) {
                        const std::ptrdiff_t shh =
                            static_cast<std::ptrdiff_t>(gh * stride + kh) -
                            static_cast<std::ptrdiff_t>(pad);
                        real* out_row = dst + (b * grid_h + gh) * grid_w;
                        if (shh < 0 || shh >= static_cast<std::ptrdiff_t>(sh)) {
                            std::fill(out_row, out_row + grid_w, 0.0);
                            continue;
                        }
                        const real* src_row =
                            src.data() + ((b * ch + c) * sh + static_cast<std::size_t>(shh)) * sw;
                        for (std::size_t gw = 0; gw < grid_w; ++gw) {
                            const std::ptrdiff_t sww =
                                static_cast<std::ptrdiff_t>(gw * stride + kw) -
                                static_cast<std::ptrdiff_t>(pad);
                            out_row[gw] = (sww < 0 || sww >= static_cast<std::ptrdiff_t>(sw))
                                              ? 0.0
                                              : src_row[static_cast<std::size_t>(sww)];
                        }
                    }
                }
            }
        }
    }
    return col;
}

// Adjoint of im2col: scatter-adds col [C*K*K, B*GH*GW] back into
// `dst` [B,C,TH,TW]. Used for conv-backward-input and tconv-forward.
void col2im_add(const Tensor& col, Tensor& dst, std::size_t kernel, std::size_t stride,
                std::size_t pad, std::size_t grid_h, std::size_t grid_w) {
    const std::size_t batch = dst.dim(0), ch = dst.dim(1), th = dst.dim(2), tw = dst.dim(3);
    const std::size_t cols = batch * grid_h * grid_w;
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t kh = 0; kh < kernel; ++kh) {
            for (std::size_t kw = 0; kw < kernel; ++kw) {
                const std::size_t row = (c * kernel + kh) * kernel + kw;
                const real* src = col.data() + row * cols;
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t gh = 0; gh < grid_h; ++gh) {
                        const std::ptrdiff_t thh =
                            static_cast<std::ptrdiff_t>(gh * stride + kh) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (thh < 0 || thh >= static_cast<std::ptrdiff_t>(th)) continue;
                        const real* src_row = src + (b * grid_h + gh) * grid_w;
                        real* dst_row =
                            dst.data() + ((b * ch + c) * th + static_cast<std::size_t>(thh)) * tw;
                        for (std::size_t gw = 0; gw < grid_w; ++gw) {
                            const std::ptrdiff_t tww =
                                static_cast<std::ptrdiff_t>(gw * stride + kw) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (tww < 0 || tww >= static_cast<std::ptrdiff_t>(tw)) continue;
                            dst_row[static_cast<std::size_t>(tww)] += src_row[gw];
                        }
                    }
                }
            }
        }
    }
}

// [B,C,H,W] <-> [C, B*H*W] permute copies used around the GEMMs.
Tensor to_channel_major(const Tensor& x) {
    const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({c, b * hw});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real* src = x.data() + (bi * c + ci) * hw;
            real* dst = out.data() + ci * (b * hw) + bi * hw;
            std::copy(src, src + hw, dst);
        }
    return out;
}

Tensor from_channel_major(const Tensor& m, std::size_t batch, std::size_t ch, std::size_t h,
                          std::size_t w) {
    Tensor out({batch, ch, h, w});
    const std::size_t hw = h * w;
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t ci = 0; ci < ch; ++ci) {
            const real* src = m.data() + ci * (batch * hw) + bi * hw;
            real* dst = out.data() + (bi * ch + ci) * hw;
            std::copy(src, src + hw, dst);
        }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
               std::size_t pad, bool bias)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_("conv.weight", {out_ch, in_ch, kernel, kernel}) {
    if (bias) bias_.emplace("conv.bias", std::vector<std::size_t>{out_ch});
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != in_ch_)
        throw ContractError("conv input shape mismatch");
    batch_ = x.dim(0);
    in_h_ = x.dim(2);
    in_w_ = x.dim(3);
    out_h_ = (in_h_ + 2 * pad_ - kernel_) / stride_ + 1;
    out_w_ = (in_w_ + 2 * pad_ - kernel_) / stride_ + 1;

    col_cache_ = im2col(x, kernel_, stride_, pad_, out_h_, out_w_);
    const std::size_t cols = batch_ * out_h_ * out_w_;
    const std::size_t krows = in_ch_ * kernel_ * kernel_;

    ConstMatMap w(weight_.value.data(), out_ch_, krows);
    ConstMatMap c(col_cache_.data(), krows, cols);
    Tensor out_cm({out_ch_, cols});
    MatMap o(out_cm.data(), out_ch_, cols);
    o.noalias() = w * c;
    if (bias_)
        for (std::size_t oc = 0; oc < out_ch_; ++oc) o.row(oc).array() += bias_->value[oc];
    return from_channel_major(out_cm, batch_, out_ch_, out_h_, out_w_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const std::size_t cols = batch_ * out_h_ * out_w_;
    const std::size_t krows = in_ch_ * kernel_ * kernel_;
    Tensor g_cm = to_channel_major(grad_out);
    ConstMatMap g(g_cm.data(), out_ch_, cols);
    ConstMatMap col(col_cache_.data(), krows, cols);

    if (param_grads_) {
        MatMap dw(weight_.grad.data(), out_ch_, krows);
        dw.noalias() += g * col.transpose();
        if (bias_)
            for (std::size_t oc = 0; oc < out_ch_; ++oc) bias_->grad[oc] += g.row(oc).sum();
    }

    ConstMatMap w(weight_.value.data(), out_ch_, krows);
    Tensor dcol({krows, cols});
    MatMap dc(dcol.data(), krows, cols);
    dc.noalias() = w.transpose() * g;

    Tensor dx({batch_, in_ch_, in_h_, in_w_});
    col2im_add(dcol, dx, kernel_, stride_, pad_, out_h_, out_w_);
    return dx;
}

std::vector<Param*> Conv2d::params() {
    std::vector<Param*> p{&weight_};
    if (bias_) p.push_back(&*bias_);
    return p;
}

json Conv2d::spec() const {
    return json{{"type", "conv"},   {"in", in_ch_},  {"out", out_ch_},
                {"kernel", kernel_}, {"stride", stride_}, {"pad", pad_},
                {"bias", bias_.has_value()}};
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                 std::size_t stride, std::size_t pad, bool bias)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_("tconv.weight", {in_ch, out_ch, kernel, kernel}) {
    if (bias) bias_.emplace("tconv.bias", std::vector<std::size_t>{out_ch});
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != in_ch_)
        throw ContractError("tconv input shape mismatch");
    batch_ = x.dim(0);
    in_h_ = x.dim(2);
    in_w_ = x.dim(3);
    out_h_ = (in_h_ - 1) * stride_ + kernel_ - 2 * pad_;
    out_w_ = (in_w_ - 1) * stride_ + kernel_ - 2 * pad_;
    input_cache_ = x;

    const std::size_t in_cols = batch_ * in_h_ * in_w_;
    const std::size_t krows = out_ch_ * kernel_ * kernel_;
    Tensor x_cm = to_channel_major(x);
    ConstMatMap xm(x_cm.data(), in_ch_, in_cols);
    ConstMatMap w(weight_.value.data(), in_ch_, krows);

    Tensor col({krows, in_cols});
    MatMap c(col.data(), krows, in_cols);
    c.noalias() = w.transpose() * xm;

    Tensor out({batch_, out_ch_, out_h_, out_w_});
    col2im_add(col, out, kernel_, stride_, pad_, in_h_, in_w_);
    if (bias_) {
        const std::size_t hw = out_h_ * out_w_;
        for (std::size_t b = 0; b < batch_; ++b)
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                real* p = out.data() + (b * out_ch_ + oc) * hw;
                const real bv = bias_->value[oc];
                for (std::size_t i = 0; i < hw; ++i) p[i] += bv;
            }
    }
    return out;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
    const std::size_t in_cols = batch_ * in_h_ * in_w_;
    const std::size_t krows = out_ch_ * kernel_ * kernel_;

    // Gather grad_out patches over the input grid; this mirrors the forward
    // scatter exactly.
    Tensor col_g = im2col(grad_out, kernel_, stride_, pad_, in_h_, in_w_);
    ConstMatMap cg(col_g.data(), krows, in_cols);
    ConstMatMap w(weight_.value.data(), in_ch_, krows);

    if (param_grads_) {
        Tensor x_cm = to_channel_major(input_cache_);
        ConstMatMap xm(x_cm.data(), in_ch_, in_cols);
        MatMap dw(weight_.grad.data(), in_ch_, krows);
        dw.noalias() += xm * cg.transpose();
        if (bias_) {
            const std::size_t hw = out_h_ * out_w_;
            for (std::size_t b = 0; b < batch_; ++b)
                for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                    const real* p = grad_out.data() + (b * out_ch_ + oc) * hw;
                    real s = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) s += p[i];
                    bias_->grad[oc] += s;
                }
        }
    }

    Tensor dx_cm({in_ch_, in_cols});
    MatMap dxm(dx_cm.data(), in_ch_, in_cols);
    dxm.noalias() = w * cg;
    return from_channel_major(dx_cm, batch_, in_ch_, in_h_, in_w_);
}

std::vector<Param*> ConvTranspose2d::params() {
    std::vector<Param*> p{&weight_};
    if (bias_) p.push_back(&*bias_);
    return p;
}

json ConvTranspose2d::spec() const {
    return json{{"type", "tconv"},  {"in", in_ch_},  {"out", out_ch_},
                {"kernel", kernel_}, {"stride", stride_}, {"pad", pad_},
                {"bias", bias_.has_value()}};
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in_features, std::size_t out_features, bool bias)
    : in_(in_features), out_(out_features), weight_("linear.weight", {out_features, in_features}) {
    if (bias) bias_.emplace("linear.bias", std::vector<std::size_t>{out_features});
}

Tensor Linear::forward(const Tensor& x) {
    if (x.ndim() != 2 || x.dim(1) != in_) throw ContractError("linear input shape mismatch");
    input_cache_ = x;
    const std::size_t b = x.dim(0);
    Tensor y({b, out_});
    ConstMatMap xm(x.data(), b, in_);
    ConstMatMap w(weight_.value.data(), out_, in_);
    MatMap ym(y.data(), b, out_);
    ym.noalias() = xm * w.transpose();
    if (bias_)
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < out_; ++j) y.at(i, j) += bias_->value[j];
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const std::size_t b = grad_out.dim(0);
    ConstMatMap g(grad_out.data(), b, out_);
    ConstMatMap xm(input_cache_.data(), b, in_);
    if (param_grads_) {
        MatMap dw(weight_.grad.data(), out_, in_);
        dw.noalias() += g.transpose() * xm;
        if (bias_)
            for (std::size_t j = 0; j < out_; ++j) bias_->grad[j] += g.col(j).sum();
    }
    Tensor dx({b, in_});
    ConstMatMap w(weight_.value.data(), out_, in_);
    MatMap dxm(dx.data(), b, in_);
    dxm.noalias() = g * w;
    return dx;
}

std::vector<Param*> Linear::params() {
    std::vector<Param*> p{&weight_};
    if (bias_) p.push_back(&*bias_);
    return p;
}

json Linear::spec() const {
    return json{{"type", "linear"}, {"in", in_}, {"out", out_}, {"bias", bias_.has_value()}};
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x) {
    input_cache_ = x;
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.numel(); ++i)
        if (input_cache_[i] <= 0.0) dx[i] = 0.0;
    return dx;
}

Tensor Tanh::forward(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
    output_cache_ = y;
    return y;
}

Tensor Tanh::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.numel(); ++i)
        dx[i] *= 1.0 - output_cache_[i] * output_cache_[i];
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t channels, real momentum, real eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_("bn.gamma", {channels}),
      beta_("bn.beta", {channels}),
      running_mean_("bn.running_mean", {channels}),
      running_var_("bn.running_var", {channels}) {
    gamma_.value.fill(1.0);
    running_var_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != channels_)
        throw ContractError("batchnorm input shape mismatch");
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t n = b * h * w;
    const std::size_t hw = h * w;
    Tensor y({b, channels_, h, w});
    last_forward_training_ = training_;

    if (training_) {
        xhat_cache_ = Tensor({b, channels_, h, w});
        inv_std_cache_.assign(channels_, 0.0);
        for (std::size_t c = 0; c < channels_; ++c) {
            real mean = 0.0;
            for (std::size_t bi = 0; bi < b; ++bi) {
                const real* p = x.data() + (bi * channels_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) mean += p[i];
            }
            mean /= static_cast<real>(n);
            real var = 0.0;
            for (std::size_t bi = 0; bi < b; ++bi) {
                const real* p = x.data() + (bi * channels_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const real d = p[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<real>(n);
            const real inv_std = 1.0 / std::sqrt(var + eps_);
            inv_std_cache_[c] = inv_std;
            for (std::size_t bi = 0; bi < b; ++bi) {
                const real* p = x.data() + (bi * channels_ + c) * hw;
                real* xh = xhat_cache_.data() + (bi * channels_ + c) * hw;
                real* yp = y.data() + (bi * channels_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    xh[i] = (p[i] - mean) * inv_std;
                    yp[i] = gamma_.value[c] * xh[i] + beta_.value[c];
                }
            }
            running_mean_.value[c] = (1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean;
            const real unbiased = n > 1 ? var * static_cast<real>(n) / static_cast<real>(n - 1) : var;
            running_var_.value[c] = (1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
        }
    } else {
        xhat_cache_ = Tensor({b, channels_, h, w});
        inv_std_cache_.assign(channels_, 0.0);
        for (std::size_t c = 0; c < channels_; ++c) {
            const real inv_std = 1.0 / std::sqrt(running_var_.value[c] + eps_);
            inv_std_cache_[c] = inv_std;
            const real mean = running_mean_.value[c];
            for (std::size_t bi = 0; bi < b; ++bi) {
                const real* p = x.data() + (bi * channels_ + c) * hw;
                real* xh = xhat_cache_.data() + (bi * channels_ + c) * hw;
                real* yp = y.data() + (bi * channels_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    xh[i] = (p[i] - mean) * inv_std;
                    yp[i] = gamma_.value[c] * xh[i] + beta_.value[c];
                }
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const std::size_t b = grad_out.dim(0), h = grad_out.dim(2), w = grad_out.dim(3);
    const std::size_t n = b * h * w;
    const std::size_t hw = h * w;
    Tensor dx({b, channels_, h, w});

    if (!last_forward_training_) {
        // Eval mode is a per-channel affine map of the input; the running
        // statistics are constants here.
        for (std::size_t c = 0; c < channels_; ++c) {
            real sum_g = 0.0, sum_gx = 0.0;
            const real scale = gamma_.value[c] * inv_std_cache_[c];
            for (std::size_t bi = 0; bi < b; ++bi) {
                const real* g = grad_out.data() + (bi * channels_ + c) * hw;
                const real* xh = xhat_cache_.data() + (bi * channels_ + c) * hw;
                real* d = dx.data() + (bi * channels_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                    d[i] = scale * g[i];
                }
            }
            if (param_grads_) {
                beta_.grad[c] += sum_g;
                gamma_.grad[c] += sum_gx;
            }
        }
        return dx;
    }

    for (std::size_t c = 0; c < channels_; ++c) {
        real sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t bi = 0; bi < b; ++bi) {
            const real* g = grad_out.data() + (bi * channels_ + c) * hw;
            const real* xh = xhat_cache_.data() + (bi * channels_ + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        if (param_grads_) {
            beta_.grad[c] += sum_g;
            gamma_.grad[c] += sum_gx;
        }
        const real scale = gamma_.value[c] * inv_std_cache_[c] / static_cast<real>(n);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const real* g = grad_out.data() + (bi * channels_ + c) * hw;
            const real* xh = xhat_cache_.data() + (bi * channels_ + c) * hw;
            real* d = dx.data() + (bi * channels_ + c) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                d[i] = scale * (static_cast<real>(n) * g[i] - sum_g - xh[i] * sum_gx);
        }
    }
    return dx;
}

std::vector<Param*> BatchNorm2d::params() { return {&gamma_, &beta_}; }
std::vector<Param*> BatchNorm2d::buffers() { return {&running_mean_, &running_var_}; }

json BatchNorm2d::spec() const { return json{{"type", "batchnorm"}, {"channels", channels_}}; }

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(std::size_t kernel) : kernel_(kernel) {}

Tensor MaxPool2d::forward(const Tensor& x) {
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / kernel_, ow = w / kernel_;
    in_shape_ = x.shape();
    Tensor y({b, c, oh, ow});
    argmax_.assign(y.numel(), 0);
    std::size_t oi = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ohi = 0; ohi < oh; ++ohi)
                for (std::size_t owi = 0; owi < ow; ++owi, ++oi) {
                    real best = -std::numeric_limits<real>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t kh = 0; kh < kernel_; ++kh)
                        for (std::size_t kw = 0; kw < kernel_; ++kw) {
                            const std::size_t idx =
                                ((bi * c + ci) * h + ohi * kernel_ + kh) * w + owi * kernel_ + kw;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    y[oi] = best;
                    argmax_[oi] = best_idx;
                }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    Tensor dx(in_shape_);
    for (std::size_t i = 0; i < grad_out.numel(); ++i) dx[argmax_[i]] += grad_out[i];
    return dx;
}

json MaxPool2d::spec() const { return json{{"type", "maxpool"}, {"kernel", kernel_}}; }

// ---------------------------------------------------------------------------
// GlobalAvgPool / Flatten

Tensor GlobalAvgPool::forward(const Tensor& x) {
    const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    in_shape_ = x.shape();
    Tensor y({b, c});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real* p = x.data() + (bi * c + ci) * hw;
            real s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            y.at(bi, ci) = s / static_cast<real>(hw);
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    const std::size_t b = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
    Tensor dx(in_shape_);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real g = grad_out.at(bi, ci) / static_cast<real>(hw);
            real* p = dx.data() + (bi * c + ci) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = g;
        }
    return dx;
}

Tensor Flatten::forward(const Tensor& x) {
    in_shape_ = x.shape();
    std::size_t rest = 1;
    for (std::size_t i = 1; i < in_shape_.size(); ++i) rest *= in_shape_[i];
    return x.reshaped({x.dim(0), rest});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

// ---------------------------------------------------------------------------
// Residual

Residual::Residual(std::unique_ptr<Sequential> inner, std::unique_ptr<Sequential> projection)
    : inner_(std::move(inner)), projection_(std::move(projection)) {}

Tensor Residual::forward(const Tensor& x) {
    Tensor y = inner_->forward(x);
    if (projection_) {
        Tensor s = projection_->forward(x);
        y.add_scaled(s, 1.0);
    } else {
        y.add_scaled(x, 1.0);
    }
    return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
    Tensor dx = inner_->backward(grad_out);
    if (projection_) {
        Tensor ds = projection_->backward(grad_out);
        dx.add_scaled(ds, 1.0);
    } else {
        dx.add_scaled(grad_out, 1.0);
    }
    return dx;
}

std::vector<Param*> Residual::params() {
    auto p = inner_->params();
    if (projection_)
        for (Param* q : projection_->params()) p.push_back(q);
    return p;
}

std::vector<Param*> Residual::buffers() {
    auto p = inner_->buffers();
    if (projection_)
        for (Param* q : projection_->buffers()) p.push_back(q);
    return p;
}

void Residual::set_training(bool training) {
    inner_->set_training(training);
    if (projection_) projection_->set_training(training);
}

void Residual::set_param_grads(bool enabled) {
    param_grads_ = enabled;
    inner_->set_param_grads(enabled);
    if (projection_) projection_->set_param_grads(enabled);
}

json Residual::spec() const {
    json j{{"type", "residual"}, {"inner", inner_->spec()["layers"]}};
    if (projection_) j["projection"] = projection_->spec()["layers"];
    return j;
}

}  // namespace veil::nn
