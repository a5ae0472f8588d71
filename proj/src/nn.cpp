#include "latseg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace latseg::nn {
namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  kernels::silu_forward(static_cast<long>(x.size()), x.data(), y.data());
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_y) {
  Tensor gx(x.shape());
  kernels::silu_backward(static_cast<long>(x.size()), x.data(), grad_y.data(), gx.data());
  return gx;
}

Tensor upsample2x(const Tensor& x) {
  Tensor y({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  kernels::upsample2x_forward(x.n() * x.c(), x.h(), x.w(), x.data(), y.data());
  return y;
}

Tensor upsample2x_backward(const Tensor& grad_y) {
  Tensor gx({grad_y.n(), grad_y.c(), grad_y.h() / 2, grad_y.w() / 2});
  kernels::upsample2x_backward(gx.n() * gx.c(), gx.h(), gx.w(), grad_y.data(), gx.data());
  return gx;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "add_inplace");
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->grad.fill(0.0f);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
               bool zero_init)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0 || stride < 1)
    throw std::invalid_argument("Conv2d " + name + ": invalid geometry");
  const double bound = 1.0 / std::sqrt(double(in_channels) * kernel * kernel);
  const Shape ws{out_channels, in_channels, kernel, kernel};
  weight_ = {name + ".weight", zero_init ? Tensor(ws) : uniform(ws, bound, rng), Tensor(ws)};
  const Shape bs{1, out_channels, 1, 1};
  bias_ = {name + ".bias", zero_init ? Tensor(bs) : uniform(bs, bound, rng), Tensor(bs)};
}

kernels::ConvGeometry Conv2d::geometry(const Shape& input) const {
  if (input.c != in_)
    throw std::invalid_argument("Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                                " input channels, got " + input.str());
  return {input.n, input.c, input.h, input.w, out_, kernel_, stride_, kernel_ / 2};
}

Tensor Conv2d::forward(const Tensor& x) const {
  const auto g = geometry(x.shape());
  Tensor y({x.n(), out_, g.out_height(), g.out_width()});
  kernels::conv2d_forward(g, x.data(), weight_.value.data(), bias_.value.data(), y.data());
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_y, const Tensor& x) {
  const auto g = geometry(x.shape());
  kernels::conv2d_backward_params(g, x.data(), grad_y.data(), weight_.grad.data(), bias_.grad.data());
  Tensor gx(x.shape());
  kernels::conv2d_backward_input(g, grad_y.data(), weight_.value.data(), gx.data());
  return gx;
}

void Conv2d::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features, Rng& rng)
    : in_(in_features), out_(out_features) {
  const double bound = 1.0 / std::sqrt(double(in_features));
  const Shape ws{out_features, in_features, 1, 1};
  weight_ = {name + ".weight", uniform(ws, bound, rng), Tensor(ws)};
  const Shape bs{1, out_features, 1, 1};
  bias_ = {name + ".bias", uniform(bs, bound, rng), Tensor(bs)};
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.shape().per_sample() != std::size_t(in_))
    throw std::invalid_argument("Linear " + weight_.name + ": bad input " + x.shape().str());
  Tensor y({x.n(), out_, 1, 1});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) {
      float acc = bias_.value[o];
      const float* w = weight_.value.data() + std::size_t(o) * in_;
      const float* xi = x.data() + std::size_t(n) * in_;
      for (int i = 0; i < in_; ++i) acc += w[i] * xi[i];
      y[std::size_t(n) * out_ + o] = acc;
    }
  return y;
}

Tensor Linear::backward(const Tensor& grad_y, const Tensor& x) {
  Tensor gx(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) {
      const float g = grad_y[std::size_t(n) * out_ + o];
      bias_.grad[o] += g;
      float* gw = weight_.grad.data() + std::size_t(o) * in_;
      const float* w = weight_.value.data() + std::size_t(o) * in_;
      const float* xi = x.data() + std::size_t(n) * in_;
      float* gxi = gx.data() + std::size_t(n) * in_;
      for (int i = 0; i < in_; ++i) {
        gw[i] += g * xi[i];
        gxi[i] += g * w[i];
      }
    }
  return gx;
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- ResBlock

ResBlock::ResBlock(const std::string& name, int in_channels, int out_channels, int emb_dim, Rng& rng)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, 1, rng),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, rng),
      has_skip_(in_channels != out_channels),
      emb_dim_(emb_dim) {
  if (has_skip_) skip_ = Conv2d(name + ".skip", in_channels, out_channels, 1, 1, rng);
  if (emb_dim_ > 0) emb_proj_ = Linear(name + ".emb_proj", emb_dim, out_channels, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor* emb, Saved* saved) const {
  Tensor a1 = silu(x);
  Tensor h = conv1_.forward(a1);
  if (emb_dim_ > 0) {
    if (!emb || emb->n() != x.n())
      throw std::invalid_argument("ResBlock: missing or mismatched embedding");
    const Tensor p = emb_proj_.forward(*emb);
    const std::size_t plane = h.shape().plane();
    for (int n = 0; n < h.n(); ++n)
      for (int c = 0; c < h.c(); ++c) {
        const float b = p[std::size_t(n) * h.c() + c];
        float* dst = h.data() + (std::size_t(n) * h.c() + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += b;
      }
  }
  Tensor a2 = silu(h);
  Tensor y = conv2_.forward(a2);
  if (has_skip_)
    add_inplace(y, skip_.forward(x));
  else
    add_inplace(y, x);
  if (saved) {
    saved->x = x;
    saved->a1 = std::move(a1);
    saved->h = std::move(h);
    saved->a2 = std::move(a2);
    if (emb_dim_ > 0) saved->emb = *emb;
  }
  return y;
}

Tensor ResBlock::backward(const Tensor& grad_y, const Saved& saved, Tensor* grad_emb) {
  Tensor dh = silu_backward(saved.h, conv2_.backward(grad_y, saved.a2));
  if (emb_dim_ > 0) {
    Tensor dp({dh.n(), dh.c(), 1, 1});
    const std::size_t plane = dh.shape().plane();
    for (int n = 0; n < dh.n(); ++n)
      for (int c = 0; c < dh.c(); ++c) {
        const float* src = dh.data() + (std::size_t(n) * dh.c() + c) * plane;
        float acc = 0.0f;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        dp[std::size_t(n) * dh.c() + c] = acc;
      }
    Tensor de = emb_proj_.backward(dp, saved.emb);
    if (grad_emb) add_inplace(*grad_emb, de);
  }
  Tensor dx = silu_backward(saved.x, conv1_.backward(dh, saved.a1));
  if (has_skip_)
    add_inplace(dx, skip_.backward(grad_y, saved.x));
  else
    add_inplace(dx, grad_y);
  return dx;
}

void ResBlock::collect(ParameterList& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  if (has_skip_) skip_.collect(out);
  if (emb_dim_ > 0) emb_proj_.collect(out);
}

// ---------------------------------------------------------------- Upsample

Upsample::Upsample(const std::string& name, int in_channels, int out_channels, Rng& rng)
    : conv_(name + ".conv", in_channels, out_channels, 3, 1, rng) {}

Tensor Upsample::forward(const Tensor& x, Saved* saved) const {
  Tensor up = upsample2x(x);
  Tensor y = conv_.forward(up);
  if (saved) saved->up = std::move(up);
  return y;
}

Tensor Upsample::backward(const Tensor& grad_y, const Saved& saved) {
  return upsample2x_backward(conv_.backward(grad_y, saved.up));
}

void Upsample::collect(ParameterList& out) { conv_.collect(out); }

// ---------------------------------------------------------------- AdamW

AdamW::AdamW(ParameterList params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0) || options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 ||
      options_.beta2 >= 1.0 || options_.weight_decay < 0.0)
    throw std::invalid_argument("AdamW: invalid hyper-parameters");
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::zero_grad() { zero_grads(params_); }

double AdamW::step() {
  double sq = 0.0;
  for (auto* p : params_)
    for (float g : p->grad.vec()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  const double clip = (options_.grad_clip_norm > 0.0 && norm > options_.grad_clip_norm)
                          ? options_.grad_clip_norm / norm
                          : 1.0;

  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, double(steps_));
  const float b1 = float(options_.beta1), b2 = float(options_.beta2);
  const float step_size = float(options_.lr / bc1);
  const float inv_bc2 = float(1.0 / bc2);
  const float decay = float(1.0 - options_.lr * options_.weight_decay);
  const float eps = float(options_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    float* w = params_[k]->value.data();
    const float* g = params_[k]->grad.data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const std::size_t count = params_[k]->value.size();
    for (std::size_t i = 0; i < count; ++i) {
      const float gi = g[i] * float(clip);
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      w[i] = w[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
  return norm;
}

std::map<std::string, Tensor> AdamW::state() const {
  std::map<std::string, Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out[params_[k]->name + ".m"] = m_[k];
    out[params_[k]->name + ".v"] = v_[k];
  }
  // Step counts are stored losslessly as two 24-bit halves.
  out["__steps"] = Tensor({1, 2, 1, 1}, std::vector<float>{float(steps_ >> 24), float(steps_ & 0xFFFFFF)});
  return out;
}

void AdamW::load_state(const std::map<std::string, Tensor>& state) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto m = state.find(params_[k]->name + ".m");
    auto v = state.find(params_[k]->name + ".v");
    if (m == state.end() || v == state.end())
      throw std::runtime_error("optimizer state missing for " + params_[k]->name);
    if (!(m->second.shape() == m_[k].shape()) || !(v->second.shape() == v_[k].shape()))
      throw std::runtime_error("optimizer state shape mismatch for " + params_[k]->name);
    m_[k] = m->second;
    v_[k] = v->second;
  }
  auto s = state.find("__steps");
  if (s == state.end() || s->second.size() != 2) throw std::runtime_error("optimizer step count missing");
  steps_ = (static_cast<long>(s->second[0]) << 24) + static_cast<long>(s->second[1]);
}

}  // namespace latseg::nn
