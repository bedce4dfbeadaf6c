#include "tdcount/nn.hpp"

#include <cmath>

#include "tdcount/errors.hpp"

namespace tdc::nn {
namespace {

Tensor init_tensor(std::vector<int> shape, int fan_in, int fan_out, Init init, Rng& rng) {
  Tensor t(std::move(shape));
  double std_dev = 0.0;
  switch (init) {
    case Init::kHeNormal:
      std_dev = std::sqrt(2.0 / fan_in);
      break;
    case Init::kXavierNormal:
      std_dev = std::sqrt(2.0 / (fan_in + fan_out));
      break;
    case Init::kZero:
      return t;
  }
  for (double& v : t.values()) v = std_dev * rng.normal();
  return t;
}

}  // namespace

void ParamSet::add(std::string name, ag::Var var) {
  if (!var) return;
  items_.push_back({std::move(name), std::move(var)});
}

void ParamSet::append(const ParamSet& other, const std::string& prefix) {
  for (const auto& p : other.items_) items_.push_back({prefix + p.name, p.var});
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.var->zero_grad();
}

void ParamSet::set_trainable(bool trainable) {
  for (auto& p : items_) {
    p.var->requires_grad = trainable;
    if (!trainable) p.var->zero_grad();
  }
}

void ParamSet::write(binio::Writer& w) const {
  w.u32(static_cast<std::uint32_t>(items_.size()));
  for (const auto& p : items_) {
    w.str(p.name);
    w.tensor(p.var->value);
  }
}

void ParamSet::read(binio::Reader& r) {
  const std::uint32_t n = r.u32();
  if (n != items_.size())
    r.fail("parameter count " + std::to_string(n) + " != expected " + std::to_string(items_.size()));
  for (auto& p : items_) {
    const std::string name = r.str();
    if (name != p.name) r.fail("parameter '" + name + "' where '" + p.name + "' was expected");
    Tensor t = r.tensor();
    if (t.shape() != p.var->value.shape())
      r.fail("parameter '" + name + "' has shape " + t.shape_string() + ", expected " +
             p.var->value.shape_string());
    p.var->value = std::move(t);
  }
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_, Rng& rng, Init init,
               double bias_fill)
    : stride(stride_), pad(pad_) {
  const int fan_in = in_ch * kernel * kernel;
  const int fan_out = out_ch * kernel * kernel;
  weight = ag::parameter(init_tensor({out_ch, in_ch, kernel, kernel}, fan_in, fan_out, init, rng));
  bias = ag::parameter(Tensor({out_ch}, bias_fill));
}

void Conv2d::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

Linear::Linear(int in, int out, Rng& rng, Init init, bool with_bias) {
  weight = ag::parameter(init_tensor({in, out}, in, out, init, rng));
  if (with_bias) bias = ag::parameter(Tensor({out}));
}

ag::Var Linear::operator()(const ag::Var& x) const {
  ag::Var y = ag::matmul(x, weight);
  return bias ? ag::add_row_bias(y, bias) : y;
}

void Linear::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  if (bias) ps.add(prefix + ".bias", bias);
}

AdamW::AdamW(const ParamSet& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& p : params_.items()) {
    m_.emplace_back(p.var->value.shape());
    v_.emplace_back(p.var->value.shape());
  }
}

void AdamW::step(double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ag::Node& p = *items[i].var;
    if (!p.requires_grad || p.grad.empty()) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g[j] * grad_scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
    p.zero_grad();
  }
}

void AdamW::write(binio::Writer& w) const {
  w.u64(static_cast<std::uint64_t>(t_));
  w.u32(static_cast<std::uint32_t>(m_.size()));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    w.tensor(m_[i]);
    w.tensor(v_[i]);
  }
}

void AdamW::read(binio::Reader& r) {
  t_ = static_cast<long>(r.u64());
  const std::uint32_t n = r.u32();
  if (n != m_.size()) r.fail("optimizer state size mismatch");
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Tensor m = r.tensor();
    Tensor v = r.tensor();
    if (m.shape() != m_[i].shape() || v.shape() != v_[i].shape())
      r.fail("optimizer state shape mismatch");
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

}  // namespace tdc::nn
