#pragma once

#include <string>
#include <vector>

#include "tdcount/autograd.hpp"
#include "tdcount/binio.hpp"
#include "tdcount/rng.hpp"

namespace tdc::nn {

struct NamedParam {
  std::string name;
  ag::Var var;
};

// Ordered collection of named parameters. Order is part of the checkpoint
// format and of the optimizer state layout.
class ParamSet {
 public:
  void add(std::string name, ag::Var var);
  void append(const ParamSet& other, const std::string& prefix = "");

  const std::vector<NamedParam>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void set_trainable(bool trainable);

  void write(binio::Writer& w) const;
  // Loads values in place; names and shapes must match exactly.
  void read(binio::Reader& r);

 private:
  std::vector<NamedParam> items_;
};

enum class Init { kHeNormal, kXavierNormal, kZero };

struct Conv2d {
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
         Init init = Init::kHeNormal, double bias_fill = 0.0);

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  void collect(ParamSet& ps, const std::string& prefix) const;

  ag::Var weight;
  ag::Var bias;
  int stride = 1;
  int pad = 0;
};

// y = x W + b on (N, in) rows.
struct Linear {
  Linear() = default;
  Linear(int in, int out, Rng& rng, Init init = Init::kXavierNormal, bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;

  ag::Var weight;
  ag::Var bias;  // null when constructed without bias
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay Adam. Parameters without a gradient buffer (or not
// trainable) are skipped entirely, including decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamSet& params, AdamWConfig cfg);

  // Applies one update using gradients accumulated in the parameters, scaled
  // by grad_scale (1/batch for mean reduction), then clears them.
  void step(double grad_scale = 1.0);

  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  void write(binio::Writer& w) const;
  void read(binio::Reader& r);

 private:
  ParamSet params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace tdc::nn
