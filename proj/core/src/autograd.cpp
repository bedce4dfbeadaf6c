#include "tdcount/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tdcount/errors.hpp"

namespace tdc::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }
ConstMatMap as_mat(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}

// Builds a result node; the closure is kept only when a gradient can flow.
Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool req = false;
  for (const Var& p : parents)
    if (p && p->requires_grad) req = true;
  node->requires_grad = req;
  if (req) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.shape() != b->value.shape())
    throw InvalidInput(std::string(op) + ": shape mismatch " + a->value.shape_string() +
                       " vs " + b->value.shape_string());
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a->value.rank() != rank)
    throw InvalidInput(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                       a->value.shape_string());
}

void accumulate(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  Tensor& buf = p->grad_buffer();
  double* d = buf.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

Tensor scalar(double v) { return Tensor::from({1}, {v}); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var detach(const Var& v) { return constant(v->value); }

void backward(const Var& root) {
  if (root->value.size() != 1) throw InvalidInput("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && p->backward_fn && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are only needed during the sweep.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Tensor();
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor neg = self.grad;
      for (double& v : neg.values()) v = -v;
      accumulate(self.parents[1], neg);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (double& v : out.values()) v *= s;
  return make(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.values()) v *= s;
    accumulate(self.parents[0], g);
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make(std::move(out), {a}, [](Node& self) {
    Tensor g = self.grad;
    const Tensor& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > 0.0)) g[i] = 0.0;
    accumulate(self.parents[0], g);
  });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  return make(scalar(a->value.sum()), {a}, [](Node& self) {
    Tensor g(self.parents[0]->value.shape(), self.grad[0]);
    accumulate(self.parents[0], g);
  });
}

Var abs(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.values()) v = std::abs(v);
  return make(std::move(out), {a}, [](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] *= x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
    accumulate(self.parents[0], g);
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a->value.size();
  if (n == 0) throw InvalidInput("mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    acc += d * d;
  }
  return make(scalar(acc / static_cast<double>(n)), {a, b}, [n](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    Tensor g(x.shape());
    for (std::size_t i = 0; i < n; ++i) g[i] = k * (x[i] - y[i]);
    accumulate(self.parents[0], g);
    if (self.parents[1]->requires_grad) {
      for (double& v : g.values()) v = -v;
      accumulate(self.parents[1], g);
    }
  });
}

Var pseudo_huber(const Var& e, double c) {
  if (!(c > 0.0)) throw InvalidParameter("pseudo_huber: c must be > 0");
  const std::size_t n = e->value.size();
  if (n == 0) throw InvalidInput("pseudo_huber: empty tensor");
  double acc = 0.0;
  for (double v : e->value.values()) {
    const double r = v / c;
    acc += c * c * (std::sqrt(1.0 + r * r) - 1.0);
  }
  return make(scalar(acc / static_cast<double>(n)), {e}, [n, c](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const double k = self.grad[0] / static_cast<double>(n);
    Tensor g(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double r = x[i] / c;
      g[i] = k * x[i] / std::sqrt(1.0 + r * r);
    }
    accumulate(self.parents[0], g);
  });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_rows");
  const int rows = logits->value.dim(0);
  const int cols = logits->value.dim(1);
  if (static_cast<std::size_t>(rows) != labels.size() || rows == 0)
    throw InvalidInput("cross_entropy_rows: label count mismatch");
  Tensor probs(logits->value.shape());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= cols) throw InvalidInput("cross_entropy_rows: label out of range");
    double m = logits->value.at(r, 0);
    for (int c = 1; c < cols; ++c) m = std::max(m, logits->value.at(r, c));
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      probs.at(r, c) = std::exp(logits->value.at(r, c) - m);
      z += probs.at(r, c);
    }
    for (int c = 0; c < cols; ++c) probs.at(r, c) /= z;
    // log-sum-exp minus target logit, written to stay exact as margins grow.
    loss += std::log(z) - (logits->value.at(r, y) - m);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make(scalar(loss / rows), {logits},
              [probs = std::move(probs), lab = std::move(lab), rows, cols](Node& self) {
                Tensor g = probs;
                const double k = self.grad[0] / rows;
                for (int r = 0; r < rows; ++r) {
                  g.at(r, lab[static_cast<std::size_t>(r)]) -= 1.0;
                  for (int c = 0; c < cols; ++c) g.at(r, c) *= k;
                }
                accumulate(self.parents[0], g);
              });
}

// ---------------------------------------------------------------- image ops

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int cin = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int cout = weight->value.dim(0), k = weight->value.dim(2);
  if (weight->value.dim(1) != cin || weight->value.dim(3) != k)
    throw InvalidInput("conv2d: weight " + weight->value.shape_string() +
                       " does not match input " + x->value.shape_string());
  if (bias && static_cast<int>(bias->value.size()) != cout)
    throw InvalidInput("conv2d: bias size mismatch");
  if (stride < 1 || pad < 0) throw InvalidParameter("conv2d: bad stride/pad");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw InvalidInput("conv2d: input smaller than kernel");
  const int kk = cin * k * k;
  const int npix = ho * wo;

  Tensor cols({kk, npix});
  {
    const double* src = x->value.data();
    double* dst = cols.data();
    for (int c = 0; c < cin; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* row = dst + static_cast<std::size_t>((c * k + ky) * k + kx) * npix;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            double* out = row + oy * wo;
            if (iy < 0 || iy >= h) {
              std::fill(out, out + wo, 0.0);
              continue;
            }
            const double* in = src + (static_cast<std::size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              out[ox] = (ix >= 0 && ix < w) ? in[ix] : 0.0;
            }
          }
        }
  }

  Tensor out({cout, ho, wo});
  as_mat(out, cout, npix).noalias() = as_mat(weight->value, cout, kk) * as_mat(cols, kk, npix);
  if (bias) {
    for (int o = 0; o < cout; ++o) {
      const double b = bias->value[static_cast<std::size_t>(o)];
      double* row = out.data() + static_cast<std::size_t>(o) * npix;
      for (int i = 0; i < npix; ++i) row[i] += b;
    }
  }

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents),
              [cols = std::move(cols), cin, h, w, cout, k, ho, wo, kk, npix, stride,
               pad](Node& self) {
                const Var& xin = self.parents[0];
                const Var& wt = self.parents[1];
                auto dy = as_mat(self.grad, cout, npix);
                if (wt->requires_grad) {
                  Tensor gw(wt->value.shape());
                  as_mat(gw, cout, kk).noalias() = dy * as_mat(cols, kk, npix).transpose();
                  accumulate(wt, gw);
                }
                if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                  Tensor gb(self.parents[2]->value.shape());
                  for (int o = 0; o < cout; ++o) gb[static_cast<std::size_t>(o)] = dy.row(o).sum();
                  accumulate(self.parents[2], gb);
                }
                if (xin->requires_grad) {
                  Tensor dcols({kk, npix});
                  as_mat(dcols, kk, npix).noalias() =
                      as_mat(wt->value, cout, kk).transpose() * dy;
                  Tensor gx(xin->value.shape());
                  double* gxd = gx.data();
                  const double* dc = dcols.data();
                  for (int c = 0; c < cin; ++c)
                    for (int ky = 0; ky < k; ++ky)
                      for (int kx = 0; kx < k; ++kx) {
                        const double* row =
                            dc + static_cast<std::size_t>((c * k + ky) * k + kx) * npix;
                        for (int oy = 0; oy < ho; ++oy) {
                          const int iy = oy * stride - pad + ky;
                          if (iy < 0 || iy >= h) continue;
                          double* dst = gxd + (static_cast<std::size_t>(c) * h + iy) * w;
                          const double* srow = row + oy * wo;
                          for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) dst[ix] += srow[ox];
                          }
                        }
                      }
                  accumulate(xin, gx);
                }
              });
}

Var add_channel_bias(const Var& x, const Var& v) {
  require_rank(x, 3, "add_channel_bias");
  const int c = x->value.dim(0);
  const int plane = x->value.dim(1) * x->value.dim(2);
  if (static_cast<int>(v->value.size()) != c) throw InvalidInput("add_channel_bias: size mismatch");
  Tensor out = x->value;
  for (int ch = 0; ch < c; ++ch) {
    const double b = v->value[static_cast<std::size_t>(ch)];
    double* p = out.data() + static_cast<std::size_t>(ch) * plane;
    for (int i = 0; i < plane; ++i) p[i] += b;
  }
  return make(std::move(out), {x, v}, [c, plane](Node& self) {
    accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor g(self.parents[1]->value.shape());
      for (int ch = 0; ch < c; ++ch) {
        const double* p = self.grad.data() + static_cast<std::size_t>(ch) * plane;
        double s = 0.0;
        for (int i = 0; i < plane; ++i) s += p[i];
        g[static_cast<std::size_t>(ch)] = s;
      }
      accumulate(self.parents[1], g);
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a->value.dim(1) != b->value.dim(1) || a->value.dim(2) != b->value.dim(2))
    throw InvalidInput("concat_channels: spatial mismatch");
  const int ca = a->value.dim(0), cb = b->value.dim(0);
  Tensor out({ca + cb, a->value.dim(1), a->value.dim(2)});
  std::copy(a->value.storage().begin(), a->value.storage().end(), out.storage().begin());
  std::copy(b->value.storage().begin(), b->value.storage().end(),
            out.storage().begin() + static_cast<std::ptrdiff_t>(a->value.size()));
  return make(std::move(out), {a, b}, [](Node& self) {
    const std::size_t na = self.parents[0]->value.size();
    if (self.parents[0]->requires_grad) {
      Tensor ga(self.parents[0]->value.shape());
      std::copy(self.grad.storage().begin(),
                self.grad.storage().begin() + static_cast<std::ptrdiff_t>(na),
                ga.storage().begin());
      accumulate(self.parents[0], ga);
    }
    if (self.parents[1]->requires_grad) {
      Tensor gb(self.parents[1]->value.shape());
      std::copy(self.grad.storage().begin() + static_cast<std::ptrdiff_t>(na),
                self.grad.storage().end(), gb.storage().begin());
      accumulate(self.parents[1], gb);
    }
  });
}

Var upsample_nearest2(const Var& x) {
  require_rank(x, 3, "upsample_nearest2");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x->value.at(ch, y / 2, xx / 2);
  return make(std::move(out), {x}, [c, h, w](Node& self) {
    Tensor g({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g.at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
    accumulate(self.parents[0], g);
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 3, "resize_bilinear");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (out_h <= 0 || out_w <= 0) throw InvalidParameter("resize_bilinear: bad size");
  if (out_h == h && out_w == w) return x;

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_in, int n_out) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    const double ratio = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return t;
  };
  auto ty = taps(h, out_h);
  auto tx = taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<std::size_t>(xx)];
        const double top = (1 - b.w1) * x->value.at(ch, a.i0, b.i0) + b.w1 * x->value.at(ch, a.i0, b.i1);
        const double bot = (1 - b.w1) * x->value.at(ch, a.i1, b.i0) + b.w1 * x->value.at(ch, a.i1, b.i1);
        out.at(ch, y, xx) = (1 - a.w1) * top + a.w1 * bot;
      }
    }
  return make(std::move(out), {x}, [ty, tx, c, h, w, out_h, out_w](Node& self) {
    Tensor g({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double d = self.grad.at(ch, y, xx);
          g.at(ch, a.i0, b.i0) += (1 - a.w1) * (1 - b.w1) * d;
          g.at(ch, a.i0, b.i1) += (1 - a.w1) * b.w1 * d;
          g.at(ch, a.i1, b.i0) += a.w1 * (1 - b.w1) * d;
          g.at(ch, a.i1, b.i1) += a.w1 * b.w1 * d;
        }
      }
    accumulate(self.parents[0], g);
  });
}

// ---------------------------------------------------------------- tokens

Var to_tokens(const Var& x) {
  require_rank(x, 3, "to_tokens");
  const int c = x->value.dim(0), n = x->value.dim(1) * x->value.dim(2);
  Tensor out({n, c});
  as_mat(out, n, c) = as_mat(x->value, c, n).transpose();
  return make(std::move(out), {x}, [c, n](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    as_mat(g, c, n) = as_mat(self.grad, n, c).transpose();
    accumulate(self.parents[0], g);
  });
}

Var from_tokens(const Var& t, int h, int w) {
  require_rank(t, 2, "from_tokens");
  const int n = t->value.dim(0), c = t->value.dim(1);
  if (n != h * w) throw InvalidInput("from_tokens: token count does not match grid");
  Tensor out({c, h, w});
  as_mat(out, c, n) = as_mat(t->value, n, c).transpose();
  return make(std::move(out), {t}, [c, n](Node& self) {
    Tensor g({n, c});
    as_mat(g, n, c) = as_mat(self.grad, c, n).transpose();
    accumulate(self.parents[0], g);
  });
}

// ---------------------------------------------------------------- matrices

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  if (b->value.dim(0) != k)
    throw InvalidInput("matmul: inner dimension mismatch " + a->value.shape_string() + " x " +
                       b->value.shape_string());
  Tensor out({n, m});
  as_mat(out, n, m).noalias() = as_mat(a->value, n, k) * as_mat(b->value, k, m);
  return make(std::move(out), {a, b}, [n, k, m](Node& self) {
    auto dc = as_mat(self.grad, n, m);
    if (self.parents[0]->requires_grad) {
      Tensor ga({n, k});
      as_mat(ga, n, k).noalias() = dc * as_mat(self.parents[1]->value, k, m).transpose();
      accumulate(self.parents[0], ga);
    }
    if (self.parents[1]->requires_grad) {
      Tensor gb({k, m});
      as_mat(gb, k, m).noalias() = as_mat(self.parents[0]->value, n, k).transpose() * dc;
      accumulate(self.parents[1], gb);
    }
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(0);
  if (b->value.dim(1) != k) throw InvalidInput("matmul_bt: inner dimension mismatch");
  Tensor out({n, m});
  as_mat(out, n, m).noalias() = as_mat(a->value, n, k) * as_mat(b->value, m, k).transpose();
  return make(std::move(out), {a, b}, [n, k, m](Node& self) {
    auto dc = as_mat(self.grad, n, m);
    if (self.parents[0]->requires_grad) {
      Tensor ga({n, k});
      as_mat(ga, n, k).noalias() = dc * as_mat(self.parents[1]->value, m, k);
      accumulate(self.parents[0], ga);
    }
    if (self.parents[1]->requires_grad) {
      Tensor gb({m, k});
      as_mat(gb, m, k).noalias() = dc.transpose() * as_mat(self.parents[0]->value, n, k);
      accumulate(self.parents[1], gb);
    }
  });
}

Var add_row_bias(const Var& x, const Var& b) {
  require_rank(x, 2, "add_row_bias");
  const int n = x->value.dim(0), m = x->value.dim(1);
  if (static_cast<int>(b->value.size()) != m) throw InvalidInput("add_row_bias: size mismatch");
  Tensor out = x->value;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < m; ++c) out.at(r, c) += b->value[static_cast<std::size_t>(c)];
  return make(std::move(out), {x, b}, [n, m](Node& self) {
    accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor g(self.parents[1]->value.shape());
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) g[static_cast<std::size_t>(c)] += self.grad.at(r, c);
      accumulate(self.parents[1], g);
    }
  });
}

Var softmax_rows(const Var& x) {
  require_rank(x, 2, "softmax_rows");
  const int n = x->value.dim(0), m = x->value.dim(1);
  Tensor out({n, m});
  for (int r = 0; r < n; ++r) {
    double mx = x->value.at(r, 0);
    for (int c = 1; c < m; ++c) mx = std::max(mx, x->value.at(r, c));
    double z = 0.0;
    for (int c = 0; c < m; ++c) {
      out.at(r, c) = std::exp(x->value.at(r, c) - mx);
      z += out.at(r, c);
    }
    for (int c = 0; c < m; ++c) out.at(r, c) /= z;
  }
  return make(std::move(out), {x}, [n, m](Node& self) {
    const Tensor& y = self.value;
    Tensor g({n, m});
    for (int r = 0; r < n; ++r) {
      double dot = 0.0;
      for (int c = 0; c < m; ++c) dot += self.grad.at(r, c) * y.at(r, c);
      for (int c = 0; c < m; ++c) g.at(r, c) = y.at(r, c) * (self.grad.at(r, c) - dot);
    }
    accumulate(self.parents[0], g);
  });
}

Var slice_cols(const Var& x, int begin, int end) {
  require_rank(x, 2, "slice_cols");
  const int n = x->value.dim(0), m = x->value.dim(1);
  if (begin < 0 || end > m || begin >= end) throw InvalidParameter("slice_cols: bad range");
  const int w = end - begin;
  Tensor out({n, w});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = x->value.at(r, begin + c);
  return make(std::move(out), {x}, [n, m, w, begin](Node& self) {
    Tensor g({n, m});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < w; ++c) g.at(r, begin + c) = self.grad.at(r, c);
    accumulate(self.parents[0], g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: nothing to concatenate");
  const int n = parts[0]->value.dim(0);
  int m = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p->value.dim(0) != n) throw InvalidInput("concat_cols: row mismatch");
    m += p->value.dim(1);
  }
  Tensor out({n, m});
  int off = 0;
  for (const Var& p : parts) {
    const int w = p->value.dim(1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < w; ++c) out.at(r, off + c) = p->value.at(r, c);
    off += w;
  }
  return make(std::move(out), parts, [n](Node& self) {
    int offset = 0;
    for (const Var& p : self.parents) {
      const int w = p->value.dim(1);
      if (p->requires_grad) {
        Tensor g({n, w});
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < w; ++c) g.at(r, c) = self.grad.at(r, offset + c);
        accumulate(p, g);
      }
      offset += w;
    }
  });
}

Var select_rows(const Var& x, std::span<const int> rows) {
  require_rank(x, 2, "select_rows");
  const int n = x->value.dim(0), m = x->value.dim(1);
  const int k = static_cast<int>(rows.size());
  Tensor out({k, m});
  for (int i = 0; i < k; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= n) throw InvalidInput("select_rows: index out of range");
    for (int c = 0; c < m; ++c) out.at(i, c) = x->value.at(r, c);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make(std::move(out), {x}, [idx = std::move(idx), n, m](Node& self) {
    Tensor g({n, m});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < m; ++c) g.at(idx[i], c) += self.grad.at(static_cast<int>(i), c);
    accumulate(self.parents[0], g);
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const int n = x->value.dim(0), m = x->value.dim(1);
  Tensor out({n, m});
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (int c = 0; c < m; ++c) s += x->value.at(r, c) * x->value.at(r, c);
    const double nrm = std::max(std::sqrt(s), eps);
    norms[static_cast<std::size_t>(r)] = nrm;
    for (int c = 0; c < m; ++c) out.at(r, c) = x->value.at(r, c) / nrm;
  }
  return make(std::move(out), {x}, [norms = std::move(norms), n, m, eps](Node& self) {
    const Tensor& y = self.value;
    Tensor g({n, m});
    for (int r = 0; r < n; ++r) {
      const double nrm = norms[static_cast<std::size_t>(r)];
      if (nrm <= eps) {
        for (int c = 0; c < m; ++c) g.at(r, c) = self.grad.at(r, c) / eps;
        continue;
      }
      double dot = 0.0;
      for (int c = 0; c < m; ++c) dot += y.at(r, c) * self.grad.at(r, c);
      for (int c = 0; c < m; ++c) g.at(r, c) = (self.grad.at(r, c) - y.at(r, c) * dot) / nrm;
    }
    accumulate(self.parents[0], g);
  });
}

}  // namespace tdc::ag
