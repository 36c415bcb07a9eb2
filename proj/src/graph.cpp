#include "divlab/graph.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "divlab/kernels.hpp"

namespace divlab::model {

namespace {

template <typename T>
std::span<const T> cspan(const Matrix<T>& m) {
  return {m.data.data(), m.data.size()};
}

template <typename T>
std::span<T> mspan(Matrix<T>& m) {
  return {m.data.data(), m.data.size()};
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void require_same(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

}  // namespace

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.begin(), logits.end());
  kernels::softmax_rows<T>(p, 1, static_cast<int>(p.size()));
  return p;
}

template <typename T>
T log_sum_exp(std::span<const T> logits) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : logits) m = std::max(m, v);
  T s = 0;
  for (T v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

template <typename T>
typename Graph<T>::Var Graph<T>::push(Matrix<T> value, std::function<void(Graph&, Node&)> back) {
  Node n;
  n.value = std::move(value);
  if (record_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size()) - 1;
}

template <typename T>
Matrix<T>& Graph<T>::grad_of(Var v) {
  Node& n = nodes_[v];
  if (!n.value.same_shape(n.grad)) n.grad = Matrix<T>(n.value.rows, n.value.cols);
  return n.grad;
}

template <typename T>
typename Graph<T>::Var Graph<T>::constant(Matrix<T> value) {
  return push(std::move(value), nullptr);
}

template <typename T>
typename Graph<T>::Var Graph<T>::gather_rows(ParamRef<T> table, std::span<const int> ids) {
  const Matrix<T>& t = *table.value;
  Matrix<T> out(static_cast<int>(ids.size()), t.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows) {
      throw Error("embedding id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(t.rows) + ")");
    }
    std::copy(t.row(ids[i]).begin(), t.row(ids[i]).end(), out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return push(std::move(out), [table, idx](Graph&, Node& self) {
    if (table.grad == nullptr) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = self.grad.row(static_cast<int>(i));
      auto dst = table.grad->row(idx[i]);
      for (int c = 0; c < table.grad->cols; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::concat_cols(Var a, Var b) {
  const Matrix<T>& va = value(a);
  const Matrix<T>& vb = value(b);
  if (va.rows != vb.rows) throw Error("concat_cols: row mismatch");
  Matrix<T> out(va.rows, va.cols + vb.cols);
  for (int r = 0; r < va.rows; ++r) {
    std::copy(va.row(r).begin(), va.row(r).end(), out.row(r).begin());
    std::copy(vb.row(r).begin(), vb.row(r).end(), out.row(r).begin() + va.cols);
  }
  const int ca = va.cols;
  const int cb = vb.cols;
  return push(std::move(out), [a, b, ca, cb](Graph& g, Node& self) {
    Matrix<T>& ga = g.grad_of(a);
    Matrix<T>& gb = g.grad_of(b);
    for (int r = 0; r < self.grad.rows; ++r) {
      auto src = self.grad.row(r);
      for (int c = 0; c < ca; ++c) ga(r, c) += src[c];
      for (int c = 0; c < cb; ++c) gb(r, c) += src[ca + c];
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  Matrix<T> out = value(a);
  add_into(out, value(b));
  return push(std::move(out), [a, b](Graph& g, Node& self) {
    add_into(g.grad_of(a), self.grad);
    add_into(g.grad_of(b), self.grad);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::add_constant(Var a, const Matrix<T>& c) {
  require_same(value(a), c, "add_constant");
  Matrix<T> out = value(a);
  add_into(out, c);
  return push(std::move(out), [a](Graph& g, Node& self) { add_into(g.grad_of(a), self.grad); });
}

template <typename T>
typename Graph<T>::Var Graph<T>::scale(Var a, T factor) {
  Matrix<T> out = value(a);
  for (T& v : out.data) v *= factor;
  return push(std::move(out), [a, factor](Graph& g, Node& self) {
    Matrix<T>& ga = g.grad_of(a);
    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += factor * self.grad.data[i];
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::linear(Var x, ParamRef<T> w, ParamRef<T> b) {
  const Matrix<T>& vx = value(x);
  const Matrix<T>& vw = *w.value;
  if (vx.cols != vw.rows) throw Error("linear: input width does not match weight rows");
  const int m = vx.rows;
  const int k = vw.rows;
  const int n = vw.cols;
  Matrix<T> out(m, n);
  for (int r = 0; r < m; ++r) std::copy(b.value->data.begin(), b.value->data.end(), out.row(r).begin());
  kernels::matmul<T>(cspan(vx), cspan(vw), mspan(out), m, k, n, true);
  return push(std::move(out), [x, w, b, m, k, n](Graph& g, Node& self) {
    const Matrix<T>& vx = g.value(x);
    kernels::matmul_a_bt<T>(cspan(self.grad), cspan(*w.value), mspan(g.grad_of(x)), m, n, k, true);
    if (w.grad) kernels::matmul_at_b<T>(cspan(vx), cspan(self.grad), mspan(*w.grad), m, k, n);
    if (b.grad) {
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) b.grad->data[c] += self.grad(r, c);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::linear_transposed(Var x, ParamRef<T> table, ParamRef<T> b) {
  const Matrix<T>& vx = value(x);
  const Matrix<T>& vt = *table.value;
  if (vx.cols != vt.cols) throw Error("linear_transposed: input width does not match table width");
  const int m = vx.rows;
  const int k = vt.cols;
  const int n = vt.rows;
  Matrix<T> out(m, n);
  for (int r = 0; r < m; ++r) std::copy(b.value->data.begin(), b.value->data.end(), out.row(r).begin());
  kernels::matmul_a_bt<T>(cspan(vx), cspan(vt), mspan(out), m, k, n, true);
  return push(std::move(out), [x, table, b, m, k, n](Graph& g, Node& self) {
    const Matrix<T>& vx = g.value(x);
    kernels::matmul<T>(cspan(self.grad), cspan(*table.value), mspan(g.grad_of(x)), m, n, k, true);
    if (table.grad) kernels::matmul_at_b<T>(cspan(self.grad), cspan(vx), mspan(*table.grad), m, n, k);
    if (b.grad) {
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) b.grad->data[c] += self.grad(r, c);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::layer_norm(Var x, ParamRef<T> gamma, ParamRef<T> beta, T eps) {
  const Matrix<T>& vx = value(x);
  const int rows = vx.rows;
  const int cols = vx.cols;
  Matrix<T> xhat(rows, cols);
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  kernels::normalize_rows<T>(cspan(vx), mspan(xhat), inv_std, rows, cols, eps);
  Matrix<T> out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = xhat(r, c) * gamma.value->data[c] + beta.value->data[c];
  return push(std::move(out), [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                               cols](Graph& g, Node& self) {
    Matrix<T>& gx = g.grad_of(x);
    std::vector<T> dxhat(static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r) {
      T mean_d = 0;
      T mean_dx = 0;
      for (int c = 0; c < cols; ++c) {
        const T dy = self.grad(r, c);
        dxhat[c] = dy * gamma.value->data[c];
        mean_d += dxhat[c];
        mean_dx += dxhat[c] * xhat(r, c);
        if (gamma.grad) gamma.grad->data[c] += dy * xhat(r, c);
        if (beta.grad) beta.grad->data[c] += dy;
      }
      mean_d /= cols;
      mean_dx /= cols;
      for (int c = 0; c < cols; ++c) gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::relu(Var x) {
  Matrix<T> out = value(x);
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return push(std::move(out), [x](Graph& g, Node& self) {
    Matrix<T>& gx = g.grad_of(x);
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      if (self.value.data[i] > T(0)) gx.data[i] += self.grad.data[i];
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::dropout(Var x, T p, Rng& rng) {
  if (p <= T(0)) return x;
  if (p >= T(1)) throw Error("dropout probability must be < 1");
  const Matrix<T>& vx = value(x);
  std::vector<T> mask(vx.data.size());
  const T keep = T(1) / (T(1) - p);
  for (T& m : mask) m = uniform_unit(rng) < static_cast<double>(p) ? T(0) : keep;
  Matrix<T> out = vx;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
  return push(std::move(out), [x, mask = std::move(mask)](Graph& g, Node& self) {
    Matrix<T>& gx = g.grad_of(x);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += mask[i] * self.grad.data[i];
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::attention(Var q, Var k, Var v, int heads, bool causal) {
  const Matrix<T>& vq = value(q);
  const Matrix<T>& vk = value(k);
  const Matrix<T>& vv = value(v);
  if (vk.rows != vv.rows || vq.cols != vk.cols || vk.cols != vv.cols) throw Error("attention: shape mismatch");
  if (heads <= 0 || vq.cols % heads != 0) throw Error("attention: width not divisible by heads");
  const int tq = vq.rows;
  const int tk = vk.rows;
  const int d = vq.cols;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  auto slice = [](const Matrix<T>& m, int h, int dh) {
    Matrix<T> s(m.rows, dh);
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < dh; ++c) s(r, c) = m(r, h * dh + c);
    return s;
  };

  Matrix<T> out(tq, d);
  std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Matrix<T> qh = slice(vq, h, dh);
    const Matrix<T> kh = slice(vk, h, dh);
    const Matrix<T> vh = slice(vv, h, dh);
    Matrix<T> s(tq, tk);
    kernels::matmul_a_bt<T>(cspan(qh), cspan(kh), mspan(s), tq, dh, tk);
    for (int i = 0; i < tq; ++i)
      for (int j = 0; j < tk; ++j) {
        s(i, j) *= scale;
        if (causal && j > i) s(i, j) = -std::numeric_limits<T>::infinity();
      }
    kernels::softmax_rows<T>(mspan(s), tq, tk);
    Matrix<T> oh(tq, dh);
    kernels::matmul<T>(cspan(s), cspan(vh), mspan(oh), tq, tk, dh);
    for (int r = 0; r < tq; ++r)
      for (int c = 0; c < dh; ++c) out(r, h * dh + c) = oh(r, c);
    probs[h] = std::move(s);
  }
  if (!record_) return push(std::move(out), nullptr);

  return push(std::move(out), [q, k, v, heads, tq, tk, dh, scale, slice,
                               probs = std::move(probs)](Graph& g, Node& self) {
    const Matrix<T>& vq = g.value(q);
    const Matrix<T>& vk = g.value(k);
    const Matrix<T>& vv = g.value(v);
    Matrix<T>& gq = g.grad_of(q);
    Matrix<T>& gk = g.grad_of(k);
    Matrix<T>& gv = g.grad_of(v);
    for (int h = 0; h < heads; ++h) {
      const Matrix<T> qh = slice(vq, h, dh);
      const Matrix<T> kh = slice(vk, h, dh);
      const Matrix<T> vh = slice(vv, h, dh);
      const Matrix<T> doh = slice(self.grad, h, dh);
      const Matrix<T>& p = probs[h];
      Matrix<T> dvh(tk, dh);
      kernels::matmul_at_b<T>(cspan(p), cspan(doh), mspan(dvh), tq, tk, dh);
      Matrix<T> dp(tq, tk);
      kernels::matmul_a_bt<T>(cspan(doh), cspan(vh), mspan(dp), tq, dh, tk);
      for (int i = 0; i < tq; ++i) {
        T dot = 0;
        for (int j = 0; j < tk; ++j) dot += dp(i, j) * p(i, j);
        for (int j = 0; j < tk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
      }
      Matrix<T> dqh(tq, dh);
      kernels::matmul<T>(cspan(dp), cspan(kh), mspan(dqh), tq, tk, dh);
      Matrix<T> dkh(tk, dh);
      kernels::matmul_at_b<T>(cspan(dp), cspan(qh), mspan(dkh), tq, tk, dh);
      for (int r = 0; r < tq; ++r)
        for (int c = 0; c < dh; ++c) gq(r, h * dh + c) += dqh(r, c);
      for (int r = 0; r < tk; ++r)
        for (int c = 0; c < dh; ++c) {
          gk(r, h * dh + c) += dkh(r, c);
          gv(r, h * dh + c) += dvh(r, c);
        }
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets, T smoothing,
                                                int ignore_id) {
  const Matrix<T>& vl = value(logits);
  if (static_cast<std::size_t>(vl.rows) != targets.size()) throw Error("cross_entropy: target count mismatch");
  const int rows = vl.rows;
  const int cols = vl.cols;
  Matrix<T> probs = vl;
  kernels::softmax_rows<T>(mspan(probs), rows, cols);
  T total = 0;
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int r = 0; r < rows; ++r) {
    if (tgt[r] == ignore_id) continue;
    if (tgt[r] < 0 || tgt[r] >= cols) throw Error("cross_entropy: target id out of range");
    for (T v : vl.row(r)) {
      if (!std::isfinite(v)) throw Error("cross_entropy: non-finite logit");
    }
    const T lse = log_sum_exp<T>(vl.row(r));
    const T nll = lse - vl(r, tgt[r]);
    T loss = (T(1) - smoothing) * nll;
    if (smoothing > T(0)) {
      T mean_nll = 0;
      for (int c = 0; c < cols; ++c) mean_nll += lse - vl(r, c);
      loss += smoothing * mean_nll / cols;
    }
    total += loss;
  }
  Matrix<T> out(1, 1, total);
  return push(std::move(out), [logits, tgt = std::move(tgt), probs = std::move(probs), smoothing, ignore_id, rows,
                               cols](Graph& g, Node& self) {
    Matrix<T>& gl = g.grad_of(logits);
    const T up = self.grad.data[0];
    for (int r = 0; r < rows; ++r) {
      if (tgt[r] == ignore_id) continue;
      for (int c = 0; c < cols; ++c) {
        T q = smoothing / cols;
        if (c == tgt[r]) q += T(1) - smoothing;
        gl(r, c) += up * (probs(r, c) - q);
      }
    }
  });
}

template <typename T>
void Graph<T>::backward(Var loss, T seed) {
  if (!record_) throw Error("backward on a graph built without recording");
  if (value(loss).rows != 1 || value(loss).cols != 1) throw Error("backward needs a scalar node");
  for (Node& n : nodes_) {
    if (n.grad.size() != 0) n.grad.fill(T(0));
  }
  grad_of(loss).data[0] = seed;
  for (int i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.size() == 0) continue;
    n.back(*this, n);
  }
}

template class Graph<float>;
template class Graph<double>;
template std::vector<float> softmax<float>(std::span<const float>);
template std::vector<double> softmax<double>(std::span<const double>);
template float log_sum_exp<float>(std::span<const float>);
template double log_sum_exp<double>(std::span<const double>);

}  // namespace divlab::model
