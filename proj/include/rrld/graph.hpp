// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rrld/common.hpp"

namespace rrld {

// Reverse-mode tape over dense row-major matrices. One Graph instance is
// built per forward pass; ops append nodes and record a backward closure.
// Activations for a batch are kept in "stacked rows" layout: a hidden state
// for B images of S tokens and width E is a (B*S) x E matrix.
template <typename T>
class Graph {
 public:
  using Mat = MatX<T>;

  struct Node {
    Mat value;
    Mat grad;                // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Graph&, int)> backprop;  // accumulates into parents
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  int input(Mat v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  // Constant copy of an existing node's value; cuts the gradient path.
  int detach(int a) { return input(nodes_[a].value, false); }

  int matmul(int a, int b) {
    int id = emit(nodes_[a].value * nodes_[b].value, {a, b});
    nodes_[id].backprop = [a, b](Graph& g, int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[a].requires_grad)
        g.accum(a, go * g.nodes_[b].value.transpose());
      if (g.nodes_[b].requires_grad)
        g.accum(b, g.nodes_[a].value.transpose() * go);
    };
    return id;
  }

  int add(int a, int b) {
    int id = emit(nodes_[a].value + nodes_[b].value, {a, b});
    nodes_[id].backprop = [a, b](Graph& g, int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[a].requires_grad) g.accum(a, go);
      if (g.nodes_[b].requires_grad) g.accum(b, go);
    };
    return id;
  }

  // Adds a 1 x C bias row to every row of a.
  int add_bias(int a, int bias) {
    Mat v = nodes_[a].value;
    v.rowwise() += nodes_[bias].value.row(0);
    int id = emit(std::move(v), {a, bias});
    nodes_[id].backprop = [a, bias](Graph& g, int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[a].requires_grad) g.accum(a, go);
      if (g.nodes_[bias].requires_grad) g.accum(bias, go.colwise().sum());
    };
    return id;
  }

  // Adds an S x E positional table to each image's S-row slab.
  int add_positional(int a, int pos, int batch) {
    const Mat& p = nodes_[pos].value;
    const Eigen::Index s = p.rows();
    Mat v = nodes_[a].value;
    for (int i = 0; i < batch; ++i) v.middleRows(i * s, s) += p;
    int id = emit(std::move(v), {a, pos});
    nodes_[id].backprop = [a, pos, batch, s](Graph& g, int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[a].requires_grad) g.accum(a, go);
      if (g.nodes_[pos].requires_grad) {
        Mat gp = Mat::Zero(s, go.cols());
        for (int i = 0; i < batch; ++i) gp += go.middleRows(i * s, s);
        g.accum(pos, gp);
      }
    };
    return id;
  }

  // Prepends the learned class token row to each image's token slab:
  // (B*S) x E -> (B*(S+1)) x E.
  int prepend_token(int a, int token, int batch) {
    const Mat& x = nodes_[a].value;
    const Eigen::Index s = x.rows() / batch;
    const Eigen::Index e = x.cols();
    Mat v(batch * (s + 1), e);
    for (int i = 0; i < batch; ++i) {
      v.row(i * (s + 1)) = nodes_[token].value.row(0);
      v.middleRows(i * (s + 1) + 1, s) = x.middleRows(i * s, s);
    }
    int id = emit(std::move(v), {a, token});
    nodes_[id].backprop = [a, token, batch, s](Graph& g, int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[a].requires_grad) {
        Mat gx(batch * s, go.cols());
        for (int i = 0; i < batch; ++i)
          gx.middleRows(i * s, s) = go.middleRows(i * (s + 1) + 1, s);
        g.accum(a, gx);
      }
      if (g.nodes_[token].requires_grad) {
        Mat gt = Mat::Zero(1, go.cols());
        for (int i = 0; i < batch; ++i) gt.row(0) += go.row(i * (s + 1));
        g.accum(token, gt);
      }
    };
    return id;
  }

  // Row-wise layer norm with affine parameters gamma, beta (1 x E each).
  int layer_norm(int a, int gamma, int beta, T eps = T(1e-6)) {
    const Mat& x = nodes_[a].value;
    const Eigen::Index e = x.cols();
    Mat xhat(x.rows(), e);
    Mat inv_std(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      T mu = x.row(r).mean();
      auto centered = (x.row(r).array() - mu).eval();
      T var = centered.square().sum() / T(e);
      T istd = T(1) / std::sqrt(var + eps);
      inv_std(r, 0) = istd;
      xhat.row(r) = centered * istd;
    }
    Mat v = xhat;
    v.array().rowwise() *= nodes_[gamma].value.row(0).array();
    v.rowwise() += nodes_[beta].value.row(0);
    int id = emit(std::move(v), {a, gamma, beta});
    nodes_[id].backprop = [a, gamma, beta, xhat, inv_std, e](Graph& g,
                                                            int self) {
      const Mat& go = g.nodes_[self].grad;
      if (g.nodes_[gamma].requires_grad)
        g.accum(gamma, (go.array() * xhat.array()).colwise().sum().matrix());
      if (g.nodes_[beta].requires_grad) g.accum(beta, go.colwise().sum());
      if (g.nodes_[a].requires_grad) {
        const auto& gm = g.nodes_[gamma].value;
        Mat gx(go.rows(), e);
        for (Eigen::Index r = 0; r < go.rows(); ++r) {
          auto dy = (go.row(r).array() * gm.row(0).array()).eval();
          T m1 = dy.sum() / T(e);
          T m2 = (dy * xhat.row(r).array()).sum() / T(e);
          gx.row(r) =
              ((dy - m1 - xhat.row(r).array() * m2) * inv_std(r, 0)).matrix();
        }
        g.accum(a, gx);
      }
    };
    return id;
  }

  // Exact GELU, x * Phi(x).
  int gelu(int a) {
    const Mat& x = nodes_[a].value;
    Mat v = x.unaryExpr([](T t) {
      return T(0.5) * t * (T(1) + std::erf(t * T(M_SQRT1_2)));
    });
    int id = emit(std::move(v), {a});
    nodes_[id].backprop = [a](Graph& g, int self) {
      if (!g.nodes_[a].requires_grad) return;
      const Mat& x = g.nodes_[a].value;
      const Mat& go = g.nodes_[self].grad;
      Mat d = x.unaryExpr([](T t) {
        T phi = std::exp(T(-0.5) * t * t) / std::sqrt(T(2) * T(M_PI));
        T cdf = T(0.5) * (T(1) + std::erf(t * T(M_SQRT1_2)));
        return cdf + t * phi;
      });
      g.accum(a, (go.array() * d.array()).matrix());
    };
    return id;
  }

  // Multi-head self-attention over a stacked-rows qkv activation:
  // input (B*S) x 3E, output (B*S) x E. Softmax probabilities are cached
  // per (image, head) for the backward pass.
  int attention(int qkv, int batch, int heads) {
    const Mat& x = nodes_[qkv].value;
    const Eigen::Index s = x.rows() / batch;
    const Eigen::Index e3 = x.cols();
    const Eigen::Index e = e3 / 3;
    const Eigen::Index dh = e / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    auto probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(static_cast<std::size_t>(batch) * heads);
    Mat out(x.rows(), e);
    for (int b = 0; b < batch; ++b) {
      auto blk = x.middleRows(b * s, s);
      for (int h = 0; h < heads; ++h) {
        auto q = blk.middleCols(h * dh, dh);
        auto k = blk.middleCols(e + h * dh, dh);
        auto v = blk.middleCols(2 * e + h * dh, dh);
        Mat logits = (q * k.transpose()) * scale;
        Mat p(s, s);
        for (Eigen::Index r = 0; r < s; ++r) {
          auto row = logits.row(r).array();
          T mx = row.maxCoeff();
          auto ex = (row - mx).exp().eval();
          p.row(r) = (ex / ex.sum()).matrix();
        }
        out.block(b * s, h * dh, s, dh) = p * v;
        probs->push_back(std::move(p));
      }
    }
    int id = emit(std::move(out), {qkv});
    nodes_[id].backprop = [qkv, batch, heads, s, e, dh, scale, probs](
                              Graph& g, int self) {
      if (!g.nodes_[qkv].requires_grad) return;
      const Mat& x = g.nodes_[qkv].value;
      const Mat& go = g.nodes_[self].grad;
      Mat gx = Mat::Zero(x.rows(), x.cols());
      for (int b = 0; b < batch; ++b) {
        auto blk = x.middleRows(b * s, s);
        for (int h = 0; h < heads; ++h) {
          const Mat& p = (*probs)[static_cast<std::size_t>(b) * heads + h];
          auto q = blk.middleCols(h * dh, dh);
          auto k = blk.middleCols(e + h * dh, dh);
          auto v = blk.middleCols(2 * e + h * dh, dh);
          auto gout = go.block(b * s, h * dh, s, dh);
          Mat gp = gout * v.transpose();
          // softmax backward per row
          Mat gl(s, s);
          for (Eigen::Index r = 0; r < s; ++r) {
            T dot = (gp.row(r).array() * p.row(r).array()).sum();
            gl.row(r) =
                (p.row(r).array() * (gp.row(r).array() - dot)).matrix();
          }
          gx.block(b * s, h * dh, s, dh) += (gl * k) * scale;
          gx.block(b * s, e + h * dh, s, dh) += (gl.transpose() * q) * scale;
          gx.block(b * s, 2 * e + h * dh, s, dh) += p.transpose() * gout;
        }
      }
      g.accum(qkv, gx);
    };
    return id;
  }

  // Gathers the class-token row of each image: (B*S) x E -> B x E.
  int class_rows(int a, int batch) {
    const Mat& x = nodes_[a].value;
    const Eigen::Index s = x.rows() / batch;
    Mat v(batch, x.cols());
    for (int i = 0; i < batch; ++i) v.row(i) = x.row(i * s);
    int id = emit(std::move(v), {a});
    nodes_[id].backprop = [a, batch, s](Graph& g, int self) {
      if (!g.nodes_[a].requires_grad) return;
      const Mat& go = g.nodes_[self].grad;
      Mat gx = Mat::Zero(batch * s, go.cols());
      for (int i = 0; i < batch; ++i) gx.row(i * s) = go.row(i);
      g.accum(a, gx);
    };
    return id;
  }

  // Mean cross-entropy between one-hot labels and softmax(logits). Returns
  // a 1x1 node. Probabilities are clamped at eps inside the log.
  int cross_entropy(int logits, const std::vector<int>& labels,
                    T eps = T(1e-12)) {
    const Mat& l = nodes_[logits].value;
    const Eigen::Index bsz = l.rows();
    Mat p = softmax_rows(l, T(1));
    T loss = T(0);
    for (Eigen::Index r = 0; r < bsz; ++r)
      loss -= std::log(std::max(p(r, labels[r]), eps));
    loss /= static_cast<T>(bsz);
    int id = emit(Mat::Constant(1, 1, loss), {logits});
    auto ps = std::make_shared<Mat>(std::move(p));
    nodes_[id].backprop = [logits, labels, ps, bsz](Graph& g, int self) {
      if (!g.nodes_[logits].requires_grad) return;
      T go = g.nodes_[self].grad(0, 0);
      Mat gl = *ps;
      for (Eigen::Index r = 0; r < bsz; ++r) gl(r, labels[r]) -= T(1);
      g.accum(logits, gl * (go / static_cast<T>(bsz)));
    };
    return id;
  }

  // Mean KL(softmax(a/temp) || softmax(b/temp)) over batch rows. Gradient
  // flows into both arguments unless one of them is a detached node.
  int kl_temperature(int a, int b, T temp, T eps = T(1e-12)) {
    const Mat& la = nodes_[a].value;
    const Mat& lb = nodes_[b].value;
    if (la.rows() != lb.rows() || la.cols() != lb.cols())
      throw DimensionError("kl_temperature: shape mismatch");
    const Eigen::Index bsz = la.rows();
    auto p = std::make_shared<Mat>(softmax_rows(la, temp));
    auto q = std::make_shared<Mat>(softmax_rows(lb, temp));
    auto ratio = std::make_shared<Mat>(la.rows(), la.cols());
    T loss = T(0);
    for (Eigen::Index r = 0; r < bsz; ++r) {
      for (Eigen::Index c = 0; c < la.cols(); ++c) {
        T pv = (*p)(r, c);
        T lr = std::log(std::max(pv, eps)) - std::log(std::max((*q)(r, c), eps));
        (*ratio)(r, c) = lr;
        if (pv > T(0)) loss += pv * lr;
      }
    }
    loss /= static_cast<T>(bsz);
    int id = emit(Mat::Constant(1, 1, loss), {a, b});
    nodes_[id].backprop = [a, b, p, q, ratio, temp, bsz](Graph& g, int self) {
      T go = g.nodes_[self].grad(0, 0);
      T coef = go / (temp * static_cast<T>(bsz));
      if (g.nodes_[a].requires_grad) {
        Mat gl(p->rows(), p->cols());
        for (Eigen::Index r = 0; r < p->rows(); ++r) {
          T mean_r = (p->row(r).array() * ratio->row(r).array()).sum();
          gl.row(r) =
              (p->row(r).array() * (ratio->row(r).array() - mean_r)).matrix();
        }
        g.accum(a, gl * coef);
      }
      if (g.nodes_[b].requires_grad) g.accum(b, (*q - *p) * coef);
    };
    return id;
  }

  // total = sum_i coeffs[i] * terms[i], each term a 1x1 node.
  int weighted_sum(const std::vector<int>& terms,
                   const std::vector<T>& coeffs) {
    T total = T(0);
    for (std::size_t i = 0; i < terms.size(); ++i)
      total += coeffs[i] * nodes_[terms[i]].value(0, 0);
    int id = emit(Mat::Constant(1, 1, total), terms);
    nodes_[id].backprop = [terms, coeffs](Graph& g, int self) {
      T go = g.nodes_[self].grad(0, 0);
      for (std::size_t i = 0; i < terms.size(); ++i)
        if (g.nodes_[terms[i]].requires_grad)
          g.accum(terms[i], Mat::Constant(1, 1, go * coeffs[i]));
    };
    return id;
  }

  // Backpropagates from a scalar node. Node ids are already a topological
  // order (ops only consume earlier nodes), so a reverse sweep suffices.
  void backward(int root) {
    const auto& rv = nodes_[root].value;
    if (rv.rows() != 1 || rv.cols() != 1)
      throw DimensionError("backward: root must be scalar");
    if (!std::isfinite(static_cast<double>(rv(0, 0))))
      throw NumericError("backward: non-finite loss");
    nodes_[root].grad = Mat::Constant(1, 1, T(1));
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(*this, id);
    }
  }

  static Mat softmax_rows(const Mat& logits, T temp) {
    Mat p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      auto row = (logits.row(r).array() / temp).eval();
      T mx = row.maxCoeff();
      auto ex = (row - mx).exp().eval();
      p.row(r) = (ex / ex.sum()).matrix();
    }
    return p;
  }

 private:
  int emit(Mat v, const std::vector<int>& parents) {
    Node n;
    n.value = std::move(v);
    for (int p : parents)
      if (nodes_[p].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  void accum(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  std::vector<Node> nodes_;
};

}  // namespace rrld
