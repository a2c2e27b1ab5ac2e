#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/matrix.hpp"

namespace uniclass {

// A slice runs along its axis: Axis::Rows means "per row" (one slice = one
// row), Axis::Cols means "per column".
enum class Axis { Rows, Cols };

enum class RunMode { Train, Eval };

// Handle into a Graph's tape. Only meaningful together with the graph that
// produced it.
struct Var {
    std::uint32_t id = 0;
};

struct BatchNormState {
    Mat running_mean;  // 1 x D
    Mat running_var;   // 1 x D

    static BatchNormState fresh(std::size_t dim) {
        BatchNormState s;
        s.running_mean = Mat(1, dim, 0.0);
        s.running_var = Mat(1, dim, 1.0);
        return s;
    }
};

// Reverse-mode tape over Mat values. Ops are recorded on the forward pass;
// backward() replays them once in reverse. A graph is confined to one thread
// and rebuilt per training step; independent graphs may run concurrently.
class Graph {
public:
    Var leaf(Mat value, bool requires_grad = false) {
        return record(std::move(value), requires_grad, nullptr);
    }

    Var constant(Mat value) { return leaf(std::move(value), false); }

    const Mat& value(Var v) const { return node(v).value; }

    const Mat& grad(Var v) const {
        const Node& n = node(v);
        if (!n.requires_grad) throw DomainError("grad: tensor does not track gradients");
        return n.grad;
    }

    bool requires_grad(Var v) const { return node(v).requires_grad; }

    std::size_t node_count() const { return nodes_.size(); }

    void zero_grad() {
        for (Node& n : nodes_)
            if (n.requires_grad) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }

    // out = a . b
    Var matmul(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.cols != bv.rows) throw DimensionError("matmul: inner dimensions disagree");
        Mat out(av.rows, bv.cols, 0.0);
        mm_nn(av, bv, out);
        const bool rg = requires_grad(a) || requires_grad(b);
        return record(std::move(out), rg, [a, b](Graph& g, Var out_var) {
            const Mat& dout = g.node(out_var).grad;
            if (g.requires_grad(a)) mm_nt(dout, g.value(b), g.node(a).grad);  // dA += dOut . B^T
            if (g.requires_grad(b)) mm_tn(g.value(a), dout, g.node(b).grad);  // dB += A^T . dOut
        });
    }

    // out = a . b^T
    Var matmul_nt(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.cols != bv.cols) throw DimensionError("matmul_nt: inner dimensions disagree");
        Mat out(av.rows, bv.rows, 0.0);
        mm_nt(av, bv, out);
        const bool rg = requires_grad(a) || requires_grad(b);
        return record(std::move(out), rg, [a, b](Graph& g, Var out_var) {
            const Mat& dout = g.node(out_var).grad;
            if (g.requires_grad(a)) mm_nn(dout, g.value(b), g.node(a).grad);  // dA += dOut . B
            if (g.requires_grad(b)) mm_tn(dout, g.value(a), g.node(b).grad);  // dB += dOut^T . A
        });
    }

    // Max-shifted softmax along the axis with temperature. Every slice of the
    // result sums to 1.
    Var softmax(Var x, Axis axis, double temperature) {
        if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
        const Mat& xv = value(x);
        Mat out(xv.rows, xv.cols);
        for_each_slice(xv.rows, xv.cols, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
            double mx = xv.data[base];
            for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv.data[base + k * stride]);
            double sum = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double e = std::exp((xv.data[base + k * stride] - mx) / temperature);
                out.data[base + k * stride] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < len; ++k) out.data[base + k * stride] /= sum;
        });
        return record(std::move(out), requires_grad(x), [x, axis, temperature](Graph& g, Var out_var) {
            const Mat& y = g.value(out_var);
            const Mat& dy = g.node(out_var).grad;
            Mat& dx = g.node(x).grad;
            for_each_slice(y.rows, y.cols, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
                double dot = 0.0;
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t i = base + k * stride;
                    dot += dy.data[i] * y.data[i];
                }
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t i = base + k * stride;
                    dx.data[i] += y.data[i] * (dy.data[i] - dot) / temperature;
                }
            });
        });
    }

    // L1 normalization along the axis. Entries must be non-negative and every
    // slice must carry strictly positive mass; an exactly-zero slice signals a
    // fully dead class/sample and raises DegenerateSliceError.
    Var l1_normalize(Var x, Axis axis) {
        const Mat& xv = value(x);
        std::vector<double> sums;
        for_each_slice(xv.rows, xv.cols, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
            double s = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double v = xv.data[base + k * stride];
                if (v < 0.0) throw DomainError("l1_normalize: negative entry");
                s += v;
            }
            if (s < 1e-300)
                throw DegenerateSliceError("l1_normalize: zero-sum slice (dead class or sample)");
            sums.push_back(s);
        });
        Mat out(xv.rows, xv.cols);
        std::size_t slice = 0;
        for_each_slice(xv.rows, xv.cols, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
            const double inv = 1.0 / sums[slice++];
            for (std::size_t k = 0; k < len; ++k)
                out.data[base + k * stride] = xv.data[base + k * stride] * inv;
        });
        return record(std::move(out), requires_grad(x),
                      [x, axis, sums = std::move(sums)](Graph& g, Var out_var) {
                          const Mat& y = g.value(out_var);
                          const Mat& dy = g.node(out_var).grad;
                          Mat& dx = g.node(x).grad;
                          std::size_t slice = 0;
                          for_each_slice(y.rows, y.cols, axis,
                                         [&](std::size_t base, std::size_t stride, std::size_t len) {
                                             const double inv = 1.0 / sums[slice++];
                                             double dot = 0.0;
                                             for (std::size_t k = 0; k < len; ++k) {
                                                 const std::size_t i = base + k * stride;
                                                 dot += dy.data[i] * y.data[i];
                                             }
                                             for (std::size_t k = 0; k < len; ++k) {
                                                 const std::size_t i = base + k * stride;
                                                 dx.data[i] += (dy.data[i] - dot) * inv;
                                             }
                                         });
                      });
    }

    // Scales every row to unit Euclidean norm.
    Var l2_normalize_rows(Var x) {
        const Mat& xv = value(x);
        std::vector<double> inv_norms(xv.rows);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < xv.cols; ++c) s += xv(r, c) * xv(r, c);
            const double norm = std::sqrt(s);
            if (norm <= 1e-12) throw DegenerateRowError("l2_normalize_rows: near-zero row");
            inv_norms[r] = 1.0 / norm;
        }
        Mat out(xv.rows, xv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r)
            for (std::size_t c = 0; c < xv.cols; ++c) out(r, c) = xv(r, c) * inv_norms[r];
        return record(std::move(out), requires_grad(x),
                      [x, inv_norms = std::move(inv_norms)](Graph& g, Var out_var) {
                          const Mat& y = g.value(out_var);
                          const Mat& dy = g.node(out_var).grad;
                          Mat& dx = g.node(x).grad;
                          for (std::size_t r = 0; r < y.rows; ++r) {
                              double dot = 0.0;
                              for (std::size_t c = 0; c < y.cols; ++c) dot += dy(r, c) * y(r, c);
                              for (std::size_t c = 0; c < y.cols; ++c)
                                  dx(r, c) += (dy(r, c) - dot * y(r, c)) * inv_norms[r];
                          }
                      });
    }

    // Elementwise natural log; entries must be strictly positive.
    Var log(Var x) {
        const Mat& xv = value(x);
        Mat out(xv.rows, xv.cols);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            if (!(xv.data[i] > 0.0)) throw DomainError("log: non-positive entry");
            out.data[i] = std::log(xv.data[i]);
        }
        return record(std::move(out), requires_grad(x), [x](Graph& g, Var out_var) {
            const Mat& dy = g.node(out_var).grad;
            const Mat& xin = g.value(x);
            Mat& dx = g.node(x).grad;
            for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] / xin.data[i];
        });
    }

    Var leaky_relu(Var x, double slope) {
        const Mat& xv = value(x);
        Mat out(xv.rows, xv.cols);
        for (std::size_t i = 0; i < xv.size(); ++i)
            out.data[i] = xv.data[i] > 0.0 ? xv.data[i] : slope * xv.data[i];
        return record(std::move(out), requires_grad(x), [x, slope](Graph& g, Var out_var) {
            const Mat& dy = g.node(out_var).grad;
            const Mat& xin = g.value(x);
            Mat& dx = g.node(x).grad;
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx.data[i] += dy.data[i] * (xin.data[i] > 0.0 ? 1.0 : slope);
        });
    }

    Var scale(Var x, double factor) {
        const Mat& xv = value(x);
        Mat out(xv.rows, xv.cols);
        for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = factor * xv.data[i];
        return record(std::move(out), requires_grad(x), [x, factor](Graph& g, Var out_var) {
            const Mat& dy = g.node(out_var).grad;
            Mat& dx = g.node(x).grad;
            for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += factor * dy.data[i];
        });
    }

    // Hadamard product of same-shape matrices.
    Var mul(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (!av.same_shape(bv)) throw DimensionError("mul: shape mismatch");
        Mat out(av.rows, av.cols);
        for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
        const bool rg = requires_grad(a) || requires_grad(b);
        return record(std::move(out), rg, [a, b](Graph& g, Var out_var) {
            const Mat& dy = g.node(out_var).grad;
            if (g.requires_grad(a)) {
                const Mat& bv2 = g.value(b);
                Mat& da = g.node(a).grad;
                for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i] * bv2.data[i];
            }
            if (g.requires_grad(b)) {
                const Mat& av2 = g.value(a);
                Mat& db = g.node(b).grad;
                for (std::size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i] * av2.data[i];
            }
        });
    }

    Var add(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (!av.same_shape(bv)) throw DimensionError("add: shape mismatch");
        Mat out(av.rows, av.cols);
        for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
        const bool rg = requires_grad(a) || requires_grad(b);
        return record(std::move(out), rg, [a, b](Graph& g, Var out_var) {
            const Mat& dy = g.node(out_var).grad;
            if (g.requires_grad(a)) {
                Mat& da = g.node(a).grad;
                for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i];
            }
            if (g.requires_grad(b)) {
                Mat& db = g.node(b).grad;
                for (std::size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i];
            }
        });
    }

    // Per-slice sum: Rows -> N x 1, Cols -> 1 x C.
    Var sum(Var x, Axis axis) { return reduce(x, axis, false); }
    Var mean(Var x, Axis axis) { return reduce(x, axis, true); }

    Var sum_all(Var x) { return reduce_all(x, false); }
    Var mean_all(Var x) { return reduce_all(x, true); }

    // Batch normalization over the batch (row) axis. Train mode standardizes
    // with batch statistics and updates running stats in `state`; eval mode
    // standardizes with the running stats. scale_p and shift_p are 1 x D.
    Var batch_norm(Var x, Var scale_p, Var shift_p, BatchNormState& state, RunMode mode,
                   double eps = 1e-5, double momentum = 0.1) {
        const Mat& xv = value(x);
        const Mat& gv = value(scale_p);
        const Mat& bv = value(shift_p);
        const std::size_t n = xv.rows, d = xv.cols;
        if (gv.rows != 1 || gv.cols != d || bv.rows != 1 || bv.cols != d)
            throw DimensionError("batch_norm: scale/shift must be 1 x D");
        if (state.running_mean.cols != d || state.running_var.cols != d)
            throw DimensionError("batch_norm: state dimension mismatch");

        if (mode == RunMode::Train) {
            if (n < 2) throw BatchTooSmallError("batch_norm: train mode needs at least 2 rows");
            std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) mean[c] += xv(r, c);
            for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) {
                    const double t = xv(r, c) - mean[c];
                    var[c] += t * t;
                }
            for (std::size_t c = 0; c < d; ++c) {
                var[c] /= static_cast<double>(n);
                inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
            }
            Mat xhat(n, d);
            Mat out(n, d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) {
                    xhat(r, c) = (xv(r, c) - mean[c]) * inv_std[c];
                    out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
                }
            for (std::size_t c = 0; c < d; ++c) {
                state.running_mean(0, c) = (1.0 - momentum) * state.running_mean(0, c) + momentum * mean[c];
                state.running_var(0, c) = (1.0 - momentum) * state.running_var(0, c) + momentum * var[c];
            }
            const bool rg = requires_grad(x) || requires_grad(scale_p) || requires_grad(shift_p);
            return record(std::move(out), rg,
                          [x, scale_p, shift_p, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)](Graph& g, Var out_var) {
                              const Mat& dy = g.node(out_var).grad;
                              const std::size_t n2 = dy.rows, d2 = dy.cols;
                              const Mat& gamma = g.value(scale_p);
                              if (g.requires_grad(shift_p)) {
                                  Mat& db = g.node(shift_p).grad;
                                  for (std::size_t r = 0; r < n2; ++r)
                                      for (std::size_t c = 0; c < d2; ++c) db(0, c) += dy(r, c);
                              }
                              if (g.requires_grad(scale_p)) {
                                  Mat& dg = g.node(scale_p).grad;
                                  for (std::size_t r = 0; r < n2; ++r)
                                      for (std::size_t c = 0; c < d2; ++c)
                                          dg(0, c) += dy(r, c) * xhat(r, c);
                              }
                              if (g.requires_grad(x)) {
                                  Mat& dx = g.node(x).grad;
                                  std::vector<double> sum_dxhat(d2, 0.0), sum_dxhat_xhat(d2, 0.0);
                                  for (std::size_t r = 0; r < n2; ++r)
                                      for (std::size_t c = 0; c < d2; ++c) {
                                          const double dxh = dy(r, c) * gamma(0, c);
                                          sum_dxhat[c] += dxh;
                                          sum_dxhat_xhat[c] += dxh * xhat(r, c);
                                      }
                                  const double invn = 1.0 / static_cast<double>(n2);
                                  for (std::size_t r = 0; r < n2; ++r)
                                      for (std::size_t c = 0; c < d2; ++c) {
                                          const double dxh = dy(r, c) * gamma(0, c);
                                          dx(r, c) += inv_std[c] *
                                                      (dxh - invn * sum_dxhat[c] -
                                                       invn * xhat(r, c) * sum_dxhat_xhat[c]);
                                      }
                              }
                          });
        }

        // Eval: affine transform with frozen statistics.
        std::vector<double> inv_std(d);
        Mat rm = state.running_mean;
        for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(state.running_var(0, c) + eps);
        Mat out(n, d);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c)
                out(r, c) = gv(0, c) * (xv(r, c) - rm(0, c)) * inv_std[c] + bv(0, c);
        const bool rg = requires_grad(x) || requires_grad(scale_p) || requires_grad(shift_p);
        return record(std::move(out), rg,
                      [x, scale_p, shift_p, rm = std::move(rm),
                       inv_std = std::move(inv_std)](Graph& g, Var out_var) {
                          const Mat& dy = g.node(out_var).grad;
                          const Mat& xin = g.value(x);
                          const Mat& gamma = g.value(scale_p);
                          const std::size_t n2 = dy.rows, d2 = dy.cols;
                          if (g.requires_grad(shift_p)) {
                              Mat& db = g.node(shift_p).grad;
                              for (std::size_t r = 0; r < n2; ++r)
                                  for (std::size_t c = 0; c < d2; ++c) db(0, c) += dy(r, c);
                          }
                          if (g.requires_grad(scale_p)) {
                              Mat& dg = g.node(scale_p).grad;
                              for (std::size_t r = 0; r < n2; ++r)
                                  for (std::size_t c = 0; c < d2; ++c)
                                      dg(0, c) += dy(r, c) * (xin(r, c) - rm(0, c)) * inv_std[c];
                          }
                          if (g.requires_grad(x)) {
                              Mat& dx = g.node(x).grad;
                              for (std::size_t r = 0; r < n2; ++r)
                                  for (std::size_t c = 0; c < d2; ++c)
                                      dx(r, c) += dy(r, c) * gamma(0, c) * inv_std[c];
                          }
                      });
    }

    // Reverse sweep from a scalar loss. Leaf grads accumulate across calls
    // (zero_grad() resets them); interior-node grads are scratch space and are
    // cleared at the start of every sweep.
    void backward(Var loss_var) {
        Node& loss = node(loss_var);
        if (loss.value.rows != 1 || loss.value.cols != 1)
            throw DimensionError("backward: loss must be a 1 x 1 scalar");
        if (!loss.requires_grad) return;
        for (std::uint32_t id = 0; id <= loss_var.id; ++id) {
            Node& n = nodes_[id];
            if (n.requires_grad && n.backprop)
                std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
        }
        loss.grad(0, 0) += 1.0;
        for (std::uint32_t id = loss_var.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.requires_grad && n.backprop) n.backprop(*this, Var{id});
        }
    }

private:
    using BackpropFn = std::function<void(Graph&, Var)>;

    struct Node {
        Mat value;
        Mat grad;  // allocated iff requires_grad
        bool requires_grad = false;
        BackpropFn backprop;  // empty for leaves
    };

    // deque: node references stay valid while later ops are recorded
    std::deque<Node> nodes_;

    Node& node(Var v) { return nodes_.at(v.id); }
    const Node& node(Var v) const { return nodes_.at(v.id); }

    Var record(Mat value, bool requires_grad, BackpropFn backprop) {
        Node n;
        n.requires_grad = requires_grad;
        if (requires_grad) {
            n.grad = Mat(value.rows, value.cols, 0.0);
            n.backprop = std::move(backprop);
        }
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    template <typename Fn>
    static void for_each_slice(std::size_t rows, std::size_t cols, Axis axis, Fn&& fn) {
        if (axis == Axis::Rows) {
            for (std::size_t r = 0; r < rows; ++r) fn(r * cols, std::size_t{1}, cols);
        } else {
            for (std::size_t c = 0; c < cols; ++c) fn(c, cols, rows);
        }
    }

    Var reduce(Var x, Axis axis, bool take_mean) {
        const Mat& xv = value(x);
        Mat out(axis == Axis::Rows ? xv.rows : 1, axis == Axis::Rows ? 1 : xv.cols, 0.0);
        std::size_t slice = 0;
        const double inv_len = 1.0 / static_cast<double>(axis == Axis::Rows ? xv.cols : xv.rows);
        for_each_slice(xv.rows, xv.cols, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
            double s = 0.0;
            for (std::size_t k = 0; k < len; ++k) s += xv.data[base + k * stride];
            out.data[slice++] = take_mean ? s * inv_len : s;
        });
        return record(std::move(out), requires_grad(x),
                      [x, axis, take_mean, inv_len](Graph& g, Var out_var) {
                          const Mat& dy = g.node(out_var).grad;
                          Mat& dx = g.node(x).grad;
                          std::size_t slice = 0;
                          const double f = take_mean ? inv_len : 1.0;
                          for_each_slice(dx.rows, dx.cols, axis,
                                         [&](std::size_t base, std::size_t stride, std::size_t len) {
                                             const double d = dy.data[slice++] * f;
                                             for (std::size_t k = 0; k < len; ++k)
                                                 dx.data[base + k * stride] += d;
                                         });
                      });
    }

    Var reduce_all(Var x, bool take_mean) {
        const Mat& xv = value(x);
        double s = 0.0;
        for (double v : xv.data) s += v;
        const double inv_len = 1.0 / static_cast<double>(xv.size());
        Mat out(1, 1, take_mean ? s * inv_len : s);
        return record(std::move(out), requires_grad(x),
                      [x, take_mean, inv_len](Graph& g, Var out_var) {
                          const double d = g.node(out_var).grad(0, 0) * (take_mean ? inv_len : 1.0);
                          Mat& dx = g.node(x).grad;
                          for (double& v : dx.data) v += d;
                      });
    }

    // C += A . B
    static void mm_nn(const Mat& a, const Mat& b, Mat& c) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* arow = &a.data[i * a.cols];
            double* crow = &c.data[i * c.cols];
            for (std::size_t k = 0; k < a.cols; ++k) {
                const double aik = arow[k];
                const double* brow = &b.data[k * b.cols];
                for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
            }
        }
    }

    // C += A . B^T
    static void mm_nt(const Mat& a, const Mat& b, Mat& c) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* arow = &a.data[i * a.cols];
            double* crow = &c.data[i * c.cols];
            for (std::size_t j = 0; j < b.rows; ++j) {
                const double* brow = &b.data[j * b.cols];
                double s = 0.0;
                for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
                crow[j] += s;
            }
        }
    }

    // C += A^T . B
    static void mm_tn(const Mat& a, const Mat& b, Mat& c) {
        for (std::size_t k = 0; k < a.rows; ++k) {
            const double* arow = &a.data[k * a.cols];
            const double* brow = &b.data[k * b.cols];
            for (std::size_t i = 0; i < a.cols; ++i) {
                const double aki = arow[i];
                double* crow = &c.data[i * c.cols];
                for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
            }
        }
    }
};

}  // namespace uniclass
