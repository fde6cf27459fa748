#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "csnerf/errors.hpp"

// A small reverse-mode tape over dense row-major matrices. Each op records
// its output value and a closure that pushes the output gradient back to
// its inputs. Learnable tensors enter through ParamRef, whose gradient sink
// lives outside the tape so the tensors themselves stay const during the
// forward pass.
namespace csnerf::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct ParamRef {
  const Matrix* value = nullptr;
  Matrix* grad = nullptr;  // null: no gradient wanted
};

// Sparse row-mixing matrix in CSR form: output row r is
// sum_k weight[k] * table.row(column[k]) for k in [offset[r], offset[r+1]).
struct RowMix {
  std::vector<Index> offset{0};
  std::vector<Index> column;
  std::vector<double> weight;

  Index rows() const { return static_cast<Index>(offset.size()) - 1; }

  void push_single(Index c) {
    column.push_back(c);
    weight.push_back(1.0);
    offset.push_back(static_cast<Index>(column.size()));
  }
  void push_mean(const std::vector<Index>& cs) {
    for (auto c : cs) {
      column.push_back(c);
      weight.push_back(1.0 / static_cast<double>(cs.size()));
    }
    offset.push_back(static_cast<Index>(column.size()));
  }
};

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class Tape;

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix m) { return push(std::move(m), false, nullptr); }

  Var parameter(ParamRef p) {
    const bool want = record_ && p.grad;
    return push(*p.value, want, [p](Tape& t, std::size_t self) { *p.grad += t.nodes_[self].grad; });
  }

  Var matmul(Var a, Var b) {
    Matrix out = value(a) * value(b);
    return push(std::move(out), needs(a, b), [a, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
      if (t.needs(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    });
  }

  // a + broadcast(row), row is 1 x cols(a).
  Var add_row(Var a, Var row) {
    check_shape(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row");
    Matrix out = value(a);
    out.rowwise() += value(row).row(0);
    return push(std::move(out), needs(a, row), [a, row](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad_ref(a) += g;
      if (t.needs(row)) t.grad_ref(row) += g.colwise().sum();
    });
  }

  Var add(Var a, Var b) {
    check_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
    Matrix out = value(a) + value(b);
    return push(std::move(out), needs(a, b), [a, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad_ref(a) += g;
      if (t.needs(b)) t.grad_ref(b) += g;
    });
  }

  Var add_scalar(Var a, double s) {
    Matrix out = value(a).array() + s;
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
      t.grad_ref(a) += t.nodes_[self].grad;
    });
  }

  Var scale(Var a, double s) {
    Matrix out = value(a) * s;
    return push(std::move(out), needs(a), [a, s](Tape& t, std::size_t self) {
      t.grad_ref(a) += s * t.nodes_[self].grad;
    });
  }

  Var softplus(Var a) {
    Matrix out = softplus_array(value(a));
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
      t.grad_ref(a).array() += t.nodes_[self].grad.array() * sigmoid_array(t.value(a)).array();
    });
  }

  Var sigmoid(Var a) {
    Matrix out = sigmoid_array(value(a));
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
      const Matrix& y = t.nodes_[self].value;
      t.grad_ref(a).array() += t.nodes_[self].grad.array() * y.array() * (1.0 - y.array());
    });
  }

  // Elementwise, vectorised; same values as the scalar versions.
  static Matrix softplus_array(const Matrix& x) {
    // log1p(e) as log(u) * e / (u - 1) with u = 1 + e, which vectorises.
    const auto e = (-x.array().abs()).exp().eval();
    const auto u = (1.0 + e).eval();
    return x.array().max(0.0) + (u == 1.0).select(e, u.log() * e / (u - 1.0));
  }
  static Matrix sigmoid_array(const Matrix& x) {
    const auto e = (-x.array().abs()).exp().eval();
    return (x.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
  }

  Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::vector<Var>(parts)); }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
    const Index rows = value(parts.front()).rows();
    Index cols = 0;
    bool want = false;
    for (auto p : parts) {
      check_shape(value(p).rows() == rows, "concat_cols");
      cols += value(p).cols();
      want = want || needs(p);
    }
    Matrix out(rows, cols);
    Index c = 0;
    for (auto p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(std::move(out), want, [parts](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      Index c = 0;
      for (auto p : parts) {
        const Index w = t.value(p).cols();
        if (t.needs(p)) t.grad_ref(p) += g.middleCols(c, w);
        c += w;
      }
    });
  }

  Var slice_cols(Var a, Index start, Index count) {
    check_shape(start >= 0 && start + count <= value(a).cols(), "slice_cols");
    Matrix out = value(a).middleCols(start, count);
    return push(std::move(out), needs(a), [a, start, count](Tape& t, std::size_t self) {
      t.grad_ref(a).middleCols(start, count) += t.nodes_[self].grad;
    });
  }

  // Trilinear interpolation in a dense grid of (res+1)^3 corner features
  // (x fastest, then y, then z). Points are in [0,1]^3 and clamped.
  Var grid_lookup(const Matrix& unit_points, ParamRef grid, int res) {
    const Index n = unit_points.rows();
    const Index f = grid.value->cols();
    const Index side = res + 1;
    check_shape(grid.value->rows() == side * side * side && unit_points.cols() == 3, "grid_lookup");
    Matrix out = Matrix::Zero(n, f);
    for (Index r = 0; r < n; ++r) {
      Corners cs = corners(unit_points, r, res);
      for (int k = 0; k < 8; ++k) out.row(r) += cs.weight[k] * grid.value->row(cs.index[k]);
    }
    const bool want = record_ && grid.grad;
    if (!want) return push(std::move(out), false, nullptr);
    return push(std::move(out), true, [unit_points, grid, res](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      for (Index r = 0; r < unit_points.rows(); ++r) {
        Corners cs = corners(unit_points, r, res);
        for (int k = 0; k < 8; ++k) grid.grad->row(cs.index[k]) += cs.weight[k] * g.row(r);
      }
    });
  }

  Var mix_rows(ParamRef table, const RowMix& mix) {
    const Index n = mix.rows();
    Matrix out = Matrix::Zero(n, table.value->cols());
    for (Index r = 0; r < n; ++r)
      for (Index k = mix.offset[r]; k < mix.offset[r + 1]; ++k)
        out.row(r) += mix.weight[k] * table.value->row(mix.column[k]);
    const bool want = record_ && table.grad;
    if (!want) return push(std::move(out), false, nullptr);
    return push(std::move(out), true, [table, mix](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      for (Index r = 0; r < mix.rows(); ++r)
        for (Index k = mix.offset[r]; k < mix.offset[r + 1]; ++k)
          table.grad->row(mix.column[k]) += mix.weight[k] * g.row(r);
    });
  }

  // Quadrature weights w_i = T_i (1 - exp(-sigma_i dt_i)) with
  // T_i = exp(-sum_{j<i} sigma_j dt_j). sigma is (R*S) x 1 laid out ray
  // major; deltas and the result are R x S.
  Var composite_weights(Var sigma, const Matrix& deltas) {
    const Index rays = deltas.rows();
    const Index samples = deltas.cols();
    check_shape(value(sigma).rows() == rays * samples && value(sigma).cols() == 1, "composite_weights");
    Matrix w(rays, samples);
    const Matrix& s = value(sigma);
    for (Index r = 0; r < rays; ++r) {
      double acc = 0.0;
      for (Index i = 0; i < samples; ++i) {
        const double a = s(r * samples + i, 0) * deltas(r, i);
        w(r, i) = std::exp(-acc) * -std::expm1(-a);
        acc += a;
      }
    }
    return push(std::move(w), needs(sigma), [sigma, deltas](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& w = t.nodes_[self].value;
      const Matrix& s = t.value(sigma);
      Matrix& gs = t.grad_ref(sigma);
      const Index samples = deltas.cols();
      for (Index r = 0; r < deltas.rows(); ++r) {
        // suffix[k] = sum_{i>k} g_i w_i
        double suffix = 0.0;
        double acc_total = 0.0;
        for (Index i = 0; i < samples; ++i) acc_total += s(r * samples + i, 0) * deltas(r, i);
        double acc_after = acc_total;  // sum_{j<=k} a_j, walking backwards
        for (Index k = samples - 1; k >= 0; --k) {
          const double t_next = std::exp(-acc_after);  // T_k * exp(-a_k)
          gs(r * samples + k, 0) += deltas(r, k) * (g(r, k) * t_next - suffix);
          suffix += g(r, k) * w(r, k);
          acc_after -= s(r * samples + k, 0) * deltas(r, k);
        }
      }
    });
  }

  // out.row(r) = sum_i weights(r, i) * values.row(r * S + i).
  Var weighted_rows(Var weights, Var values) {
    const Matrix& w = value(weights);
    const Matrix& c = value(values);
    const Index rays = w.rows();
    const Index samples = w.cols();
    check_shape(c.rows() == rays * samples, "weighted_rows");
    Matrix out = Matrix::Zero(rays, c.cols());
    for (Index r = 0; r < rays; ++r)
      for (Index i = 0; i < samples; ++i) out.row(r) += w(r, i) * c.row(r * samples + i);
    return push(std::move(out), needs(weights, values), [weights, values](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& w = t.value(weights);
      const Matrix& c = t.value(values);
      const Index samples = w.cols();
      const bool gw = t.needs(weights);
      const bool gc = t.needs(values);
      for (Index r = 0; r < w.rows(); ++r) {
        for (Index i = 0; i < samples; ++i) {
          if (gw) t.grad_ref(weights)(r, i) += g.row(r).dot(c.row(r * samples + i));
          if (gc) t.grad_ref(values).row(r * samples + i) += w(r, i) * g.row(r);
        }
      }
    });
  }

  // sum_r mask_r * ||pred_r - target_r||^2 as a 1x1 value.
  Var masked_squared_error(Var pred, const Matrix& target, const std::vector<char>& mask) {
    const Matrix& p = value(pred);
    check_shape(p.rows() == target.rows() && p.cols() == target.cols() &&
                    static_cast<Index>(mask.size()) == p.rows(),
                "masked_squared_error");
    double total = 0.0;
    for (Index r = 0; r < p.rows(); ++r)
      if (mask[r]) total += (p.row(r) - target.row(r)).squaredNorm();
    Matrix out(1, 1);
    out(0, 0) = total;
    return push(std::move(out), needs(pred), [pred, target, mask](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0);
      const Matrix& p = t.value(pred);
      Matrix& gp = t.grad_ref(pred);
      for (Index r = 0; r < p.rows(); ++r)
        if (mask[r]) gp.row(r) += 2.0 * g * (p.row(r) - target.row(r));
    });
  }

  // sum_r mask_r * sum_i dt_ri * (w_ri / dt_ri - target_ri)^2 as a 1x1
  // value; target holds the desired weight density per bin.
  Var density_matching_loss(Var weights, const Matrix& deltas, const Matrix& target,
                            const std::vector<char>& mask) {
    const Matrix& w = value(weights);
    check_shape(w.rows() == deltas.rows() && w.cols() == deltas.cols() && target.rows() == w.rows() &&
                    target.cols() == w.cols() && static_cast<Index>(mask.size()) == w.rows(),
                "density_matching_loss");
    double total = 0.0;
    for (Index r = 0; r < w.rows(); ++r) {
      if (!mask[r]) continue;
      for (Index i = 0; i < w.cols(); ++i) {
        const double e = w(r, i) / deltas(r, i) - target(r, i);
        total += deltas(r, i) * e * e;
      }
    }
    Matrix out(1, 1);
    out(0, 0) = total;
    return push(std::move(out), needs(weights), [weights, deltas, target, mask](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0);
      const Matrix& w = t.value(weights);
      Matrix& gw = t.grad_ref(weights);
      for (Index r = 0; r < w.rows(); ++r) {
        if (!mask[r]) continue;
        for (Index i = 0; i < w.cols(); ++i)
          gw(r, i) += 2.0 * g * (w(r, i) / deltas(r, i) - target(r, i));
      }
    });
  }

  Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
      t.grad_ref(a).array() += t.nodes_[self].grad(0, 0);
    });
  }

  // Seeds d(root)/d(root) = 1 and runs every recorded closure in reverse.
  void backward(Var root) {
    if (!record_) throw InvalidArgument("backward on a non-recording tape");
    check_shape(value(root).rows() == 1 && value(root).cols() == 1, "backward root must be scalar");
    if (!nodes_[root.id].needs_grad) return;
    grad_ref(root)(0, 0) += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
      n.back(*this, i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> back;
  };

  struct Corners {
    Index index[8];
    double weight[8];
  };

  static Corners corners(const Matrix& pts, Index r, int res) {
    Index base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      const double g = std::clamp(pts(r, a), 0.0, 1.0) * res;
      const Index i0 = std::clamp<Index>(static_cast<Index>(std::floor(g)), 0, res - 1);
      base[a] = i0;
      frac[a] = g - static_cast<double>(i0);
    }
    const Index side = res + 1;
    Corners c;
    for (int k = 0; k < 8; ++k) {
      const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
      c.index[k] = ((base[2] + dz) * side + (base[1] + dy)) * side + (base[0] + dx);
      c.weight[k] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                    (dz ? frac[2] : 1.0 - frac[2]);
    }
    return c;
  }

  static void check_shape(bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("shape mismatch in ") + what);
  }

  bool needs(Var a) const { return nodes_[a.id].needs_grad; }
  bool needs(Var a, Var b) const { return needs(a) || needs(b); }

  Matrix& grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_ = true;
  std::vector<Node> nodes_;
};

}  // namespace csnerf::ad
