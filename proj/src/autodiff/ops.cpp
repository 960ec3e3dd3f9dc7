#include "priorseg/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace priorseg::ad {
namespace {

constexpr double kGuard = 1e-12;

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast classify(const char* prim, const Matrix& a, const Matrix& b, bool allow_col) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (allow_col && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  throw ShapeError(prim, shape_string(a) + " vs " + shape_string(b));
}

// Reduces a full-shape gradient to the shape of a broadcast operand.
Matrix reduce_to(const Matrix& g, Broadcast mode) {
  switch (mode) {
    case Broadcast::Same: return g;
    case Broadcast::Row: return g.colwise().sum();
    case Broadcast::Col: return g.rowwise().sum();
    case Broadcast::Scalar: return Matrix::Constant(1, 1, g.sum());
  }
  return g;
}

Matrix expand(const Matrix& b, Index rows, Index cols, Broadcast mode) {
  switch (mode) {
    case Broadcast::Same: return b;
    case Broadcast::Row: return b.replicate(rows, 1);
    case Broadcast::Col: return b.replicate(1, cols);
    case Broadcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

template <typename F, typename D>
Var unary(Var a, F forward, D derivative) {
  Tape& t = a.tape();
  Matrix out = a.value().unaryExpr(forward);
  std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, derivative](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, g.cwiseProduct(Matrix(x.unaryExpr(derivative))));
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul", shape_string(A) + " x " + shape_string(B));
  Tape& t = a.tape();
  std::size_t ia = a.id(), ib = b.id();
  return t.record(A * B, {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  Broadcast mode = classify("add", A, B, false);
  Tape& t = a.tape();
  std::size_t ia = a.id(), ib = b.id();
  Matrix out = A + expand(B, A.rows(), A.cols(), mode);
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, mode));
  });
}

Var sub(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  Broadcast mode = classify("sub", A, B, false);
  Tape& t = a.tape();
  std::size_t ia = a.id(), ib = b.id();
  Matrix out = A - expand(B, A.rows(), A.cols(), mode);
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(-reduce_to(g, mode)));
  });
}

Var mul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  Broadcast mode = classify("mul", A, B, true);
  Tape& t = a.tape();
  std::size_t ia = a.id(), ib = b.id();
  Matrix out = A.cwiseProduct(expand(B, A.rows(), A.cols(), mode));
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(ib);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(expand(y, x.rows(), x.cols(), mode)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g.cwiseProduct(x), mode));
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  return t.record(a.value() * s, {ia},
                  [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Matrix out = a.value().array() + s;
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  auto sig = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Matrix out = a.value().unaryExpr(sig);
  std::size_t io = t.size();
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& s = tp.value(io);
    tp.accumulate(ia, g.cwiseProduct(Matrix(s.array() * (1.0 - s.array()))));
  });
}

Var tanh(Var a) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Matrix out = a.value().array().tanh();
  std::size_t io = t.size();
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    tp.accumulate(ia, g.cwiseProduct(Matrix(1.0 - y.array().square())));
  });
}

Var exp(Var a) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Matrix out = a.value().array().exp();
  std::size_t io = t.size();
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(io)));
  });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(std::max(x, kGuard)); },
      [](double x) { return x > kGuard ? 1.0 / x : 0.0; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(std::max(x, kGuard)); },
      [](double x) { return x > kGuard ? 0.5 / std::sqrt(x) : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = a.rows(), c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {ia},
                  [ia, r, c](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                  });
}

Var sum(Var a, int axis) {
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = a.rows(), c = a.cols();
  if (axis == 0) {
    return t.record(a.value().colwise().sum(), {ia}, [ia, r](Tape& tp, const Matrix& g) {
      tp.accumulate(ia, Matrix(g.replicate(r, 1)));
    });
  }
  if (axis == 1) {
    return t.record(a.value().rowwise().sum(), {ia}, [ia, c](Tape& tp, const Matrix& g) {
      tp.accumulate(ia, Matrix(g.replicate(1, c)));
    });
  }
  throw ShapeError("sum", "axis must be 0 or 1");
}

Var mean(Var a) {
  double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean", shape_string(a.value()));
  return scale(sum(a), 1.0 / n);
}

Var mean(Var a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("mean", "axis must be 0 or 1");
  double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  if (n == 0) throw ShapeError("mean", shape_string(a.value()));
  return scale(sum(a, axis), 1.0 / n);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols", "no operands");
  Tape& t = parts.front().tape();
  Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols", shape_string(parts.front().value()) + " vs " +
                                          shape_string(p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<std::size_t> inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      tp.accumulate(ids[k], Matrix(g.middleCols(offsets[k], tp.value(ids[k]).cols())));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", "no operands");
  Tape& t = parts.front().tape();
  Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      throw ShapeError("concat_rows", shape_string(parts.front().value()) + " vs " +
                                          shape_string(p.value()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  std::vector<std::size_t> inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      tp.accumulate(ids[k], Matrix(g.middleRows(offsets[k], tp.value(ids[k]).rows())));
    }
  });
}

Var slice_cols(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols", shape_string(a.value()) + " [" + std::to_string(begin) + ", +" +
                                       std::to_string(count) + ")");
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = a.rows(), c = a.cols();
  return t.record(a.value().middleCols(begin, count), {ia},
                  [ia, r, c, begin, count](Tape& tp, const Matrix& g) {
                    Matrix full = Matrix::Zero(r, c);
                    full.middleCols(begin, count) = g;
                    tp.accumulate(ia, full);
                  });
}

Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.value().size())
    throw ShapeError("reshape", shape_string(a.value()) + " -> (" + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ")");
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = a.rows(), c = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t.record(std::move(out), {ia}, [ia, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix(Eigen::Map<const Matrix>(g.data(), r, c)));
  });
}

Var gather_rows(Var a, std::span<const int> indices) {
  const Matrix& A = a.value();
  Matrix out(static_cast<Index>(indices.size()), A.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    int i = indices[k];
    if (i < 0 || i >= A.rows())
      throw ShapeError("gather_rows", "index " + std::to_string(i) + " out of " + shape_string(A));
    out.row(static_cast<Index>(k)) = A.row(i);
  }
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = A.rows(), c = A.cols();
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {ia}, [ia, r, c, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix acc = Matrix::Zero(r, c);
    for (std::size_t k = 0; k < idx.size(); ++k) acc.row(idx[k]) += g.row(static_cast<Index>(k));
    tp.accumulate(ia, acc);
  });
}

Var gather_stack(Var a, std::span<const std::vector<int>> index_sets) {
  if (index_sets.empty()) throw ShapeError("gather_stack", "no index sets");
  const Matrix& A = a.value();
  const Index n = static_cast<Index>(index_sets.front().size()), c = A.cols();
  const Index k_count = static_cast<Index>(index_sets.size());
  Matrix out(n, k_count * c);
  for (Index k = 0; k < k_count; ++k) {
    const auto& idx = index_sets[static_cast<std::size_t>(k)];
    if (static_cast<Index>(idx.size()) != n)
      throw ShapeError("gather_stack", "index set " + std::to_string(k) + " has " + std::to_string(idx.size()) +
                                           " entries, expected " + std::to_string(n));
    for (Index p = 0; p < n; ++p) {
      const int i = idx[static_cast<std::size_t>(p)];
      if (i < 0 || i >= A.rows())
        throw ShapeError("gather_stack", "index " + std::to_string(i) + " out of " + shape_string(A));
      out.block(p, k * c, 1, c) = A.row(i);
    }
  }
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  const Index r = A.rows();
  std::vector<std::vector<int>> sets(index_sets.begin(), index_sets.end());
  return t.record(std::move(out), {ia}, [ia, r, c, sets = std::move(sets)](Tape& tp, const Matrix& g) {
    Matrix acc = Matrix::Zero(r, c);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const Index off = static_cast<Index>(k) * c;
      for (std::size_t p = 0; p < sets[k].size(); ++p)
        acc.row(sets[k][p]) += g.block(static_cast<Index>(p), off, 1, c);
    }
    tp.accumulate(ia, acc);
  });
}

namespace {

Var segment_reduce(const char* prim, Var a, std::span<const int> segment, Index num_segments,
                   bool average) {
  const Matrix& A = a.value();
  if (static_cast<Index>(segment.size()) != A.rows())
    throw ShapeError(prim, shape_string(A) + " with " + std::to_string(segment.size()) + " segment ids");
  std::vector<double> scale(static_cast<std::size_t>(num_segments), 0.0);
  Matrix out = Matrix::Zero(num_segments, A.cols());
  for (std::size_t k = 0; k < segment.size(); ++k) {
    int s = segment[k];
    if (s < 0 || s >= num_segments)
      throw ShapeError(prim, "segment id " + std::to_string(s) + " outside [0, " +
                                 std::to_string(num_segments) + ")");
    out.row(s) += A.row(static_cast<Index>(k));
    scale[static_cast<std::size_t>(s)] += 1.0;
  }
  for (auto& w : scale) w = average ? (w > 0 ? 1.0 / w : 0.0) : 1.0;
  for (Index s = 0; s < num_segments; ++s) out.row(s) *= scale[static_cast<std::size_t>(s)];
  Tape& t = a.tape();
  std::size_t ia = a.id();
  Index r = A.rows();
  std::vector<int> seg(segment.begin(), segment.end());
  return t.record(std::move(out), {ia},
                  [ia, r, seg = std::move(seg), scale = std::move(scale)](Tape& tp, const Matrix& g) {
                    Matrix acc(r, g.cols());
                    for (Index k = 0; k < r; ++k) {
                      int s = seg[static_cast<std::size_t>(k)];
                      acc.row(k) = g.row(s) * scale[static_cast<std::size_t>(s)];
                    }
                    tp.accumulate(ia, acc);
                  });
}

}  // namespace

Var segment_mean(Var a, std::span<const int> segment, Index num_segments) {
  return segment_reduce("segment_mean", a, segment, num_segments, true);
}

Var segment_sum(Var a, std::span<const int> segment, Index num_segments) {
  return segment_reduce("segment_sum", a, segment, num_segments, false);
}

}  // namespace priorseg::ad
