#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pathrank::ad {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

// Handle into a tape. Cheap to copy; the tape owns all storage.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Mat<Scalar>& value() const { return tape->val(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Records primitive operations in creation order; creation order is a
// topological order, so the backward pass is a single reverse sweep that
// visits each node once.
template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;
  using V = Var<Scalar>;
  using Pull = std::function<void(Tape&, const M&)>;

  V leaf(M value) { return push(std::move(value), Pull{}); }

  V push(M value, Pull pull) {
    nodes_.push_back(Node{std::move(value), M{}, std::move(pull)});
    return V{this, static_cast<int>(nodes_.size()) - 1};
  }

  const M& val(int id) const { return nodes_[id].value; }

  // Zero-size when the node never received gradient.
  const M& grad(V v) const { return nodes_[v.id].grad; }

  void accumulate(int id, const M& g) {
    M& acc = nodes_[id].grad;
    if (acc.size() == 0)
      acc = g;
    else
      acc += g;
  }

  // Adds into a sub-block without materializing a full-size sparse update;
  // slicing-heavy graphs (per-head attention, shared-weight sub-networks)
  // depend on this for tolerable backward costs.
  void accumulate_block(int id, Eigen::Index r0, Eigen::Index c0, const M& g) {
    M& acc = nodes_[id].grad;
    if (acc.size() == 0) acc = M::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    acc.block(r0, c0, g.rows(), g.cols()) += g;
  }

  void backward(V loss) {
    if (loss.value().rows() != 1 || loss.value().cols() != 1)
      throw std::invalid_argument("backward: loss must be a 1x1 scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = M::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.pull) continue;
      n.pull(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    M value;
    M grad;
    Pull pull;
  };
  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = a.value() * b.value();
  return t.push(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, g * t.val(ib).transpose());
    t.accumulate(ib, t.val(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value().transpose(), [ia = a.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, g.transpose());
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value() + b.value(),
                [ia = a.id, ib = b.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  t.accumulate(ia, g);
                  t.accumulate(ib, g);
                });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value() - b.value(),
                [ia = a.id, ib = b.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  t.accumulate(ia, g);
                  t.accumulate(ib, -g);
                });
}

// Broadcasts a 1 x c row vector over every row of a.
template <typename Scalar>
Var<Scalar> add_rowvec(Var<Scalar> a, Var<Scalar> v) {
  detail::require(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: v must be 1 x cols(a)");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = a.value();
  out.rowwise() += v.value().row(0);
  return t.push(std::move(out), [ia = a.id, iv = v.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(iv, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value().cwiseProduct(b.value()),
                [ia = a.id, ib = b.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  t.accumulate(ia, g.cwiseProduct(t.val(ib)));
                  t.accumulate(ib, g.cwiseProduct(t.val(ia)));
                });
}

template <typename Scalar>
Var<Scalar> mul_rowvec(Var<Scalar> a, Var<Scalar> v) {
  detail::require(v.rows() == 1 && v.cols() == a.cols(), "mul_rowvec: v must be 1 x cols(a)");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = a.value().array().rowwise() * v.value().row(0).array();
  return t.push(std::move(out), [ia = a.id, iv = v.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, (g.array().rowwise() * t.val(iv).row(0).array()).matrix());
    t.accumulate(iv, g.cwiseProduct(t.val(ia)).colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value() * c, [ia = a.id, c](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, g * c);
  });
}

template <typename Scalar>
Var<Scalar> add_const(Var<Scalar> a, Scalar c) {
  Tape<Scalar>& t = *a.tape;
  return t.push((a.value().array() + c).matrix(),
                [ia = a.id](Tape<Scalar>& t, const Mat<Scalar>& g) { t.accumulate(ia, g); });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value().cwiseMax(Scalar(0)),
                [ia = a.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  const auto mask = (t.val(ia).array() > Scalar(0)).template cast<Scalar>();
                  t.accumulate(ia, (g.array() * mask).matrix());
                });
}

// Operations whose backward pass reads their own output (sigmoid, softmax,
// layer norm) capture their node id up front: push always appends at index
// tape.size().
template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  const int self = static_cast<int>(t.size());
  Mat<Scalar> out = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  return t.push(std::move(out), [ia = a.id, self](Tape<Scalar>& t, const Mat<Scalar>& g) {
    const auto s = t.val(self).array();
    t.accumulate(ia, (g.array() * s * (Scalar(1) - s)).matrix());
  });
}

// Rows sum to one; the usual shifted-exponent form.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  const int self = static_cast<int>(t.size());
  Mat<Scalar> out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
  return t.push(std::move(out), [ia = a.id, self](Tape<Scalar>& t, const Mat<Scalar>& g) {
    const auto& y = t.val(self);
    Mat<Scalar> d(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Scalar dot = g.row(r).cwiseProduct(y.row(r)).sum();
      d.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    t.accumulate(ia, d);
  });
}

template <typename Scalar>
Var<Scalar> layer_norm_rows(Var<Scalar> a, Scalar eps = Scalar(1e-12)) {
  Tape<Scalar>& t = *a.tape;
  const auto& x = a.value();
  const Eigen::Index n = x.cols();
  Mat<Scalar> out(x.rows(), n);
  Mat<Scalar> inv_std(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().sum() / Scalar(n);
    const Scalar s = Scalar(1) / std::sqrt(var + eps);
    inv_std(r, 0) = s;
    out.row(r) = ((x.row(r).array() - mean) * s).matrix();
  }
  Var<Scalar> keep = t.leaf(std::move(inv_std));
  const int self = static_cast<int>(t.size());
  return t.push(std::move(out), [ia = a.id, ik = keep.id, self, n](Tape<Scalar>& t,
                                                                   const Mat<Scalar>& g) {
    const auto& y = t.val(self);
    const auto& s = t.val(ik);
    Mat<Scalar> dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Scalar gm = g.row(r).mean();
      const Scalar gym = g.row(r).cwiseProduct(y.row(r)).sum() / Scalar(n);
      dx.row(r) = (s(r, 0) * (g.row(r).array() - gm - y.row(r).array() * gym)).matrix();
    }
    t.accumulate(ia, dx);
  });
}

// Gathers rows of a by index; the gradient scatter-adds back. With a
// parameter table as input this is the embedding lookup.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> a, std::vector<int> indices) {
  Tape<Scalar>& t = *a.tape;
  const auto& src = a.value();
  Mat<Scalar> out(static_cast<Eigen::Index>(indices.size()), src.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] >= 0 && indices[i] < src.rows(),
                    "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = src.row(indices[i]);
  }
  return t.push(std::move(out),
                [ia = a.id, idx = std::move(indices)](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  Mat<Scalar> d = Mat<Scalar>::Zero(t.val(ia).rows(), t.val(ia).cols());
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                  t.accumulate(ia, d);
                });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no parts");
  Tape<Scalar>& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<Scalar> out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id);
    sizes.push_back(p.rows());
    r += p.rows();
  }
  return t.push(std::move(out), [ids, sizes](Tape<Scalar>& t, const Mat<Scalar>& g) {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleRows(r, sizes[i]));
      r += sizes[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no parts");
  Tape<Scalar>& t = *parts.front().tape;
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<Scalar> out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    ids.push_back(p.id);
    sizes.push_back(p.cols());
    c += p.cols();
  }
  return t.push(std::move(out), [ids, sizes](Tape<Scalar>& t, const Mat<Scalar>& g) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleCols(c, sizes[i]));
      c += sizes[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(Var<Scalar> a, Eigen::Index r0, Eigen::Index nrows, Eigen::Index c0,
                  Eigen::Index ncols) {
  detail::require(r0 >= 0 && c0 >= 0 && r0 + nrows <= a.rows() && c0 + ncols <= a.cols(),
                  "slice: block out of range");
  Tape<Scalar>& t = *a.tape;
  return t.push(a.value().block(r0, c0, nrows, ncols),
                [ia = a.id, r0, c0](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  t.accumulate_block(ia, r0, c0, g);
                });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index r0, Eigen::Index nrows) {
  return slice(a, r0, nrows, 0, a.cols());
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().mean();
  const Scalar inv = Scalar(1) / Scalar(a.value().size());
  return t.push(std::move(out), [ia = a.id, inv](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, Mat<Scalar>::Constant(t.val(ia).rows(), t.val(ia).cols(), g(0, 0) * inv));
  });
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), [ia = a.id](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, Mat<Scalar>::Constant(t.val(ia).rows(), t.val(ia).cols(), g(0, 0)));
  });
}

// Column means: pools an L x d sequence into 1 x d.
template <typename Scalar>
Var<Scalar> mean_over_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = a.value().colwise().mean();
  const Scalar inv = Scalar(1) / Scalar(a.value().rows());
  return t.push(std::move(out), [ia = a.id, inv](Tape<Scalar>& t, const Mat<Scalar>& g) {
    t.accumulate(ia, (Mat<Scalar>::Ones(t.val(ia).rows(), 1) * g) * inv);
  });
}

// Column max; the gradient flows to the first maximal row per column.
template <typename Scalar>
Var<Scalar> max_over_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  const auto& x = a.value();
  Mat<Scalar> out(1, x.cols());
  std::vector<int> arg(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index r;
    out(0, c) = x.col(c).maxCoeff(&r);
    arg[static_cast<std::size_t>(c)] = static_cast<int>(r);
  }
  return t.push(std::move(out),
                [ia = a.id, arg = std::move(arg)](Tape<Scalar>& t, const Mat<Scalar>& g) {
                  Mat<Scalar> d = Mat<Scalar>::Zero(t.val(ia).rows(), t.val(ia).cols());
                  for (Eigen::Index c = 0; c < g.cols(); ++c)
                    d(arg[static_cast<std::size_t>(c)], c) = g(0, c);
                  t.accumulate(ia, d);
                });
}

using TapeD = Tape<double>;
using VarD = Var<double>;
using MatD = Mat<double>;

}  // namespace pathrank::ad
