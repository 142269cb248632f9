#include "pathrank/supernet.hpp"

#include <cmath>
#include <stdexcept>

#include "pathrank/autodiff.hpp"
#include "pathrank/common.hpp"

namespace pathrank {

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double std,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, std);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d(rng);
  return m;
}

Eigen::MatrixXd fanin_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> d(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d(rng);
  return m;
}

int max_channels(const SearchSpace& space, int block) {
  int c = 1;
  for (double w : space.blocks[block].width_choices)
    c = std::max(c, channels_of(space, block, w));
  return c;
}

int max_hidden(const SearchSpace& space, int block) {
  int h = 1;
  for (double w : space.blocks[block].width_choices)
    for (double e : space.blocks[block].expand_choices)
      h = std::max(h, hidden_of(space, block, w, e));
  return h;
}

// Parameter ids in creation order; mirrors make_supernet exactly.
struct LayerIx {
  int w1, b1, w2, b2, w3, b3;
};
struct NetIndex {
  int stem_w, stem_b;
  std::vector<std::vector<LayerIx>> layers;
  std::vector<std::pair<int, int>> trans;
  int head_w, head_b;
};

NetIndex layout(const SearchSpace& space) {
  NetIndex ix;
  int next = 0;
  ix.stem_w = next++;
  ix.stem_b = next++;
  ix.layers.resize(space.blocks.size());
  for (std::size_t b = 0; b < space.blocks.size(); ++b) {
    for (int l = 0; l < space.blocks[b].max_layers(); ++l) {
      LayerIx li;
      li.w1 = next++;
      li.b1 = next++;
      li.w2 = next++;
      li.b2 = next++;
      li.w3 = next++;
      li.b3 = next++;
      ix.layers[b].push_back(li);
    }
  }
  for (std::size_t b = 0; b + 1 < space.blocks.size(); ++b) {
    const int w = next++;
    const int bias = next++;
    ix.trans.emplace_back(w, bias);
  }
  ix.head_w = next++;
  ix.head_b = next++;
  return ix;
}

void check_path(const ToySupernet& net, const Path& path) {
  const auto bad = path_violations(net.space, path);
  if (!bad.empty()) throw std::invalid_argument("invalid path: " + bad.front());
}

}  // namespace

SyntheticTask make_task(const TaskConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.train_samples < 1 || cfg.val_samples < 1)
    throw std::invalid_argument("task dimensions must be positive");
  auto rng = make_rng(derive_seed(cfg.seed, "task.data"));
  const int teacher_hidden = 32;
  auto teacher_rng = make_rng(derive_seed(cfg.seed, "task.teacher"));
  const Eigen::MatrixXd t1 = normal_matrix(cfg.input_dim, teacher_hidden,
                                           1.0 / std::sqrt(double(cfg.input_dim)),
                                           teacher_rng);
  const Eigen::MatrixXd t2 = normal_matrix(teacher_hidden, 1,
                                           1.0 / std::sqrt(double(teacher_hidden)),
                                           teacher_rng);
  auto teach = [&](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd(((x * t1).array().tanh().matrix() * t2).col(0));
  };
  SyntheticTask task;
  task.train_x = normal_matrix(cfg.train_samples, cfg.input_dim, 1.0, rng);
  task.val_x = normal_matrix(cfg.val_samples, cfg.input_dim, 1.0, rng);
  task.train_y = teach(task.train_x);
  task.val_y = teach(task.val_x);
  return task;
}

int channels_of(const SearchSpace& space, int block, double width) {
  const double c = space.base_channels[block] * width;
  return std::max(1, static_cast<int>(std::llround(c)));
}

int hidden_of(const SearchSpace& space, int block, double width, double expand) {
  const double h = channels_of(space, block, width) * expand;
  return std::max(1, static_cast<int>(std::llround(h)));
}

ToySupernet make_supernet(const SearchSpace& space, int input_dim, std::uint64_t seed) {
  validate_space(space);
  if (input_dim < 1) throw std::invalid_argument("input_dim must be positive");
  ToySupernet net;
  net.space = space;
  net.input_dim = input_dim;
  auto rng = make_rng(seed);
  auto add = [&](const std::string& name, Eigen::MatrixXd m) {
    net.param_names.push_back(name);
    net.params.push_back(std::move(m));
  };
  auto weight = [&](Eigen::Index r, Eigen::Index c) { return fanin_matrix(r, c, rng); };

  add("stem.w", weight(input_dim, max_channels(space, 0)));
  add("stem.b", Eigen::MatrixXd::Zero(1, max_channels(space, 0)));
  for (int b = 0; b < space.num_blocks(); ++b) {
    const int cmax = max_channels(space, b);
    const int hmax = max_hidden(space, b);
    for (int l = 0; l < space.blocks[b].max_layers(); ++l) {
      const std::string p = "b" + std::to_string(b) + ".l" + std::to_string(l) + ".";
      add(p + "w1", weight(cmax, hmax));
      add(p + "b1", Eigen::MatrixXd::Zero(1, hmax));
      add(p + "w2", weight(hmax, hmax));
      add(p + "b2", Eigen::MatrixXd::Zero(1, hmax));
      add(p + "w3", weight(hmax, cmax));
      add(p + "b3", Eigen::MatrixXd::Zero(1, cmax));
    }
  }
  for (int b = 0; b + 1 < space.num_blocks(); ++b) {
    const std::string p = "t" + std::to_string(b) + ".";
    add(p + "w", weight(max_channels(space, b), max_channels(space, b + 1)));
    add(p + "b", Eigen::MatrixXd::Zero(1, max_channels(space, b + 1)));
  }
  add("head.w", weight(max_channels(space, space.num_blocks() - 1), 1));
  add("head.b", Eigen::MatrixXd::Zero(1, 1));
  return net;
}

std::size_t supernet_parameter_count(const ToySupernet& net) {
  std::size_t n = 0;
  for (const auto& p : net.params) n += static_cast<std::size_t>(p.size());
  return n;
}

Eigen::VectorXd supernet_forward(const ToySupernet& net, const Path& path,
                                 const Eigen::MatrixXd& x) {
  check_path(net, path);
  if (x.cols() != net.input_dim)
    throw std::invalid_argument("input dimension mismatch");
  const NetIndex ix = layout(net.space);
  const SearchSpace& space = net.space;
  const auto& P = net.params;

  const int c0 = channels_of(space, 0, path.blocks[0].width);
  Eigen::MatrixXd h = x * P[ix.stem_w].leftCols(c0);
  h.rowwise() += P[ix.stem_b].row(0).head(c0);
  h = h.cwiseMax(0.0);

  for (int b = 0; b < space.num_blocks(); ++b) {
    const PathBlock& pb = path.blocks[b];
    const int c = channels_of(space, b, pb.width);
    for (std::size_t l = 0; l < pb.expands.size(); ++l) {
      const LayerIx& li = ix.layers[b][l];
      const int hd = hidden_of(space, b, pb.width, pb.expands[l]);
      Eigen::MatrixXd z = h * P[li.w1].topLeftCorner(c, hd);
      z.rowwise() += P[li.b1].row(0).head(hd);
      z = z.cwiseMax(0.0);
      Eigen::MatrixXd z2 = z * P[li.w2].topLeftCorner(hd, hd);
      z2.rowwise() += P[li.b2].row(0).head(hd);
      z2 = z2.cwiseMax(0.0);
      Eigen::MatrixXd z3 = z2 * P[li.w3].topLeftCorner(hd, c);
      z3.rowwise() += P[li.b3].row(0).head(c);
      h += z3;  // residual keeps skipped layers an exact identity
    }
    if (b + 1 < space.num_blocks()) {
      const int cn = channels_of(space, b + 1, path.blocks[b + 1].width);
      const auto& [tw, tb] = ix.trans[b];
      Eigen::MatrixXd t = h * P[tw].topLeftCorner(c, cn);
      t.rowwise() += P[tb].row(0).head(cn);
      h = t.cwiseMax(0.0);
    }
  }
  const int clast = channels_of(space, space.num_blocks() - 1,
                                path.blocks.back().width);
  Eigen::VectorXd out = h * P[ix.head_w].topRows(clast);
  out.array() += P[ix.head_b](0, 0);
  return out;
}

double supernet_eval(const ToySupernet& net, const Path& path, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("x/y row mismatch");
  const Eigen::VectorXd pred = supernet_forward(net, path, x);
  return (pred - y).squaredNorm() / static_cast<double>(y.rows());
}

double supernet_step(ToySupernet& net, const Path& path, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y, double lr) {
  check_path(net, path);
  if (x.cols() != net.input_dim)
    throw std::invalid_argument("input dimension mismatch");
  if (x.rows() != y.rows()) throw std::invalid_argument("x/y row mismatch");
  const NetIndex ix = layout(net.space);
  const SearchSpace& space = net.space;

  ad::TapeD tape;
  std::vector<ad::VarD> P;
  P.reserve(net.params.size());
  for (const auto& p : net.params) P.push_back(tape.leaf(p));

  const int c0 = channels_of(space, 0, path.blocks[0].width);
  ad::VarD h = ad::relu(ad::add_rowvec(
      ad::matmul(tape.leaf(x), ad::slice(P[ix.stem_w], 0, net.input_dim, 0, c0)),
      ad::slice(P[ix.stem_b], 0, 1, 0, c0)));

  for (int b = 0; b < space.num_blocks(); ++b) {
    const PathBlock& pb = path.blocks[b];
    const int c = channels_of(space, b, pb.width);
    for (std::size_t l = 0; l < pb.expands.size(); ++l) {
      const LayerIx& li = ix.layers[b][l];
      const int hd = hidden_of(space, b, pb.width, pb.expands[l]);
      ad::VarD z = ad::relu(ad::add_rowvec(
          ad::matmul(h, ad::slice(P[li.w1], 0, c, 0, hd)),
          ad::slice(P[li.b1], 0, 1, 0, hd)));
      z = ad::relu(ad::add_rowvec(ad::matmul(z, ad::slice(P[li.w2], 0, hd, 0, hd)),
                                  ad::slice(P[li.b2], 0, 1, 0, hd)));
      ad::VarD z3 = ad::add_rowvec(ad::matmul(z, ad::slice(P[li.w3], 0, hd, 0, c)),
                                   ad::slice(P[li.b3], 0, 1, 0, c));
      h = ad::add(h, z3);
    }
    if (b + 1 < space.num_blocks()) {
      const int cn = channels_of(space, b + 1, path.blocks[b + 1].width);
      const auto& [tw, tb] = ix.trans[b];
      h = ad::relu(ad::add_rowvec(ad::matmul(h, ad::slice(P[tw], 0, c, 0, cn)),
                                  ad::slice(P[tb], 0, 1, 0, cn)));
    }
  }
  const int clast = channels_of(space, space.num_blocks() - 1, path.blocks.back().width);
  ad::VarD pred = ad::add_rowvec(ad::matmul(h, ad::slice(P[ix.head_w], 0, clast, 0, 1)),
                                 P[ix.head_b]);
  ad::VarD diff = ad::sub(pred, tape.leaf(y));
  ad::VarD loss = ad::mean_all(ad::mul(diff, diff));
  tape.backward(loss);

  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const auto& g = tape.grad(P[i]);
    if (g.size() == 0) continue;  // parameter not on the active path
    net.params[i] -= lr * g;
  }
  return loss.value()(0, 0);
}

MacReport mac_report(const ToySupernet& net, const Path& path) {
  check_path(net, path);
  const SearchSpace& space = net.space;
  MacReport r;
  const int c0 = channels_of(space, 0, path.blocks[0].width);
  r.stem = static_cast<std::uint64_t>(net.input_dim) * c0;
  r.total = r.stem;
  r.per_layer.resize(space.blocks.size());
  for (int b = 0; b < space.num_blocks(); ++b) {
    const PathBlock& pb = path.blocks[b];
    const std::uint64_t c = channels_of(space, b, pb.width);
    for (double e : pb.expands) {
      const std::uint64_t hd = hidden_of(space, b, pb.width, e);
      const std::uint64_t macs = c * hd + hd * hd + hd * c;
      r.per_layer[b].push_back(macs);
      r.total += macs;
    }
    if (b + 1 < space.num_blocks()) {
      const std::uint64_t cn = channels_of(space, b + 1, path.blocks[b + 1].width);
      r.transitions.push_back(c * cn);
      r.total += c * cn;
    }
  }
  r.head = channels_of(space, space.num_blocks() - 1, path.blocks.back().width);
  r.total += r.head;
  return r;
}

std::uint64_t mac_count(const ToySupernet& net, const Path& path) {
  return mac_report(net, path).total;
}

}  // namespace pathrank
