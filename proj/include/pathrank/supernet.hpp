#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pathrank/arch_space.hpp"

namespace pathrank {

// Fixed synthetic regression task: standard-normal inputs, targets from a
// frozen random two-layer tanh teacher. Everything derives from one seed.
struct TaskConfig {
  int input_dim = 16;
  int train_samples = 2048;
  int val_samples = 512;
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  Eigen::MatrixXd train_x, val_x;
  Eigen::VectorXd train_y, val_y;
};

SyntheticTask make_task(const TaskConfig& cfg);

// Integer channel/hidden sizes of the sliced sub-network. Real-valued
// width/expand ratios round to the nearest unit, floored at one.
int channels_of(const SearchSpace& space, int block, double width);
int hidden_of(const SearchSpace& space, int block, double width, double expand);

// Weight-sharing supernet over fully connected bottleneck blocks: stem ->
// [blocks of residual reduce/hidden/restore layers, linked by transitions]
// -> scalar head. Shared tensors are sized for the all-max path; any path
// uses their leading slices.
struct ToySupernet {
  SearchSpace space;
  int input_dim = 16;
  std::vector<std::string> param_names;
  std::vector<Eigen::MatrixXd> params;
};

ToySupernet make_supernet(const SearchSpace& space, int input_dim, std::uint64_t seed);

std::size_t supernet_parameter_count(const ToySupernet& net);

// Per-sample predictions of the path's sub-network on rows of x.
Eigen::VectorXd supernet_forward(const ToySupernet& net, const Path& path,
                                 const Eigen::MatrixXd& x);

// Mean squared error of the sub-network on (x, y).
double supernet_eval(const ToySupernet& net, const Path& path, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y);

// One SGD step of the sub-network on the minibatch; only the active slices
// move, every other coefficient stays bit-identical. Returns the batch loss
// before the update.
double supernet_step(ToySupernet& net, const Path& path, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y, double lr);

// Per-sample multiply-accumulate counts of a forward pass, by component.
struct MacReport {
  std::uint64_t total = 0;
  std::uint64_t stem = 0;
  std::uint64_t head = 0;
  std::vector<std::uint64_t> transitions;
  std::vector<std::vector<std::uint64_t>> per_layer;  // [block][active layer]
};

MacReport mac_report(const ToySupernet& net, const Path& path);
std::uint64_t mac_count(const ToySupernet& net, const Path& path);

}  // namespace pathrank
