#pragma once

#include <Eigen/Core>

namespace pulsemap {

/// Row-major dense matrix used for maps, patches, activations and parameters.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

}  // namespace pulsemap
