#pragma once

#include <Eigen/Dense>

namespace rvrs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Standard-Normal innovation behind a reparameterized draw z = mu + L eps.
struct NoiseDraw {
  Vector eps;
};

struct ReparamDraw {
  Vector z;
  NoiseDraw noise;
};

}  // namespace rvrs
