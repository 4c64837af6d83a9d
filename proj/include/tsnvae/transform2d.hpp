#pragma once

// Planar rigid motions (theta, x, y) and the grasp-compensation rule used by
// the regression baselines.

#include "tsnvae/sim.hpp"

#include <array>
#include <cmath>

namespace tsnvae {

struct Transform2D {
  double theta = 0.0;  // rad
  Vec2 t;              // m

  static Transform2D identity() { return {}; }
  static Transform2D translation(Vec2 v) { return {0.0, v}; }

  Vec2 apply(Vec2 p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y};
  }

  // Row-major 3x3 homogeneous matrix.
  std::array<double, 9> matrix() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c, -s, t.x, s, c, t.y, 0.0, 0.0, 1.0};
  }
};

// a * b: apply b first, then a.
inline Transform2D compose(const Transform2D& a, const Transform2D& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.theta + b.theta, {a.t.x + c * b.t.x - s * b.t.y, a.t.y + s * b.t.x + c * b.t.y}};
}

inline Transform2D invert(const Transform2D& a) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {-a.theta, {-(c * a.t.x + s * a.t.y), -(-s * a.t.x + c * a.t.y)}};
}

inline Transform2D operator*(const Transform2D& a, const Transform2D& b) { return compose(a, b); }

struct CfilFrames {
  Transform2D gTm;          // sensor origin in the gripper frame
  Transform2D mTo_expert;   // plug pose in the sensor frame during demonstrations
  Transform2D bTg_cf;       // regressed insertion pose, valid for the expert grasp
};

// bTo = bTg_cf gTm mTo_expert;  bTg = bTo mTo^-1 gTm^-1.
inline Transform2D compensated_goal(const CfilFrames& f, const Transform2D& mTo_current) {
  const Transform2D bTo = f.bTg_cf * f.gTm * f.mTo_expert;
  return bTo * invert(mTo_current) * invert(f.gTm);
}

}  // namespace tsnvae
