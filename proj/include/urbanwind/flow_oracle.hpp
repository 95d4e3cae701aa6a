// Steady 2D incompressible flow around slice obstacles.
//
// Pseudo-time projection scheme on a staggered (MAC) grid:
//   u* = u + dt (-(u.grad)u + nu_eff lap u)       first-order upwind advection
//   A phi = -h^2 div(u*)                          sparse LDLT, factorized once
//   u = u* - grad(phi)
// Inflow is the column-0 edge at the inlet speed, outflow is the last column
// (phi = 0 ghost, zero-gradient velocity), lateral edges are free-slip and
// obstacle faces are no-slip. Open pockets with no path to the outflow are
// stagnant. The effective viscosity scales with the inlet speed (eddy
// viscosity calibrated at `reference_speed`), so normalized fields do not
// depend on the inlet speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "urbanwind/grid.hpp"

namespace urbanwind {

struct SolverConfig {
  double inlet_speed = 5.0;     // m/s
  double residual_tol = 1e-5;   // max |du| / inlet_speed per iteration
  int max_iters = 5000;
  double viscosity = 1.0;       // m^2/s at reference_speed
  double relaxation = 0.9;      // fraction of the explicit stability limit
  double cell_size = 1.0;       // m
  double reference_speed = 5.0; // m/s

  void validate() const {
    if (!(inlet_speed > 0.0)) throw std::invalid_argument("inlet_speed must be positive");
    if (!(residual_tol > 0.0)) throw std::invalid_argument("residual_tol must be positive");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
    if (!(viscosity >= 0.0)) throw std::invalid_argument("viscosity must be non-negative");
    if (!(relaxation > 0.0 && relaxation <= 1.0)) throw std::invalid_argument("relaxation must be in (0, 1]");
    if (!(cell_size > 0.0)) throw std::invalid_argument("cell_size must be positive");
    if (!(reference_speed > 0.0)) throw std::invalid_argument("reference_speed must be positive");
  }
};

struct WindField {
  Grid2D<float> factors;
  BoolGrid valid;  // false inside solids
  Direction direction = Direction::W;
  double slice_height = 0.0;
  std::string scene_id;

  int rows() const { return factors.rows(); }
  int cols() const { return factors.cols(); }
};

/// u on vertical faces (rows x cols+1), v on horizontal faces (rows+1 x cols).
/// v is positive toward increasing row index.
struct StaggeredVelocity {
  Grid2D<double> u;
  Grid2D<double> v;
  double spacing = 1.0;

  int rows() const { return u.rows(); }
  int cols() const { return v.cols(); }

  static StaggeredVelocity zeros(int rows, int cols, double spacing) {
    return {Grid2D<double>(rows, cols + 1, 0.0), Grid2D<double>(rows + 1, cols, 0.0), spacing};
  }
};

class SolverError : public std::runtime_error {
 public:
  enum class Kind { AllSolid, NonConvergence };
  SolverError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline const char* to_string(SolverError::Kind k) {
  return k == SolverError::Kind::AllSolid ? "AllSolid" : "NonConvergence";
}

struct SolveResult {
  WindField field;
  StaggeredVelocity velocity;
  bool converged = false;
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<double> residual_history;  // one entry per iteration

  const WindField& require_converged() const {
    if (!converged) {
      throw SolverError(SolverError::Kind::NonConvergence,
                        "residual " + std::to_string(final_residual) + " above tolerance after " +
                            std::to_string(iterations) + " iterations");
    }
    return field;
  }
};

/// max |div u| over `open` cells (all cells when `open` is empty).
inline double divergence_residual(const StaggeredVelocity& vel, const BoolGrid& open = {}) {
  const int rows = vel.rows();
  const int cols = vel.cols();
  double worst = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!open.empty() && !open(r, c)) continue;
      const double div = (vel.u(r, c + 1) - vel.u(r, c) + vel.v(r + 1, c) - vel.v(r, c)) / vel.spacing;
      worst = std::max(worst, std::abs(div));
    }
  }
  return worst;
}

/// Open cells 4-connected to an open cell in the last (outflow) column.
inline BoolGrid outflow_connected(const BoolGrid& solid) {
  const int rows = solid.rows();
  const int cols = solid.cols();
  BoolGrid live(rows, cols, 0);
  std::queue<std::pair<int, int>> frontier;
  for (int r = 0; r < rows; ++r) {
    if (!solid(r, cols - 1)) {
      live(r, cols - 1) = 1;
      frontier.emplace(r, cols - 1);
    }
  }
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};
  while (!frontier.empty()) {
    const auto [r, c] = frontier.front();
    frontier.pop();
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k];
      const int nc = c + dc[k];
      if (nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
      if (solid(nr, nc) || live(nr, nc)) continue;
      live(nr, nc) = 1;
      frontier.emplace(nr, nc);
    }
  }
  return live;
}

namespace detail {

class ProjectionSolver {
 public:
  ProjectionSolver(const BoolGrid& solid, const SolverConfig& cfg)
      : rows_(solid.rows()), cols_(solid.cols()), h_(cfg.cell_size), cfg_(cfg),
        live_(outflow_connected(solid)) {
    bool inflow_open = false;
    for (int r = 0; r < rows_; ++r) inflow_open = inflow_open || live_(r, 0);
    if (!inflow_open) throw SolverError(SolverError::Kind::AllSolid, "no open path from inflow to outflow");
    nu_ = cfg.viscosity * cfg.inlet_speed / cfg.reference_speed;
    vel_ = StaggeredVelocity::zeros(rows_, cols_, h_);
    u_active_ = BoolGrid(rows_, cols_ + 1, 0);
    v_active_ = BoolGrid(rows_ + 1, cols_, 0);
    for (int r = 0; r < rows_; ++r) {
      for (int c = 1; c <= cols_; ++c) {
        u_active_(r, c) = (c == cols_) ? live_(r, cols_ - 1) : (live_(r, c - 1) && live_(r, c));
      }
      vel_.u(r, 0) = live_(r, 0) ? cfg.inlet_speed : 0.0;
    }
    for (int r = 1; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) v_active_(r, c) = live_(r - 1, c) && live_(r, c);
    }
    for (int r = 0; r < rows_; ++r) {
      for (int c = 1; c <= cols_; ++c) {
        if (u_active_(r, c)) vel_.u(r, c) = cfg.inlet_speed;
      }
    }
    factorize();
    project(vel_);
  }

  const BoolGrid& live() const { return live_; }
  const StaggeredVelocity& velocity() const { return vel_; }

  /// One pseudo-time step; returns max |du| / inlet_speed.
  double step() {
    StaggeredVelocity next = vel_;
    const double dt = time_step();
    advance_u(next, dt);
    advance_v(next, dt);
    project(next);
    double res = 0.0;
    const auto a = vel_.u.values();
    const auto b = next.u.values();
    for (std::size_t i = 0; i < a.size(); ++i) res = std::max(res, std::abs(b[i] - a[i]));
    const auto c = vel_.v.values();
    const auto d = next.v.values();
    for (std::size_t i = 0; i < c.size(); ++i) res = std::max(res, std::abs(d[i] - c[i]));
    vel_ = std::move(next);
    return res / cfg_.inlet_speed;
  }

 private:
  double time_step() const {
    double umax = cfg_.inlet_speed;
    for (double x : vel_.u.values()) umax = std::max(umax, std::abs(x));
    for (double x : vel_.v.values()) umax = std::max(umax, std::abs(x));
    return cfg_.relaxation / (2.0 * umax / h_ + 4.0 * nu_ / (h_ * h_));
  }

  void advance_u(StaggeredVelocity& next, double dt) const {
    const auto& u = vel_.u;
    const auto& v = vel_.v;
    for (int r = 0; r < rows_; ++r) {
      for (int c = 1; c <= cols_; ++c) {
        if (!u_active_(r, c)) continue;
        const double uc = u(r, c);
        const double uw = u(r, c - 1);
        const double ue = c < cols_ ? u(r, c + 1) : uc;
        const double un = r == 0 ? uc : (u_active_(r - 1, c) ? u(r - 1, c) : -uc);
        const double us = r == rows_ - 1 ? uc : (u_active_(r + 1, c) ? u(r + 1, c) : -uc);
        double vavg;
        if (c < cols_) {
          vavg = 0.25 * (v(r, c - 1) + v(r, c) + v(r + 1, c - 1) + v(r + 1, c));
        } else {
          vavg = 0.5 * (v(r, c - 1) + v(r + 1, c - 1));
        }
        const double dudx = uc > 0.0 ? (uc - uw) / h_ : (ue - uc) / h_;
        const double dudy = vavg > 0.0 ? (uc - un) / h_ : (us - uc) / h_;
        const double lap = (uw + ue + un + us - 4.0 * uc) / (h_ * h_);
        next.u(r, c) = uc + dt * (-(uc * dudx + vavg * dudy) + nu_ * lap);
      }
    }
  }

  void advance_v(StaggeredVelocity& next, double dt) const {
    const auto& u = vel_.u;
    const auto& v = vel_.v;
    for (int r = 1; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        if (!v_active_(r, c)) continue;
        const double vc = v(r, c);
        const double vn = v(r - 1, c);
        const double vs = v(r + 1, c);
        const double vw = c == 0 ? -vc : (v_active_(r, c - 1) ? v(r, c - 1) : -vc);
        const double ve = c == cols_ - 1 ? vc : (v_active_(r, c + 1) ? v(r, c + 1) : -vc);
        const double uavg = 0.25 * (u(r - 1, c) + u(r - 1, c + 1) + u(r, c) + u(r, c + 1));
        const double dvdx = uavg > 0.0 ? (vc - vw) / h_ : (ve - vc) / h_;
        const double dvdy = vc > 0.0 ? (vc - vn) / h_ : (vs - vc) / h_;
        const double lap = (vw + ve + vn + vs - 4.0 * vc) / (h_ * h_);
        next.v(r, c) = vc + dt * (-(uavg * dvdx + vc * dvdy) + nu_ * lap);
      }
    }
  }

  void factorize() {
    index_ = Grid2D<int>(rows_, cols_, -1);
    int n = 0;
    for (int r = 0; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        if (live_(r, c)) index_(r, c) = n++;
      }
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * 5);
    for (int r = 0; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        const int i = index_(r, c);
        if (i < 0) continue;
        double diag = 0.0;
        auto couple = [&](int rr, int cc) {
          if (rr < 0 || rr >= rows_ || cc < 0 || cc >= cols_) return;
          const int j = index_(rr, cc);
          if (j < 0) return;
          diag += 1.0;
          trip.emplace_back(i, j, -1.0);
        };
        couple(r - 1, c);
        couple(r + 1, c);
        couple(r, c - 1);
        if (c == cols_ - 1) {
          diag += 1.0;  // Dirichlet ghost beyond the outflow
        } else {
          couple(r, c + 1);
        }
        trip.emplace_back(i, i, diag);
      }
    }
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    ldlt_.compute(a);
    if (ldlt_.info() != Eigen::Success) {
      throw std::runtime_error("pressure matrix factorization failed");
    }
    rhs_.resize(n);
  }

  void project(StaggeredVelocity& vel) {
    for (int r = 0; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        const int i = index_(r, c);
        if (i < 0) continue;
        const double div = vel.u(r, c + 1) - vel.u(r, c) + vel.v(r + 1, c) - vel.v(r, c);
        rhs_[i] = -h_ * div;
      }
    }
    phi_ = ldlt_.solve(rhs_);
    auto phi_at = [&](int r, int c) {
      if (c >= cols_) return 0.0;
      const int i = index_(r, c);
      return i < 0 ? 0.0 : phi_[i];
    };
    for (int r = 0; r < rows_; ++r) {
      for (int c = 1; c <= cols_; ++c) {
        if (u_active_(r, c)) vel.u(r, c) -= (phi_at(r, c) - phi_at(r, c - 1)) / h_;
      }
    }
    for (int r = 1; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        if (v_active_(r, c)) vel.v(r, c) -= (phi_at(r, c) - phi_at(r - 1, c)) / h_;
      }
    }
  }

  int rows_;
  int cols_;
  double h_;
  double nu_ = 0.0;
  SolverConfig cfg_;
  BoolGrid live_;
  BoolGrid u_active_;
  BoolGrid v_active_;
  Grid2D<int> index_;
  StaggeredVelocity vel_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  Eigen::VectorXd rhs_;
  Eigen::VectorXd phi_;
};

}  // namespace detail

/// Cell-centered speed divided by the inlet speed; zero outside `live` cells.
inline Grid2D<float> wind_factors(const StaggeredVelocity& vel, const BoolGrid& live, double inlet_speed) {
  Grid2D<float> f(vel.rows(), vel.cols(), 0.0f);
  for (int r = 0; r < vel.rows(); ++r) {
    for (int c = 0; c < vel.cols(); ++c) {
      if (!live(r, c)) continue;
      const double uc = 0.5 * (vel.u(r, c) + vel.u(r, c + 1));
      const double vc = 0.5 * (vel.v(r, c) + vel.v(r + 1, c));
      f(r, c) = static_cast<float>(std::sqrt(uc * uc + vc * vc) / inlet_speed);
    }
  }
  return f;
}

/// Solves for the steady wind-factor field around `solid` cells. Throws
/// SolverError(AllSolid) when no open path links inflow and outflow;
/// non-convergence is reported through SolveResult::converged.
inline SolveResult solve(const BoolGrid& solid, const SolverConfig& cfg = {}) {
  cfg.validate();
  if (solid.empty()) throw std::invalid_argument("solve: empty mask");
  detail::ProjectionSolver solver(solid, cfg);
  SolveResult res;
  res.residual_history.reserve(static_cast<std::size_t>(std::min(cfg.max_iters, 10000)));
  double residual = 0.0;
  int it = 0;
  while (it < cfg.max_iters) {
    residual = solver.step();
    ++it;
    res.residual_history.push_back(residual);
    if (residual < cfg.residual_tol) break;
  }
  res.converged = residual < cfg.residual_tol;
  res.iterations = it;
  res.final_residual = residual;
  res.velocity = solver.velocity();
  res.field.factors = wind_factors(res.velocity, solver.live(), cfg.inlet_speed);
  res.field.valid = BoolGrid(solid.rows(), solid.cols(), 0);
  for (std::size_t i = 0; i < solid.size(); ++i) res.field.valid.values()[i] = solid.values()[i] ? 0 : 1;
  return res;
}

/// Largest |du| / inlet_speed between two velocity states.
inline double velocity_update_residual(const StaggeredVelocity& before, const StaggeredVelocity& after,
                                       double inlet_speed) {
  double res = 0.0;
  for (std::size_t i = 0; i < before.u.size(); ++i) {
    res = std::max(res, std::abs(after.u.values()[i] - before.u.values()[i]));
  }
  for (std::size_t i = 0; i < before.v.size(); ++i) {
    res = std::max(res, std::abs(after.v.values()[i] - before.v.values()[i]));
  }
  return res / inlet_speed;
}

}  // namespace urbanwind
