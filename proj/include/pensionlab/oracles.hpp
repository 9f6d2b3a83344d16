#pragma once

// Brute-force reference solutions used by tests and acceptance checks.
// They share no code with the dual solver beyond the grid and utility.

#include <cstddef>
#include <vector>

#include "pensionlab/dual_solver.hpp"

namespace pensionlab::oracles {

/// One backward step in a driftless market by direct search over
/// consumption: C_k = C_max k / n_points (C_max leaves exactly x_1 for the
/// continuation) plus every C that lands the continuation on a grid node.
/// Returns ell at each budget.
std::vector<double> brute_force_step(const WealthGrid& grid, const std::vector<double>& next_ell,
                                     double survival, double r_dt, const EkmParams& p, double dt,
                                     std::size_t n_points);

/// ell layers for a `horizon`-year problem with survival s in every
/// non-terminal year, index 0 first; each stage uses the previous stage's
/// brute-force result as its continuation.
std::vector<std::vector<double>> brute_force_layers(const WealthGrid& grid, std::size_t horizon,
                                                    double survival, double r_dt,
                                                    const EkmParams& p, double dt,
                                                    std::size_t n_points);

}  // namespace pensionlab::oracles
