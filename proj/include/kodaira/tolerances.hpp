#pragma once

#include <cstddef>

// Numerical defaults shared by every module. Experiments may override the
// method-level ones (Krylov size, dense cap, probes) through their configs.
namespace kodaira::defaults {

// Eigenvalues with |lambda| below this are treated as degenerate.
inline constexpr double degeneracy_threshold = 1e-8;

inline constexpr double hermitian_tolerance = 1e-12;
inline constexpr double curvature_hermitian_tolerance = 1e-10;

// Step for finite-difference derivatives of user-supplied functions.
inline constexpr double fd_step = 1e-4;

// log-space accumulation of products over j when n exceeds this.
inline constexpr int log_product_min_dimension = 8;

inline constexpr std::size_t grid_site_cap = 200000;
inline constexpr std::size_t dense_dimension_cap = 6000;

inline constexpr int krylov_subspace = 60;
inline constexpr double krylov_tolerance = 1e-8;
inline constexpr int krylov_max_steps = 100000;

inline constexpr int trace_probes = 64;

}  // namespace kodaira::defaults
