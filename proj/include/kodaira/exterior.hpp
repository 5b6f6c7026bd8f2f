#pragma once

// Strictly increasing multi-indices J ⊂ {0..n-1}, |J| = q, in lexicographic
// order, and the wedge / contraction action of a single covector on the
// corresponding basis of Λ^q. Multi-indices are stored as bitmasks.

#include <Eigen/Dense>

#include <bit>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kodaira/errors.hpp"

namespace kodaira {

using Mask = std::uint32_t;

inline constexpr int max_complex_dimension = 20;

inline std::size_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::size_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::size_t>(n - k + i) / static_cast<std::size_t>(i);
  return r;
}

/// Result of applying wedge/contraction to a basis form: sign and new index.
struct SignedMask {
  int sign;
  Mask mask;
};

/// ω̄^j ∧ ω̄^J, or nullopt when j ∈ J.
inline std::optional<SignedMask> wedge(int j, Mask J) {
  const Mask bit = Mask{1} << j;
  if (J & bit) return std::nullopt;
  const int below = std::popcount(J & (bit - 1));
  return SignedMask{(below % 2) ? -1 : 1, J | bit};
}

/// (ω̄^j)^* ⌟ ω̄^J, or nullopt when j ∉ J.
inline std::optional<SignedMask> contract(int j, Mask J) {
  const Mask bit = Mask{1} << j;
  if (!(J & bit)) return std::nullopt;
  const int below = std::popcount(J & (bit - 1));
  return SignedMask{(below % 2) ? -1 : 1, J & ~bit};
}

/// Lexicographically ordered basis {ω̄^J : |J| = q} of Λ^{0,q}(C^n).
class FormBasis {
 public:
  FormBasis(int n, int q) : n_(n), q_(q) {
    if (n < 1 || n > max_complex_dimension) throw ArgumentError("form basis: dimension out of range");
    if (q < 0 || q > n) throw ArgumentError("form basis: degree q must satisfy 0 <= q <= n");
    position_.assign(std::size_t{1} << n, -1);
    std::vector<int> J(static_cast<std::size_t>(q));
    for (int i = 0; i < q; ++i) J[static_cast<std::size_t>(i)] = i;
    while (true) {
      Mask m = 0;
      for (int j : J) m |= Mask{1} << j;
      position_[m] = static_cast<int>(masks_.size());
      masks_.push_back(m);
      // next combination in lexicographic order
      int i = q - 1;
      while (i >= 0 && J[static_cast<std::size_t>(i)] == n - q + i) --i;
      if (i < 0) break;
      ++J[static_cast<std::size_t>(i)];
      for (int l = i + 1; l < q; ++l) J[static_cast<std::size_t>(l)] = J[static_cast<std::size_t>(l - 1)] + 1;
    }
  }

  int n() const { return n_; }
  int q() const { return q_; }
  std::size_t size() const { return masks_.size(); }
  Mask mask(std::size_t pos) const { return masks_[pos]; }
  const std::vector<Mask>& masks() const { return masks_; }

  /// Position of a mask with popcount q, or -1.
  int position(Mask m) const {
    if (m >= position_.size()) return -1;
    return position_[m];
  }

  /// Sorted 0-based members of the pos-th multi-index.
  std::vector<int> members(std::size_t pos) const {
    std::vector<int> out;
    for (int j = 0; j < n_; ++j)
      if (masks_[pos] & (Mask{1} << j)) out.push_back(j);
    return out;
  }

  /// 1-based label such as "13" (or "1_3" when n > 9); "0" for the empty index.
  std::string label(std::size_t pos) const {
    const auto mem = members(pos);
    if (mem.empty()) return "0";
    std::string s;
    for (std::size_t i = 0; i < mem.size(); ++i) {
      if (n_ > 9 && i > 0) s += '_';
      s += std::to_string(mem[i] + 1);
    }
    return s;
  }

 private:
  int n_;
  int q_;
  std::vector<Mask> masks_;
  std::vector<int> position_;
};

/// Matrix of Σ_{ij} B_{ij} ω̄^i ∧ (ω̄^j)^*⌟ on the degree-q basis.
inline Eigen::MatrixXcd wedge_contract_matrix(const Eigen::MatrixXcd& B, const FormBasis& basis) {
  const int n = basis.n();
  const auto d = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(d, d);
  for (Eigen::Index col = 0; col < d; ++col) {
    const Mask J = basis.mask(static_cast<std::size_t>(col));
    for (int j = 0; j < n; ++j) {
      const auto c = contract(j, J);
      if (!c) continue;
      for (int i = 0; i < n; ++i) {
        const auto w = wedge(i, c->mask);
        if (!w) continue;
        const int row = basis.position(w->mask);
        out(row, col) += static_cast<double>(c->sign * w->sign) * B(i, j);
      }
    }
  }
  return out;
}

/// Induced action Λ^q(V) of a linear map V on the degree-q basis (q×q minors).
inline Eigen::MatrixXcd induced_matrix(const Eigen::MatrixXcd& V, const FormBasis& basis) {
  const auto d = static_cast<Eigen::Index>(basis.size());
  const int q = basis.q();
  Eigen::MatrixXcd out(d, d);
  if (q == 0) {
    out.setOnes();
    return out;
  }
  Eigen::MatrixXcd sub(q, q);
  for (Eigen::Index r = 0; r < d; ++r) {
    const auto rows = basis.members(static_cast<std::size_t>(r));
    for (Eigen::Index c = 0; c < d; ++c) {
      const auto cols = basis.members(static_cast<std::size_t>(c));
      for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) sub(a, b) = V(rows[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(b)]);
      out(r, c) = sub.determinant();
    }
  }
  return out;
}

}  // namespace kodaira
