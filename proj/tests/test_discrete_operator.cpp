#include <gtest/gtest.h>

#include <sstream>

#include "kodaira/discrete_operator.hpp"
#include "oracles.hpp"

using namespace kodaira;

namespace {

AnalyticPerturbation cubic_real_part(double c) {
  AnalyticPerturbation p;
  p.value = [c](const CVector& z) { return c * std::real(z(0) * z(0) * z(0)); };
  p.dbar_gradient = [c](const CVector& z) {
    CVector g = CVector::Zero(z.size());
    g(0) = 1.5 * c * std::conj(z(0) * z(0));
    return g;
  };
  p.complex_hessian = [](const CVector& z) { return CMatrix::Zero(z.size(), z.size()).eval(); };
  return p;
}

PerturbationSpec linear_frame(int n, double c) {
  PerturbationSpec p;
  p.metric = [n, c](const CVector& z) {
    CMatrix r = CMatrix::Zero(n, n);
    if (n == 1) r(0, 0) = c * z(0);
    else {
      r(0, 1) = c * z(1);
      r(1, 0) = c * std::conj(z(0));
      r(1, 1) = 0.5 * c * z(0);
    }
    return r;
  };
  return p;
}

PerturbationSpec full_perturbation(int n) {
  PerturbationSpec p = linear_frame(n, 0.1);
  p.alpha = [](const CVector& z) { return CVector(0.05 * z); };
  p.volume_density = [](const CVector& z) { return 1.0 + 0.1 * z.squaredNorm(); };
  return p;
}

CVector sample(const GridSpec& grid, std::size_t d, std::size_t form, const oracle::Field& f) {
  CVector v = CVector::Zero(static_cast<Eigen::Index>(grid.sites() * d));
  for (std::size_t s = 0; s < grid.sites(); ++s) v(static_cast<Eigen::Index>(s * d + form)) = f(grid.point(s));
  return v;
}

bool interior(const GridSpec& grid, std::size_t site, double box) {
  for (int a = 0; a < 2 * grid.n(); ++a)
    if (std::abs(grid.coordinate(site, a)) > box + 1e-12) return false;
  return true;
}

const oracle::Field profile = [](const CVector& z) {
  const Complex c(0.3, 0.2);
  Complex u = std::exp(-std::norm(z(0) - c)) * Complex(1.0, z(0).real());
  for (Eigen::Index j = 1; j < z.size(); ++j) u *= std::exp(-0.5 * std::norm(z(j))) * Complex(1.0, 0.3 * z(j).imag());
  return u;
};

/// max over interior sites of |(A u)(z) - (□u)(z)| for the given form slot.
double consistency_error(const std::vector<double>& lambda, int q, std::size_t form, double theta, double h,
                         double box) {
  const int n = static_cast<int>(lambda.size());
  const GridSpec grid(n, 2.0, h);
  const auto op = assemble_model(ModelSpec(n, lambda, q), grid);
  const std::size_t d = op.fiber_dim();
  const CVector u = sample(grid, d, form, profile);
  const CVector Au = op.matrix * u;
  double err = 0.0;
  for (std::size_t s = 0; s < grid.sites(); ++s) {
    if (!interior(grid, s, box)) continue;
    const Complex ref = oracle::model_operator_fd(lambda, theta, profile, grid.point(s));
    err = std::max(err, std::abs(Au(op.index(s, form)) - ref));
    for (std::size_t g = 0; g < d; ++g)
      if (g != form) err = std::max(err, std::abs(Au(op.index(s, g))));
  }
  return err;
}

double smallest_eigenvalue(const SparseMatrix& A) {
  return nearest_eigenpairs(A, -1.0, 1).values(0);
}

double dense_smallest_eigenvalue(const SparseMatrix& A) {
  const Eigen::SelfAdjointEigenSolver<CMatrix> eig(CMatrix(A), Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

}  // namespace

TEST(GridSpec, RequiresEvenCellCount) {
  EXPECT_NO_THROW(GridSpec(1, 5.0, 0.2));
  EXPECT_THROW(GridSpec(1, 5.0, 0.3), ArgumentError);
  EXPECT_THROW(GridSpec(1, 1.5, 1.0), ArgumentError);
  EXPECT_THROW(GridSpec(1, 0.0, 0.1), ArgumentError);
  EXPECT_THROW(GridSpec(1, 5.0, -0.1), ArgumentError);
  EXPECT_THROW(GridSpec(3, 6.0, 0.2), ResourceError);
}

TEST(GridSpec, SnappingRoundsRadiusUp) {
  const auto g = GridSpec::snapped(1, 5.0, 0.4);
  EXPECT_NEAR(g.radius(), 5.2, 1e-12);
  EXPECT_EQ(g.points_per_axis(), 27);
  EXPECT_NEAR(GridSpec::snapped(1, 5.0, 0.2).radius(), 5.0, 1e-12);
}

TEST(GridSpec, OriginAndOffsets) {
  const GridSpec g(2, 1.0, 0.5);
  EXPECT_EQ(g.sites(), 625u);
  const CVector o = g.point(g.origin());
  EXPECT_LT(o.norm(), 1e-15);
  const CVector p = g.point(g.site_at({1, 0, 0, -2}));
  EXPECT_NEAR(p(0).real(), 0.5, 1e-15);
  EXPECT_NEAR(p(1).imag(), -1.0, 1e-15);
  EXPECT_THROW(g.site_at({3, 0, 0, 0}), ArgumentError);
  EXPECT_NEAR(g.cell_volume(Measure::hermitian), 4.0 * std::pow(0.5, 4), 1e-15);
}

TEST(Assemble, FlatCaseIsQuarterOfFivePointLaplacian) {
  const GridSpec grid(1, 2.0, 0.25);
  const double h = grid.spacing();
  for (int q : {0, 1}) {
    const CMatrix A(assemble_model(ModelSpec(1, {0.0}, q), grid).matrix);
    // every row, boundary included: -¼Δ_h (5-point) with zero extension
    for (std::size_t s = 0; s < grid.sites(); ++s) {
      const int i = grid.axis_index(s, 0), j = grid.axis_index(s, 1);
      for (std::size_t c = 0; c < grid.sites(); ++c) {
        const int di = std::abs(grid.axis_index(c, 0) - i), dj = std::abs(grid.axis_index(c, 1) - j);
        double ref = 0.0;
        if (di == 0 && dj == 0) ref = 0.25 * 4.0 / (h * h);
        else if (di + dj == 1) ref = -0.25 / (h * h);
        ASSERT_LT(std::abs(A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c)) - ref), 1e-11)
            << "q=" << q << " row " << s << " col " << c;
      }
    }
  }
}

TEST(Assemble, HermitianAndPositiveAcrossScales) {
  struct Case {
    std::vector<double> lambda;
    double radius, spacing;
  };
  const std::vector<Case> cases = {{{1.0}, 3.0, 0.25}, {{1.0, 0.5}, 1.0, 0.5}, {{1.0, -1.0}, 1.0, 0.5}};
  for (const auto& c : cases) {
    const int n = static_cast<int>(c.lambda.size());
    const GridSpec grid(n, c.radius, c.spacing);
    const WeightFunction weight(c.lambda, cubic_real_part(0.1));
    const auto pert = full_perturbation(n);
    for (int k : {1, 16, 256})
      for (int q = 0; q <= n; ++q) {
        const auto op = assemble_scaled(weight, pert, k, grid, q);
        const double scale = max_abs(op.matrix);
        EXPECT_LE(hermitian_defect(op.matrix), 1e-12 * scale) << "n=" << n << " k=" << k << " q=" << q;
        EXPECT_GE(dense_smallest_eigenvalue(op.matrix), -1e-10 * scale) << "n=" << n << " k=" << k << " q=" << q;
      }
  }
}

TEST(Assemble, ModelGroundStatesMatchLandauLevels) {
  // λ = 1: the q = 0 spectrum starts at 0, the q = 1 spectrum at λ
  double prev0 = 1e300, prev1 = 1e300;
  for (double h : {0.5, 0.25}) {
    const GridSpec grid(1, 5.0, h);
    const auto op0 = assemble_model(ModelSpec(1, {1.0}, 0), grid);
    const auto op1 = assemble_model(ModelSpec(1, {1.0}, 1), grid);
    double e0;
    if (h == 0.25) {
      const HermitianEigen eig{CMatrix(op0.matrix)};
      e0 = eig.values(0);
    } else {
      e0 = smallest_eigenvalue(op0.matrix);
    }
    const double e1 = smallest_eigenvalue(op1.matrix);
    EXPECT_LT(std::abs(e0), prev0);
    EXPECT_LT(std::abs(e1 - 1.0), prev1);
    prev0 = std::abs(e0);
    prev1 = std::abs(e1 - 1.0);
  }
  EXPECT_LT(prev0, 0.02);
  EXPECT_LT(prev1, 0.02);
}

TEST(Assemble, SecondOrderConsistencyOnSmoothProfile) {
  const std::vector<double> lambda = {1.0};
  for (int q : {0, 1}) {
    const double theta = q == 1 ? 1.0 : 0.0;
    const double e1 = consistency_error(lambda, q, 0, theta, 0.2, 1.0);
    const double e2 = consistency_error(lambda, q, 0, theta, 0.1, 1.0);
    const double e3 = consistency_error(lambda, q, 0, theta, 0.05, 1.0);
    EXPECT_GT(e1 / e2, 3.2) << "q=" << q;
    EXPECT_LT(e1 / e2, 4.8) << "q=" << q;
    EXPECT_GT(e2 / e3, 3.2) << "q=" << q;
    EXPECT_LT(e2 / e3, 4.8) << "q=" << q;
  }
}

TEST(Assemble, SecondOrderConsistencyInTwoDimensions) {
  const std::vector<double> lambda = {1.0, 0.5};
  // q = 1 slots dz̄_1, dz̄_2 carry θ = λ_1, λ_2
  for (std::size_t form : {0u, 1u}) {
    const double theta = lambda[form];
    const double coarse = consistency_error(lambda, 1, form, theta, 0.5, 1.0);
    const double fine = consistency_error(lambda, 1, form, theta, 0.25, 1.0);
    EXPECT_GT(coarse / fine, 3.0) << "form " << form;
  }
}

TEST(Assemble, DbarSquaresToZeroWithTorsion) {
  // the torsion terms make D_1 D_0 consistent with 0; dropping them leaves an O(1) residual
  const int n = 2;
  const WeightFunction weight({1.0, 0.5});
  const auto pert = linear_frame(n, 0.3);
  const detail::ScaledCoefficients coeffs(weight, pert, 1);
  std::vector<double> errs, scale;
  for (double h : {0.5, 0.25}) {
    const GridSpec grid(n, 2.0, h);
    const SparseMatrix D0 = detail::assemble_dbar(coeffs, grid, 0);
    const SparseMatrix D1 = detail::assemble_dbar(coeffs, grid, 1);
    const CVector u = sample(grid, 1, 0, profile);
    const CVector Du = D0 * u;
    const CVector DDu = D1 * Du;
    double e = 0.0, s = 0.0;
    for (std::size_t site = 0; site < grid.sites(); ++site) {
      if (!interior(grid, site, 1.0)) continue;
      e = std::max(e, std::abs(DDu(static_cast<Eigen::Index>(site))));
      s = std::max({s, std::abs(Du(static_cast<Eigen::Index>(2 * site))), std::abs(Du(static_cast<Eigen::Index>(2 * site + 1)))});
    }
    errs.push_back(e);
    scale.push_back(s);
  }
  EXPECT_GT(errs[0] / errs[1], 1.8);
  EXPECT_LT(errs[1], 0.05 * scale[1]);
}

TEST(Assemble, ZeroPerturbationReproducesModel) {
  const GridSpec grid(1, 3.0, 0.25);
  const WeightFunction weight({0.7});
  const auto model = assemble_model(ModelSpec(1, {0.7}, 1), grid);
  for (int k : {1, 4, 100}) {
    const auto op = assemble_scaled(weight, PerturbationSpec{}, k, grid, 1);
    EXPECT_LE(relative_max_deviation(op.matrix, model.matrix), 1e-12);
  }
}

TEST(Assemble, CubicPerturbationDecaysLikeInverseRootK) {
  const GridSpec grid(1, 4.0, 0.25);
  const auto model = assemble_model(ModelSpec(1, {1.0}, 0), grid);
  const WeightFunction weight({1.0}, cubic_real_part(0.1));
  const double d100 = relative_max_deviation(assemble_scaled(weight, {}, 100, grid, 0).matrix, model.matrix);
  const double d400 = relative_max_deviation(assemble_scaled(weight, {}, 400, grid, 0).matrix, model.matrix);
  const double C = d100 * std::sqrt(100.0);
  RecordProperty("sqrtk_constant", std::to_string(C));
  EXPECT_GT(d100 / d400, 1.8);
  EXPECT_LT(d100 / d400, 2.2);
  EXPECT_LE(d400, 1.1 * C / std::sqrt(400.0));
}

TEST(Assemble, MetricPerturbationDeviationShrinksWithK) {
  const GridSpec grid(1, 4.0, 0.25);
  const auto model = assemble_model(ModelSpec(1, {1.0}, 0), grid);
  const WeightFunction weight({1.0});
  const auto pert = linear_frame(1, 0.1);
  double prev = 1e300;
  for (int k : {16, 64, 256}) {
    const double d = relative_max_deviation(assemble_scaled(weight, pert, k, grid, 0).matrix, model.matrix);
    EXPECT_LT(d, prev) << "k=" << k;
    prev = d;
  }
}

TEST(Assemble, RejectsInvalidInput) {
  const GridSpec grid(1, 5.0, 0.5);
  const WeightFunction chart_limited({1.0}, cubic_real_part(0.1), 0.5);
  EXPECT_THROW(assemble_scaled(chart_limited, {}, 4, grid, 0), DomainError);
  PerturbationSpec bad;
  bad.metric = [](const CVector&) { return CMatrix::Constant(1, 1, Complex(0.1, 0.0)); };
  EXPECT_THROW(assemble_scaled(WeightFunction({1.0}), bad, 4, grid, 0), ArgumentError);
  PerturbationSpec bad_volume;
  bad_volume.volume_density = [](const CVector&) { return 2.0; };
  EXPECT_THROW(assemble_scaled(WeightFunction({1.0}), bad_volume, 4, grid, 0), ArgumentError);
  EXPECT_THROW(assemble_scaled(WeightFunction({1.0}), {}, 0, grid, 0), ArgumentError);
  EXPECT_THROW(assemble_scaled(WeightFunction({1.0}), {}, 1, grid, 2), ArgumentError);
  EXPECT_THROW(assemble_scaled(WeightFunction({1.0, 1.0}), {}, 1, grid, 0), ArgumentError);
}

TEST(Gauge, DiagonalBlockIsGaugeInvariant) {
  const GridSpec grid(1, 4.0, 0.25);
  const WeightFunction model({1.0});
  const WeightFunction cubic({1.0}, cubic_real_part(0.1));
  EXPECT_TRUE(gauge_diagonal_identity_check(model, 1, grid, grid.origin()).ok);
  EXPECT_TRUE(gauge_diagonal_identity_check(cubic, 16, grid, grid.origin()).ok);
  const auto off = gauge_diagonal_identity_check(cubic, 16, grid, grid.site_at({4, -2}), full_perturbation(1), 1);
  EXPECT_TRUE(off.ok) << off.relative_difference;
  EXPECT_GT(off.symmetric, 0.0);
}

TEST(MatrixMarket, WritesCoordinateComplexFormat) {
  const GridSpec grid(1, 1.0, 0.5);
  const auto op = assemble_model(ModelSpec(1, {1.0}, 0), grid);
  std::ostringstream out;
  write_matrix_market(out, op.matrix);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "%%MatrixMarket matrix coordinate complex general");
  long long rows, cols, nnz;
  in >> rows >> cols >> nnz;
  EXPECT_EQ(rows, op.dim());
  EXPECT_EQ(cols, op.dim());
  EXPECT_EQ(nnz, op.matrix.nonZeros());
  long long count = 0;
  long long i, j;
  double re, im;
  while (in >> i >> j >> re >> im) {
    EXPECT_GE(i, 1);
    EXPECT_LE(j, cols);
    EXPECT_EQ(Complex(re, im), op.matrix.coeff(i - 1, j - 1));
    ++count;
  }
  EXPECT_EQ(count, nnz);
}
