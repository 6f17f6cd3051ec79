#pragma once

// Maximal log-linear model for the two-source table, fitted as a Poisson
// regression on the 0/1 "variable match" design.
//
// Parameter ordering (length n_A*n_B + n_A + n_B):
//   lambda0, lambdaA_1, lambdaB_1,
//   lambda_a[k]   k = 2..n_A,
//   lambda_b[l]   l = 2..n_B,
//   lambdaAb[1,l] l = 2..n_B,
//   lambdaBa[1,k] k = 2..n_A,
//   lambda_ab[k,l] k = 2..n_A (outer), l = 2..n_B (inner).

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "dse/errors.hpp"
#include "dse/table_model.hpp"

namespace dse {

/// Column offsets of each parameter block.
struct ParamLayout {
  Dims dims;

  std::size_t size() const noexcept { return dims.param_count(); }
  static constexpr std::size_t lambda0() noexcept { return 0; }
  static constexpr std::size_t lambda_a1() noexcept { return 1; }
  static constexpr std::size_t lambda_b1() noexcept { return 2; }
  std::size_t a(int k) const noexcept { return 3 + static_cast<std::size_t>(k - 2); }
  std::size_t b(int l) const noexcept { return 3 + na1() + static_cast<std::size_t>(l - 2); }
  std::size_t ab_row(int l) const noexcept { return 3 + na1() + nb1() + static_cast<std::size_t>(l - 2); }
  std::size_t ba_col(int k) const noexcept { return 3 + na1() + 2 * nb1() + static_cast<std::size_t>(k - 2); }
  std::size_t ab(int k, int l) const noexcept {
    return 3 + 2 * na1() + 2 * nb1() + static_cast<std::size_t>(k - 2) * nb1() + static_cast<std::size_t>(l - 2);
  }

 private:
  std::size_t na1() const noexcept { return static_cast<std::size_t>(dims.n_a - 1); }
  std::size_t nb1() const noexcept { return static_cast<std::size_t>(dims.n_b - 1); }
};

struct ParamVector {
  Dims dims{};
  Eigen::VectorXd coef;

  ParamVector() = default;
  explicit ParamVector(Dims d) : dims(d), coef(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.param_count()))) {}
  ParamVector(Dims d, Eigen::VectorXd c) : dims(d), coef(std::move(c)) {
    if (static_cast<std::size_t>(coef.size()) != dims.param_count())
      throw DomainError("parameter vector has length " + std::to_string(coef.size()) + ", expected " +
                        std::to_string(dims.param_count()));
  }

  ParamLayout layout() const noexcept { return ParamLayout{dims}; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(coef.size()); }
  double operator[](std::size_t n) const { return coef[static_cast<Eigen::Index>(n)]; }
  double& operator[](std::size_t n) { return coef[static_cast<Eigen::Index>(n)]; }
};

/// Parameter columns switched on for cell v, ascending.
inline std::vector<int> vm_columns(const FullIndex& v, const Dims& d) {
  const ParamLayout lay{d};
  std::vector<int> cols;
  cols.reserve(8);
  cols.push_back(static_cast<int>(ParamLayout::lambda0()));
  if (v.i == 1) cols.push_back(static_cast<int>(ParamLayout::lambda_a1()));
  if (v.j == 1) cols.push_back(static_cast<int>(ParamLayout::lambda_b1()));
  if (v.k >= 2) cols.push_back(static_cast<int>(lay.a(v.k)));
  if (v.l >= 2) cols.push_back(static_cast<int>(lay.b(v.l)));
  if (v.i == 1 && v.l >= 2) cols.push_back(static_cast<int>(lay.ab_row(v.l)));
  if (v.j == 1 && v.k >= 2) cols.push_back(static_cast<int>(lay.ba_col(v.k)));
  if (v.k >= 2 && v.l >= 2) cols.push_back(static_cast<int>(lay.ab(v.k, v.l)));
  std::sort(cols.begin(), cols.end());
  return cols;
}

/// Variable-match row of cell v: vm(v) . Lambda is the log-mean of y_v.
inline std::vector<std::uint8_t> vm(const FullIndex& v, const Dims& d) {
  std::vector<std::uint8_t> row(d.param_count(), 0);
  for (int c : vm_columns(v, d)) row[static_cast<std::size_t>(c)] = 1;
  return row;
}

/// The stacked vm rows in full-table enumeration order, kept in compressed
/// row form together with a factorisation of the Gram matrix V'V.
class DesignMatrix {
 public:
  const Dims& dims() const noexcept { return dims_; }
  std::size_t rows() const noexcept { return dims_.full_size(); }
  std::size_t cols() const noexcept { return dims_.param_count(); }
  std::size_t rank() const noexcept { return rank_; }

  std::span<const int> row_columns(std::size_t r) const noexcept {
    return {col_idx_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    for (std::size_t r = 0; r < rows(); ++r)
      for (int c : row_columns(r)) m(static_cast<Eigen::Index>(r), c) = 1.0;
    return m;
  }

  /// eta = V * lambda
  Eigen::VectorXd multiply(const Eigen::VectorXd& lambda) const {
    Eigen::VectorXd eta(static_cast<Eigen::Index>(rows()));
    for (std::size_t r = 0; r < rows(); ++r) {
      double s = 0.0;
      for (int c : row_columns(r)) s += lambda[c];
      eta[static_cast<Eigen::Index>(r)] = s;
    }
    return eta;
  }

  /// V' * w
  Eigen::VectorXd transpose_multiply(const Eigen::VectorXd& w) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols()));
    for (std::size_t r = 0; r < rows(); ++r)
      for (int c : row_columns(r)) out[c] += w[static_cast<Eigen::Index>(r)];
    return out;
  }

  /// V' diag(w) V, accumulated from the sparse rows.
  Eigen::MatrixXd weighted_gram(const Eigen::VectorXd& w) const {
    const auto p = static_cast<Eigen::Index>(cols());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t r = 0; r < rows(); ++r) {
      const double wr = w[static_cast<Eigen::Index>(r)];
      const auto cs = row_columns(r);
      for (std::size_t a = 0; a < cs.size(); ++a)
        for (std::size_t b = 0; b <= a; ++b) h(cs[a], cs[b]) += wr;
    }
    return h.selfadjointView<Eigen::Lower>();
  }

  /// Least-squares solve against the design: argmin |V x - z|.
  Eigen::VectorXd least_squares(const Eigen::VectorXd& z) const { return gram_.solve(transpose_multiply(z)); }

  friend DesignMatrix build_design(const Dims& dims);

 private:
  Dims dims_{};
  std::vector<std::size_t> row_ptr_;
  std::vector<int> col_idx_;
  Eigen::LDLT<Eigen::MatrixXd> gram_;
  std::size_t rank_ = 0;
};

/// Builds the design and verifies full column rank (a deficiency is an internal bug).
inline DesignMatrix build_design(const Dims& dims) {
  make_dims(dims.n_a, dims.n_b);
  DesignMatrix dm;
  dm.dims_ = dims;
  dm.row_ptr_.reserve(dims.full_size() + 1);
  dm.row_ptr_.push_back(0);
  for (std::size_t r = 0; r < dims.full_size(); ++r) {
    for (int c : vm_columns(FullIndex::from_flat(r, dims), dims)) dm.col_idx_.push_back(c);
    dm.row_ptr_.push_back(dm.col_idx_.size());
  }
  const Eigen::MatrixXd gram = dm.weighted_gram(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dims.full_size())));
  dm.gram_.compute(gram);
  const Eigen::VectorXd diag = dm.gram_.vectorD();
  const double dmax = diag.cwiseAbs().maxCoeff();
  dm.rank_ = 0;
  for (Eigen::Index n = 0; n < diag.size(); ++n)
    if (diag[n] > 1e-9 * dmax) ++dm.rank_;
  if (dm.gram_.info() != Eigen::Success || dm.rank_ != dm.cols())
    throw InternalError("design for " + to_string(dims) + " has rank " + std::to_string(dm.rank_) + " < " +
                        std::to_string(dm.cols()));
  return dm;
}

/// Process-wide cache of designs keyed by dims; safe for concurrent callers.
inline std::shared_ptr<const DesignMatrix> shared_design(const Dims& dims) {
  static std::mutex mu;
  static std::map<Dims, std::shared_ptr<const DesignMatrix>> cache;
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(dims); it != cache.end()) return it->second;
  }
  auto built = std::make_shared<const DesignMatrix>(build_design(dims));
  std::lock_guard lock(mu);
  return cache.emplace(dims, std::move(built)).first->second;
}

inline constexpr double kMaxExponent = 709.0;  // exp() overflows double just above this

/// Unconditioned expectation: table[v] = exp(vm(v) . Lambda).
inline FullTable ue(const ParamVector& params) {
  const auto design = shared_design(params.dims);
  const Eigen::VectorXd eta = design->multiply(params.coef);
  FullTable out(params.dims);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double e = eta[static_cast<Eigen::Index>(r)];
    if (!std::isfinite(e) || e > kMaxExponent)
      throw OverflowError("exp(vm.Lambda) overflows at " + to_string(FullIndex::from_flat(r, params.dims)) +
                          " (linear predictor " + std::to_string(e) + ")");
    out.at(r) = std::exp(e);
  }
  return out;
}

/// Complete-data Poisson log-likelihood without the Lambda-free term.
inline double loglik(const FullTable& table, const ParamVector& params) {
  if (table.dims() != params.dims) throw DomainError("loglik: table and parameter dims differ");
  const auto design = shared_design(params.dims);
  const Eigen::VectorXd eta = design->multiply(params.coef);
  double s = 0.0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double e = eta[static_cast<Eigen::Index>(r)];
    s += table.at(r) * e - std::exp(e);
  }
  return s;
}

/// Gradient of loglik with respect to Lambda: V'(y - exp(V Lambda)).
inline Eigen::VectorXd loglik_gradient(const FullTable& table, const ParamVector& params) {
  const auto design = shared_design(params.dims);
  Eigen::VectorXd resid = design->multiply(params.coef);
  for (Eigen::Index r = 0; r < resid.size(); ++r) resid[r] = table.at(static_cast<std::size_t>(r)) - std::exp(resid[r]);
  return design->transpose_multiply(resid);
}

/// Hessian of loglik: -V' diag(exp(V Lambda)) V.
inline Eigen::MatrixXd loglik_hessian(const ParamVector& params) {
  const auto design = shared_design(params.dims);
  Eigen::VectorXd mu = design->multiply(params.coef).array().exp();
  return -design->weighted_gram(mu);
}

// Inner Newton solve H * step = g (H symmetric positive definite). Swappable for larger dims.
using InnerSolve = std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)>;

inline Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& h, const Eigen::VectorXd& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success) throw ConvergenceError("Newton system is not positive definite", g.cwiseAbs().maxCoeff());
  return ldlt.solve(g);
}

struct PoissonFitOptions {
  // Converged when |g_j| <= grad_tol * max(1, (V'y)_j) for every parameter j.
  double grad_tol = 1e-10;
  int max_newton_iters = 100;
  int max_halvings = 30;
  bool exact_shortcut = true;
  double shortcut_residual_tol = 1e-10;
  // |lambda| beyond this while the likelihood is still rising is treated as separation.
  double divergence_bound = 500.0;
  InnerSolve inner_solve = cholesky_solve;
};

struct PoissonFit {
  ParamVector params;
  int newton_iters = 0;
  double grad_norm = 0.0;  // max_j |g_j| / max(1, (V'y)_j)
  bool used_shortcut = false;
};

namespace detail {

inline double scaled_grad_norm(const Eigen::VectorXd& g, const Eigen::VectorXd& scale) {
  double m = 0.0;
  for (Eigen::Index n = 0; n < g.size(); ++n) m = std::max(m, std::abs(g[n]) / scale[n]);
  return m;
}

struct LikState {
  Eigen::VectorXd eta, mu;
  double value = 0.0;
  double magnitude = 0.0;  // sum of |terms|, for round-off slack
  bool finite = true;
};

inline LikState evaluate(const DesignMatrix& design, const Eigen::VectorXd& y, const Eigen::VectorXd& lambda) {
  LikState s;
  s.eta = design.multiply(lambda);
  s.mu.resize(s.eta.size());
  for (Eigen::Index r = 0; r < s.eta.size(); ++r) {
    const double e = s.eta[r];
    if (!std::isfinite(e) || e > kMaxExponent) {
      s.finite = false;
      return s;
    }
    s.mu[r] = std::exp(e);
    s.value += y[r] * e - s.mu[r];
    s.magnitude += std::abs(y[r] * e) + s.mu[r];
  }
  return s;
}

}  // namespace detail

/// Poisson regression: maximises sum_v [y_v vm(v).Lambda - exp(vm(v).Lambda)].
/// When log(table) lies in the design span the exact linear solution is
/// returned directly; otherwise damped Newton (IRLS on the canonical link).
inline PoissonFit fit_poisson(const FullTable& table, const PoissonFitOptions& opts = {},
                              const ParamVector* start = nullptr) {
  const Dims d = table.dims();
  const auto design_ptr = shared_design(d);
  const DesignMatrix& design = *design_ptr;
  const auto n = static_cast<Eigen::Index>(table.size());

  Eigen::VectorXd y(n);
  double pos_sum = 0.0;
  std::size_t pos_count = 0;
  bool all_positive = true;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double v = table.at(static_cast<std::size_t>(r));
    if (!std::isfinite(v) || v < 0.0) throw DomainError("Poisson regression needs a finite nonnegative table");
    y[r] = v;
    if (v > 0.0) {
      pos_sum += v;
      ++pos_count;
    } else {
      all_positive = false;
    }
  }
  if (pos_count == 0) throw DomainError("Poisson regression on an identically zero table");

  Eigen::VectorXd scale = design.transpose_multiply(y).cwiseMax(1.0);

  PoissonFit fit;
  fit.params = ParamVector(d);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.param_count()));
  bool have_start = false;

  if (opts.exact_shortcut && all_positive) {
    const Eigen::VectorXd logy = y.array().log();
    Eigen::VectorXd cand = design.least_squares(logy);
    const double resid = (design.multiply(cand) - logy).cwiseAbs().maxCoeff();
    if (resid < opts.shortcut_residual_tol) {
      auto st = detail::evaluate(design, y, cand);
      if (st.finite) {
        const Eigen::VectorXd g = design.transpose_multiply(y - st.mu);
        const double gn = detail::scaled_grad_norm(g, scale);
        if (gn <= opts.grad_tol) {
          fit.params.coef = std::move(cand);
          fit.grad_norm = gn;
          fit.used_shortcut = true;
          return fit;
        }
        lambda = std::move(cand);  // exact up to round-off; polish with Newton
        have_start = true;
      }
    }
  }
  if (!have_start) {
    if (start && start->dims == d && start->coef.allFinite()) {
      lambda = start->coef;
    } else {
      lambda[ParamLayout::lambda0()] = std::log(pos_sum / static_cast<double>(pos_count) + 1e-12);
    }
  }

  auto state = detail::evaluate(design, y, lambda);
  if (!state.finite) {
    lambda.setZero();
    lambda[ParamLayout::lambda0()] = std::log(pos_sum / static_cast<double>(pos_count) + 1e-12);
    state = detail::evaluate(design, y, lambda);
  }

  double gn = 0.0;
  for (int iter = 0; iter <= opts.max_newton_iters; ++iter) {
    const Eigen::VectorXd g = design.transpose_multiply(y - state.mu);
    gn = detail::scaled_grad_norm(g, scale);
    if (gn <= opts.grad_tol) {
      fit.params.coef = std::move(lambda);
      fit.newton_iters = iter;
      fit.grad_norm = gn;
      return fit;
    }
    if (iter == opts.max_newton_iters) break;

    const Eigen::VectorXd step = opts.inner_solve(design.weighted_gram(state.mu), g);
    double t = 1.0;
    bool accepted = false;
    detail::LikState next;
    Eigen::VectorXd cand;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      cand = lambda + t * step;
      next = detail::evaluate(design, y, cand);
      if (!next.finite) continue;
      const double slack = 1e-13 * std::max(state.magnitude, next.magnitude);
      if (next.value >= state.value - slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw ConvergenceError("Poisson regression line search failed after " + std::to_string(opts.max_halvings) +
                                 " halvings; scaled gradient norm " + std::to_string(gn),
                             gn);
    const bool rising = next.value > state.value;
    lambda = std::move(cand);
    state = std::move(next);
    if (rising && lambda.cwiseAbs().maxCoeff() > opts.divergence_bound)
      throw SeparationError("Poisson likelihood appears unbounded: |lambda| exceeded " +
                            std::to_string(opts.divergence_bound) + " while still increasing");
  }
  throw ConvergenceError("Poisson regression did not converge in " + std::to_string(opts.max_newton_iters) +
                             " Newton iterations; scaled gradient norm " + std::to_string(gn),
                         gn);
}

inline ParamVector pr(const FullTable& table, const PoissonFitOptions& opts = {}) {
  return fit_poisson(table, opts).params;
}

}  // namespace dse
