#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "earl/errors.hpp"

namespace earl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Sign with the convention sgn(0) = +1.
inline int sgn(double v) { return v >= 0.0 ? 1 : -1; }

inline void check_treatment(int a) {
  if (a != 1 && a != -1)
    throw DomainError("treatment must be -1 or +1, got " + std::to_string(a));
}

/// Observational sample: covariates X (n x p), treatment A in {-1,+1},
/// outcome Y (larger is better). Immutable once constructed.
class Dataset {
 public:
  Dataset(Matrix X, Eigen::VectorXi A, Vector Y)
      : X_(std::move(X)), A_(std::move(A)), Y_(std::move(Y)) {
    if (X_.rows() < 1 || X_.cols() < 1)
      throw ShapeError("dataset needs n >= 1 and p >= 1");
    if (A_.size() != X_.rows() || Y_.size() != X_.rows())
      throw ShapeError("X, A and Y must have the same number of rows");
    if (!X_.allFinite()) throw DomainError("X contains non-finite values");
    if (!Y_.allFinite()) throw DomainError("Y contains non-finite values");
    for (Eigen::Index i = 0; i < A_.size(); ++i) check_treatment(A_[i]);
  }

  std::size_t n() const { return static_cast<std::size_t>(X_.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X_.cols()); }

  const Matrix& X() const { return X_; }
  const Eigen::VectorXi& A() const { return A_; }
  const Vector& Y() const { return Y_; }

  int a(std::size_t i) const { return A_[static_cast<Eigen::Index>(i)]; }
  double y(std::size_t i) const { return Y_[static_cast<Eigen::Index>(i)]; }
  Vector x(std::size_t i) const { return X_.row(static_cast<Eigen::Index>(i)).transpose(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    Matrix X(static_cast<Eigen::Index>(rows.size()), X_.cols());
    Eigen::VectorXi A(static_cast<Eigen::Index>(rows.size()));
    Vector Y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] >= n()) throw ShapeError("subset row index out of range");
      const auto r = static_cast<Eigen::Index>(rows[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      X.row(kk) = X_.row(r);
      A[kk] = A_[r];
      Y[kk] = Y_[r];
    }
    return Dataset(std::move(X), std::move(A), std::move(Y));
  }

  /// Copy with one covariate column replaced.
  Dataset with_column(std::size_t j, const Vector& column) const {
    if (j >= p() || static_cast<std::size_t>(column.size()) != n())
      throw ShapeError("replacement column does not fit the dataset");
    Matrix X = X_;
    X.col(static_cast<Eigen::Index>(j)) = column;
    return Dataset(std::move(X), A_, Y_);
  }

  std::size_t count_arm(int arm) const {
    return static_cast<std::size_t>((A_.array() == arm).count());
  }

  friend bool operator==(const Dataset& l, const Dataset& r) {
    return l.X_.rows() == r.X_.rows() && l.X_.cols() == r.X_.cols() &&
           l.X_ == r.X_ && l.A_ == r.A_ && l.Y_ == r.Y_;
  }

 private:
  Matrix X_;
  Eigen::VectorXi A_;
  Vector Y_;
};

/// A monomial in the covariates, optionally multiplied by the treatment.
/// `factors` holds 0-based covariate indices in nondecreasing order, so
/// {0,0} is x1^2 and {0,1} is x1*x2. No factors and no treatment is the
/// intercept.
struct Term {
  std::vector<int> factors;
  bool treatment = false;

  bool is_intercept() const { return factors.empty() && !treatment; }

  double eval(std::span<const double> x, int a) const {
    double v = treatment ? static_cast<double>(a) : 1.0;
    for (int j : factors) v *= x[static_cast<std::size_t>(j)];
    return v;
  }

  std::string name() const {
    if (is_intercept()) return "1";
    std::string out;
    for (std::size_t k = 0; k < factors.size();) {
      std::size_t run = k;
      while (run < factors.size() && factors[run] == factors[k]) ++run;
      if (!out.empty()) out += '*';
      out += 'x' + std::to_string(factors[k] + 1);
      if (run - k > 1) out += '^' + std::to_string(run - k);
      k = run;
    }
    if (treatment) out += out.empty() ? "a" : "*a";
    return out;
  }

  friend bool operator==(const Term&, const Term&) = default;
};

/// Ordered list of feature constructors over x or (x, a). When an intercept
/// is present it is always the first feature.
class FeatureMap {
 public:
  FeatureMap() = default;

  FeatureMap(std::size_t p, std::vector<Term> terms) : p_(p) {
    if (p_ < 1) throw ShapeError("feature map needs input dimension >= 1");
    for (auto& t : terms) {
      std::sort(t.factors.begin(), t.factors.end());
      for (int j : t.factors)
        if (j < 0 || static_cast<std::size_t>(j) >= p_)
          throw ConfigError("feature term references x" + std::to_string(j + 1) +
                            " but the input dimension is " + std::to_string(p_));
      if (std::find(terms_.begin(), terms_.end(), t) != terms_.end())
        throw ConfigError("duplicate feature term " + t.name());
      if (t.is_intercept())
        terms_.insert(terms_.begin(), t);
      else
        terms_.push_back(t);
    }
  }

  /// Intercept plus raw coordinates (or raw coordinates only).
  static FeatureMap linear(std::size_t p, bool intercept = true) {
    std::vector<Term> t;
    if (intercept) t.push_back({});
    for (std::size_t j = 0; j < p; ++j) t.push_back({{static_cast<int>(j)}, false});
    return FeatureMap(p, std::move(t));
  }

  static FeatureMap intercept_only(std::size_t p) { return FeatureMap(p, {Term{}}); }

  /// Parses a map description. Accepted forms:
  ///   intercept | linear | linear+interactions | quadratic, optionally
  ///   suffixed with "*a" to add the treatment-crossed copy of every term;
  ///   "terms:1,x1,x1^2,x1*x2,a,x2*a" for an explicit list;
  ///   "zero" or "none" for the empty map.
  /// Named maps carry an intercept only when `intercept` is true.
  static FeatureMap parse(std::string_view spec, std::size_t p, bool intercept = true) {
    if (spec == "zero" || spec == "none") return FeatureMap(p, {});
    if (spec.substr(0, 6) == "terms:") {
      std::vector<Term> terms;
      std::string_view rest = spec.substr(6);
      while (!rest.empty()) {
        auto comma = rest.find(',');
        terms.push_back(parse_term(rest.substr(0, comma), p));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
      return FeatureMap(p, std::move(terms));
    }
    bool crossed = false;
    if (spec.size() > 2 && spec.substr(spec.size() - 2) == "*a") {
      crossed = true;
      spec = spec.substr(0, spec.size() - 2);
    }
    std::vector<Term> base;
    if (intercept || crossed) base.push_back({});
    const int ip = static_cast<int>(p);
    if (spec == "intercept") {
      if (!intercept && !crossed) base.clear();
    } else if (spec == "linear" || spec == "linear+interactions" || spec == "quadratic") {
      for (int j = 0; j < ip; ++j) base.push_back({{j}, false});
      if (spec != "linear")
        for (int j = 0; j < ip; ++j)
          for (int k = j + 1; k < ip; ++k) base.push_back({{j, k}, false});
      if (spec == "quadratic")
        for (int j = 0; j < ip; ++j) base.push_back({{j, j}, false});
    } else {
      throw ConfigError("unknown feature map '" + std::string(spec) + "'");
    }
    std::vector<Term> terms;
    for (const auto& t : base)
      if (!t.is_intercept() || intercept) terms.push_back(t);
    if (crossed)
      for (const auto& t : base) terms.push_back({t.factors, true});
    return FeatureMap(p, std::move(terms));
  }

  std::size_t input_dimension() const { return p_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }
  const std::vector<Term>& terms() const { return terms_; }

  bool has_intercept() const { return !terms_.empty() && terms_.front().is_intercept(); }

  bool uses_treatment() const {
    return std::any_of(terms_.begin(), terms_.end(), [](const Term& t) { return t.treatment; });
  }

  /// Index of the term with the given name, or -1.
  int find(const std::string& name) const {
    for (std::size_t k = 0; k < terms_.size(); ++k)
      if (terms_[k].name() == name) return static_cast<int>(k);
    return -1;
  }

  std::string to_string() const {
    std::string out = "terms:";
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      if (k) out += ',';
      out += terms_[k].name();
    }
    return out;
  }

  Vector features(std::span<const double> x, int a = 1) const {
    check_input(x.size());
    Vector out(static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t k = 0; k < terms_.size(); ++k)
      out[static_cast<Eigen::Index>(k)] = terms_[k].eval(x, a);
    return out;
  }

  /// Design matrix over x only; the map must not involve the treatment.
  Matrix design(const Matrix& X) const {
    if (uses_treatment()) throw ConfigError("feature map uses the treatment but none was supplied");
    return design_impl(X, nullptr, 1);
  }

  /// Design matrix over (x, a) with a per-row treatment vector.
  Matrix design(const Matrix& X, const Eigen::VectorXi& A) const {
    if (A.size() != X.rows()) throw ShapeError("treatment vector length mismatch");
    return design_impl(X, &A, 1);
  }

  /// Design matrix over (x, a) with the same treatment for every row.
  Matrix design(const Matrix& X, int a) const {
    check_treatment(a);
    return design_impl(X, nullptr, a);
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  void check_input(std::size_t len) const {
    if (len != p_)
      throw ShapeError("input has dimension " + std::to_string(len) + ", feature map expects " +
                       std::to_string(p_));
  }

  Matrix design_impl(const Matrix& X, const Eigen::VectorXi* A, int a_const) const {
    check_input(static_cast<std::size_t>(X.cols()));
    const Eigen::Index n = X.rows();
    Matrix D(n, static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      const Term& t = terms_[k];
      auto col = D.col(static_cast<Eigen::Index>(k));
      col.setOnes();
      for (int j : t.factors) col.array() *= X.col(j).array();
      if (t.treatment) {
        if (A)
          col.array() *= A->cast<double>().array();
        else
          col *= static_cast<double>(a_const);
      }
    }
    return D;
  }

  static Term parse_term(std::string_view s, std::size_t p) {
    auto trim = [](std::string_view v) {
      while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
      while (!v.empty() && v.back() == ' ') v.remove_suffix(1);
      return v;
    };
    s = trim(s);
    if (s == "1") return {};
    Term t;
    while (!s.empty()) {
      auto star = s.find('*');
      std::string_view f = trim(s.substr(0, star));
      if (f == "a") {
        if (t.treatment) throw ConfigError("treatment appears twice in a term");
        t.treatment = true;
      } else if (f.size() >= 2 && f[0] == 'x') {
        int power = 1;
        auto caret = f.find('^');
        std::string_view idx = f.substr(1, caret == std::string_view::npos ? f.npos : caret - 1);
        int j = 0;
        auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), j);
        if (ec != std::errc() || ptr != idx.data() + idx.size() || j < 1 ||
            static_cast<std::size_t>(j) > p)
          throw ConfigError("bad covariate reference '" + std::string(f) + "'");
        if (caret != std::string_view::npos) {
          std::string_view pw = f.substr(caret + 1);
          auto [pp, pec] = std::from_chars(pw.data(), pw.data() + pw.size(), power);
          if (pec != std::errc() || pp != pw.data() + pw.size() || power < 1)
            throw ConfigError("bad power in '" + std::string(f) + "'");
        }
        for (int r = 0; r < power; ++r) t.factors.push_back(j - 1);
      } else {
        throw ConfigError("bad feature term '" + std::string(s) + "'");
      }
      if (star == std::string_view::npos) break;
      s = s.substr(star + 1);
    }
    return t;
  }

  std::size_t p_ = 0;
  std::vector<Term> terms_;
};

/// f(x) = beta0 + beta' features(x), rule d(x) = sgn f(x).
/// The feature map carries neither an intercept nor the treatment.
class LinearRule {
 public:
  LinearRule() = default;

  LinearRule(FeatureMap map, double beta0, Vector beta)
      : map_(std::move(map)), beta0_(beta0), beta_(std::move(beta)) {
    if (map_.has_intercept() || map_.uses_treatment())
      throw ConfigError("rule feature map must not contain the intercept or the treatment");
    if (static_cast<std::size_t>(beta_.size()) != map_.size())
      throw ShapeError("rule coefficient length does not match its feature map");
    if (!std::isfinite(beta0_) || !beta_.allFinite())
      throw DomainError("rule coefficients must be finite");
  }

  /// Zero rule over the map (f == 0, so d == +1 everywhere).
  static LinearRule zero(FeatureMap map) {
    const auto q = static_cast<Eigen::Index>(map.size());
    return LinearRule(std::move(map), 0.0, Vector::Zero(q));
  }

  const FeatureMap& map() const { return map_; }
  double beta0() const { return beta0_; }
  const Vector& beta() const { return beta_; }

  /// Coefficients with the intercept prepended.
  Vector coefficients() const {
    Vector c(beta_.size() + 1);
    c[0] = beta0_;
    c.tail(beta_.size()) = beta_;
    return c;
  }

  static LinearRule from_coefficients(FeatureMap map, const Vector& c) {
    return LinearRule(std::move(map), c[0], c.tail(c.size() - 1));
  }

  double score(std::span<const double> x) const { return beta0_ + beta_.dot(map_.features(x)); }

  int decide(std::span<const double> x) const { return sgn(score(x)); }

  /// f evaluated on every row of X.
  Vector scores(const Matrix& X) const {
    Vector f = map_.design(X) * beta_;
    f.array() += beta0_;
    return f;
  }

  Eigen::VectorXi decisions(const Matrix& X) const {
    Vector f = scores(X);
    return f.unaryExpr([](double v) { return sgn(v); }).cast<int>();
  }

 private:
  FeatureMap map_;
  double beta0_ = 0.0;
  Vector beta_;
};

/// Treatment recommended by the rule for covariate vector x.
inline int apply_rule(const LinearRule& rule, std::span<const double> x) { return rule.decide(x); }

inline int apply_rule(const LinearRule& rule, const Vector& x) {
  return rule.decide(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

}  // namespace earl
