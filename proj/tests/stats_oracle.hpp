#ifndef CRLAB_TESTS_STATS_ORACLE_HPP_
#define CRLAB_TESTS_STATS_ORACLE_HPP_

// Independent references for rank correlation and Student-t p-values.

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace crlab::oracle {

// Rank oracle: quadratic counting, no sorting.
inline std::vector<long double> counting_ranks(const std::vector<double>& x) {
  std::vector<long double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

inline double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = counting_ranks(x), ry = counting_ranks(y);
  const long double n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

inline double boost_two_tailed_p(double t, double df) {
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

}  // namespace crlab::oracle

#endif  // CRLAB_TESTS_STATS_ORACLE_HPP_
