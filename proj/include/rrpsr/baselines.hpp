#ifndef RRPSR_BASELINES_HPP
#define RRPSR_BASELINES_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rrpsr/signal.hpp"

namespace rrpsr {

struct RangeProfile {
  std::vector<double> values;  // length M, nonnegative
  std::string estimator;
  std::string params;
};

/// Steering dictionary A with atoms[n][m] = exp(-j 2 pi n m / M).
/// Columns have L2 norm sqrt(N); A A^H = M I for this grid.
class Dictionary {
 public:
  Dictionary(int n_samples, int grid_size);

  int n_samples() const { return n_; }
  int grid_size() const { return m_; }
  const Eigen::MatrixXcd& atoms() const { return atoms_; }

  /// A^H y, the conjugate-matched correlation at every grid bin.
  Eigen::VectorXcd correlate(const Eigen::VectorXcd& y) const;

 private:
  int n_, m_;
  Eigen::MatrixXcd atoms_;  // N x M
};

struct HqsConfig {
  int iterations = 100;
  double rho = 1.0;
  double lambda_frac = 0.05;  // threshold fraction of max normalized correlation

  void validate() const {
    if (iterations < 1) throw ConfigError("hqs iterations must be >= 1");
    if (rho <= 0.0) throw ConfigError("hqs rho must be > 0");
    if (lambda_frac <= 0.0 || lambda_frac >= 1.0)
      throw ConfigError("hqs lambda_frac must be in (0,1)");
  }
};

/// Zero-padded periodogram: values[m] = |sum_n y[n] exp(+j 2 pi n m / M)|.
RangeProfile fft_profile(const Echo& echo, const RadarConfig& cfg);

/// Single-snapshot MUSIC with forward-backward spatial smoothing over
/// Hankel subvectors of length subarray_len (0 selects N/2).
RangeProfile music_profile(const Echo& echo, const RadarConfig& cfg,
                           int n_targets, int subarray_len = 0);

/// Orthogonal matching pursuit: n_targets greedy atom selections with full
/// least-squares refit each step. All-zero echo yields an all-zero profile.
RangeProfile omp_profile(const Echo& echo, const Dictionary& dict,
                         int n_targets);

/// Fixed-parameter HQS (Algorithm-style x/z alternation); x-step solved in
/// closed form through the Woodbury identity so only an N x N system appears.
/// Threshold lambda*/rho* = lambda_frac * ||A^H y||_inf / N.
RangeProfile hqs_profile(const Echo& echo, const Dictionary& dict,
                         const HqsConfig& cfg);

/// Per-iteration lasso objective 0.5*||y - A z||^2 + lambda_eff*|z|_1 with
/// lambda_eff = threshold * (rho + M), the objective this iteration descends.
std::vector<double> hqs_objective_trace(const Echo& echo,
                                        const Dictionary& dict,
                                        const HqsConfig& cfg);

Eigen::VectorXcd echo_as_vector(const Echo& echo);

}  // namespace rrpsr

#endif
