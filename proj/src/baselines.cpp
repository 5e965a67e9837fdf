#include "rrpsr/baselines.hpp"

#include <algorithm>
#include <numeric>

namespace rrpsr {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

/// In-place iterative radix-2 FFT, sign +1 gives exp(+j 2 pi n k / M).
void fft_radix2(std::vector<std::complex<double>>& a, int sign) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = sign * 2.0 * M_PI / len;
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

Dictionary::Dictionary(int n_samples, int grid_size)
    : n_(n_samples), m_(grid_size), atoms_(n_samples, grid_size) {
  for (int n = 0; n < n_; ++n)
    for (int m = 0; m < m_; ++m) {
      double ang = -2.0 * M_PI * static_cast<double>(n) * m / m_;
      atoms_(n, m) = {std::cos(ang), std::sin(ang)};
    }
}

Eigen::VectorXcd Dictionary::correlate(const Eigen::VectorXcd& y) const {
  return atoms_.adjoint() * y;
}

Eigen::VectorXcd echo_as_vector(const Echo& echo) {
  Eigen::VectorXcd y(echo.samples.size());
  for (std::size_t i = 0; i < echo.samples.size(); ++i) y(i) = echo.samples[i];
  return y;
}

RangeProfile fft_profile(const Echo& echo, const RadarConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_samples;
  const int m = cfg.grid_size();
  if (static_cast<int>(echo.samples.size()) != n)
    throw ShapeMismatch("echo length " + std::to_string(echo.samples.size()) +
                        " vs n_samples " + std::to_string(n));
  RangeProfile profile;
  profile.estimator = "fft";
  profile.values.resize(m);
  if (is_pow2(m)) {
    std::vector<std::complex<double>> buf(m, {0.0, 0.0});
    std::copy(echo.samples.begin(), echo.samples.end(), buf.begin());
    fft_radix2(buf, +1);
    for (int i = 0; i < m; ++i) profile.values[i] = std::abs(buf[i]);
  } else {
    for (int i = 0; i < m; ++i) {
      std::complex<double> acc(0.0, 0.0);
      for (int k = 0; k < n; ++k) {
        double ang = 2.0 * M_PI * static_cast<double>(k) * i / m;
        acc += echo.samples[k] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      profile.values[i] = std::abs(acc);
    }
  }
  return profile;
}

RangeProfile music_profile(const Echo& echo, const RadarConfig& cfg,
                           int n_targets, int subarray_len) {
  cfg.validate();
  const int n = cfg.n_samples;
  const int m = cfg.grid_size();
  if (static_cast<int>(echo.samples.size()) != n)
    throw ShapeMismatch("echo length vs n_samples");
  int sub = subarray_len > 0 ? subarray_len : n / 2;
  if (n_targets < 1 || n_targets >= sub || sub > n)
    throw RankDeficient("need 1 <= n_targets < subarray_len <= N, got " +
                        std::to_string(n_targets) + " / " + std::to_string(sub));
  const int snapshots = n - sub + 1;
  Eigen::VectorXcd y = echo_as_vector(echo);

  // Forward-backward spatially smoothed covariance over Hankel subvectors.
  Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(sub, sub);
  for (int i = 0; i < snapshots; ++i) {
    Eigen::VectorXcd s = y.segment(i, sub);
    cov += s * s.adjoint();
  }
  cov /= static_cast<double>(snapshots);
  Eigen::MatrixXcd back = cov.conjugate();
  back.rowwise().reverseInPlace();
  back.colwise().reverseInPlace();
  cov = 0.5 * (cov + back);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(cov);
  // Eigenvalues ascending: the smallest sub - n_targets span the noise subspace.
  Eigen::MatrixXcd noise = eig.eigenvectors().leftCols(sub - n_targets);

  RangeProfile profile;
  profile.estimator = "music";
  profile.params = "n_targets=" + std::to_string(n_targets) +
                   ",subarray_len=" + std::to_string(sub);
  profile.values.resize(m);
  Eigen::VectorXcd steer(sub);
  for (int g = 0; g < m; ++g) {
    for (int i = 0; i < sub; ++i) {
      double ang = -2.0 * M_PI * static_cast<double>(i) * g / m;
      steer(i) = {std::cos(ang), std::sin(ang)};
    }
    double den = (noise.adjoint() * steer).squaredNorm();
    profile.values[g] = 1.0 / std::max(den, 1e-300);
  }
  return profile;
}

RangeProfile omp_profile(const Echo& echo, const Dictionary& dict,
                         int n_targets) {
  const int n = dict.n_samples();
  const int m = dict.grid_size();
  if (static_cast<int>(echo.samples.size()) != n)
    throw ShapeMismatch("echo length vs dictionary");
  if (n_targets < 1 || n_targets > n)
    throw ConfigError("omp n_targets must be in [1, N]");
  Eigen::VectorXcd y = echo_as_vector(echo);

  RangeProfile profile;
  profile.estimator = "omp";
  profile.params = "n_targets=" + std::to_string(n_targets);
  profile.values.assign(m, 0.0);
  if (y.norm() == 0.0) return profile;  // degenerate but harmless

  Eigen::VectorXcd residual = y;
  std::vector<int> support;
  Eigen::VectorXcd coef;
  for (int it = 0; it < n_targets; ++it) {
    Eigen::VectorXcd corr = dict.correlate(residual);
    int best = -1;
    double best_mag = -1.0;
    for (int g = 0; g < m; ++g) {
      if (std::find(support.begin(), support.end(), g) != support.end())
        continue;
      double mag = std::abs(corr(g));
      if (mag > best_mag) {
        best_mag = mag;
        best = g;
      }
    }
    support.push_back(best);
    Eigen::MatrixXcd sel(n, support.size());
    for (std::size_t c = 0; c < support.size(); ++c)
      sel.col(c) = dict.atoms().col(support[c]);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(
        sel, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()(svd.singularValues().size() - 1) <
        1e-10 * svd.singularValues()(0))
      throw DegenerateSupport("singular least-squares system in OMP");
    coef = svd.solve(y);
    residual = y - sel * coef;
  }
  for (std::size_t c = 0; c < support.size(); ++c)
    profile.values[support[c]] = std::abs(coef(c));
  return profile;
}

namespace {

struct HqsRun {
  Eigen::VectorXcd z;
  double threshold;
};

/// Shared HQS iteration; visit(z) is called after each z-update.
template <class Visit>
HqsRun hqs_iterate(const Echo& echo, const Dictionary& dict,
                   const HqsConfig& cfg, Visit&& visit) {
  cfg.validate();
  const int n = dict.n_samples();
  const int m = dict.grid_size();
  if (static_cast<int>(echo.samples.size()) != n)
    throw ShapeMismatch("echo length vs dictionary");
  Eigen::VectorXcd y = echo_as_vector(echo);
  const Eigen::MatrixXcd& a = dict.atoms();
  Eigen::VectorXcd corr = dict.correlate(y);
  const double t =
      cfg.lambda_frac * corr.cwiseAbs().maxCoeff() / static_cast<double>(n);

  // (A^H A + rho I)^-1 v = (v - A^H (rho I + A A^H)^-1 A v) / rho, and for
  // this dictionary A A^H = M I, so the inner solve is a scalar division.
  const double inner = cfg.rho + static_cast<double>(m);
  Eigen::VectorXcd z = Eigen::VectorXcd::Zero(m);
  for (int it = 0; it < cfg.iterations; ++it) {
    Eigen::VectorXcd v = corr + cfg.rho * z;
    Eigen::VectorXcd x = (v - a.adjoint() * ((a * v) / inner)) / cfg.rho;
    for (int g = 0; g < m; ++g) {
      double mag = std::abs(x(g));
      z(g) = mag > t ? x(g) * ((mag - t) / mag) : std::complex<double>(0, 0);
    }
    visit(z, t);
  }
  return {std::move(z), t};
}

}  // namespace

RangeProfile hqs_profile(const Echo& echo, const Dictionary& dict,
                         const HqsConfig& cfg) {
  HqsRun run = hqs_iterate(echo, dict, cfg,
                           [](const Eigen::VectorXcd&, double) {});
  RangeProfile profile;
  profile.estimator = "hqs";
  profile.params = "iterations=" + std::to_string(cfg.iterations) +
                   ",rho=" + std::to_string(cfg.rho) +
                   ",lambda_frac=" + std::to_string(cfg.lambda_frac) +
                   ",threshold=" + std::to_string(run.threshold);
  profile.values.resize(dict.grid_size());
  for (int g = 0; g < dict.grid_size(); ++g)
    profile.values[g] = std::abs(run.z(g));
  return profile;
}

std::vector<double> hqs_objective_trace(const Echo& echo,
                                        const Dictionary& dict,
                                        const HqsConfig& cfg) {
  Eigen::VectorXcd y = echo_as_vector(echo);
  const Eigen::MatrixXcd& a = dict.atoms();
  std::vector<double> trace;
  const double lambda_scale = cfg.rho + dict.grid_size();
  hqs_iterate(echo, dict, cfg, [&](const Eigen::VectorXcd& z, double t) {
    double fit = 0.5 * (y - a * z).squaredNorm();
    double l1 = z.cwiseAbs().sum();
    trace.push_back(fit + t * lambda_scale * l1);
  });
  return trace;
}

}  // namespace rrpsr
