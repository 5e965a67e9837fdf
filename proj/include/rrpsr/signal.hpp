#ifndef RRPSR_SIGNAL_HPP
#define RRPSR_SIGNAL_HPP

#include <complex>
#include <string>
#include <vector>

#include "rrpsr/common.hpp"

namespace rrpsr {

struct RadarConfig {
  int n_samples = 64;   // N, frequency samples
  int oversample = 16;  // G, grid oversampling factor
  std::uint64_t rng_seed = 0;

  int grid_size() const { return n_samples * oversample; }  // M

  void validate() const {
    if (n_samples < 8) throw ConfigError("n_samples must be >= 8");
    if (oversample < 1) throw ConfigError("oversample must be >= 1");
  }
};

struct Target {
  double amplitude;  // sigma_p > 0
  double freq;       // u_p in [0,1), normalized frequency
  double phase;      // phi_p in [0, 2pi)
};

struct Scene {
  std::vector<Target> targets;
};

struct Echo {
  std::vector<std::complex<double>> samples;  // length N
  double snr_db = kInfDb;                     // +inf means noise-free

  bool noise_free() const { return std::isinf(snr_db); }
};

struct LabelVector {
  std::vector<double> values;  // length M
};

/// Noise-free echo: samples[n] = sum_p sigma_p * exp(j(phi_p - 2 pi n u_p)).
Echo synthesize_echo(const Scene& scene, const RadarConfig& cfg);

/// Adds circular complex AWGN at the given SNR (per-sample mean signal power
/// over per-sample noise variance). Rejects stacking noise on a noisy echo.
Echo apply_awgn(const Echo& echo, double snr_db, std::uint64_t seed);

/// Sum of per-target Gaussian kernels, each normalized to unit peak on the
/// grid before summation. sigma_norm is in normalized-frequency units
/// (default 0.2/N).
LabelVector make_label(const Scene& scene, const RadarConfig& cfg,
                       double sigma_norm);

inline double default_label_sigma(const RadarConfig& cfg) {
  return 0.2 / cfg.n_samples;
}

struct DatasetItem {
  Echo echo;
  LabelVector label;
  Scene scene;
};

/// Random training scene/echo/label tuple: P ~ U{1..10}, first position
/// uniform, subsequent spacings |Normal(0, sqrt(3/N))| wrapped into (0,1),
/// amplitudes U(0.1,1), phases U(0,2pi), SNR U(0,50) dB.
DatasetItem generate_item(const RadarConfig& cfg, std::uint64_t item_seed,
                          double label_sigma);

std::vector<DatasetItem> generate_dataset(std::size_t n_items,
                                          const RadarConfig& cfg,
                                          std::uint64_t base_seed,
                                          int workers = 1);

/// Binary dataset file: header {format_version,N,M,n_items,base_seed},
/// then per item little-endian f32: echo (2N re/im interleaved), label (M),
/// scene (P, then P x (amplitude,freq,phase)). A JSON sidecar at
/// path + ".json" mirrors the header.
struct DatasetHeader {
  std::uint32_t format_version = 1;
  std::uint32_t n_samples = 0;
  std::uint32_t grid_size = 0;
  std::uint64_t n_items = 0;
  std::uint64_t base_seed = 0;
};

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<DatasetItem>& items);

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetItem> items;
};

Dataset read_dataset(const std::string& path);

}  // namespace rrpsr

#endif
