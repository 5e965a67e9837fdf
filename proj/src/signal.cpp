#include "rrpsr/signal.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace rrpsr {

Echo synthesize_echo(const Scene& scene, const RadarConfig& cfg) {
  cfg.validate();
  if (scene.targets.empty()) throw EmptyScene("scene has no targets");
  const int n = cfg.n_samples;
  Echo echo;
  echo.samples.assign(n, {0.0, 0.0});
  for (const Target& t : scene.targets) {
    for (int i = 0; i < n; ++i) {
      double ang = t.phase - 2.0 * M_PI * i * t.freq;
      echo.samples[i] += t.amplitude * std::complex<double>(std::cos(ang), std::sin(ang));
    }
  }
  echo.snr_db = kInfDb;
  return echo;
}

Echo apply_awgn(const Echo& echo, double snr_db, std::uint64_t seed) {
  if (!echo.noise_free())
    throw DoubleNoise("echo already carries noise at " +
                      std::to_string(echo.snr_db) + " dB");
  if (std::isinf(snr_db)) return echo;
  const std::size_t n = echo.samples.size();
  double p_sig = 0.0;
  for (const auto& s : echo.samples) p_sig += std::norm(s);
  p_sig /= static_cast<double>(n);
  const double p_noise = p_sig / std::pow(10.0, snr_db / 10.0);
  const double sd = std::sqrt(p_noise / 2.0);
  Rng rng(seed);
  Echo out = echo;
  for (auto& s : out.samples)
    s += std::complex<double>(sd * rng.normal(), sd * rng.normal());
  out.snr_db = snr_db;
  return out;
}

LabelVector make_label(const Scene& scene, const RadarConfig& cfg,
                       double sigma_norm) {
  cfg.validate();
  if (scene.targets.empty()) throw EmptyScene("scene has no targets");
  if (sigma_norm <= 0.0) throw ConfigError("sigma_norm must be > 0");
  const int m = cfg.grid_size();
  LabelVector label;
  label.values.assign(m, 0.0);
  const double inv2s2 = 1.0 / (2.0 * sigma_norm * sigma_norm);
  std::vector<double> kernel(m);
  for (const Target& t : scene.targets) {
    double peak = 0.0;
    for (int i = 0; i < m; ++i) {
      double d = static_cast<double>(i) / m - t.freq;
      // wrap-around distance keeps kernels continuous across the grid edge
      if (d > 0.5) d -= 1.0;
      if (d < -0.5) d += 1.0;
      kernel[i] = std::exp(-d * d * inv2s2);
      peak = std::max(peak, kernel[i]);
    }
    for (int i = 0; i < m; ++i) label.values[i] += kernel[i] / peak;
  }
  return label;
}

DatasetItem generate_item(const RadarConfig& cfg, std::uint64_t item_seed,
                          double label_sigma) {
  Rng rng(item_seed);
  const int n = cfg.n_samples;
  Scene scene;
  const int count = static_cast<int>(rng.uniform_int(1, 10));
  const double spacing_sd = std::sqrt(3.0 / n);
  double u = rng.uniform();
  for (int p = 0; p < count; ++p) {
    if (p > 0) {
      u += std::abs(rng.normal() * spacing_sd);
      u -= std::floor(u);  // wrap into [0,1)
    }
    Target t;
    t.amplitude = rng.uniform(0.1, 1.0);
    t.freq = u;
    t.phase = rng.uniform(0.0, 2.0 * M_PI);
    scene.targets.push_back(t);
  }
  const double snr_db = rng.uniform(0.0, 50.0);
  DatasetItem item;
  item.echo = apply_awgn(synthesize_echo(scene, cfg), snr_db, rng.next_u64());
  item.label = make_label(scene, cfg, label_sigma);
  item.scene = std::move(scene);
  return item;
}

std::vector<DatasetItem> generate_dataset(std::size_t n_items,
                                          const RadarConfig& cfg,
                                          std::uint64_t base_seed,
                                          int workers) {
  if (n_items < 1) throw ConfigError("n_items must be >= 1");
  const double sigma = default_label_sigma(cfg);
  std::vector<DatasetItem> items(n_items);
  Rng base(base_seed);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rng child = base.child(i);
      items[i] = generate_item(cfg, child.next_u64(), sigma);
    }
  };
  if (workers <= 1) {
    work(0, n_items);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n_items + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      std::size_t lo = std::min(n_items, w * chunk);
      std::size_t hi = std::min(n_items, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  return items;
}

namespace {

void put_f32(std::ofstream& os, float v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

float get_f32(std::ifstream& is) {
  float v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

template <class T>
void put_raw(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T get_raw(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<DatasetItem>& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open for writing: " + path);
  put_raw(os, header.format_version);
  put_raw(os, header.n_samples);
  put_raw(os, header.grid_size);
  put_raw(os, header.n_items);
  put_raw(os, header.base_seed);
  for (const DatasetItem& item : items) {
    for (const auto& s : item.echo.samples) {
      put_f32(os, static_cast<float>(s.real()));
      put_f32(os, static_cast<float>(s.imag()));
    }
    for (double v : item.label.values) put_f32(os, static_cast<float>(v));
    put_f32(os, static_cast<float>(item.scene.targets.size()));
    for (const Target& t : item.scene.targets) {
      put_f32(os, static_cast<float>(t.amplitude));
      put_f32(os, static_cast<float>(t.freq));
      put_f32(os, static_cast<float>(t.phase));
    }
  }
  if (!os) throw DatasetError("write failed: " + path);
  os.close();

  nlohmann::json sidecar = {
      {"format_version", header.format_version},
      {"n_samples", header.n_samples},
      {"grid_size", header.grid_size},
      {"n_items", header.n_items},
      {"base_seed", header.base_seed},
  };
  std::ofstream js(path + ".json");
  if (!js) throw DatasetError("cannot open for writing: " + path + ".json");
  js << sidecar.dump(2) << "\n";
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open: " + path);
  Dataset ds;
  ds.header.format_version = get_raw<std::uint32_t>(is);
  ds.header.n_samples = get_raw<std::uint32_t>(is);
  ds.header.grid_size = get_raw<std::uint32_t>(is);
  ds.header.n_items = get_raw<std::uint64_t>(is);
  ds.header.base_seed = get_raw<std::uint64_t>(is);
  if (!is || ds.header.format_version != 1)
    throw DatasetError("bad dataset header: " + path);
  ds.items.resize(ds.header.n_items);
  const int n = static_cast<int>(ds.header.n_samples);
  const int m = static_cast<int>(ds.header.grid_size);
  for (std::size_t i = 0; i < ds.header.n_items; ++i) {
    DatasetItem& item = ds.items[i];
    item.echo.samples.resize(n);
    for (int j = 0; j < n; ++j) {
      float re = get_f32(is);
      float im = get_f32(is);
      item.echo.samples[j] = {re, im};
    }
    item.echo.snr_db = std::numeric_limits<double>::quiet_NaN();  // noisy; exact value not stored
    item.label.values.resize(m);
    for (int j = 0; j < m; ++j) item.label.values[j] = get_f32(is);
    const int count = static_cast<int>(get_f32(is));
    if (!is || count < 1 || count > 1000)
      throw DatasetError("corrupt dataset at item " + std::to_string(i));
    item.scene.targets.resize(count);
    for (Target& t : item.scene.targets) {
      t.amplitude = get_f32(is);
      t.freq = get_f32(is);
      t.phase = get_f32(is);
    }
    if (!is) throw DatasetError("corrupt dataset at item " + std::to_string(i));
  }
  return ds;
}

}  // namespace rrpsr
