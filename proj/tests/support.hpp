#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "roadfix.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using roadfix::RoadRaster;
using roadfix::nn::Tensor;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("roadfix_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

template <typename Rng>
RoadRaster random_binary(int h, int w, Rng& rng, double density = 0.3) {
  std::bernoulli_distribution on(density);
  std::vector<float> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = on(rng) ? 1.0f : 0.0f;
  return RoadRaster(h, w, std::move(v));
}

template <typename Rng>
Tensor<double> random_tensor(std::array<int, 4> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Central-difference gradient of a scalar function of `x` (a tensor or a
/// vector of doubles).
template <typename F, typename X>
X numeric_grad(F&& f, X x, double h = 1e-6) {
  X g = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(std::as_const(x));
    x[i] = orig - h;
    const double down = f(std::as_const(x));
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), or 0 when both vanish.
template <typename A, typename B>
double relative_error(const A& a, const B& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < std::size(a); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  return relative_error(a.values(), b.values());
}

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr
};

/// Runs the command-line tool with `args` (already shell-quoted as needed).
inline CliResult run_cli(const std::string& args) {
#ifdef ROADFIX_CLI
  const std::string cmd = std::string("'") + ROADFIX_CLI + "' " + args + " 2>&1";
#else
  const std::string cmd = "roadfix " + args + " 2>&1";
#endif
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.output.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

/// Unit-impulse probe of a generator's dilated stack: all conv weights set
/// positive, biases zero, eval-mode batch norm. Returns a side x side map
/// of the positions the centre impulse reaches.
inline std::vector<std::vector<bool>> dilated_support(roadfix::Variant v, int side = 129) {
  roadfix::Generator<double> g(roadfix::GeneratorConfig::make(v, 1));
  auto& net = g.network();
  const auto [begin, end] = g.dilated_range();
  for (std::size_t i = begin; i < end; ++i) {
    if (auto* conv = dynamic_cast<roadfix::nn::Conv2d<double>*>(&net.layer(i))) {
      conv->weight().fill(1.0);
      conv->bias().fill(0.0);
    }
  }
  const int ch = 4 * g.config().base_channels;
  Tensor<double> x(1, ch, side, side);
  for (int c = 0; c < ch; ++c) x.at(0, c, side / 2, side / 2) = 1.0;
  const Tensor<double> y = net.forward(x, roadfix::Mode::kEval, nullptr, begin, end);
  std::vector<std::vector<bool>> out(side, std::vector<bool>(side, false));
  for (int c = 0; c < y.c(); ++c)
    for (int r = 0; r < side; ++r)
      for (int q = 0; q < side; ++q)
        if (y.at(0, c, r, q) != 0.0) out[r][q] = true;
  return out;
}

/// Farthest reached offset along the centre row. Dilated supports have
/// holes, so this is not the length of a contiguous run.
inline int support_radius(const std::vector<std::vector<bool>>& s) {
  const int side = static_cast<int>(s.size()), mid = side / 2;
  int r = 0;
  for (int q = mid; q < side; ++q)
    if (s[mid][q]) r = q - mid;
  return r;
}

inline std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

inline std::string slurp(const fs::path& p) { return roadfix::detail::read_text(p); }

}  // namespace testing_support
