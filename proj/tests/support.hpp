#pragma once

// Helpers shared by the test binaries: scratch directories, small scenarios and
// independent brute-force oracles.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "v1d3/domain.hpp"
#include "v1d3/simulator.hpp"

namespace v1d3::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("v1d3-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

/// Small synthetic city with no cancellations and whole-episode shifts.
inline Scenario small_scenario(int width = 6, int height = 6, int fleet = 8, Seconds horizon = 1200.0,
                               double base_rate = 6.0) {
  Scenario s;
  s.name = "small";
  s.grid.width = width;
  s.grid.height = height;
  s.fleet_size = fleet;
  s.managed_N = fleet / 2;
  s.episode_horizon_s = horizon;
  s.episode_start_abs_s = 28800.0;
  s.cancellation.knots = {{0.0, 0.0}};
  SyntheticSpec spec;
  spec.base_rate_per_cell_hour = base_rate;
  spec.local_radius = 2;
  spec.bin_s = 600.0;
  Hotspot h;
  h.cell = s.grid.cell_at(1, 1);
  h.sigma_cells = 1.0;
  h.peak_rate_per_hour = 40.0;
  spec.hotspots.push_back(h);
  s.synthetic = spec;
  s.validate();
  return s;
}

// ---------------------------------------------------------------- oracles

/// Best total over every partial assignment of drivers (rows) to orders.
inline double brute_force_matching(const std::vector<std::vector<double>>& rho) {
  const std::size_t n = rho.size();
  const std::size_t m = n == 0 ? 0 : rho[0].size();
  std::vector<char> used(m, 0);
  double best = 0.0;
  std::function<void(std::size_t, double)> go = [&](std::size_t d, double acc) {
    if (d == n) {
      best = std::max(best, acc);
      return;
    }
    go(d + 1, acc);
    for (std::size_t o = 0; o < m; ++o) {
      if (used[o]) continue;
      used[o] = 1;
      go(d + 1, acc + rho[d][o]);
      used[o] = 0;
    }
  };
  go(0, 0.0);
  return best;
}

/// Maximum cardinality by Kuhn's augmenting paths on an adjacency matrix.
inline int max_cardinality(const std::vector<std::vector<char>>& adj) {
  const std::size_t n = adj.size();
  const std::size_t m = n == 0 ? 0 : adj[0].size();
  std::vector<int> owner(m, -1);
  int count = 0;
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<char> seen(m, 0);
    std::function<bool(std::size_t)> augment = [&](std::size_t u) {
      for (std::size_t o = 0; o < m; ++o) {
        if (!adj[u][o] || seen[o]) continue;
        seen[o] = 1;
        if (owner[o] < 0 || augment(static_cast<std::size_t>(owner[o]))) {
          owner[o] = static_cast<int>(u);
          return true;
        }
      }
      return false;
    };
    if (augment(d)) ++count;
  }
  return count;
}

/// Two-pass squared deviation of series[b, e) from its mean.
inline double sse(const std::vector<double>& x, std::size_t b, std::size_t e) {
  if (e <= b) return 0.0;
  double mean = 0.0;
  for (std::size_t i = b; i < e; ++i) mean += x[i];
  mean /= static_cast<double>(e - b);
  double s = 0.0;
  for (std::size_t i = b; i < e; ++i) s += (x[i] - mean) * (x[i] - mean);
  return s;
}

struct ExhaustiveSplit {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int> breakpoints;
  int optimal_count = 0;
};

/// Every choice of K breakpoints in (0, n), visited in lexicographic order.
/// Costs within `tie_eps` of the best count as ties.
inline ExhaustiveSplit exhaustive_segmentation(const std::vector<double>& x, int K, double tie_eps = 1e-9) {
  const int n = static_cast<int>(x.size());
  std::vector<std::pair<double, std::vector<int>>> all;
  std::vector<int> cur;
  std::function<void(int)> go = [&](int next) {
    if (static_cast<int>(cur.size()) == K) {
      double c = 0.0;
      int prev = 0;
      for (int b : cur) {
        c += sse(x, prev, b);
        prev = b;
      }
      c += sse(x, prev, n);
      all.emplace_back(c, cur);
      return;
    }
    for (int b = next; b < n; ++b) {
      cur.push_back(b);
      go(b + 1);
      cur.pop_back();
    }
  };
  go(1);
  ExhaustiveSplit best;
  for (const auto& [c, bps] : all) best.cost = std::min(best.cost, c);
  for (const auto& [c, bps] : all) {
    if (c <= best.cost + tie_eps) {
      if (best.optimal_count == 0) best.breakpoints = bps;
      ++best.optimal_count;
    }
  }
  return best;
}

/// sum_{j<k} gamma^j R / k, term by term.
inline double geometric_reward(double R, int k, double gamma) {
  double s = 0.0, g = 1.0;
  for (int j = 0; j < k; ++j) {
    s += g * (R / k);
    g *= gamma;
  }
  return s;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    p += c * std::pow(0.5, n);
  }
  return p;
}

inline bool within_sigma(double freq, double p, int n, double sigmas = 3.0) {
  return std::fabs(freq - p) <= sigmas * std::sqrt(p * (1.0 - p) / n);
}

}  // namespace v1d3::test
