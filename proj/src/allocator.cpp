#include "pbr/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pbr/common.hpp"

namespace pbr {

const char* to_string(Gamma gamma) {
  switch (gamma) {
    case Gamma::kNone: return "none";
    case Gamma::kSum: return "sum";
    case Gamma::kStd: return "std";
    case Gamma::kExp: return "exp";
  }
  return "?";
}

Gamma parse_gamma(const std::string& text) {
  if (text == "none") return Gamma::kNone;
  if (text == "sum") return Gamma::kSum;
  if (text == "std") return Gamma::kStd;
  if (text == "exp") return Gamma::kExp;
  throw ConfigError("unknown gamma \"" + text + "\" (expected none, sum, std, exp)");
}

namespace {

void set_flag(bool* flag, bool value) {
  if (flag) *flag = value;
}

void check_input(std::span<const double> p, const char* where) {
  require(!p.empty(), std::string(where) + ": empty input");
  for (double v : p) {
    if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite probability");
  }
}

}  // namespace

std::vector<double> gamma_sum(std::span<const double> p, bool* degenerate) {
  check_input(p, "gamma_sum");
  for (double v : p) require(v >= 0.0, "gamma_sum: negative probability");
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  set_flag(degenerate, total == 0.0);
  if (total == 0.0) return std::vector<double>(p.size(), 1.0 / static_cast<double>(p.size()));
  std::vector<double> g(p.size());
  for (std::size_t r = 0; r < p.size(); ++r) g[r] = p[r] / total;
  return g;
}

std::vector<double> gamma_std(std::span<const double> p) {
  check_input(p, "gamma_std");
  if (p.size() < 2) throw ParameterError("gamma_std: needs at least 2 values");
  const double n = static_cast<double>(p.size());
  const double mu = std::accumulate(p.begin(), p.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : p) ss += (v - mu) * (v - mu);
  const double sigma = std::sqrt(ss / n);
  std::vector<double> g(p.size(), 0.0);
  if (sigma == 0.0) return g;
  for (std::size_t r = 0; r < p.size(); ++r) g[r] = (p[r] - mu) / sigma;
  return g;
}

std::vector<double> gamma_exp(std::span<const double> p, bool* degenerate) {
  check_input(p, "gamma_exp");
  const double rho = 1.0 - std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  set_flag(degenerate, rho <= 0.0);
  std::vector<double> g(p.size(), 0.0);
  if (rho <= 0.0) {
    g[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())] = 1.0;
    return g;
  }
  for (std::size_t r = 0; r < p.size(); ++r) g[r] = std::exp(-(1.0 - p[r]) / rho);
  return g;
}

std::vector<double> apply_gamma(Gamma gamma, std::span<const double> p, bool* degenerate) {
  set_flag(degenerate, false);
  switch (gamma) {
    case Gamma::kSum: return gamma_sum(p, degenerate);
    case Gamma::kStd: return gamma_std(p);
    case Gamma::kExp: return gamma_exp(p, degenerate);
    case Gamma::kNone: break;
  }
  return std::vector<double>(p.size(), 1.0);
}

std::vector<std::size_t> allocate(std::span<const double> p, Gamma gamma, std::size_t T, std::size_t N,
                                  bool* degenerate) {
  require(!p.empty(), "allocate: no clusters");
  require(T >= 1, "allocate: budget T must be positive");
  require(N >= 1, "allocate: N must be positive");
  set_flag(degenerate, false);
  const std::size_t R = p.size();
  const auto cap = [N](double share) {
    return std::min<std::size_t>(N, static_cast<std::size_t>(std::round(share)));
  };
  if (R == 1) return {std::min(N, T)};
  const auto even = [&] { return std::vector<std::size_t>(R, cap(static_cast<double>(T) / static_cast<double>(R))); };
  if (gamma == Gamma::kNone) return even();

  auto g = apply_gamma(gamma, p, degenerate);
  double total = 0.0;
  for (auto& v : g) {
    v = std::max(0.0, v);
    total += v;
  }
  if (total == 0.0) {
    set_flag(degenerate, true);
    return even();
  }
  std::vector<std::size_t> quota(R);
  for (std::size_t r = 0; r < R; ++r) quota[r] = cap(g[r] / total * static_cast<double>(T));
  return quota;
}

}  // namespace pbr
