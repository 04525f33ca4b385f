#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pbr {

enum class Gamma { kNone, kSum, kStd, kExp };

const char* to_string(Gamma gamma);
Gamma parse_gamma(const std::string& text);

/// `degenerate`, when given, is set if the input hit a fallback branch.
std::vector<double> gamma_sum(std::span<const double> p, bool* degenerate = nullptr);
/// z-scores with the population standard deviation; zeros when σ = 0.
std::vector<double> gamma_std(std::span<const double> p);
/// exp(−(1 − p_r)/ρ) with ρ = 1 − mean(p); one-hot at the largest p when ρ ≤ 0.
std::vector<double> gamma_exp(std::span<const double> p, bool* degenerate = nullptr);

std::vector<double> apply_gamma(Gamma gamma, std::span<const double> p, bool* degenerate = nullptr);

/// Number of second-level cells to visit in each of the R ranked clusters
/// under a total budget T, each capped at N.
std::vector<std::size_t> allocate(std::span<const double> p, Gamma gamma, std::size_t T, std::size_t N,
                                  bool* degenerate = nullptr);

}  // namespace pbr
