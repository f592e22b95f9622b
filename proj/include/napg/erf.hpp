#pragma once

// Double-precision erf from a table of Taylor expansions. erf is tabulated on
// [0, 6] at spacing 1/128 together with its first eight derivatives (Hermite
// polynomials times exp(-x^2)); a value is the expansion around the nearest
// grid point. Agrees with std::erf to within a couple of ulp.
// Outside the table (|x| >= 6, NaN) it defers to std::erf.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace napg::nn {

namespace erf_detail {

inline constexpr int kPerUnit = 128;
inline constexpr double kLimit = 6.0;
inline constexpr int kTerms = 8;  // derivatives kept per grid point

struct Table {
  std::vector<std::array<double, kTerms + 1>> rows;
  std::array<std::vector<double>, kTerms + 1> cols;  // same numbers, one array per derivative

  Table() {
    const int n = static_cast<int>(kLimit) * kPerUnit + 1;
    rows.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const double x = static_cast<double>(k) / kPerUnit;
      auto& c = rows[static_cast<std::size_t>(k)];
      c[0] = std::erf(x);
      // d^m/dx^m erf = 2/sqrt(pi) * (-1)^(m-1) * H_{m-1}(x) * exp(-x^2)
      const double scale = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x * x);
      double h_prev = 1.0;   // H_0
      double h = 2.0 * x;    // H_1
      double factorial = 1.0;
      for (int m = 1; m <= kTerms; ++m) {
        factorial *= m;
        const double hm1 = m == 1 ? h_prev : h;  // H_{m-1}
        c[static_cast<std::size_t>(m)] = ((m - 1) % 2 == 0 ? 1.0 : -1.0) * hm1 * scale / factorial;
        if (m >= 2) {
          const double next = 2.0 * x * h - 2.0 * (m - 1) * h_prev;
          h_prev = h;
          h = next;
        }
      }
    }  for (std::size_t m = 0; m <= kTerms; ++m) {
      cols[m].resize(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) cols[m][k] = rows[k][m];
    }
  }
};

inline const Table& table() {
  static const Table t;
  return t;
}

}  // namespace erf_detail

inline double fast_erf(double x) {
  using namespace erf_detail;
  const double a = std::fabs(x);
  if (!(a < kLimit)) return std::erf(x);
  const int k = static_cast<int>(a * kPerUnit + 0.5);
  const double t = a - static_cast<double>(k) / kPerUnit;
  static const auto* rows = table().rows.data();
  const auto& c = rows[k];
  // Two interleaved Horner chains (even and odd powers) halve the latency.
  const double t2 = t * t;
  const double even = std::fma(std::fma(std::fma(c[8], t2, c[6]), t2, c[4]), t2, c[2]);
  const double odd = std::fma(std::fma(std::fma(c[7], t2, c[5]), t2, c[3]), t2, c[1]);
  const double r = std::fma(odd, t, std::fma(even, t2, c[0]));
  return std::copysign(r, x);
}

/// x * Phi(x), the exact (Gaussian-CDF) GELU.
inline double gelu_value(double x) { return (0.5 * x) * (1.0 + fast_erf(x * (std::numbers::sqrt2 / 2.0))); }

/// gelu_value over a contiguous array, bit-identical to the scalar version.
/// Uses AVX2 gathers when available; arrays holding out-of-table inputs take
/// the scalar path.
inline void gelu_inplace(double* v, std::size_t n) {
  using namespace erf_detail;
  constexpr double kMaxX = kLimit * std::numbers::sqrt2;
  bool inside = true;
  for (std::size_t i = 0; i < n; ++i) inside &= std::fabs(v[i]) < kMaxX;  // false for NaN
  std::size_t i = 0;
#if defined(__AVX2__) && defined(__FMA__)
  if (inside) {
    static const Table& tab = table();
    const __m256d scale = _mm256_set1_pd(std::numbers::sqrt2 / 2.0);
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d per_unit = _mm256_set1_pd(kPerUnit);
    const __m256d step = _mm256_set1_pd(1.0 / kPerUnit);
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d one = _mm256_set1_pd(1.0);
    auto coef = [&](int m, __m128i k) { return _mm256_i32gather_pd(tab.cols[static_cast<std::size_t>(m)].data(), k, 8); };
    for (; i + 4 <= n; i += 4) {
      const __m256d x = _mm256_loadu_pd(v + i);
      const __m256d z = _mm256_mul_pd(x, scale);
      const __m256d a = _mm256_andnot_pd(sign, z);
      const __m128i k = _mm256_cvttpd_epi32(_mm256_add_pd(_mm256_mul_pd(a, per_unit), half));
      const __m256d t = _mm256_sub_pd(a, _mm256_mul_pd(_mm256_cvtepi32_pd(k), step));
      const __m256d t2 = _mm256_mul_pd(t, t);
      __m256d even = _mm256_fmadd_pd(coef(8, k), t2, coef(6, k));
      even = _mm256_fmadd_pd(even, t2, coef(4, k));
      even = _mm256_fmadd_pd(even, t2, coef(2, k));
      __m256d odd = _mm256_fmadd_pd(coef(7, k), t2, coef(5, k));
      odd = _mm256_fmadd_pd(odd, t2, coef(3, k));
      odd = _mm256_fmadd_pd(odd, t2, coef(1, k));
      __m256d r = _mm256_fmadd_pd(odd, t, _mm256_fmadd_pd(even, t2, coef(0, k)));
      r = _mm256_or_pd(r, _mm256_and_pd(sign, z));
      _mm256_storeu_pd(v + i, _mm256_mul_pd(_mm256_mul_pd(half, x), _mm256_add_pd(one, r)));
    }
  }
#endif
  for (; i < n; ++i) v[i] = gelu_value(v[i]);
}

/// d/dx of gelu_value: Phi(x) + x * phi(x).
inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + fast_erf(x * (std::numbers::sqrt2 / 2.0)));
  return cdf + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace napg::nn
