#include <doctest.h>

#include <vector>

#include "divlab/kernels.hpp"
#include "divlab/util.hpp"

using namespace divlab;

namespace {

template <typename T>
std::vector<T> random_values(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(2.0 * uniform_unit(rng) - 1.0);
  return v;
}

struct Shape {
  int m, k, n;
};

// Small shapes stay serial; the large ones cross kParallelWork.
const Shape kShapes[] = {{1, 1, 1}, {3, 5, 7}, {17, 9, 4}, {64, 48, 40}, {128, 64, 96}, {33, 129, 65}};

}  // namespace

TEST_CASE_TEMPLATE("parallel kernels match the serial reference bit for bit", T, float, double) {
  Rng rng(7);
  for (const auto& s : kShapes) {
    CAPTURE(s.m);
    CAPTURE(s.k);
    CAPTURE(s.n);
    const auto a = random_values<T>(rng, static_cast<std::size_t>(s.m) * s.k);
    const auto b = random_values<T>(rng, static_cast<std::size_t>(s.k) * s.n);
    const auto bt = random_values<T>(rng, static_cast<std::size_t>(s.n) * s.k);
    const auto g = random_values<T>(rng, static_cast<std::size_t>(s.m) * s.n);
    const auto seed_c = random_values<T>(rng, static_cast<std::size_t>(s.m) * s.n);

    for (bool acc : {false, true}) {
      auto c1 = seed_c, c2 = seed_c;
      kernels::matmul<T>(a, b, c1, s.m, s.k, s.n, acc);
      kernels::ref::matmul<T>(a, b, c2, s.m, s.k, s.n, acc);
      CHECK(c1 == c2);

      auto d1 = seed_c, d2 = seed_c;
      kernels::matmul_a_bt<T>(a, bt, d1, s.m, s.k, s.n, acc);
      kernels::ref::matmul_a_bt<T>(a, bt, d2, s.m, s.k, s.n, acc);
      CHECK(d1 == d2);
    }

    std::vector<T> e1(static_cast<std::size_t>(s.k) * s.n, T(0.5)), e2 = e1;
    kernels::matmul_at_b<T>(a, g, e1, s.m, s.k, s.n);
    kernels::ref::matmul_at_b<T>(a, g, e2, s.m, s.k, s.n);
    CHECK(e1 == e2);

    auto x1 = g, x2 = g;
    kernels::softmax_rows<T>(x1, s.m, s.n);
    kernels::ref::softmax_rows<T>(x2, s.m, s.n);
    CHECK(x1 == x2);

    std::vector<T> y1(g.size()), y2(g.size()), i1(s.m), i2(s.m);
    kernels::normalize_rows<T>(g, y1, i1, s.m, s.n, T(1e-5));
    kernels::ref::normalize_rows<T>(g, y2, i2, s.m, s.n, T(1e-5));
    CHECK(y1 == y2);
    CHECK(i1 == i2);
  }
}

TEST_CASE("serial matmul agrees with a naive triple loop") {
  Rng rng(3);
  const int m = 4, k = 6, n = 5;
  const auto a = random_values<double>(rng, m * k);
  const auto b = random_values<double>(rng, k * n);
  std::vector<double> c(m * n);
  kernels::ref::matmul<double>(a, b, c, m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  std::vector<double> x{1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0};
  kernels::softmax_rows<double>(x, 2, 3);
  CHECK(x[0] + x[1] + x[2] == doctest::Approx(1.0));
  CHECK(x[3] + x[4] + x[5] == doctest::Approx(1.0));
  CHECK(x[2] > x[1]);
}

TEST_CASE("normalize_rows yields zero mean and unit variance") {
  std::vector<double> x{1, 2, 3, 4}, y(4), inv(1);
  kernels::normalize_rows<double>(x, y, inv, 1, 4, 0.0);
  double mean = 0, var = 0;
  for (double v : y) mean += v / 4;
  for (double v : y) var += (v - mean) * (v - mean) / 4;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0));
  CHECK(inv[0] == doctest::Approx(1.0 / std::sqrt(1.25)));
}
