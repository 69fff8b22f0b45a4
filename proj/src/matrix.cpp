#include "flforge/matrix.hpp"

namespace flforge {

Matd invert(const Matd& a) {
  if (a.rows != a.cols) throw DimensionError("invert: matrix not square");
  const int n = a.rows;
  Matd out(n, n);
  for (int j = 0; j < n; ++j) {
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    e[static_cast<std::size_t>(j)] = 1.0;
    const std::vector<double> col = solve_linear(a, e);
    for (int i = 0; i < n; ++i) out.at(i, j) = col[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace flforge
