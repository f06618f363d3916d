#include "kefam/series_matrix.hpp"

#include "kefam/error.hpp"

namespace kefam {

namespace {

SeriesMatrix minor_of(const SeriesMatrix& m, std::size_t row, std::size_t col) {
  SeriesMatrix r;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i == row) continue;
    std::vector<Series> line;
    for (std::size_t j = 0; j < m.size(); ++j)
      if (j != col) line.push_back(m[i][j]);
    r.push_back(std::move(line));
  }
  return r;
}

}  // namespace

Series determinant(const SeriesMatrix& m) {
  const std::size_t k = m.size();
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "empty series matrix");
  if (k == 1) return m[0][0];
  if (k == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
  Series acc = m[0][0] * determinant(minor_of(m, 0, 0));
  for (std::size_t j = 1; j < k; ++j) {
    const Series term = m[0][j] * determinant(minor_of(m, 0, j));
    if (j % 2 == 0) acc += term;
    else acc -= term;
  }
  return acc;
}

SeriesMatrix inverse(const SeriesMatrix& m) {
  const std::size_t k = m.size();
  const Series d = determinant(m);
  if (d.value() == cplx{}) throw Error(ErrorKind::SingularSliceBlock, "singular series matrix");
  if (k == 1) return {{1.0 / d}};
  const Series inv_d = 1.0 / d;
  SeriesMatrix r(k, std::vector<Series>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      Series c = determinant(minor_of(m, j, i)) * inv_d;
      r[i][j] = ((i + j) % 2 == 0) ? c : -c;
    }
  return r;
}

SeriesMatrix slice_hessian_series(const Series& f, const Coords& c) {
  const auto n = static_cast<std::size_t>(c.n());
  SeriesMatrix H(n, std::vector<Series>(n));
  for (std::size_t b = 0; b < n; ++b) {
    const Series fb = c.d_zbar(f, static_cast<int>(b));
    for (std::size_t a = 0; a < n; ++a) H[a][b] = c.d_z(fb, static_cast<int>(a));
  }
  return H;
}

}  // namespace kefam
