#pragma once

// Small matrices of truncated series (determinants and inverses by cofactors).

#include <vector>

#include "kefam/series.hpp"
#include "kefam/wirtinger.hpp"

namespace kefam {

using SeriesMatrix = std::vector<std::vector<Series>>;

Series determinant(const SeriesMatrix& m);
SeriesMatrix inverse(const SeriesMatrix& m);

// (f_{a bbar}) over the slice variables.
SeriesMatrix slice_hessian_series(const Series& f, const Coords& c);

}  // namespace kefam
