#include "guide/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "guide/error.hpp"

namespace guide {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) {
    throw Error("matrix dimensions must be positive");
  }
  values_.assign(rows * cols, fill);
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace guide
