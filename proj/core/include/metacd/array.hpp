#pragma once

#include <cstddef>
#include <vector>

#include "metacd/errors.hpp"

namespace metacd {

/// Dense row-major 2-D array of doubles. Vectors are (n, 1).
struct Array {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Array() = default;
  Array(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Array(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (static_cast<int>(data.size()) != r * c)
      throw ShapeError("Array: data length does not match rows*cols");
  }

  int size() const { return rows * cols; }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace metacd
