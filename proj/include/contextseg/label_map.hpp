#pragma once

#include <cstdint>
#include <vector>

#include "contextseg/error.hpp"

namespace contextseg {

// Per-pixel class labels, row-major (n, h, w).
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<int> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, int fill = 0)
      : n(n_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * h_ * w_, fill) {
    if (n_ < 1 || h_ < 1 || w_ < 1) throw ShapeError("empty label map");
  }

  std::size_t offset(int b, int y, int x) const {
    return (static_cast<std::size_t>(b) * h + y) * w + x;
  }
  int& at(int b, int y, int x) { return data[offset(b, y, x)]; }
  int at(int b, int y, int x) const { return data[offset(b, y, x)]; }
  std::size_t size() const { return data.size(); }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace contextseg
