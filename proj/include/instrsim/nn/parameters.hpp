#pragma once

#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "instrsim/error.hpp"

namespace instrsim::nn {

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named tensors packed into one contiguous buffer.
template <typename T>
struct ParameterSet {
  std::vector<TensorInfo> tensors;
  std::vector<T> values;

  std::size_t add(const std::string& name, std::vector<int> shape) {
    std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                    [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    TensorInfo t{name, std::move(shape), values.size(), n};
    values.resize(values.size() + n, T(0));
    tensors.push_back(std::move(t));
    return tensors.back().offset;
  }

  const TensorInfo& info(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw ParameterError("no tensor named '" + name + "'");
  }

  T* data(const std::string& name) { return values.data() + info(name).offset; }
  const T* data(const std::string& name) const { return values.data() + info(name).offset; }
  std::size_t size() const { return values.size(); }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    out.tensors = tensors;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

}  // namespace instrsim::nn
