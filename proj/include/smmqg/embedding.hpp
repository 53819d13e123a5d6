#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace smmqg {

/// Dense embedding. All vectors inside one index share a dimension.
struct EmbeddingVector {
    std::vector<double> values;

    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<double> v) : values(std::move(v)) {}
    EmbeddingVector(std::initializer_list<double> v) : values(v) {}

    std::size_t dim() const { return values.size(); }
    std::span<const double> view() const { return values; }
    bool all_finite() const;

    bool operator==(const EmbeddingVector&) const = default;
};

}  // namespace smmqg
