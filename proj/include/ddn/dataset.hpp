#pragma once

#include "ddn/tensor/array.hpp"

#include <span>
#include <vector>

namespace ddn {

/// Images as float [N,C,H,W] in [0,1]; labels empty when unlabelled.
struct Dataset {
    Array images;
    std::vector<int> labels;

    Index size() const { return images.empty() ? 0 : images.dim(0); }
    bool labelled() const { return !labels.empty(); }
    Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

/// Rows [begin, end) as a new dataset.
Dataset slice(const Dataset& d, Index begin, Index end);
/// Rows in `order`.
Dataset gather(const Dataset& d, std::span<const Index> order);

}  // namespace ddn
