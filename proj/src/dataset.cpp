#include "ddn/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace ddn {

Dataset gather(const Dataset& d, std::span<const Index> order) {
    Shape shape = d.images.shape();
    shape[0] = static_cast<Index>(order.size());
    Dataset out;
    out.images = Array(shape);
    const Index stride = d.images.stride0();
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Index row = order[i];
        if (row < 0 || row >= d.size()) throw std::out_of_range(fmt::format("dataset: row {} of {}", row, d.size()));
        auto src = d.images.slice0(row);
        std::copy(src.begin(), src.end(), out.images.ptr() + static_cast<Index>(i) * stride);
        if (d.labelled()) out.labels.push_back(d.labels[static_cast<std::size_t>(row)]);
    }
    return out;
}

Dataset slice(const Dataset& d, Index begin, Index end) {
    end = std::min(end, d.size());
    if (begin < 0 || begin > end) throw std::out_of_range(fmt::format("dataset: slice [{},{})", begin, end));
    std::vector<Index> rows(static_cast<std::size_t>(end - begin));
    for (Index i = begin; i < end; ++i) rows[static_cast<std::size_t>(i - begin)] = i;
    return gather(d, rows);
}

}  // namespace ddn
