#include "tipcache/ensemble.hpp"

#include <string>

namespace tipcache {

FeatureMatrix ensemble_classifier(std::span<const FeatureMatrix> templates) {
    if (templates.empty()) throw Error(ErrorCode::EmptyInput, "no template embeddings");
    const std::size_t n = templates.front().rows();
    const std::size_t dim = templates.front().cols();
    if (n == 0) throw Error(ErrorCode::EmptyInput, "template block has no classes");
    for (std::size_t t = 1; t < templates.size(); ++t) {
        if (templates[t].rows() != n || templates[t].cols() != dim) {
            throw Error(ErrorCode::DimensionMismatch,
                        "template " + std::to_string(t) + " shape differs from template 0");
        }
    }

    auto mean = FeatureMatrix::zeros(n, dim);
    auto out = mean.mutable_data();
    for (const auto& block : templates) {
        const auto in = block.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    }
    const double inv = 1.0 / static_cast<double>(templates.size());
    for (double& v : out) v *= inv;
    return normalize_rows(std::move(mean));
}

}  // namespace tipcache
