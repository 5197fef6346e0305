#pragma once

#include <span>

#include "tipcache/types.hpp"

namespace tipcache {

/// Builds a zero-shot classifier from T per-template text embedding blocks
/// (each N x C): per class, the template rows are averaged and the mean is
/// L2-renormalized.
FeatureMatrix ensemble_classifier(std::span<const FeatureMatrix> templates);

}  // namespace tipcache
