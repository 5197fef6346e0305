#include "tipcache/types.hpp"

#include <cmath>
#include <string>

namespace tipcache {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                             bool normalized)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (cols_ == 0) {
        throw Error(ErrorCode::DimensionMismatch, "feature matrix needs at least one column");
    }
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "data length " + std::to_string(data_.size()) + " != " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    if (normalized) mark_normalized();
}

FeatureMatrix FeatureMatrix::zeros(std::size_t rows, std::size_t cols) {
    return FeatureMatrix(rows, cols, std::vector<double>(rows * cols, 0.0));
}

void FeatureMatrix::mark_normalized() {
    const std::size_t bad = first_unnormalized_row();
    if (bad != rows_) {
        throw Error(ErrorCode::NotNormalized,
                    "row " + std::to_string(bad) + " has norm " + std::to_string(l2_norm(row(bad))));
    }
    normalized_ = true;
}

std::size_t FeatureMatrix::first_unnormalized_row(double tol) const {
    for (std::size_t r = 0; r < rows_; ++r) {
        const double n = l2_norm(row(r));
        // also catches NaN
        if (!(std::abs(n - 1.0) <= tol)) return r;
    }
    return rows_;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * cols_);
    for (std::size_t idx : indices) {
        if (idx >= rows_) throw Error(ErrorCode::InvalidArgument, "row index out of range");
        auto r = row(idx);
        out.insert(out.end(), r.begin(), r.end());
    }
    FeatureMatrix m(indices.size(), cols_, std::move(out));
    m.normalized_ = normalized_;
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

FeatureMatrix normalize_rows(FeatureMatrix m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.mutable_row(r);
        const double n = l2_norm(row);
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw Error(ErrorCode::InvalidArgument,
                        "cannot normalize row " + std::to_string(r) + " with norm " + std::to_string(n));
        }
        for (double& v : row) v /= n;
    }
    m.mark_normalized();
    return m;
}

LabelMatrix::LabelMatrix(std::vector<std::uint32_t> indices, std::size_t num_classes)
    : indices_(std::move(indices)), num_classes_(num_classes) {
    for (std::size_t r = 0; r < indices_.size(); ++r) {
        if (indices_[r] >= num_classes_) {
            throw Error(ErrorCode::LabelOutOfRange,
                        "row " + std::to_string(r) + " has class " + std::to_string(indices_[r]) +
                            " with " + std::to_string(num_classes_) + " classes");
        }
    }
}

LabelMatrix LabelMatrix::identity(std::size_t num_classes) {
    std::vector<std::uint32_t> idx(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) idx[i] = static_cast<std::uint32_t>(i);
    return LabelMatrix(std::move(idx), num_classes);
}

std::vector<std::size_t> LabelMatrix::class_counts() const {
    std::vector<std::size_t> counts(num_classes_, 0);
    for (auto c : indices_) ++counts[c];
    return counts;
}

void CacheModel::validate() const {
    if (keys.rows() != values.rows()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "cache has " + std::to_string(keys.rows()) + " keys but " +
                        std::to_string(values.rows()) + " values");
    }
    if (values.classes() != num_classes) {
        throw Error(ErrorCode::DimensionMismatch, "value width differs from num_classes");
    }
}

void Hyperparams::validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta)) {
        throw Error(ErrorCode::InvalidArgument, "alpha and beta must be finite");
    }
    if (alpha < 0.0 || beta < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "alpha and beta must be non-negative");
    }
}

}  // namespace tipcache
