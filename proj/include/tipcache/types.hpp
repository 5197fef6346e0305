#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tipcache/error.hpp"

namespace tipcache {

/// Maximum deviation of a row's L2 norm from 1 for a matrix flagged normalized.
inline constexpr double kNormTolerance = 1e-4;

/// Row-major matrix of embedding rows. Values are held in double precision;
/// on disk they are stored as single precision.
///
/// A matrix flagged `normalized` has been checked to have unit-norm rows.
/// Mutable row access drops the flag, since the guarantee no longer holds.
class FeatureMatrix {
public:
    FeatureMatrix() = default;

    /// Throws DimensionMismatch if data.size() != rows * cols or cols == 0,
    /// and NotNormalized if `normalized` is set and a row fails the check.
    FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                  bool normalized = false);

    static FeatureMatrix zeros(std::size_t rows, std::size_t cols);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool normalized() const noexcept { return normalized_; }
    bool empty() const noexcept { return rows_ == 0; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<const double> data() const noexcept { return data_; }

    std::span<double> mutable_row(std::size_t r) {
        normalized_ = false;
        return {data_.data() + r * cols_, cols_};
    }
    std::span<double> mutable_data() {
        normalized_ = false;
        return data_;
    }

    /// Validates every row norm and sets the flag; throws NotNormalized.
    void mark_normalized();
    void clear_normalized() noexcept { normalized_ = false; }

    /// Index of the first row whose norm deviates from 1 by more than `tol`, or rows().
    std::size_t first_unnormalized_row(double tol = kNormTolerance) const;

    FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
    bool normalized_ = false;
};

/// Scales every row to unit L2 norm. Zero rows are rejected with InvalidArgument.
FeatureMatrix normalize_rows(FeatureMatrix m);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// One-hot label rows, stored as the class index of each row.
class LabelMatrix {
public:
    LabelMatrix() = default;

    /// Throws LabelOutOfRange if any index >= num_classes.
    LabelMatrix(std::vector<std::uint32_t> indices, std::size_t num_classes);

    static LabelMatrix identity(std::size_t num_classes);

    std::size_t rows() const noexcept { return indices_.size(); }
    std::size_t classes() const noexcept { return num_classes_; }

    std::uint32_t class_of(std::size_t r) const { return indices_[r]; }
    double operator()(std::size_t r, std::size_t c) const {
        return indices_[r] == c ? 1.0 : 0.0;
    }
    std::span<const std::uint32_t> indices() const noexcept { return indices_; }

    /// Number of rows carrying each class.
    std::vector<std::size_t> class_counts() const;

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

private:
    std::vector<std::uint32_t> indices_;
    std::size_t num_classes_ = 0;
};

/// Key-value cache: keys are few-shot embeddings, values their one-hot labels.
///
/// `shots` is the nominal per-class count K. It is 0 when the per-class row
/// counts are not uniform.
struct CacheModel {
    FeatureMatrix keys;
    LabelMatrix values;
    std::size_t num_classes = 0;
    std::size_t shots = 0;

    /// Throws on keys.rows != values.rows or values.classes != num_classes.
    void validate() const;

    std::size_t size() const noexcept { return keys.rows(); }
    std::size_t dim() const noexcept { return keys.cols(); }
};

struct Hyperparams {
    double alpha = 1.0;  // residual ratio
    double beta = 5.5;   // sharpness ratio

    void validate() const;
};

using Logits = std::vector<double>;

/// Dense M x N score matrix produced by batch prediction.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    ScoreMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> data() const noexcept { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace tipcache
