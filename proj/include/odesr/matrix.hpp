#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace odesr {

// Dense row-major matrix. Rows are samples, columns are state variables.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept
    {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(std::size_t r, std::size_t c) const noexcept
    {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    [[nodiscard]] std::vector<double> column(std::size_t c) const
    {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            out[r] = (*this)(r, c);
        }
        return out;
    }

    // Rows [begin, end).
    [[nodiscard]] Matrix slice_rows(std::size_t begin, std::size_t end) const
    {
        assert(begin <= end && end <= rows_);
        Matrix out(end - begin, cols_);
        for (std::size_t r = begin; r < end; ++r) {
            for (std::size_t c = 0; c < cols_; ++c) {
                out(r - begin, c) = (*this)(r, c);
            }
        }
        return out;
    }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace odesr
