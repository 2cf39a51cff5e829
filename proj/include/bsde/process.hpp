#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace bsde {

/// Values of an adapted process on a time grid across an ensemble of paths.
///
/// Storage is component-major within each time slice: the M path values of
/// component n at time l are contiguous, so per-component updates and
/// regressions run over unit-stride columns.
class GridProcess {
public:
    GridProcess() = default;
    GridProcess(std::size_t times, std::size_t dim, std::size_t paths, double fill = 0.0)
        : times_(times), dim_(dim), paths_(paths), data_(times * dim * paths, fill) {}

    std::size_t times() const noexcept { return times_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t paths() const noexcept { return paths_; }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> slice(std::size_t l) { return {data_.data() + l * dim_ * paths_, dim_ * paths_}; }
    std::span<const double> slice(std::size_t l) const {
        return {data_.data() + l * dim_ * paths_, dim_ * paths_};
    }
    std::span<double> column(std::size_t l, std::size_t n) {
        return {data_.data() + (l * dim_ + n) * paths_, paths_};
    }
    std::span<const double> column(std::size_t l, std::size_t n) const {
        return {data_.data() + (l * dim_ + n) * paths_, paths_};
    }

    double& at(std::size_t l, std::size_t n, std::size_t m) { return data_[(l * dim_ + n) * paths_ + m]; }
    double at(std::size_t l, std::size_t n, std::size_t m) const {
        return data_[(l * dim_ + n) * paths_ + m];
    }

    void gather(std::size_t l, std::size_t m, std::span<double> out) const {
        const double* base = data_.data() + l * dim_ * paths_ + m;
        for (std::size_t n = 0; n < dim_; ++n) out[n] = base[n * paths_];
    }
    void scatter(std::size_t l, std::size_t m, std::span<const double> in) {
        double* base = data_.data() + l * dim_ * paths_ + m;
        for (std::size_t n = 0; n < dim_; ++n) base[n * paths_] = in[n];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

private:
    std::size_t times_ = 0;
    std::size_t dim_ = 0;
    std::size_t paths_ = 0;
    std::vector<double> data_;
};

}  // namespace bsde
