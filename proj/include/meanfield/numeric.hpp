#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace meanfield {

/// Pairwise (tree) summation in the given order. Result depends only on the
/// input sequence, never on thread count.
double pairwise_sum(std::span<const double> values);

/// Correctly rounded sum, hence exactly invariant under permutation of the
/// inputs (x and -x cancel to 0).
double order_independent_sum(std::span<const double> values);

double median(std::vector<double> values);

/// Ordinary least squares of log y on log x, with a 95% interval on the slope
/// from the Student t quantile.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};
LinearFit fit_loglog(std::span<const double> x, std::span<const double> y);

/// Worker count used by parallel_for. Initialized from MEANFIELD_LAB_THREADS
/// (default 1).
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(begin, end) over disjoint contiguous chunks of [0, n). Chunk
/// boundaries are a function of n only, so any per-index work written by fn
/// is identical for every thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn, std::size_t grain = 64);

/// Runs job(i) for i in [0, n) on at most num_threads() workers. Inside a job,
/// parallel_for runs serially.
void run_jobs(std::size_t n, const std::function<void(std::size_t)>& job);

}  // namespace meanfield
