#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace epinfer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Library error. The message carries the failure kind ("degenerate covariance",
/// "improper product", "zero normalizer", ...) followed by context.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic elementary-operation tally. Every Gaussian-core operation that
/// is handed a tally adds a fixed documented cost for its dimension d:
///   vector op (dot, axpy, add)   d
///   matrix-vector product        d*d
///   rank-one covariance update   d*d
///   symmetrization               d*d
///   scalar special function      1
/// Costs are exact integers so runs are reproducible across machines.
struct OpTally {
    std::uint64_t count = 0;

    void add(std::uint64_t n) { count += n; }
    void vector_op(Index d) { count += static_cast<std::uint64_t>(d); }
    void matvec(Index d) { count += static_cast<std::uint64_t>(d * d); }
    void rank_one(Index d) { count += static_cast<std::uint64_t>(d * d); }
    void symmetrize(Index d) { count += static_cast<std::uint64_t>(d * d); }
    void scalar() { count += 1; }
};

inline void tally_vector(OpTally* t, Index d) { if (t) t->vector_op(d); }
inline void tally_matvec(OpTally* t, Index d) { if (t) t->matvec(d); }
inline void tally_rank_one(OpTally* t, Index d) { if (t) t->rank_one(d); }
inline void tally_symmetrize(OpTally* t, Index d) { if (t) t->symmetrize(d); }
inline void tally_scalar(OpTally* t) { if (t) t->scalar(); }

}  // namespace epinfer
