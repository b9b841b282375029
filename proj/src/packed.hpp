#pragma once

// Packed Hermitian forms. For Hermitian A and P = x x^H,
//   x^H A x = sum_m A_mm P_mm + 2 Re sum_{m<n} A_mn conj(P_mn),
// so with the upper triangles of A and P flattened into real vectors (off
// diagonals of A doubled) the quadratic form is a plain dot product and a whole
// T x D table of quadratic forms at one bin is a single matrix product.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "cgmmsep/signal.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm::detail {

inline std::size_t packed_size(std::size_t mics) { return mics * (mics + 1); }

// Per bin f: a T x packed_size(M) matrix whose row t holds
// [Re P_mn ..., Im P_mn ...] over m <= n, P = x_tf x_tf^H.
std::vector<Eigen::MatrixXd> pack_outer_products(const Spectrogram& x);

// Column vector of packed weights [Re A_mn, Im A_mn] with off diagonals doubled.
void pack_weights(const ComplexMatrix& a, Eigen::Ref<Eigen::VectorXd> out);

// Rebuild the Hermitian matrix sum_t c_t x_t x_t^H from a packed row sum.
ComplexMatrix unpack_outer_sum(const Eigen::Ref<const Eigen::RowVectorXd>& packed, std::size_t mics);

// Quadratic forms x_tf^H A_fd x_tf for all (t, d), one T x D matrix per bin.
// matrices are indexed f * D + d.
std::vector<Eigen::MatrixXd> quad_table(const std::vector<Eigen::MatrixXd>& packed_x,
                                        const std::vector<ComplexMatrix>& matrices,
                                        std::size_t directions);

}  // namespace cgmm::detail
