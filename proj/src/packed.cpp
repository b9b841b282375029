#include "packed.hpp"

namespace cgmm::detail {

std::vector<Eigen::MatrixXd> pack_outer_products(const Spectrogram& x) {
  const std::size_t mics = x.channels;
  const std::size_t half = packed_size(mics) / 2;
  std::vector<Eigen::MatrixXd> packed(x.bins, Eigen::MatrixXd(x.frames, 2 * half));
  for (std::size_t f = 0; f < x.bins; ++f) {
    auto& p = packed[f];
    for (std::size_t t = 0; t < x.frames; ++t) {
      const auto v = x.bin(t, f);
      std::size_t i = 0;
      for (std::size_t m = 0; m < mics; ++m) {
        for (std::size_t n = m; n < mics; ++n, ++i) {
          const Complex pmn = v[m] * std::conj(v[n]);
          p(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = pmn.real();
          p(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(half + i)) = pmn.imag();
        }
      }
    }
  }
  return packed;
}

void pack_weights(const ComplexMatrix& a, Eigen::Ref<Eigen::VectorXd> out) {
  const auto mics = a.rows();
  const Eigen::Index half = mics * (mics + 1) / 2;
  Eigen::Index i = 0;
  for (Eigen::Index m = 0; m < mics; ++m) {
    for (Eigen::Index n = m; n < mics; ++n, ++i) {
      const double scale = m == n ? 1.0 : 2.0;
      out(i) = scale * a(m, n).real();
      out(half + i) = m == n ? 0.0 : scale * a(m, n).imag();
    }
  }
}

ComplexMatrix unpack_outer_sum(const Eigen::Ref<const Eigen::RowVectorXd>& packed, std::size_t mics) {
  const auto mm = static_cast<Eigen::Index>(mics);
  const Eigen::Index half = mm * (mm + 1) / 2;
  ComplexMatrix s(mm, mm);
  Eigen::Index i = 0;
  for (Eigen::Index m = 0; m < mm; ++m) {
    for (Eigen::Index n = m; n < mm; ++n, ++i) {
      if (m == n) {
        s(m, m) = Complex(packed(i), 0.0);
      } else {
        s(m, n) = Complex(packed(i), packed(half + i));
        s(n, m) = std::conj(s(m, n));
      }
    }
  }
  return s;
}

std::vector<Eigen::MatrixXd> quad_table(const std::vector<Eigen::MatrixXd>& packed_x,
                                        const std::vector<ComplexMatrix>& matrices,
                                        std::size_t directions) {
  std::vector<Eigen::MatrixXd> table(packed_x.size());
  for (std::size_t f = 0; f < packed_x.size(); ++f) {
    Eigen::MatrixXd weights(packed_x[f].cols(), static_cast<Eigen::Index>(directions));
    for (std::size_t d = 0; d < directions; ++d) {
      pack_weights(matrices[f * directions + d], weights.col(static_cast<Eigen::Index>(d)));
    }
    table[f].noalias() = packed_x[f] * weights;
  }
  return table;
}

}  // namespace cgmm::detail
