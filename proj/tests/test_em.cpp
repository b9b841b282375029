#include <doctest.h>

#include <cmath>
#include <random>

#include "cgmmsep/em.hpp"
#include "cgmmsep/simulate.hpp"
#include "cgmmsep/spatial.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cgmm;
using testutil::rel_err;
using oracle::random_params;
using oracle::density;


TEST_SUITE("em") {
  TEST_CASE("mask E-step equals brute-force enumeration") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const std::size_t T = 2, F = 2, K = 2 + seed % 2, D = 3, M = 2;
      const auto x = testutil::random_spectrogram(T, F, M, 100 + seed, 0.7);
      const auto p = random_params(T, F, K, D, M, 200 + seed);
      const auto ew = testutil::random_doa(K, D, 300 + seed);
      const auto ez = e_step_masks(x, p, ew, 1e-300);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
          const auto v = testutil::bin_vector(x, t, f);
          std::vector<double> w(K);
          double total = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            w[k] = p.pi(t, k);
            for (std::size_t d = 0; d < D; ++d) w[k] *= std::pow(density(v, p.scm[f * D + d], p.lambda(t, f, k)), ew(k, d));
            total += w[k];
          }
          for (std::size_t k = 0; k < K; ++k) CHECK(rel_err(ez(t, f, k), w[k] / total) <= 1e-10);
        }
      }
    }
  }

  TEST_CASE("DoA E-step equals brute-force enumeration") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const std::size_t T = 3, F = 2, K = 2, D = 3, M = 3;
      const auto x = testutil::random_spectrogram(T, F, M, 400 + seed, 0.5);
      const auto p = random_params(T, F, K, D, M, 500 + seed);
      const auto ez = testutil::random_masks(T, F, K, 600 + seed);
      const auto ew = e_step_doa(x, p, ez, 1e-300);
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> w(D);
        double total = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
          w[d] = p.direction_prior[d];
          for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t f = 0; f < F; ++f) {
              w[d] *= std::pow(density(testutil::bin_vector(x, t, f), p.scm[f * D + d], p.lambda(t, f, k)), ez(t, f, k));
            }
          }
          total += w[d];
        }
        for (std::size_t d = 0; d < D; ++d) CHECK(rel_err(ew(k, d), w[d] / total) <= 1e-10);
      }
    }
  }

  TEST_CASE("E-step degenerate cases") {
    const auto x = testutil::random_spectrogram(3, 3, 2, 1);
    SUBCASE("single class gives ones") {
      const auto p = random_params(3, 3, 1, 2, 2, 2);
      const auto ez = e_step_masks(x, p, testutil::random_doa(1, 2, 3));
      for (double v : ez.values) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("symmetric components split evenly") {
      auto p = random_params(3, 3, 2, 2, 2, 4);
      for (std::size_t t = 0; t < 3; ++t) {
        p.pi(t, 0) = p.pi(t, 1) = 0.5;
        for (std::size_t f = 0; f < 3; ++f) p.lambda(t, f, 1) = p.lambda(t, f, 0);
      }
      DoaPosterior ew(2, 2, 0.5);
      const auto ez = e_step_masks(x, p, ew);
      for (double v : ez.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("single direction and flat likelihood give the prior") {
      const auto p1 = random_params(3, 3, 2, 1, 2, 5);
      for (double v : e_step_doa(x, p1, testutil::random_masks(3, 3, 2, 6)).values) CHECK(v == doctest::Approx(1.0));
      auto p = random_params(3, 3, 2, 3, 2, 7);
      for (std::size_t f = 0; f < 3; ++f) {
        p.scm[f * 3 + 1] = p.scm[f * 3];
        p.scm[f * 3 + 2] = p.scm[f * 3];
      }
      const auto ew = e_step_doa(x, p, testutil::random_masks(3, 3, 2, 8));
      for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t d = 0; d < 3; ++d) CHECK(ew(k, d) == doctest::Approx(p.direction_prior[d]).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("SCM M-step matches a naive triple loop") {
    const std::size_t T = 3, F = 2, K = 2, D = 3, M = 3;
    const auto geom = ArrayGeometry::uniform_circular(M, 0.08);
    const auto tpl = build_templates(geom, DirectionGrid{0.0, 120.0, D}, F, 8000, 1e-2);
    const auto x = testutil::random_spectrogram(T, F, M, 9);
    const auto ez = testutil::random_masks(T, F, K, 10);
    const auto ew = testutil::random_doa(K, D, 11);
    const auto p = random_params(T, F, K, D, M, 12);
    const Hyperparams hyper{7.5, 1e-2};
    for (auto scale : {PriorScale::kTemplate, PriorScale::kScaledTemplate}) {
      const auto H = m_step_scm(x, ez, ew, p.psd, tpl, hyper, scale);
      const double prior = scale == PriorScale::kTemplate ? 1.0 : hyper.nu - static_cast<double>(M);
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t d = 0; d < D; ++d) {
          Eigen::MatrixXcd num = prior * tpl.scm(f, d);
          double den = hyper.nu + static_cast<double>(M);
          for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t k = 0; k < K; ++k) {
              const auto v = testutil::bin_vector(x, t, f);
              const double wgt = ez(t, f, k) * ew(k, d);
              num += wgt / p.lambda(t, f, k) * v * v.adjoint();
              den += wgt;
            }
          }
          const Eigen::MatrixXcd expected = num / den;
          CHECK((H[f * D + d] - expected).cwiseAbs().maxCoeff() <= 1e-12 * expected.cwiseAbs().maxCoeff());
          CHECK((H[f * D + d] - H[f * D + d].adjoint()).cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
    SUBCASE("prior-only update for an unused direction") {
      DoaPosterior one_hot(K, D, 0.0);
      one_hot(0, 0) = one_hot(1, 0) = 1.0;
      const auto H = m_step_scm(x, ez, one_hot, p.psd, tpl, hyper);
      const Eigen::MatrixXcd expected = tpl.scm(1, 2) / (hyper.nu + static_cast<double>(M));
      CHECK((H[1 * D + 2] - expected).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }

  TEST_CASE("PSD M-step matches a naive loop and is floored") {
    const std::size_t T = 3, F = 2, K = 2, D = 3, M = 2;
    const auto x = testutil::random_spectrogram(T, F, M, 13);
    const auto ew = testutil::random_doa(K, D, 14);
    const auto p = random_params(T, F, K, D, M, 15);
    const auto lam = m_step_psd(x, ew, p.scm, 1e-8);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        const auto v = testutil::bin_vector(x, t, f);
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::size_t d = 0; d < D; ++d) acc += ew(k, d) * (v.adjoint() * p.scm[f * D + d].inverse() * v)(0, 0).real();
          CHECK(rel_err(lam[(t * F + f) * K + k], acc / static_cast<double>(M)) <= 1e-12);
        }
      }
    }
    std::vector<ComplexMatrix> eye(F * D, Eigen::MatrixXcd::Identity(M, M));
    const auto lam_eye = m_step_psd(x, ew, eye, 1e-8);
    CHECK(rel_err(lam_eye[0], testutil::bin_vector(x, 0, 0).squaredNorm() / static_cast<double>(M)) <= 1e-12);
    Spectrogram zero(T, F, M, 4, 2, 8000);
    for (double v : m_step_psd(zero, ew, eye, 1e-8)) CHECK(v == 1e-8);
  }

  TEST_CASE("prior M-step averages the posteriors") {
    const auto ez = testutil::random_masks(3, 4, 2, 16);
    const auto ew = testutil::random_doa(2, 5, 17);
    const auto pr = m_step_priors(ez, ew);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t k = 0; k < 2; ++k) {
        double acc = 0.0;
        for (std::size_t f = 0; f < 4; ++f) acc += ez(t, f, k);
        CHECK(pr.activation[t * 2 + k] == doctest::Approx(acc / 4.0).epsilon(1e-14));
      }
    }
    for (std::size_t d = 0; d < 5; ++d) CHECK(pr.direction_prior[d] == doctest::Approx((ew(0, d) + ew(1, d)) / 2.0));
  }

  TEST_CASE("ELBO equals a term-by-term summation") {
    const std::size_t T = 2, F = 3, K = 2, D = 3, M = 2;
    const auto x = testutil::random_spectrogram(T, F, M, 18);
    const auto p = random_params(T, F, K, D, M, 19);
    const auto ez = testutil::random_masks(T, F, K, 20);
    const auto ew = testutil::random_doa(K, D, 21);
    double expected = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        const auto v = testutil::bin_vector(x, t, f);
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t d = 0; d < D; ++d) {
            expected += ez(t, f, k) * ew(k, d) * testutil::dense_log_cgauss(v, p.lambda(t, f, k) * p.scm[f * D + d]);
          }
          expected -= ez(t, f, k) * std::log(ez(t, f, k) / p.pi(t, k));
        }
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t d = 0; d < D; ++d) expected -= ew(k, d) * std::log(ew(k, d) / p.direction_prior[d]);
    }
    CHECK(rel_err(elbo(x, p, ez, ew), expected) <= 1e-10);
  }

  TEST_CASE("KL terms vanish when the posteriors equal the priors") {
    const auto x = testutil::random_spectrogram(2, 2, 2, 22);
    auto p = random_params(2, 2, 1, 1, 2, 23);
    const MaskPosterior ez = MaskPosterior::uniform(2, 2, 1);
    const DoaPosterior ew(1, 1, 1.0);
    double ll = 0.0;
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t f = 0; f < 2; ++f) ll += testutil::dense_log_cgauss(testutil::bin_vector(x, t, f), p.lambda(t, f, 0) * p.scm[f]);
    }
    CHECK(rel_err(elbo(x, p, ez, ew), ll) <= 1e-12);
  }

  TEST_CASE("directional init splits the grid into contiguous blocks") {
    const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
    const DirectionGrid grid{0.0, 5.0, 72};
    const auto tpl = build_templates(geom, grid, 9, 8000, 1e-2);
    const auto x = testutil::random_spectrogram(4, 9, 4, 24);
    const auto init = init_directional(x, tpl, 6);
    for (std::size_t k = 0; k < 6; ++k) {
      for (std::size_t d = 0; d < 72; ++d) {
        CHECK(init.ew(k, d) == doctest::Approx(d / 12 == k ? 1.0 / 12.0 : 0.0));
      }
    }
    init.ez.validate();
    const auto rem = init_directional(x, tpl, 5);
    CHECK(rem.ew(4, 71) == doctest::Approx(1.0 / 16.0));
    const auto one = init_directional(x, tpl, 1);
    for (double v : one.ez.values) CHECK(v == doctest::Approx(1.0));
    CHECK_THROWS_AS(init_directional(x, tpl, 73), Error);
  }

  TEST_CASE("mask-driven DoA init") {
    const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
    const DirectionGrid grid{0.0, 10.0, 36};
    const auto tpl = build_templates(geom, grid, 17, 8000, 1e-2);
    const std::size_t d_true = 23;
    Spectrogram x(10, 17, 4, 8, 32, 8000);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t f = 0; f < 17; ++f) {
        const Complex s(g(rng), g(rng));
        for (std::size_t m = 0; m < 4; ++m) x(t, f, m) = s * tpl.vector(f, d_true)(static_cast<Eigen::Index>(m));
      }
    }
    MaskPosterior ez(10, 17, 2);
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t f = 0; f < 17; ++f) ez(t, f, 0) = 1.0;
    }
    const auto ew = init_doa_from_masks(x, ez, tpl);
    CHECK(ew.argmax(0) == d_true);
    for (std::size_t d = 0; d < 36; ++d) CHECK(ew(1, d) == doctest::Approx(1.0 / 36.0));
  }

  TEST_CASE("EM separates two disjoint-band sources in opposite half-planes") {
    SceneSampler sampler;
    sampler.duration_s = 2.0;
    sampler.source_kind = SourceKind::kLowHighBands;
    sampler.level_range_db = 0.0;
    Scene scene = sample_scene(sampler, ArrayGeometry::uniform_circular(4, 0.08), 3);
    // One source per initial 180 degree block.
    scene.azimuths_deg = {40.0, 220.0};
    const StftConfig stft_cfg;
    const auto sim = mix_planewave(scene, stft_cfg);
    const auto x = stft(sim.mixture, stft_cfg);
    const DirectionGrid grid{0.0, 5.0, 72};
    const auto tpl = build_templates(scene.geometry, grid, x.bins, 8000, 1e-2);
    EmConfig cfg;
    cfg.iterations = 20;
    const auto res = run_em(x, tpl, cfg, Hyperparams::defaults(4), EmInit::directional(2));
    CHECK(res.elbo_trace.size() == 20);
    res.ez.validate();
    res.ew.validate();
    std::vector<double> az{grid.azimuth(res.ew.argmax(0)), grid.azimuth(res.ew.argmax(1))};
    const bool straight = circular_distance_deg(az[0], 40.0) <= 5.0 && circular_distance_deg(az[1], 220.0) <= 5.0;
    const bool swapped = circular_distance_deg(az[1], 40.0) <= 5.0 && circular_distance_deg(az[0], 220.0) <= 5.0;
    INFO("azimuths " << az[0] << " " << az[1]);
    CHECK((straight || swapped));
    // Masks follow the bands: low bins belong to source 0, high bins to source 1.
    const std::size_t k_low = straight ? 0 : 1;
    double low = 0.0, high = 0.0;
    std::size_t nl = 0, nh = 0;
    for (std::size_t t = 0; t < x.frames; ++t) {
      for (std::size_t f = 0; f < x.bins; ++f) {
        const double hz = static_cast<double>(f) * 8000.0 / 512.0;
        if (hz > 300.0 && hz < 1500.0) low += res.ez(t, f, k_low), ++nl;
        if (hz > 2500.0 && hz < 3600.0) high += res.ez(t, f, 1 - k_low), ++nh;
      }
    }
    CHECK(low / static_cast<double>(nl) >= 0.9);
    CHECK(high / static_cast<double>(nh) >= 0.9);
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i) {
      CHECK(res.objective_trace[i] >= res.objective_trace[i - 1] - 1e-6 * std::abs(res.objective_trace[i - 1]));
    }
  }

  TEST_CASE("relabelled initial masks permute the outputs") {
    const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
    const DirectionGrid grid{0.0, 30.0, 12};
    const auto tpl = build_templates(geom, grid, 9, 8000, 1e-2);
    const auto x = testutil::random_spectrogram(8, 9, 4, 31);
    const auto z = testutil::random_masks(8, 9, 2, 32);
    MaskPosterior swapped(8, 9, 2);
    for (std::size_t t = 0; t < 8; ++t) {
      for (std::size_t f = 0; f < 9; ++f) swapped(t, f, 0) = z(t, f, 1), swapped(t, f, 1) = z(t, f, 0);
    }
    EmConfig cfg;
    cfg.iterations = 5;
    const auto a = run_em(x, tpl, cfg, Hyperparams::defaults(4), EmInit::external_masks(z));
    const auto b = run_em(x, tpl, cfg, Hyperparams::defaults(4), EmInit::external_masks(swapped));
    for (std::size_t t = 0; t < 8; ++t) {
      for (std::size_t f = 0; f < 9; ++f) CHECK(a.ez(t, f, 0) == doctest::Approx(b.ez(t, f, 1)).epsilon(1e-9));
    }
    CHECK(a.elbo_trace.back() == doctest::Approx(b.elbo_trace.back()).epsilon(1e-12));
  }

  TEST_CASE("merging classes preserves normalisation") {
    const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
    const DirectionGrid grid{0.0, 5.0, 72};
    const auto x = testutil::random_spectrogram(6, 9, 4, 41);
    const auto ez = testutil::random_masks(6, 9, 6, 42);
    const auto ew = testutil::random_doa(6, 72, 43);
    const auto merged = merge_classes(x, ez, ew, grid, 2);
    CHECK(merged.ez.sources == 2);
    merged.ez.validate();
    merged.ew.validate();
    CHECK(merged.class_to_source.size() == 6);
  }
}
