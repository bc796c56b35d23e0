#include <catch2/catch_amalgamated.hpp>

#include "rsr/spectral.hpp"
#include "test_util.hpp"

using namespace rsr;
using test_util::gaussian;
using test_util::random_orthonormal;
using test_util::random_psd_rank;
using test_util::random_spd;
using Catch::Approx;

namespace {

Eigen::MatrixXd reconstruct(const EigenSystem& es) {
  return es.vectors * es.values.asDiagonal() * es.vectors.transpose();
}

}  // namespace

TEST_CASE("eigh: identity") {
  EigenSystem es = eigh(SymMatrix::identity(3));
  for (int i = 0; i < 3; ++i) CHECK(es.values[i] == Approx(1.0).margin(1e-14));
  CHECK((es.vectors.transpose() * es.vectors - Eigen::MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("eigh: diagonal values sort and vectors are a signed permutation") {
  Eigen::MatrixXd m = Eigen::Vector3d(2, 5, 1).asDiagonal();
  EigenSystem es = eigh(SymMatrix(m));
  CHECK(es.values[0] == Approx(5.0));
  CHECK(es.values[1] == Approx(2.0));
  CHECK(es.values[2] == Approx(1.0));
  // columns must be +-e2, +-e1, +-e3 with the sign fixed positive
  CHECK(es.vectors(1, 0) == Approx(1.0));
  CHECK(es.vectors(0, 1) == Approx(1.0));
  CHECK(es.vectors(2, 2) == Approx(1.0));
}

TEST_CASE("eigh: random SPD reconstruction oracle") {
  CounterRng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd m = random_spd(6, rng);
    EigenSystem es = eigh(SymMatrix(m));
    const double err = (reconstruct(es) - m).cwiseAbs().maxCoeff();
    CHECK(err <= 1e-9 * (1.0 + m.cwiseAbs().maxCoeff()));
    for (int i = 0; i + 1 < 6; ++i) CHECK(es.values[i] >= es.values[i + 1]);
  }
}

TEST_CASE("eigh: sign policy makes the gauge deterministic") {
  CounterRng rng(7);
  Eigen::MatrixXd m = random_spd(5, rng);
  EigenSystem a = eigh(SymMatrix(m));
  EigenSystem b = eigh(SymMatrix(m));
  CHECK((a.vectors - b.vectors).cwiseAbs().maxCoeff() == 0.0);
  for (int j = 0; j < 5; ++j) {
    Eigen::Index imax;
    a.vectors.col(j).cwiseAbs().maxCoeff(&imax);
    CHECK(a.vectors(imax, j) > 0.0);
  }
}

TEST_CASE("eigh: non-finite entries rejected") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  m(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(SymMatrix(m), InvalidMatrix);
}

TEST_CASE("SymMatrix rejects asymmetry, SubspaceBasis rejects skew columns") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 1;
  CHECK_THROWS_AS(SymMatrix(m), InvalidMatrix);
  Eigen::MatrixXd u(3, 2);
  u << 1, 1, 0, 1, 0, 0;
  CHECK_THROWS_AS(SubspaceBasis(u), InvalidMatrix);
}

TEST_CASE("complement_basis: canonical cases") {
  Eigen::MatrixXd e1(2, 1);
  e1 << 1, 0;
  SubspaceBasis w = complement_basis(SubspaceBasis(e1));
  CHECK(std::abs(std::abs(w.cols()(1, 0)) - 1.0) < 1e-14);
  CHECK(std::abs(w.cols()(0, 0)) < 1e-14);

  Eigen::MatrixXd e12 = Eigen::MatrixXd::Identity(4, 2);
  SubspaceBasis w2 = complement_basis(SubspaceBasis(e12));
  // span must be e3, e4
  CHECK(w2.cols().topRows(2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("complement_basis: joint orthogonality and determinism") {
  CounterRng rng(3);
  Eigen::MatrixXd u = random_orthonormal(7, 3, rng);
  SubspaceBasis basis(u);
  SubspaceBasis w = complement_basis(basis);
  Eigen::MatrixXd full(7, 7);
  full << u, w.cols();
  CHECK((full.transpose() * full - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() <=
        1e-10);
  SubspaceBasis w2 = complement_basis(basis);
  CHECK((w.cols() - w2.cols()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("blocks: identity splits into identities") {
  CounterRng rng(11);
  SubspaceBasis u(random_orthonormal(5, 2, rng));
  BlockDecomposition b = blocks(SymMatrix::identity(5), u);
  CHECK((b.sigma_LL - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.sigma_PP - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(b.sigma_LP.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("blocks: axis-aligned case and reassembly oracle") {
  Eigen::MatrixXd m = Eigen::Vector2d(3, 1).asDiagonal();
  Eigen::MatrixXd e1(2, 1);
  e1 << 1, 0;
  BlockDecomposition b = blocks(SymMatrix(m), SubspaceBasis(e1));
  CHECK(b.sigma_LL(0, 0) == Approx(3.0));
  CHECK(b.sigma_PP(0, 0) == Approx(1.0));

  CounterRng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd ms = random_spd(6, rng);
    SubspaceBasis u(random_orthonormal(6, 2, rng));
    BlockDecomposition bd = blocks(SymMatrix(ms), u);
    Eigen::MatrixXd frame(6, 6);
    frame << u.cols(), bd.complement.cols();
    Eigen::MatrixXd blockmat(6, 6);
    blockmat << bd.sigma_LL, bd.sigma_LP, bd.sigma_PL, bd.sigma_PP;
    CHECK((frame * blockmat * frame.transpose() - ms).cwiseAbs().maxCoeff() < 1e-11);
    CHECK((bd.sigma_PL - bd.sigma_LP.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("blocks: dimension mismatch") {
  CounterRng rng(1);
  SubspaceBasis u(random_orthonormal(4, 2, rng));
  CHECK_THROWS_AS(blocks(SymMatrix::identity(5), u), DimensionError);
}

TEST_CASE("schur_split: block-diagonal input separates exactly") {
  CounterRng rng(9);
  SubspaceBasis u(random_orthonormal(5, 2, rng));
  SubspaceBasis w = complement_basis(u);
  Eigen::MatrixXd ll = random_spd(2, rng);
  Eigen::MatrixXd pp = random_spd(3, rng);
  Eigen::MatrixXd m = u.cols() * ll * u.cols().transpose() + w.cols() * pp * w.cols().transpose();
  auto [g1, g2] = schur_split(SymMatrix(0.5 * (m + m.transpose())), u);
  CHECK((g1.mat() - u.cols() * ll * u.cols().transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((g2.mat() - w.cols() * pp * w.cols().transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("schur_split: identity gives the two projectors") {
  CounterRng rng(13);
  SubspaceBasis u(random_orthonormal(4, 2, rng));
  auto [g1, g2] = schur_split(SymMatrix::identity(4), u);
  CHECK((g1.mat() - u.projector()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((g2.mat() - complement_basis(u).projector()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("schur_split: PSD parts, exact sum, ranks d and D-d") {
  CounterRng rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    Eigen::MatrixXd m = random_spd(5, rng);
    SubspaceBasis u(random_orthonormal(5, 2, rng));
    auto [g1, g2] = schur_split(SymMatrix(m), u);
    CHECK((g1.mat() + g2.mat() - m).cwiseAbs().maxCoeff() == 0.0);
    EigenSystem e1 = eigh(g1);
    EigenSystem e2 = eigh(g2);
    const double scale = e1.values[0] + e2.values[0];
    CHECK(e1.values.minCoeff() >= -1e-9 * scale);
    CHECK(e2.values.minCoeff() >= -1e-9 * scale);
    int rank1 = 0, rank2 = 0;
    for (int i = 0; i < 5; ++i) {
      rank1 += e1.values[i] > 1e-9 * scale;
      rank2 += e2.values[i] > 1e-9 * scale;
    }
    CHECK(rank1 == 2);
    CHECK(rank2 == 3);
  }
}

TEST_CASE("schur_split: not PSD rejected") {
  CounterRng rng(19);
  SubspaceBasis u(random_orthonormal(3, 1, rng));
  Eigen::MatrixXd m = -Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(schur_split(SymMatrix(m), u), NotPSD);
}

TEST_CASE("tail_mean") {
  Eigen::VectorXd v(5);
  v << 5, 4, 3, 2, 1;
  SymMatrix m{Eigen::MatrixXd(v.asDiagonal())};
  CHECK(tail_mean(m, 2) == Approx(2.0).epsilon(1e-14));
  CHECK(tail_mean(m, 4) == Approx(1.0).epsilon(1e-14));
  SymMatrix z{Eigen::MatrixXd::Zero(4, 4)};
  CHECK(tail_mean(z, 2) == Approx(0.0).margin(1e-15));
}

TEST_CASE("rank_d_truncation: diagonal case") {
  Eigen::VectorXd v(3);
  v << 5, 4, 3;
  RankTruncation t = rank_d_truncation(SymMatrix{Eigen::MatrixXd(v.asDiagonal())}, 1);
  Eigen::MatrixXd expect_pi = Eigen::Vector3d(5, 0, 0).asDiagonal();
  Eigen::MatrixXd expect_pt = Eigen::Vector3d(0, 1, 1).asDiagonal();
  CHECK((t.pi_d.mat() - expect_pi).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.p_tail.mat() - expect_pt).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_FALSE(t.degenerate);
}

TEST_CASE("rank_d_truncation: exact low-rank input is reproduced") {
  CounterRng rng(23);
  Eigen::MatrixXd m = random_psd_rank(6, 2, rng);
  RankTruncation t = rank_d_truncation(SymMatrix(m), 2);
  CHECK((t.pi_d.mat() - m).cwiseAbs().maxCoeff() < 1e-10 * (1 + m.cwiseAbs().maxCoeff()));
  CHECK((m * t.p_tail.mat()).cwiseAbs().maxCoeff() < 1e-9 * (1 + m.cwiseAbs().maxCoeff()));
  CHECK((t.pi_d.mat() * t.p_tail.mat()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("rank_d_truncation: flattened spectrum has D-d equal smallest eigenvalues") {
  CounterRng rng(29);
  Eigen::MatrixXd m = random_spd(6, rng);
  const int d = 2;
  const double tm = tail_mean(SymMatrix(m), d);
  RankTruncation t = rank_d_truncation(SymMatrix(m), d);
  EigenSystem es = eigh(SymMatrix(t.pi_d.mat() + tm * t.p_tail.mat()));
  for (int i = d; i < 6; ++i) CHECK(es.values[i] == Approx(tm).epsilon(1e-10));
}

TEST_CASE("rank_d_truncation: degenerate gap flagged") {
  RankTruncation t = rank_d_truncation(SymMatrix::identity(3), 1);
  CHECK(t.degenerate);
}

TEST_CASE("principal_angles: identical, orthogonal, rotated") {
  CounterRng rng(31);
  SubspaceBasis u(random_orthonormal(5, 2, rng));
  PrincipalAngles same = principal_angles(u, u);
  CHECK(same.angles.maxCoeff() < 1e-7);
  CHECK(same.sin_theta1 < 1e-7);

  Eigen::MatrixXd e1(2, 1), e2(2, 1);
  e1 << 1, 0;
  e2 << 0, 1;
  PrincipalAngles ortho = principal_angles(SubspaceBasis(e1), SubspaceBasis(e2));
  CHECK(ortho.angles[0] == Approx(1.5707963267948966).epsilon(1e-12));

  const double theta = 0.3;
  Eigen::MatrixXd rot(2, 1);
  rot << std::cos(theta), std::sin(theta);
  PrincipalAngles r = principal_angles(SubspaceBasis(e1), SubspaceBasis(rot));
  CHECK(r.angles[0] == Approx(0.3).epsilon(1e-12));
  CHECK(r.sin_theta1 == Approx(std::sin(0.3)).epsilon(1e-12));
}

TEST_CASE("principal_angles: symmetry and right-rotation invariance") {
  CounterRng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    SubspaceBasis u1(random_orthonormal(6, 2, rng));
    SubspaceBasis u2(random_orthonormal(6, 2, rng));
    PrincipalAngles a = principal_angles(u1, u2);
    PrincipalAngles b = principal_angles(u2, u1);
    CHECK((a.angles - b.angles).cwiseAbs().maxCoeff() < 1e-10);

    Eigen::MatrixXd q = random_orthonormal(2, 2, rng);
    PrincipalAngles c = principal_angles(u1, SubspaceBasis(u2.cols() * q));
    CHECK((a.angles - c.angles).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("principal_angles: small angles carry full precision") {
  const double theta = 3e-9;
  Eigen::MatrixXd e1(3, 1), v(3, 1);
  e1 << 1, 0, 0;
  v << std::cos(theta), std::sin(theta), 0;
  PrincipalAngles a = principal_angles(SubspaceBasis(e1), SubspaceBasis(v));
  CHECK(a.sin_theta1 == Approx(std::sin(theta)).epsilon(1e-9));
}

TEST_CASE("geometric_mean: fixed points and commuting case") {
  CounterRng rng(41);
  Eigen::MatrixXd a = random_spd(4, rng);
  SymMatrix sa(a);
  CHECK((geometric_mean(sa, sa).mat() - a).cwiseAbs().maxCoeff() < 1e-10);

  SymMatrix four{4.0 * Eigen::MatrixXd::Identity(3, 3)};
  CHECK((geometric_mean(four, SymMatrix::identity(3)).mat() -
         2.0 * Eigen::MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("geometric_mean: congruence identity A#B = (A+B)#(A^-1+B^-1)^-1") {
  CounterRng rng(43);
  for (int rep = 0; rep < 10; ++rep) {
    SymMatrix a{random_spd(4, rng)};
    SymMatrix b{random_spd(4, rng)};
    SymMatrix lhs = geometric_mean(a, b);
    Eigen::MatrixXd sum = a.mat() + b.mat();
    Eigen::MatrixXd harm = (a.mat().inverse() + b.mat().inverse()).inverse();
    SymMatrix rhs = geometric_mean(SymMatrix(sum), SymMatrix(0.5 * (harm + harm.transpose())));
    CHECK((lhs.mat() - rhs.mat()).cwiseAbs().maxCoeff() <=
          1e-8 * (1.0 + lhs.mat().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("geometric_mean: singular input rejected") {
  Eigen::MatrixXd sing = Eigen::Vector2d(1, 0).asDiagonal();
  CHECK_THROWS_AS(geometric_mean(SymMatrix(sing), SymMatrix::identity(2)), NotPD);
}
