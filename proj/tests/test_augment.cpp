#include <catch_amalgamated.hpp>

#include <map>
#include <set>

#include "psrp/augment.hpp"

using namespace psrp;

namespace {

ProteinRecord protein_of_length(int n, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::string s;
  for (int i = 0; i < n; ++i) s += ResidueVocabulary::kCanonical[rng.uniform_int(0, 19)];
  return encode_protein(s, ResidueVocabulary{}, 100000);
}

/// Every (l1, .., ln) with entries in [1, f_max] summing to total.
void partitions(int total, int parts, int f_max, std::vector<int>& cur, std::set<std::vector<int>>& out) {
  if (parts == 0) {
    if (total == 0) out.insert(cur);
    return;
  }
  for (int l = 1; l <= f_max && l <= total; ++l) {
    cur.push_back(l);
    partitions(total - l, parts - 1, f_max, cur, out);
    cur.pop_back();
  }
}

void check_set_invariants(const SubsequenceSet& s, int total, const RAcutConfig& cfg) {
  REQUIRE(s.n == cfg.n);
  REQUIRE(s.f_max == cfg.f_max);
  CHECK(s.total_length() == std::min(total, cfg.capacity()));
  for (int i = 0; i < s.n; ++i) {
    CHECK(s.lengths[i] >= 1);
    CHECK(s.lengths[i] <= s.f_max);
    const auto blk = s.block(i);
    for (int t = 0; t < s.f_max; ++t) {
      CHECK((blk[t] == ResidueVocabulary::kPadId) == (t >= s.lengths[i]));
    }
  }
}

}  // namespace

TEST_CASE("RAcutConfig derives f_max by ceiling") {
  CHECK(RAcutConfig::make(24, 1200).f_max == 50);
  CHECK(RAcutConfig::make(7, 100).f_max == 15);
  const auto c = RAcutConfig::make(7, 100);
  CHECK(c.n * c.f_max >= 100);
  CHECK_THROWS_AS(RAcutConfig::make(0, 100), ValidationError);
}

TEST_CASE("racut examples") {
  const auto cfg = RAcutConfig::make(3, 15);
  REQUIRE(cfg.f_max == 5);

  SECTION("length 3 forces unit blocks") {
    Rng rng(0);
    CHECK(racut(protein_of_length(3), cfg, rng).lengths == std::vector<int>{1, 1, 1});
  }
  SECTION("length 1200 with n=24 forces blocks of 50") {
    Rng rng(0);
    const auto s = racut(protein_of_length(1200), RAcutConfig::make(24, 1200), rng);
    CHECK(s.lengths == std::vector<int>(24, 50));
  }
  SECTION("length 10, seed 7: frozen golden value, itself a feasible partition") {
    Rng rng(7);
    const auto s = racut(protein_of_length(10), cfg, rng);
    std::set<std::vector<int>> feasible;
    std::vector<int> cur;
    partitions(10, 3, 5, cur, feasible);
    CHECK(feasible.count(s.lengths) == 1);
    CHECK(s.lengths == std::vector<int>{1, 4, 5});
  }
  SECTION("shorter than n is rejected") {
    Rng rng(0);
    CHECK_THROWS_AS(racut(protein_of_length(2), cfg, rng), AugmentError);
  }
  SECTION("blocks hold consecutive residues in order") {
    Rng rng(3);
    const auto p = protein_of_length(12);
    const auto s = racut(p, cfg, rng);
    std::vector<TokenId> joined;
    for (int i = 0; i < s.n; ++i) {
      const auto b = s.block(i);
      joined.insert(joined.end(), b.begin(), b.begin() + s.lengths[i]);
    }
    CHECK(joined == p.tokens);
  }
}

TEST_CASE("racut invariants over many seeds and lengths") {
  for (int n : {1, 2, 5, 24}) {
    for (int l_max : {24, 60, 1200}) {
      const auto cfg = RAcutConfig::make(n, l_max);
      for (int len : {n, n + 1, l_max / 2 + n, l_max, l_max + 37}) {
        if (len < n) continue;
        const auto p = protein_of_length(len, static_cast<std::uint64_t>(len));
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
          Rng rng(seed);
          check_set_invariants(racut(p, cfg, rng), len, cfg);
        }
      }
    }
  }
}

TEST_CASE("sample_shuffle") {
  SECTION("n=1 is the identity") {
    Rng rng(5);
    CHECK(sample_shuffle(1, rng).matrix() == Eigen::MatrixXd::Identity(1, 1));
  }
  SECTION("n=2, seed 0: frozen golden value") {
    Rng rng(0);
    CHECK(sample_shuffle(2, rng).perm() == std::vector<int>{1, 0});
  }
  SECTION("rows and columns each hold one unit entry") {
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
      const auto m = sample_shuffle(7, rng).matrix();
      CHECK(m.rowwise().sum().isApprox(Eigen::VectorXd::Ones(7)));
      CHECK(m.colwise().sum().isApprox(Eigen::RowVectorXd::Ones(7)));
    }
  }
  SECTION("10,000 draws at n=4 hit every permutation within 30% of 1/24") {
    Rng rng(2024);
    std::map<std::vector<int>, int> counts;
    for (int k = 0; k < 10000; ++k) ++counts[sample_shuffle(4, rng).perm()];
    REQUIRE(counts.size() == 24);
    const double expected = 10000.0 / 24.0;
    for (const auto& [perm, c] : counts) {
      CHECK(c > 0.7 * expected);
      CHECK(c < 1.3 * expected);
    }
  }
}

TEST_CASE("ShuffleMatrix conversions") {
  const ShuffleMatrix p({2, 0, 1});
  CHECK(ShuffleMatrix::from_matrix(p.matrix()) == p);
  CHECK(p.transpose().matrix() == p.matrix().transpose());
  CHECK_THROWS_AS(ShuffleMatrix({0, 0, 1}), ValidationError);
  Eigen::MatrixXd half = Eigen::MatrixXd::Constant(2, 2, 0.5);
  CHECK_THROWS_AS(ShuffleMatrix::from_matrix(half), ValidationError);
}

TEST_CASE("shuffle_apply") {
  Rng rng(9);
  const auto cfg = RAcutConfig::make(3, 15);
  const auto set = racut(protein_of_length(13), cfg, rng);

  CHECK(shuffle_apply(set, ShuffleMatrix::identity(3)) == set);

  const auto rev = shuffle_apply(set, ShuffleMatrix({2, 1, 0}));
  for (int i = 0; i < 3; ++i) {
    CHECK(std::equal(rev.block(i).begin(), rev.block(i).end(), set.block(2 - i).begin()));
    CHECK(rev.lengths[i] == set.lengths[2 - i]);
  }

  for (int k = 0; k < 20; ++k) {
    const auto p = sample_shuffle(3, rng);
    CHECK(shuffle_apply(shuffle_apply(set, p), p.transpose()) == set);
  }
  CHECK_THROWS_AS(shuffle_apply(set, ShuffleMatrix::identity(4)), DimensionError);
}

TEST_CASE("apply_noise") {
  SubsequenceSet set;
  set.n = 4;
  set.f_max = 25;
  set.tokens.assign(100, 0);
  set.lengths.assign(4, 25);

  SECTION("identity leaves the set untouched") {
    Rng rng(1);
    CHECK(apply_noise(set, NoiseSpec::identity(), rng) == set);
  }
  SECTION("mask_prob 1 masks every residue") {
    Rng rng(1);
    const auto m = apply_noise(set, NoiseSpec::mask(1.0), rng);
    CHECK(std::all_of(m.tokens.begin(), m.tokens.end(), [](TokenId t) { return t == ResidueVocabulary::kMaskId; }));
  }
  SECTION("seed 42 with p=0.15: frozen positions, count inside the binomial interval") {
    Rng rng(42);
    const auto m = apply_noise(set, NoiseSpec::mask(0.15), rng);
    std::vector<int> masked;
    for (int i = 0; i < 100; ++i) {
      if (m.tokens[i] == ResidueVocabulary::kMaskId) masked.push_back(i);
    }
    CHECK(masked.size() >= 5);
    CHECK(masked.size() <= 28);
    CHECK(masked == std::vector<int>{3, 5, 10, 18, 19, 21, 23, 24, 25, 29, 34, 39, 51, 52, 85, 90, 99});
  }
  SECTION("pad positions and lengths never change") {
    SubsequenceSet padded = set;
    padded.lengths = {3, 25, 1, 10};
    for (int i = 0; i < 4; ++i) {
      auto b = padded.block(i);
      std::fill(b.begin() + padded.lengths[i], b.end(), ResidueVocabulary::kPadId);
    }
    Rng rng(77);
    const auto m = apply_noise(padded, NoiseSpec::mask(0.9), rng);
    CHECK(m.lengths == padded.lengths);
    for (int i = 0; i < 4; ++i) {
      for (int t = padded.lengths[i]; t < 25; ++t) CHECK(m.block(i)[t] == ResidueVocabulary::kPadId);
    }
  }
  SECTION("invalid probability") {
    Rng rng(1);
    CHECK_THROWS_AS(apply_noise(set, NoiseSpec::mask(1.5), rng), ValidationError);
  }
}

TEST_CASE("make_pretrain_example") {
  const auto p = protein_of_length(1200, 5);
  const auto cfg = RAcutConfig::make(24, 1200);
  const auto a = make_pretrain_example(p, cfg, NoiseSpec::mask(0.15), 123);
  const auto b = make_pretrain_example(p, cfg, NoiseSpec::mask(0.15), 123);
  CHECK(a == b);
  const auto c = make_pretrain_example(p, cfg, NoiseSpec::mask(0.15), 124);
  CHECK_FALSE(a == c);

  SECTION("inverse shuffle restores the cut order (no noise)") {
    const auto p2 = protein_of_length(100, 8);
    const auto cfg2 = RAcutConfig::make(6, 100);
    const auto ex = make_pretrain_example(p2, cfg2, NoiseSpec::identity(), 99);
    const auto restored = shuffle_apply(ex.shuffled, ex.target.transpose());
    std::vector<TokenId> joined;
    for (int i = 0; i < restored.n; ++i) {
      const auto blk = restored.block(i);
      joined.insert(joined.end(), blk.begin(), blk.begin() + restored.lengths[i]);
    }
    CHECK(joined == p2.tokens);
  }
}

TEST_CASE("dump_example marks padding and masks") {
  const auto p = encode_protein("ACDEFGHIK", ResidueVocabulary{}, 12);
  const auto ex = make_pretrain_example(p, RAcutConfig::make(3, 12), NoiseSpec::mask(1.0), 1);
  std::ostringstream os;
  dump_example(os, ex);
  const auto s = os.str();
  CHECK(s.find("seed=1") != std::string::npos);
  CHECK(s.find('#') != std::string::npos);
  CHECK(s.find("·") != std::string::npos);
}
