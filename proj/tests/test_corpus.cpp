#include <catch_amalgamated.hpp>

#include <set>
#include <string>

#include "psrp/corpus.hpp"
#include "test_util.hpp"

using namespace psrp;

TEST_CASE("residue vocabulary has 23 residue classes plus distinct pad and mask") {
  const ResidueVocabulary v;
  std::set<TokenId> ids;
  for (char c : ResidueVocabulary::kCanonical) ids.insert(v.id(c));
  CHECK(ids.size() == 22);
  ids.insert(v.id('X'));
  ids.insert(v.id('B'));
  ids.insert(v.id('*'));
  CHECK(ids.size() == 23);
  CHECK(*ids.rbegin() == 22);
  CHECK(v.pad_id() != v.mask_id());
  CHECK(ids.count(v.pad_id()) == 0);
  CHECK(ids.count(v.mask_id()) == 0);
}

TEST_CASE("encode_protein maps letters through the table") {
  const ResidueVocabulary v;
  const auto rec = encode_protein("ACD", v);
  CHECK(rec.tokens == std::vector<TokenId>{0, 1, 2});
  CHECK(rec.raw == "ACD");

  SECTION("X and other unknown letters share the unknown class") {
    const auto r = encode_protein("AXBZ", v);
    CHECK(r.tokens == std::vector<TokenId>{0, 22, 22, 22});
  }
  SECTION("lowercase is folded") {
    CHECK(encode_protein("acd", v).tokens == rec.tokens);
    CHECK(encode_protein("acd", v).raw == "ACD");
  }
  SECTION("truncation keeps the head") {
    std::string s(1300, 'A');
    for (std::size_t i = 1200; i < 1300; ++i) s[i] = 'W';
    const auto r = encode_protein(s, v, 1200);
    REQUIRE(r.tokens.size() == 1200);
    CHECK(std::all_of(r.tokens.begin(), r.tokens.end(), [](TokenId t) { return t == 0; }));
  }
  SECTION("empty input rejected") { CHECK_THROWS_AS(encode_protein("", v), ValidationError); }
}

TEST_CASE("decode_protein round-trips canonical sequences") {
  const ResidueVocabulary v;
  const std::string s = "MKTAYIAKQRQISFVKSHFSRQUO";
  CHECK(decode_protein(encode_protein(s, v).tokens) == s);
  CHECK(decode_protein(encode_protein("mktay", v).tokens) == "MKTAY");
}

TEST_CASE("encode_smiles is character level") {
  const CompoundVocabulary v;
  const auto r = encode_smiles("CCO", 290, v);
  REQUIRE(r.tokens.size() == 3);
  CHECK(r.tokens[0] == r.tokens[1]);
  CHECK(r.tokens[0] != r.tokens[2]);
  CHECK(encode_smiles("C&C", 290, v).tokens[1] == CompoundVocabulary::kUnknownId);
  CHECK(encode_smiles(std::string(300, 'C'), 290, v).tokens.size() == 290);
  CHECK_THROWS_AS(encode_smiles("", 290, v), ValidationError);
}

TEST_CASE("parse_dataset_text") {
  SECTION("three lines give three records in order") {
    const auto recs = parse_dataset_text("CCO\tMKV\t1\nCCN\tAAAA\t0\nC\tWWW\t1.0\n");
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].compound.smiles == "CCO");
    CHECK(recs[1].protein.raw == "AAAA");
    CHECK(recs[2].label == 1);
    CHECK(recs[1].label == 0);
  }
  SECTION("header detected automatically") {
    const auto recs = parse_dataset_text("smiles\tsequence\tlabel\nCCO\tMKV\t1\n");
    CHECK(recs.size() == 1);
  }
  SECTION("comment lines are skipped") {
    CHECK(parse_dataset_text("# seed=3\nsmiles\tsequence\tlabel\nCCO\tMKV\t1\n").size() == 1);
  }
  SECTION("label 2 is a validation error naming the line") {
    try {
      parse_dataset_text("CCO\tMKV\t1\nCCN\tAAA\t2\n", {}, "data.tsv");
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("data.tsv:2") != std::string::npos);
    }
  }
  SECTION("non-numeric label after the first line is a parse error") {
    CHECK_THROWS_AS(parse_dataset_text("CCO\tMKV\t1\nCCN\tAAA\tyes\n"), ParseError);
  }
  SECTION("too few columns") { CHECK_THROWS_AS(parse_dataset_text("CCO\tMKV\n"), ParseError); }
  SECTION("protein tokens never contain pad or mask") {
    const auto recs = parse_dataset_text("CCO\tMK*VX.\t1\n");
    for (auto t : recs[0].protein.tokens) CHECK(t < ResidueVocabulary::kResidueClasses);
  }
}

TEST_CASE("parse_dataset reads files and names missing paths") {
  testutil::TempDir dir("corpus");
  const auto path = dir / "d.tsv";
  testutil::write_file(path, "CCO\tMKV\t1\nCCN\tMKV\t0\n");
  const auto a = parse_dataset(path);
  const auto b = parse_dataset(path);
  CHECK(a == b);
  CHECK(count_distinct_entities(a).compounds == 2);
  CHECK(count_distinct_entities(a).proteins == 1);
  try {
    parse_dataset(dir / "missing.tsv");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("missing.tsv") != std::string::npos);
  }
}

TEST_CASE("write_dataset output parses back to the same records") {
  const auto recs = parse_dataset_text("CCO\tMKV\t1\nc1ccccc1\tAAAA\t0\n");
  std::ostringstream os;
  write_dataset(os, recs, "seed=1");
  CHECK(parse_dataset_text(os.str()) == recs);
}

TEST_CASE("PretrainDataset uses the training split's proteins") {
  const auto recs = parse_dataset_text("CCO\tMKV\t1\nCCN\tAAAA\t0\n");
  const auto ds = PretrainDataset::from_training_split(recs);
  REQUIRE(ds.proteins.size() == 2);
  CHECK(ds.proteins[1].raw == "AAAA");
}
