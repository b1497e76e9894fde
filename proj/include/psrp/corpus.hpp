#pragma once

// Dataset ingestion and tokenization for proteins and SMILES compounds.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "psrp/error.hpp"

namespace psrp {

using TokenId = std::int32_t;

/// Residue alphabet: 22 canonical letters (the 20 standard amino acids plus
/// selenocysteine U and pyrrolysine O) and one shared class for everything else.
class ResidueVocabulary {
 public:
  static constexpr std::string_view kCanonical = "ACDEFGHIKLMNPQRSTVWYUO";
  static constexpr int kResidueClasses = 23;
  static constexpr TokenId kUnknownId = 22;
  static constexpr TokenId kPadId = 23;
  static constexpr TokenId kMaskId = 24;
  static constexpr int kSize = 25;  // residues + pad + mask
  static constexpr char kUnknownChar = 'X';

  constexpr ResidueVocabulary() {
    table_.fill(kUnknownId);
    for (std::size_t i = 0; i < kCanonical.size(); ++i) {
      table_[static_cast<unsigned char>(kCanonical[i])] = static_cast<TokenId>(i);
    }
  }

  /// Lowercase letters are folded to uppercase before lookup.
  constexpr TokenId id(char c) const {
    const char upper = (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
    return table_[static_cast<unsigned char>(upper)];
  }

  constexpr char symbol(TokenId id) const {
    if (id >= 0 && id < static_cast<TokenId>(kCanonical.size())) return kCanonical[id];
    if (id == kUnknownId) return kUnknownChar;
    if (id == kPadId) return '.';
    if (id == kMaskId) return '#';
    return '?';
  }

  constexpr TokenId pad_id() const { return kPadId; }
  constexpr TokenId mask_id() const { return kMaskId; }

  /// `id<TAB>char` table for all residue classes.
  void write_table(std::ostream& os) const {
    for (TokenId i = 0; i < kResidueClasses; ++i) os << i << '\t' << symbol(i) << '\n';
    os << kPadId << "\t<pad>\n" << kMaskId << "\t<mask>\n";
  }

 private:
  std::array<TokenId, 256> table_{};
};

/// Character-level SMILES alphabet. Id 0 is padding, id 1 is unknown.
class CompoundVocabulary {
 public:
  static constexpr std::string_view kAlphabet =
      "#%()+-./0123456789:=@ABCDEFGHIKLMNOPRSTUVWXYZ[\\]abcdeghiklnoprstuy";
  static constexpr TokenId kPadId = 0;
  static constexpr TokenId kUnknownId = 1;
  static constexpr int kSize = 2 + static_cast<int>(kAlphabet.size());

  constexpr CompoundVocabulary() {
    table_.fill(kUnknownId);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
      table_[static_cast<unsigned char>(kAlphabet[i])] = static_cast<TokenId>(i + 2);
    }
  }

  constexpr TokenId id(char c) const { return table_[static_cast<unsigned char>(c)]; }

  void write_table(std::ostream& os) const {
    os << kPadId << "\t<pad>\n" << kUnknownId << "\t<unk>\n";
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) os << i + 2 << '\t' << kAlphabet[i] << '\n';
  }

 private:
  std::array<TokenId, 256> table_{};
};

struct ProteinRecord {
  std::string raw;  ///< uppercased input; the identity key for split membership
  std::vector<TokenId> tokens;

  bool operator==(const ProteinRecord&) const = default;
};

struct CompoundRecord {
  std::string smiles;
  std::vector<TokenId> tokens;

  bool operator==(const CompoundRecord&) const = default;
};

struct InteractionRecord {
  CompoundRecord compound;
  ProteinRecord protein;
  int label = 0;

  bool operator==(const InteractionRecord&) const = default;
};

/// Proteins used for self-supervised pretraining; duplicates are kept.
struct PretrainDataset {
  std::vector<ProteinRecord> proteins;

  /// Proteins of the CPI training split, one entry per interaction record.
  static PretrainDataset from_training_split(const std::vector<InteractionRecord>& train) {
    PretrainDataset ds;
    ds.proteins.reserve(train.size());
    for (const auto& r : train) ds.proteins.push_back(r.protein);
    return ds;
  }
};

inline constexpr int kDefaultMaxProteinLength = 1200;
inline constexpr int kDefaultMaxAtoms = 290;

inline ProteinRecord encode_protein(std::string_view raw, const ResidueVocabulary& vocab,
                                    int l_max = kDefaultMaxProteinLength) {
  if (raw.empty()) throw ValidationError("encode_protein: empty sequence");
  if (l_max < 1) throw ValidationError("encode_protein: l_max must be positive");
  ProteinRecord rec;
  rec.raw.reserve(raw.size());
  for (char c : raw) rec.raw.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  const std::size_t keep = std::min(raw.size(), static_cast<std::size_t>(l_max));
  rec.tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) rec.tokens.push_back(vocab.id(rec.raw[i]));
  return rec;
}

inline std::string decode_protein(const std::vector<TokenId>& tokens,
                                  const ResidueVocabulary& vocab = {}) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(vocab.symbol(t));
  return out;
}

inline CompoundRecord encode_smiles(std::string_view raw, int max_atoms = kDefaultMaxAtoms,
                                    const CompoundVocabulary& vocab = {}) {
  if (raw.empty()) throw ValidationError("encode_smiles: empty SMILES");
  if (max_atoms < 1) throw ValidationError("encode_smiles: max_atoms must be positive");
  CompoundRecord rec;
  rec.smiles = std::string(raw);
  const std::size_t keep = std::min(raw.size(), static_cast<std::size_t>(max_atoms));
  rec.tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) rec.tokens.push_back(vocab.id(raw[i]));
  return rec;
}

/// Column layout of a tab-separated interaction file.
struct DatasetSchema {
  enum class Header { Auto, Present, Absent };

  int smiles_column = 0;
  int sequence_column = 1;
  int label_column = 2;
  Header header = Header::Auto;
  int l_max = kDefaultMaxProteinLength;
  int max_atoms = kDefaultMaxAtoms;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// False when `s` is not a number. Numeric values other than 0 and 1 yield -1.
inline bool parse_label(std::string_view s, int& out) {
  s = trim(s);
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return false;
  if (v == 0.0) {
    out = 0;
    return true;
  }
  if (v == 1.0) {
    out = 1;
    return true;
  }
  out = -1;
  return true;
}

}  // namespace detail

/// Parses TSV text; `source` names the input in error messages.
inline std::vector<InteractionRecord> parse_dataset_text(std::string_view text,
                                                         const DatasetSchema& schema = {},
                                                         std::string_view source = "<text>") {
  const ResidueVocabulary residues;
  const CompoundVocabulary compounds;
  const int needed =
      1 + std::max({schema.smiles_column, schema.sequence_column, schema.label_column});

  std::vector<InteractionRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool first_data_line = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (detail::trim(line).empty() || line.front() == '#') continue;  // SMILES never start with '#'

    const auto fields = detail::split_tabs(line);
    const auto where = [&] { return std::string(source) + ":" + std::to_string(line_no); };

    if (first_data_line) {
      first_data_line = false;
      if (schema.header == DatasetSchema::Header::Present) continue;
      if (schema.header == DatasetSchema::Header::Auto) {
        int probe = 0;
        if (static_cast<int>(fields.size()) >= needed &&
            !detail::parse_label(fields[schema.label_column], probe)) {
          continue;  // label column is not numeric: header line
        }
      }
    }

    if (static_cast<int>(fields.size()) < needed) {
      throw ParseError(where() + ": expected at least " + std::to_string(needed) +
                       " tab-separated columns, found " + std::to_string(fields.size()));
    }
    int label = 0;
    if (!detail::parse_label(fields[schema.label_column], label)) {
      throw ParseError(where() + ": label '" + std::string(fields[schema.label_column]) +
                       "' is not a number");
    }
    if (label != 0 && label != 1) {
      throw ValidationError(where() + ": label '" +
                            std::string(detail::trim(fields[schema.label_column])) +
                            "' is outside {0,1}");
    }
    const auto smiles = detail::trim(fields[schema.smiles_column]);
    const auto sequence = detail::trim(fields[schema.sequence_column]);
    if (smiles.empty()) throw ValidationError(where() + ": empty SMILES");
    if (sequence.empty()) throw ValidationError(where() + ": empty protein sequence");

    InteractionRecord rec;
    rec.compound = encode_smiles(smiles, schema.max_atoms, compounds);
    rec.protein = encode_protein(sequence, residues, schema.l_max);
    rec.label = label;
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<InteractionRecord> parse_dataset(const std::filesystem::path& path,
                                                    const DatasetSchema& schema = {}) {
  if (!std::filesystem::exists(path)) {
    throw ParseError("dataset file '" + path.string() + "' does not exist");
  }
  return parse_dataset_text(read_file(path), schema, path.string());
}

/// Writes records in the canonical `smiles<TAB>sequence<TAB>label` layout with
/// a header, preceded by `# comment` when one is given.
inline void write_dataset(std::ostream& os, const std::vector<InteractionRecord>& records,
                          std::string_view comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  os << "smiles\tsequence\tlabel\n";
  for (const auto& r : records) {
    os << r.compound.smiles << '\t' << r.protein.raw << '\t' << r.label << '\n';
  }
}

struct EntityCounts {
  std::size_t compounds = 0;
  std::size_t proteins = 0;
};

inline EntityCounts count_distinct_entities(const std::vector<InteractionRecord>& records) {
  std::unordered_set<std::string> comps, prots;
  for (const auto& r : records) {
    comps.insert(r.compound.smiles);
    prots.insert(r.protein.raw);
  }
  return {comps.size(), prots.size()};
}

}  // namespace psrp
