#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "punctasr/types.hpp"

namespace punctasr {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Class of the mark that follows a word. O means no mark.
enum class PunctClass : std::uint8_t { kO = 0, kComma = 1, kPeriod = 2, kQuestion = 3 };

inline constexpr int kNumPunctClasses = 4;
inline constexpr std::array<PunctClass, 3> kMarkClasses = {PunctClass::kComma, PunctClass::kPeriod,
                                                           PunctClass::kQuestion};

std::string_view punct_class_name(PunctClass c);

enum class VocabView : std::uint8_t { kPunctuated, kUnpunctuated };

// Surface strings of the three marks. Locale variants (e.g. "、", "。") are
// just different strings here.
struct PunctSymbols {
  std::string comma = ",";
  std::string period = ".";
  std::string question = "?";
};

// Token inventory for one view. Id 0 is always the blank "<b>". The
// punctuated view owns the mapping to and from the unpunctuated view, which
// drops the marks and renumbers the remaining tokens in order.
class Vocab {
 public:
  static constexpr std::string_view kBlankToken = "<b>";

  // Builds the punctuated view: blank, the words in order, then the marks.
  static Vocab punctuated(const std::vector<std::string>& words, const PunctSymbols& symbols = {});

  // Builds a punctuated view from an explicit token list; tokens[0] must be
  // the blank and every mark listed in symbols must be present.
  static Vocab from_tokens(std::vector<std::string> tokens, const PunctSymbols& symbols);

  Vocab unpunctuated() const;

  VocabView view() const { return view_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId blank_id() const { return kBlankId; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(TokenId id) const { return id >= 0 && id < size(); }

  const std::vector<TokenId>& punct_ids() const { return punct_ids_; }
  bool is_punct(TokenId id) const;
  std::optional<PunctClass> punct_class(TokenId id) const;
  TokenId punct_id(PunctClass c) const;
  const PunctSymbols& symbols() const { return symbols_; }

  // Punctuated view only. Maps a non-mark id to the unpunctuated view and back.
  TokenId to_unpunctuated(TokenId id) const;
  TokenId to_punctuated(TokenId unpunctuated_id) const;
  int unpunctuated_size() const;

  TokenSeq encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const TokenSeq& ids) const;

  // Space-separated convenience forms.
  TokenSeq encode_text(std::string_view text) const;
  std::string decode_text(const TokenSeq& ids) const;

 private:
  Vocab() = default;
  void index();

  VocabView view_ = VocabView::kPunctuated;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::vector<TokenId> punct_ids_;
  std::array<TokenId, 4> class_to_id_{-1, -1, -1, -1};
  std::vector<std::int8_t> id_to_class_;  // -1 for non-marks
  PunctSymbols symbols_;
  std::vector<TokenId> to_unpunct_;  // -1 for marks
  std::vector<TokenId> to_punct_;
};

}  // namespace punctasr
