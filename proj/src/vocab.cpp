#include "punctasr/vocab.hpp"

#include <sstream>

namespace punctasr {

std::string_view punct_class_name(PunctClass c) {
  switch (c) {
    case PunctClass::kO:
      return "O";
    case PunctClass::kComma:
      return "COMMA";
    case PunctClass::kPeriod:
      return "PERIOD";
    case PunctClass::kQuestion:
      return "QUESTION";
  }
  return "?";
}

Vocab Vocab::punctuated(const std::vector<std::string>& words, const PunctSymbols& symbols) {
  std::vector<std::string> tokens;
  tokens.reserve(words.size() + 4);
  tokens.emplace_back(kBlankToken);
  tokens.insert(tokens.end(), words.begin(), words.end());
  tokens.push_back(symbols.comma);
  tokens.push_back(symbols.period);
  tokens.push_back(symbols.question);
  return from_tokens(std::move(tokens), symbols);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens, const PunctSymbols& symbols) {
  if (tokens.empty() || tokens[0] != kBlankToken) {
    throw InvalidInput("vocab: token 0 must be the blank " + std::string(kBlankToken));
  }
  Vocab v;
  v.view_ = VocabView::kPunctuated;
  v.tokens_ = std::move(tokens);
  v.symbols_ = symbols;
  v.index();

  const std::array<std::pair<PunctClass, const std::string*>, 3> marks = {
      {{PunctClass::kComma, &symbols.comma},
       {PunctClass::kPeriod, &symbols.period},
       {PunctClass::kQuestion, &symbols.question}}};
  v.id_to_class_.assign(v.tokens_.size(), -1);
  for (const auto& [cls, sym] : marks) {
    const auto it = v.lookup_.find(*sym);
    if (it == v.lookup_.end()) throw InvalidInput("vocab: missing punctuation token '" + *sym + "'");
    v.class_to_id_[static_cast<int>(cls)] = it->second;
    v.id_to_class_[it->second] = static_cast<std::int8_t>(cls);
  }
  for (TokenId id = 0; id < v.size(); ++id) {
    if (v.id_to_class_[id] >= 0) v.punct_ids_.push_back(id);
  }

  v.to_unpunct_.assign(v.tokens_.size(), -1);
  for (TokenId id = 0; id < v.size(); ++id) {
    if (v.id_to_class_[id] >= 0) continue;
    v.to_unpunct_[id] = static_cast<TokenId>(v.to_punct_.size());
    v.to_punct_.push_back(id);
  }
  return v;
}

void Vocab::index() {
  lookup_.clear();
  for (TokenId id = 0; id < size(); ++id) {
    if (!lookup_.emplace(tokens_[id], id).second) {
      throw InvalidInput("vocab: duplicate token '" + tokens_[id] + "'");
    }
  }
}

Vocab Vocab::unpunctuated() const {
  if (view_ != VocabView::kPunctuated) return *this;
  Vocab u;
  u.view_ = VocabView::kUnpunctuated;
  u.symbols_ = symbols_;
  for (TokenId id : to_punct_) u.tokens_.push_back(tokens_[id]);
  u.index();
  u.id_to_class_.assign(u.tokens_.size(), -1);
  return u;
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains(id)) throw InvalidInput("vocab: unknown token id " + std::to_string(id));
  return tokens_[id];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  const auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  if (auto found = find(token)) return *found;
  throw InvalidInput("vocab: unknown token '" + std::string(token) + "'");
}

bool Vocab::is_punct(TokenId id) const {
  if (!contains(id)) throw InvalidInput("vocab: unknown token id " + std::to_string(id));
  return id_to_class_[id] >= 0;
}

std::optional<PunctClass> Vocab::punct_class(TokenId id) const {
  if (!is_punct(id)) return std::nullopt;
  return static_cast<PunctClass>(id_to_class_[id]);
}

TokenId Vocab::punct_id(PunctClass c) const {
  if (view_ != VocabView::kPunctuated || c == PunctClass::kO) {
    throw InvalidInput("vocab: no token for class " + std::string(punct_class_name(c)));
  }
  return class_to_id_[static_cast<int>(c)];
}

TokenId Vocab::to_unpunctuated(TokenId id) const {
  if (view_ != VocabView::kPunctuated) throw InvalidInput("vocab: to_unpunctuated on unpunctuated view");
  if (!contains(id)) throw InvalidInput("vocab: unknown token id " + std::to_string(id));
  const TokenId mapped = to_unpunct_[id];
  if (mapped < 0) throw InvalidInput("vocab: punctuation token has no unpunctuated id");
  return mapped;
}

TokenId Vocab::to_punctuated(TokenId unpunctuated_id) const {
  if (view_ != VocabView::kPunctuated) throw InvalidInput("vocab: to_punctuated on unpunctuated view");
  if (unpunctuated_id < 0 || unpunctuated_id >= static_cast<TokenId>(to_punct_.size())) {
    throw InvalidInput("vocab: unknown unpunctuated id " + std::to_string(unpunctuated_id));
  }
  return to_punct_[unpunctuated_id];
}

int Vocab::unpunctuated_size() const {
  return view_ == VocabView::kPunctuated ? static_cast<int>(to_punct_.size()) : size();
}

TokenSeq Vocab::encode(const std::vector<std::string>& words) const {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocab::decode(const TokenSeq& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

TokenSeq Vocab::encode_text(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return encode(words);
}

std::string Vocab::decode_text(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

}  // namespace punctasr
