#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "labwatch/detail/strings.hpp"
#include "labwatch/error.hpp"

namespace labwatch {

enum class Verdict { Normal, Anomalous, Uncertain };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Normal: return "normal";
    case Verdict::Anomalous: return "anomalous";
    case Verdict::Uncertain: return "uncertain";
  }
  return "uncertain";
}

inline Verdict verdict_from_string(std::string_view s) {
  if (s == "normal") return Verdict::Normal;
  if (s == "anomalous") return Verdict::Anomalous;
  if (s == "uncertain") return Verdict::Uncertain;
  fail(ErrorKind::Constraint, "unknown verdict token \"" + std::string(s) + "\"");
}

// Parsed decision with the trace of how it was reached.
struct Judgment {
  Verdict verdict = Verdict::Uncertain;
  std::string rationale;     // reasoning portion of the response
  std::string matched_rule;  // "r1".."r4", or "none" when no rule fired
  size_t conclusion_begin = 0;  // character range of the conclusion scope
  size_t conclusion_end = 0;
};

// ---------------------------------------------------------------------------
// Rule table
//
// Scope selection:
//   S1  If the text contains a conclusion marker ("conclusion:",
//       "final answer:", "verdict:", "judgment:", case-insensitive), the
//       scope is the text after the LAST marker. Each earlier marker opens
//       its own scope (up to the next marker) for the contradiction check
//       in R4.
//   S2  Without any marker, the scope is the last two sentences.
//
// Within a scope, matching is case-insensitive and word-based: phrases match
// sequences of word tokens, and a sequence is broken by sentence punctuation
// (.,;:!?) between its words. Precedence, highest first:
//   R1  Uncertainty phrase ("cannot determine", "cannot tell", "unclear",
//       "not sure", "uncertain", "insufficient")        -> Uncertain
//   R2  Negated anomaly ("no anomaly", "no anomalies", "not abnormal",
//       "not anomalous", "no issue", or any R3 keyword negated by
//       no/not/none/never/without/cannot within the three preceding words
//       of the same clause), and the affirmative form "normal" directly
//       preceded by is/appears/looks or standing as the first word after
//       a conclusion marker ("Conclusion: normal.")     -> Normal
//   R3  Positive anomaly keyword ("anomaly detected", "anomalous",
//       "abnormal", "anomaly"), not negated             -> Anomalous
//       A negated R2 match outranks R3 in the same scope.
//   R4  Conflict: an affirmative-normal R2 match and an R3 match in
//       disjoint clauses (no negation links them), or multiple conclusion
//       markers whose scopes yield contradictory verdicts -> Uncertain
// No rule firing yields Uncertain with matched_rule "none".
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  std::string text;     // lowercased word
  size_t begin = 0;     // offsets into the original response
  size_t end = 0;
  bool barrier_before = false;  // sentence punctuation between this and the previous token
};

inline std::vector<Token> tokenize(std::string_view text, size_t from, size_t to) {
  std::vector<Token> tokens;
  bool barrier = false;
  size_t i = from;
  while (i < to) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      size_t start = i;
      std::string word;
      while (i < to && std::isalnum(static_cast<unsigned char>(text[i]))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        ++i;
      }
      tokens.push_back({std::move(word), start, i, barrier});
      barrier = false;
    } else {
      if (c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' ||
          c == '\n')
        barrier = true;
      ++i;
    }
  }
  return tokens;
}

// Phrase = consecutive tokens with no sentence punctuation between them.
inline bool phrase_at(const std::vector<Token>& tokens, size_t pos,
                      const std::vector<std::string_view>& phrase) {
  if (pos + phrase.size() > tokens.size()) return false;
  for (size_t k = 0; k < phrase.size(); ++k) {
    if (tokens[pos + k].text != phrase[k]) return false;
    if (k > 0 && tokens[pos + k].barrier_before) return false;
  }
  return true;
}

inline bool is_negator(const std::string& word) {
  return word == "no" || word == "not" || word == "none" || word == "never" ||
         word == "without" || word == "cannot";
}

// A keyword occurrence is negated when a negator appears within the three
// preceding words and no clause boundary lies between them.
inline bool negated_at(const std::vector<Token>& tokens, size_t pos) {
  for (size_t back = 1; back <= 3 && back <= pos; ++back) {
    size_t at = pos - back;
    if (tokens[at + 1].barrier_before) return false;  // crossed a clause boundary
    if (is_negator(tokens[at].text)) return true;
  }
  return false;
}

struct ScopeVerdict {
  Verdict verdict = Verdict::Uncertain;
  std::string rule = "none";
};

inline ScopeVerdict evaluate_scope(const std::vector<Token>& tokens, bool after_marker) {
  using SV = std::vector<std::string_view>;
  static const std::vector<SV> uncertainty = {
      {"cannot", "determine"}, {"cannot", "tell"}, {"unclear"},
      {"not", "sure"},         {"uncertain"},      {"insufficient"}};
  static const std::vector<SV> negated_anomaly = {
      {"no", "anomaly"}, {"no", "anomalies"}, {"not", "abnormal"},
      {"not", "anomalous"}, {"no", "issue"}};
  static const std::vector<SV> positive_anomaly = {
      {"anomaly", "detected"}, {"anomalous"}, {"abnormal"}, {"anomaly"}};

  bool strong_normal = false;   // explicit negation of an anomaly keyword
  bool weak_normal = false;     // affirmative "is/appears/looks normal"
  bool anomalous = false;

  for (size_t pos = 0; pos < tokens.size(); ++pos) {
    for (const auto& phrase : uncertainty)
      if (phrase_at(tokens, pos, phrase)) return {Verdict::Uncertain, "r1"};
    for (const auto& phrase : negated_anomaly)
      if (phrase_at(tokens, pos, phrase)) strong_normal = true;
    if (tokens[pos].text == "normal") {
      if (pos == 0 && after_marker) {
        weak_normal = true;
      } else if (pos > 0 && !tokens[pos].barrier_before) {
        const std::string& prev = tokens[pos - 1].text;
        if (prev == "is" || prev == "appears" || prev == "looks") weak_normal = true;
      }
    }
    for (const auto& phrase : positive_anomaly) {
      if (phrase_at(tokens, pos, phrase)) {
        if (negated_at(tokens, pos))
          strong_normal = true;
        else
          anomalous = true;
        break;  // longest-first list; one classification per position
      }
    }
  }

  if (strong_normal) return {Verdict::Normal, "r2"};
  if (weak_normal && anomalous) return {Verdict::Uncertain, "r4"};
  if (weak_normal) return {Verdict::Normal, "r2"};
  if (anomalous) return {Verdict::Anomalous, "r3"};
  return {Verdict::Uncertain, "none"};
}

inline std::vector<size_t> find_markers(const std::string& lowered,
                                        std::vector<size_t>& lengths) {
  static constexpr std::string_view markers[] = {"conclusion:", "final answer:",
                                                 "verdict:", "judgment:"};
  std::vector<std::pair<size_t, size_t>> hits;  // (position, length)
  for (std::string_view m : markers) {
    size_t at = 0;
    while ((at = lowered.find(m, at)) != std::string::npos) {
      hits.emplace_back(at, m.size());
      at += m.size();
    }
  }
  std::sort(hits.begin(), hits.end());
  std::vector<size_t> positions;
  lengths.clear();
  for (auto [pos, len] : hits) {
    positions.push_back(pos);
    lengths.push_back(len);
  }
  return positions;
}

// Last two sentences of the text; sentences end at . ! ? or newline.
inline size_t fallback_scope_begin(std::string_view text) {
  std::vector<size_t> starts;
  bool in_sentence = false;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool boundary = (c == '.' || c == '!' || c == '?' || c == '\n');
    if (!in_sentence && !boundary && !is_space(c)) {
      starts.push_back(i);
      in_sentence = true;
    } else if (in_sentence && boundary) {
      in_sentence = false;
    }
  }
  if (starts.empty()) return 0;
  return starts.size() >= 2 ? starts[starts.size() - 2] : starts[0];
}

}  // namespace detail

// Convert a free-text model response into a three-way verdict. Total and
// deterministic: every input maps to a verdict, pathological input to
// Uncertain.
inline Judgment parse_judgment(std::string_view response_text) {
  std::string text(response_text);
  std::string lowered = detail::to_lower(text);

  Judgment out;
  std::vector<size_t> marker_lengths;
  std::vector<size_t> markers = detail::find_markers(lowered, marker_lengths);

  if (!markers.empty()) {
    // Evaluate every marker scope; the last one is authoritative unless the
    // scopes contradict each other outright.
    std::vector<detail::ScopeVerdict> verdicts;
    for (size_t i = 0; i < markers.size(); ++i) {
      size_t begin = markers[i] + marker_lengths[i];
      size_t end = (i + 1 < markers.size()) ? markers[i + 1] : text.size();
      verdicts.push_back(
          detail::evaluate_scope(detail::tokenize(text, begin, end), /*after_marker=*/true));
    }
    bool any_normal = false, any_anomalous = false;
    for (const auto& sv : verdicts) {
      any_normal |= sv.verdict == Verdict::Normal;
      any_anomalous |= sv.verdict == Verdict::Anomalous;
    }
    out.conclusion_begin = markers.back();
    out.conclusion_end = text.size();
    if (any_normal && any_anomalous) {
      out.verdict = Verdict::Uncertain;
      out.matched_rule = "r4";
    } else {
      out.verdict = verdicts.back().verdict;
      out.matched_rule = verdicts.back().rule;
    }
  } else {
    size_t begin = detail::fallback_scope_begin(text);
    auto sv = detail::evaluate_scope(detail::tokenize(text, begin, text.size()),
                                     /*after_marker=*/false);
    out.verdict = sv.verdict;
    out.matched_rule = sv.rule;
    out.conclusion_begin = begin;
    out.conclusion_end = text.size();
  }

  std::string_view before(text.data(), out.conclusion_begin);
  out.rationale = std::string(detail::trim(before));
  if (out.rationale.empty()) out.rationale = std::string(detail::trim(text));
  return out;
}

// Corpus check: run the parser over annotated responses and report agreement.
struct CorpusItem {
  std::string text;
  Verdict expected;
};

struct AgreementRow {
  Verdict expected;
  Verdict actual;
  std::string matched_rule;
  bool agree = false;
};

struct AgreementReport {
  std::vector<AgreementRow> rows;
  size_t agreements = 0;
  double agreement_fraction = 0.0;
};

inline AgreementReport parse_corpus(const std::vector<CorpusItem>& corpus) {
  if (corpus.empty()) fail(ErrorKind::Config, "parse_corpus requires a non-empty corpus");
  AgreementReport report;
  for (const auto& item : corpus) {
    Judgment j = parse_judgment(item.text);
    bool agree = j.verdict == item.expected;
    report.rows.push_back({item.expected, j.verdict, j.matched_rule, agree});
    if (agree) ++report.agreements;
  }
  report.agreement_fraction =
      static_cast<double>(report.agreements) / static_cast<double>(corpus.size());
  return report;
}

}  // namespace labwatch
