#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace qurate {

inline constexpr std::size_t kDefaultMaxSegmentLen = 512;
inline constexpr std::string_view kUnknownDomain = "unknown";

struct Document {
  std::string id;
  std::string text;
  std::string domain{kUnknownDomain};
  std::int64_t token_count = 0;
};

// Splits text into tokens. Tokens are views into the input text, so a
// contiguous run of tokens maps back to a substring of the document.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::string_view name() const noexcept = 0;
  virtual std::vector<std::string_view> tokenize(std::string_view text) const = 0;

  std::int64_t count(std::string_view text) const {
    return static_cast<std::int64_t>(tokenize(text).size());
  }
};

// Splits on ASCII whitespace.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::string_view name() const noexcept override { return "whitespace"; }
  std::vector<std::string_view> tokenize(std::string_view text) const override;
};

// Looks up a tokenizer by name; throws UsageError for unknown names.
std::unique_ptr<Tokenizer> make_tokenizer(std::string_view name);

struct Segment {
  std::string doc_id;
  std::size_t index = 0;
  std::size_t length = 0;  // tokens
  std::string text;        // substring of the document covering the tokens
};

struct ReaderOptions {
  // Reject repeated ids. Costs memory proportional to the number of documents.
  bool check_unique_ids = true;
};

// Streams documents from a JSON Lines corpus file, one record per line:
//   {"id": str, "text": str, "domain"?: str, "token_count"?: int}
// Missing token counts are computed with the tokenizer.
class CorpusReader {
 public:
  CorpusReader(const std::string& path, const Tokenizer& tokenizer,
               ReaderOptions options = {});

  // Next document in file order, or nullopt at end of file. Throws DataError
  // naming the line for malformed records and naming the id for duplicates.
  std::optional<Document> next();

  std::size_t line_number() const noexcept { return line_no_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  const Tokenizer* tokenizer_;
  ReaderOptions options_;
  std::size_t line_no_ = 0;
  std::unordered_set<std::string> seen_;
};

void for_each_document(const std::string& path, const Tokenizer& tokenizer,
                       const std::function<void(Document&&)>& fn,
                       ReaderOptions options = {});

// Id-keyed token counts and domains for a corpus, without the text.
struct DocumentInfo {
  std::int64_t token_count = 0;
  std::string domain;
};

class DocumentIndex {
 public:
  DocumentIndex() = default;

  void add(std::string id, std::int64_t token_count, std::string domain = std::string(kUnknownDomain));
  const DocumentInfo* find(std::string_view id) const;
  const DocumentInfo& at(std::string_view id) const;  // throws DataError
  std::size_t size() const noexcept { return info_.size(); }
  const std::vector<std::string>& ids() const noexcept { return order_; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, DocumentInfo, StringHash, std::equal_to<>> info_;
  std::vector<std::string> order_;
};

DocumentIndex index_corpus(const std::string& path, const Tokenizer& tokenizer);

// Cuts a document's token stream into contiguous segments of at most
// max_segment_len tokens; all but the last are full length.
std::vector<Segment> segment_document(const Document& doc, const Tokenizer& tokenizer,
                                      std::size_t max_segment_len = kDefaultMaxSegmentLen);

struct SegmentScore {
  double score = 0.0;
  std::int64_t length = 0;
};

// Length-weighted mean of segment scores.
double aggregate_rating(std::span<const SegmentScore> segment_scores);

}  // namespace qurate
