#include "qurate/corpus.hpp"

#include <numeric>

#include "jsonl.hpp"
#include "qurate/error.hpp"

namespace qurate {
namespace {

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::vector<std::string_view> WhitespaceTokenizer::tokenize(std::string_view text) const {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < n && !is_space(text[i])) ++i;
    if (i > start) tokens.push_back(text.substr(start, i - start));
  }
  return tokens;
}

std::unique_ptr<Tokenizer> make_tokenizer(std::string_view name) {
  if (name == "whitespace") return std::make_unique<WhitespaceTokenizer>();
  throw UsageError("unknown tokenizer \"" + std::string(name) + "\"");
}

CorpusReader::CorpusReader(const std::string& path, const Tokenizer& tokenizer,
                           ReaderOptions options)
    : path_(path), in_(path), tokenizer_(&tokenizer), options_(options) {
  if (!in_) throw DataError("cannot open corpus " + path);
}

std::optional<Document> CorpusReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto record = jsonl::parse_line(line, path_, line_no_);
    if (jsonl::is_header(record)) continue;

    Document doc;
    doc.id = jsonl::require<std::string>(record, "id", path_, line_no_);
    doc.text = jsonl::require<std::string>(record, "text", path_, line_no_);
    if (record.contains("domain")) {
      doc.domain = jsonl::require<std::string>(record, "domain", path_, line_no_);
    }
    if (record.contains("token_count")) {
      doc.token_count = jsonl::require<std::int64_t>(record, "token_count", path_, line_no_);
      if (doc.token_count < 0) jsonl::fail(path_, line_no_, "negative token_count");
    } else {
      doc.token_count = tokenizer_->count(doc.text);
    }
    if (options_.check_unique_ids && !seen_.insert(doc.id).second) {
      throw DataError(path_ + ":" + std::to_string(line_no_) + ": duplicate document id \"" +
                      doc.id + "\"");
    }
    return doc;
  }
  return std::nullopt;
}

void for_each_document(const std::string& path, const Tokenizer& tokenizer,
                       const std::function<void(Document&&)>& fn, ReaderOptions options) {
  CorpusReader reader(path, tokenizer, options);
  while (auto doc = reader.next()) fn(std::move(*doc));
}

void DocumentIndex::add(std::string id, std::int64_t token_count, std::string domain) {
  auto [it, inserted] = info_.try_emplace(id, DocumentInfo{token_count, std::move(domain)});
  if (!inserted) throw DataError("duplicate document id \"" + id + "\"");
  order_.push_back(std::move(id));
}

const DocumentInfo* DocumentIndex::find(std::string_view id) const {
  const auto it = info_.find(id);
  return it == info_.end() ? nullptr : &it->second;
}

const DocumentInfo& DocumentIndex::at(std::string_view id) const {
  if (const auto* info = find(id)) return *info;
  throw DataError("document \"" + std::string(id) + "\" is not in the corpus");
}

DocumentIndex index_corpus(const std::string& path, const Tokenizer& tokenizer) {
  DocumentIndex index;
  // The index itself rejects duplicates, so the reader need not track ids.
  for_each_document(
      path, tokenizer,
      [&](Document&& doc) { index.add(std::move(doc.id), doc.token_count, std::move(doc.domain)); },
      ReaderOptions{.check_unique_ids = false});
  return index;
}

std::vector<Segment> segment_document(const Document& doc, const Tokenizer& tokenizer,
                                      std::size_t max_segment_len) {
  if (max_segment_len < 1) throw UsageError("max_segment_len must be at least 1");
  const auto tokens = tokenizer.tokenize(doc.text);
  if (tokens.empty()) throw DataError("empty document \"" + doc.id + "\"");

  const char* base = doc.text.data();
  std::vector<Segment> segments;
  segments.reserve((tokens.size() + max_segment_len - 1) / max_segment_len);
  for (std::size_t start = 0; start < tokens.size(); start += max_segment_len) {
    const std::size_t end = std::min(tokens.size(), start + max_segment_len);
    const auto first = static_cast<std::size_t>(tokens[start].data() - base);
    const auto last = static_cast<std::size_t>(tokens[end - 1].data() - base) + tokens[end - 1].size();
    segments.push_back(Segment{doc.id, segments.size(), end - start, doc.text.substr(first, last - first)});
  }
  return segments;
}

double aggregate_rating(std::span<const SegmentScore> segment_scores) {
  if (segment_scores.empty()) throw DataError("no segments");
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& s : segment_scores) {
    if (s.length < 1) throw DataError("segment length must be at least 1");
    weighted += s.score * static_cast<double>(s.length);
    total += static_cast<double>(s.length);
  }
  return weighted / total;
}

}  // namespace qurate
