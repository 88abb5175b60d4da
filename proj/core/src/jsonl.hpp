#pragma once

// Internal JSON Lines helpers shared by the file-format code.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"

namespace qurate::jsonl {

using json = nlohmann::json;

// Provenance header lines look like {"header": {...}} and are skipped by readers.
bool is_header(const json& record);

json parse_line(const std::string& line, const std::string& path, std::size_t line_no);

// Reads JSON objects line by line, skipping blank lines.
class Reader {
 public:
  explicit Reader(const std::string& path);
  std::optional<json> next();
  std::size_t line_number() const noexcept { return line_no_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

std::string dump(const json& value);

// Writes to "<path>.tmp" and renames over the target on commit(). An
// uncommitted file is removed on destruction, so failed runs leave no output.
class AtomicWriter {
 public:
  explicit AtomicWriter(std::string path);
  ~AtomicWriter();
  AtomicWriter(const AtomicWriter&) = delete;
  AtomicWriter& operator=(const AtomicWriter&) = delete;

  std::ofstream& stream() noexcept { return out_; }
  void write_line(const json& value);
  void commit();

 private:
  std::string path_;
  std::string tmp_path_;
  std::ofstream out_;
  bool committed_ = false;
};

// Exclusive "<path>.lock" for the lifetime of the object.
class LockFile {
 public:
  explicit LockFile(const std::string& target);
  ~LockFile();
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

[[noreturn]] void fail(const std::string& path, std::size_t line_no, const std::string& what);

// Typed access to a required key; schema violations name the file and line.
template <typename T>
T require(const json& record, const char* key, const std::string& path, std::size_t line_no) {
  const auto it = record.find(key);
  if (it == record.end()) fail(path, line_no, std::string("missing required field \"") + key + "\"");
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    fail(path, line_no, std::string("field \"") + key + "\" has the wrong type");
  }
}

}  // namespace qurate::jsonl
