#include "jsonl.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "qurate/error.hpp"

namespace qurate::jsonl {

bool is_header(const json& record) {
  return record.is_object() && record.size() == 1 && record.contains("header");
}

void fail(const std::string& path, std::size_t line_no, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

json parse_line(const std::string& line, const std::string& path, std::size_t line_no) {
  json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (record.is_discarded()) fail(path, line_no, "malformed JSON");
  if (!record.is_object()) fail(path, line_no, "expected a JSON object");
  return record;
}

Reader::Reader(const std::string& path) : path_(path), in_(path) {
  if (!in_) throw DataError("cannot open " + path);
}

std::optional<json> Reader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    return parse_line(line, path_, line_no_);
  }
  return std::nullopt;
}

std::string dump(const json& value) {
  return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

AtomicWriter::AtomicWriter(std::string path)
    : path_(std::move(path)), tmp_path_(path_ + ".tmp"), out_(tmp_path_, std::ios::binary) {
  if (!out_) throw DataError("cannot open " + tmp_path_ + " for writing");
}

AtomicWriter::~AtomicWriter() {
  if (!committed_) {
    out_.close();
    std::remove(tmp_path_.c_str());
  }
}

void AtomicWriter::write_line(const json& value) { out_ << dump(value) << '\n'; }

void AtomicWriter::commit() {
  out_.flush();
  if (!out_) throw DataError("write failed: " + tmp_path_);
  out_.close();
  if (std::rename(tmp_path_.c_str(), path_.c_str()) != 0) {
    throw DataError("cannot rename " + tmp_path_ + " to " + path_ + ": " + std::strerror(errno));
  }
  committed_ = true;
}

LockFile::LockFile(const std::string& target) : path_(target + ".lock") {
  // flock is dropped by the kernel when the process dies, so a crashed run
  // never leaves a stale lock behind. The inode check guards against a
  // holder unlinking the file between our open and flock.
  for (;;) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw DataError("cannot create lock " + path_ + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      const int err = errno;
      ::close(fd_);
      fd_ = -1;
      if (err == EWOULDBLOCK) throw UsageError("output " + target + " is locked by another run");
      throw DataError("cannot lock " + path_ + ": " + std::strerror(err));
    }
    struct stat held {}, current {};
    if (::fstat(fd_, &held) == 0 && ::stat(path_.c_str(), &current) == 0 && held.st_ino == current.st_ino &&
        held.st_dev == current.st_dev) {
      return;
    }
    ::close(fd_);
  }
}

LockFile::~LockFile() {
  if (fd_ >= 0) {
    ::unlink(path_.c_str());
    ::close(fd_);
  }
}

}  // namespace qurate::jsonl
