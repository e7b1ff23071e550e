#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlmuq/trace.hpp"

namespace dlmuq {

/// Malformed trace stream. `offset` is the byte offset of the offending line
/// in the (decompressed) stream.
class TraceFormatError : public TraceError {
 public:
  TraceFormatError(const std::string& what, std::uint64_t offset,
                   std::optional<std::string> instance_id = std::nullopt);
  std::uint64_t offset() const { return offset_; }
  const std::optional<std::string>& instance_id() const { return instance_id_; }

 private:
  std::uint64_t offset_;
  std::optional<std::string> instance_id_;
};

class VersionMismatchError : public TraceError {
 public:
  explicit VersionMismatchError(int found);
  int found() const { return found_; }

 private:
  int found_;
};

nlohmann::json header_to_json(const TraceHeader& header);
TraceHeader header_from_json(const nlohmann::json& j);
nlohmann::json trace_to_json(const InstanceTrace& trace);
InstanceTrace trace_from_json(const nlohmann::json& j, std::shared_ptr<const TraceHeader> header);

/// Line source over a byte stream; transparently inflates gzip input
/// (detected by its magic bytes).
class LineReader {
 public:
  explicit LineReader(std::istream& in);
  ~LineReader();
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  /// Next line without its terminator; `offset` receives its start offset.
  /// `complete` is false when the stream ended before a newline.
  bool next(std::string& line, std::uint64_t& offset, bool& complete);
  bool gzip() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Streaming reader: the header is parsed on construction, traces are
/// materialized one at a time by next().
class TraceReader {
 public:
  explicit TraceReader(std::istream& in);

  const std::shared_ptr<const TraceHeader>& header() const { return header_; }
  std::optional<InstanceTrace> next();

 private:
  LineReader lines_;
  std::shared_ptr<const TraceHeader> header_;
};

/// Streaming writer. Traces must share the writer's header and pass
/// validate(); otherwise write() throws before emitting anything.
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, TraceHeader header, bool gzip = false);
  ~TraceWriter();
  TraceWriter(const TraceWriter&) = delete;
  TraceWriter& operator=(const TraceWriter&) = delete;

  void write(const InstanceTrace& trace);
  void finish();

 private:
  void emit(const std::string& line);

  std::ostream& out_;
  TraceHeader header_;
  struct Deflater;
  std::unique_ptr<Deflater> deflater_;
  bool finished_ = false;
};

std::vector<InstanceTrace> read_traces(std::istream& in);
/// Writes a header line and one line per trace. An empty sequence requires
/// an explicit header.
void write_traces(std::span<const InstanceTrace> traces, std::ostream& out,
                  const std::optional<TraceHeader>& header = std::nullopt, bool gzip = false);

}  // namespace dlmuq
