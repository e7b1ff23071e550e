#include "dlmuq/trace_io.hpp"

#include <array>
#include <istream>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <zlib.h>

namespace dlmuq {

using nlohmann::json;

TraceFormatError::TraceFormatError(const std::string& what, std::uint64_t offset,
                                   std::optional<std::string> instance_id)
    : TraceError(fmt::format("{} (byte offset {}{})", what, offset,
                             instance_id ? ", instance '" + *instance_id + "'" : std::string())),
      offset_(offset),
      instance_id_(std::move(instance_id)) {}

VersionMismatchError::VersionMismatchError(int found)
    : TraceError(fmt::format("trace format version {} is not supported (expected {})", found,
                             kTraceFormatVersion)),
      found_(found) {}

namespace {

void require_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) {
      throw std::invalid_argument(fmt::format("unknown key '{}' in {}", item.key(), what));
    }
  }
}

}  // namespace

json header_to_json(const TraceHeader& h) {
  return json{{"format_version", h.format_version},
              {"model_name", h.model_name},
              {"task", h.task},
              {"max_steps_per_block", h.max_steps_per_block},
              {"block_length", h.block_length},
              {"num_blocks", h.num_blocks},
              {"vocab",
               {{"entries", h.vocab.entries},
                {"mask_id", h.vocab.mask_id},
                {"special_ids", h.vocab.special_ids}}}};
}

TraceHeader header_from_json(const json& j) {
  if (!j.is_object() || !j.contains("format_version")) {
    throw std::invalid_argument("header lacks format_version");
  }
  const int version = j.at("format_version").get<int>();
  if (version != kTraceFormatVersion) throw VersionMismatchError(version);
  require_keys(j, {"format_version", "model_name", "task", "max_steps_per_block", "block_length",
                   "num_blocks", "vocab"},
               "header");
  TraceHeader h;
  h.format_version = version;
  h.model_name = j.at("model_name").get<std::string>();
  h.task = j.at("task").get<std::string>();
  h.max_steps_per_block = j.at("max_steps_per_block").get<int>();
  h.block_length = j.at("block_length").get<int>();
  h.num_blocks = j.at("num_blocks").get<int>();
  const json& v = j.at("vocab");
  require_keys(v, {"entries", "mask_id", "special_ids"}, "vocab");
  h.vocab.entries = v.at("entries").get<std::vector<std::string>>();
  h.vocab.mask_id = v.at("mask_id").get<TokenId>();
  h.vocab.special_ids = v.at("special_ids").get<std::vector<TokenId>>();
  if (h.max_steps_per_block < 1 || h.block_length < 1 || h.num_blocks < 1) {
    throw std::invalid_argument("header dimensions must be positive");
  }
  if (!h.vocab.contains(h.vocab.mask_id)) throw std::invalid_argument("mask_id outside vocab");
  for (TokenId id : h.vocab.special_ids) {
    if (!h.vocab.contains(id)) throw std::invalid_argument("special id outside vocab");
  }
  return h;
}

json trace_to_json(const InstanceTrace& t) {
  json steps = json::array();
  for (const auto& rec : t.steps) {
    json positions = json::array();
    for (const auto& o : rec.positions) {
      positions.push_back({{"position", o.position},
                           {"argmax_token", o.argmax_token},
                           {"argmax_logprob", o.argmax_logprob},
                           {"entropy", o.entropy},
                           {"was_masked", o.was_masked},
                           {"committed_now", o.committed_now},
                           {"remasked_now", o.remasked_now}});
    }
    steps.push_back({{"block", rec.block}, {"step", rec.step}, {"positions", std::move(positions)}});
  }
  json samples = json::array();
  for (const auto& s : t.mc_samples) {
    samples.push_back({{"sample_index", s.sample_index},
                       {"l", s.l},
                       {"masked_positions", s.masked_positions},
                       {"sum_logprob", s.sum_logprob}});
  }
  json j{{"instance_id", t.instance_id},
         {"final_tokens", t.final_tokens},
         {"steps", std::move(steps)},
         {"steps_per_block", t.steps_per_block},
         {"nfe", t.nfe},
         {"mc_samples", std::move(samples)}};
  if (t.precomputed_similarity) {
    json sims = json::array();
    for (const auto& [key, sim] : *t.precomputed_similarity) {
      sims.push_back(
          {{"view", to_string(key.view)}, {"block", key.block}, {"step", key.step}, {"sim", sim}});
    }
    j["precomputed_similarity"] = std::move(sims);
  }
  return j;
}

InstanceTrace trace_from_json(const json& j, std::shared_ptr<const TraceHeader> header) {
  require_keys(j,
               {"instance_id", "final_tokens", "steps", "steps_per_block", "nfe", "mc_samples",
                "precomputed_similarity"},
               "instance");
  InstanceTrace t;
  t.header = std::move(header);
  t.instance_id = j.at("instance_id").get<std::string>();
  t.final_tokens = j.at("final_tokens").get<std::vector<std::vector<TokenId>>>();
  for (const json& s : j.at("steps")) {
    require_keys(s, {"block", "step", "positions"}, "step record");
    StepRecord rec;
    rec.block = s.at("block").get<int>();
    rec.step = s.at("step").get<int>();
    for (const json& p : s.at("positions")) {
      require_keys(p,
                   {"position", "argmax_token", "argmax_logprob", "entropy", "was_masked",
                    "committed_now", "remasked_now"},
                   "position observation");
      PositionObs o;
      o.position = p.at("position").get<int>();
      o.argmax_token = p.at("argmax_token").get<TokenId>();
      o.argmax_logprob = p.at("argmax_logprob").get<double>();
      o.entropy = p.at("entropy").get<double>();
      o.was_masked = p.at("was_masked").get<bool>();
      o.committed_now = p.at("committed_now").get<bool>();
      o.remasked_now = p.at("remasked_now").get<bool>();
      rec.positions.push_back(o);
    }
    t.steps.push_back(std::move(rec));
  }
  if (j.contains("steps_per_block")) t.steps_per_block = j.at("steps_per_block").get<std::vector<int>>();
  t.nfe = j.at("nfe").get<int>();
  if (j.contains("mc_samples")) {
    for (const json& s : j.at("mc_samples")) {
      require_keys(s, {"sample_index", "l", "masked_positions", "sum_logprob"}, "mc sample");
      MCMaskSample m;
      m.sample_index = s.at("sample_index").get<int>();
      m.l = s.at("l").get<int>();
      m.masked_positions = s.at("masked_positions").get<std::vector<int>>();
      m.sum_logprob = s.at("sum_logprob").get<double>();
      t.mc_samples.push_back(std::move(m));
    }
  }
  if (j.contains("precomputed_similarity") && !j.at("precomputed_similarity").is_null()) {
    PrecomputedSimilarity sims;
    for (const json& s : j.at("precomputed_similarity")) {
      require_keys(s, {"view", "block", "step", "sim"}, "precomputed similarity");
      SimilarityKey key{view_from_string(s.at("view").get<std::string>()), s.at("block").get<int>(),
                        s.at("step").get<int>()};
      sims[key] = s.at("sim").get<double>();
    }
    t.precomputed_similarity = std::move(sims);
  }
  return t;
}

// ---------------------------------------------------------------------------

struct LineReader::Impl {
  std::istream& in;
  bool gz = false;
  bool eof = false;
  z_stream zs{};
  std::array<char, 1 << 16> raw{};
  std::array<char, 1 << 16> plain{};
  std::string pending;  // decoded bytes not yet split into lines
  std::size_t pos = 0;
  std::uint64_t consumed = 0;  // decoded bytes before pending[pos]

  explicit Impl(std::istream& s) : in(s) {
    const int c0 = in.peek();
    if (c0 == 0x1f) {
      in.get();
      const int c1 = in.peek();
      in.putback(static_cast<char>(c0));
      gz = (c1 == 0x8b);
    }
    if (gz) {
      if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw TraceError("zlib initialization failed");
    }
  }
  ~Impl() {
    if (gz) inflateEnd(&zs);
  }

  // Appends more decoded bytes to `pending`; false at end of input.
  bool fill() {
    if (eof) return false;
    if (!gz) {
      in.read(plain.data(), plain.size());
      const auto got = in.gcount();
      if (got <= 0) {
        eof = true;
        return false;
      }
      pending.append(plain.data(), static_cast<std::size_t>(got));
      return true;
    }
    for (;;) {
      if (zs.avail_in == 0) {
        in.read(raw.data(), raw.size());
        const auto got = in.gcount();
        if (got <= 0) {
          eof = true;
          return false;
        }
        zs.next_in = reinterpret_cast<Bytef*>(raw.data());
        zs.avail_in = static_cast<uInt>(got);
      }
      zs.next_out = reinterpret_cast<Bytef*>(plain.data());
      zs.avail_out = static_cast<uInt>(plain.size());
      const int rc = inflate(&zs, Z_NO_FLUSH);
      if (rc != Z_OK && rc != Z_STREAM_END) {
        throw TraceFormatError("corrupt gzip stream", consumed + pending.size() - pos);
      }
      const std::size_t produced = plain.size() - zs.avail_out;
      pending.append(plain.data(), produced);
      if (rc == Z_STREAM_END) {
        // Concatenated gzip members are allowed.
        inflateReset(&zs);
      }
      if (produced > 0) return true;
    }
  }
};

LineReader::LineReader(std::istream& in) : impl_(std::make_unique<Impl>(in)) {}
LineReader::~LineReader() = default;
bool LineReader::gzip() const { return impl_->gz; }

bool LineReader::next(std::string& line, std::uint64_t& offset, bool& complete) {
  Impl& s = *impl_;
  for (;;) {
    const auto nl = s.pending.find('\n', s.pos);
    if (nl != std::string::npos) {
      offset = s.consumed;
      line.assign(s.pending, s.pos, nl - s.pos);
      s.consumed += nl - s.pos + 1;
      s.pos = nl + 1;
      complete = true;
      return true;
    }
    // Compact before reading more.
    s.pending.erase(0, s.pos);
    s.pos = 0;
    if (!s.fill()) {
      if (s.pending.empty()) return false;
      offset = s.consumed;
      line = std::move(s.pending);
      s.consumed += line.size();
      s.pending.clear();
      complete = false;
      return true;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

TraceReader::TraceReader(std::istream& in) : lines_(in) {
  std::string line;
  std::uint64_t offset = 0;
  bool complete = false;
  do {
    if (!lines_.next(line, offset, complete)) throw TraceFormatError("missing header line", 0);
  } while (is_blank(line));
  try {
    header_ = std::make_shared<const TraceHeader>(header_from_json(json::parse(line)));
  } catch (const VersionMismatchError&) {
    throw;
  } catch (const std::exception& e) {
    throw TraceFormatError(std::string("malformed header: ") + e.what(), offset);
  }
}

std::optional<InstanceTrace> TraceReader::next() {
  std::string line;
  std::uint64_t offset = 0;
  bool complete = false;
  do {
    if (!lines_.next(line, offset, complete)) return std::nullopt;
  } while (is_blank(line));
  json j;
  try {
    j = json::parse(line);
  } catch (const std::exception& e) {
    throw TraceFormatError(complete ? std::string("malformed record: ") + e.what()
                                    : std::string("truncated record"),
                           offset);
  }
  std::optional<std::string> id;
  if (j.is_object() && j.contains("instance_id") && j["instance_id"].is_string()) {
    id = j["instance_id"].get<std::string>();
  }
  try {
    return trace_from_json(j, header_);
  } catch (const std::exception& e) {
    throw TraceFormatError(std::string("malformed record: ") + e.what(), offset, id);
  }
}

// ---------------------------------------------------------------------------

struct TraceWriter::Deflater {
  z_stream zs{};
  std::array<char, 1 << 16> buf{};

  Deflater() {
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK) {
      throw TraceError("zlib initialization failed");
    }
  }
  ~Deflater() { deflateEnd(&zs); }

  void pump(std::ostream& out, const char* data, std::size_t n, int flush) {
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
    zs.avail_in = static_cast<uInt>(n);
    int rc = Z_OK;
    do {
      zs.next_out = reinterpret_cast<Bytef*>(buf.data());
      zs.avail_out = static_cast<uInt>(buf.size());
      rc = deflate(&zs, flush);
      out.write(buf.data(), static_cast<std::streamsize>(buf.size() - zs.avail_out));
    } while (zs.avail_out == 0 || (flush == Z_FINISH && rc != Z_STREAM_END));
  }
};

TraceWriter::TraceWriter(std::ostream& out, TraceHeader header, bool gzip)
    : out_(out), header_(std::move(header)) {
  if (header_.format_version != kTraceFormatVersion) throw VersionMismatchError(header_.format_version);
  if (gzip) deflater_ = std::make_unique<Deflater>();
  emit(header_to_json(header_).dump());
}

TraceWriter::~TraceWriter() {
  try {
    finish();
  } catch (...) {
  }
}

void TraceWriter::emit(const std::string& line) {
  const std::string data = line + "\n";
  if (deflater_) {
    deflater_->pump(out_, data.data(), data.size(), Z_NO_FLUSH);
  } else {
    out_ << data;
  }
}

void TraceWriter::write(const InstanceTrace& trace) {
  if (finished_) throw TraceError("write after finish");
  if (!trace.header || !(*trace.header == header_)) {
    throw TraceError("trace '" + trace.instance_id + "' does not share the stream header");
  }
  const auto violations = validate(trace);
  if (!violations.empty()) {
    throw TraceError(fmt::format("trace '{}' refused: {} violation(s), first: {} at {}",
                                 trace.instance_id, violations.size(), violations[0].invariant,
                                 violations[0].location));
  }
  emit(trace_to_json(trace).dump());
}

void TraceWriter::finish() {
  if (finished_) return;
  finished_ = true;
  if (deflater_) deflater_->pump(out_, nullptr, 0, Z_FINISH);
  out_.flush();
}

std::vector<InstanceTrace> read_traces(std::istream& in) {
  TraceReader reader(in);
  std::vector<InstanceTrace> out;
  while (auto t = reader.next()) out.push_back(std::move(*t));
  return out;
}

void write_traces(std::span<const InstanceTrace> traces, std::ostream& out,
                  const std::optional<TraceHeader>& header, bool gzip) {
  TraceHeader h;
  if (header) {
    h = *header;
  } else if (!traces.empty() && traces.front().header) {
    h = *traces.front().header;
  } else {
    throw TraceError("write_traces needs a header for an empty trace sequence");
  }
  for (const auto& t : traces) {
    if (!t.header || !(*t.header == h)) {
      throw TraceError("inconsistent headers: trace '" + t.instance_id + "' differs");
    }
    // Refuse the whole batch before anything reaches the stream.
    const auto violations = validate(t);
    if (!violations.empty()) {
      throw TraceError(fmt::format("trace '{}' refused: {} violation(s), first: {} at {}", t.instance_id,
                                   violations.size(), violations[0].invariant, violations[0].location));
    }
  }
  TraceWriter writer(out, std::move(h), gzip);
  for (const auto& t : traces) writer.write(t);
  writer.finish();
}

}  // namespace dlmuq
