#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deeprnn/adam.hpp"
#include "deeprnn/corpus.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn {

/// One validation save-point.
struct ValidationRecord {
  std::size_t phase = 0;
  std::size_t update = 0;
  Real cross_entropy = 0;
  Real metric = 0;  // selection metric (BLEU, or negated cross-entropy)
  std::string note;

  friend bool operator==(const ValidationRecord&, const ValidationRecord&) = default;
};

/// Training state at a save-point: parameters, optimizer moments, counters,
/// data position and validation history.
struct Checkpoint {
  ModelSpec spec;
  ParamStore params;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  AdamState adam;
  std::size_t update_count = 0;
  std::size_t epoch = 0;
  std::size_t cursor = 0;
  std::uint64_t data_hash = 0;
  std::uint64_t seed = 0;
  std::size_t phase = 0;
  std::vector<ValidationRecord> history;

  Model model() const { return Model(spec, params); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr const char* kCheckpointTag = "#deeprnn-checkpoint v1";

namespace detail {

inline std::string format_real(Real v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Real parse_real(const std::string& s) {
  Real v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad real '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad integer '" + s + "'");
  }
  return v;
}

// Notes are single-line free text; escape the field separator and newlines.
inline std::string escape_note(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else if (c == ',') out += "\\c";
    else out += c;
  }
  return out;
}

inline std::string unescape_note(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out += n == 'n' ? '\n' : n == 'c' ? ',' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << " f64 " << t.rows() << " " << t.cols() << "\n";
  for (Real v : t.values()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  out << "\n";
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  bool done() const { return pos_ >= data_.size(); }

  std::string line() {
    if (done()) throw DataError("checkpoint: unexpected end of file");
    const std::size_t end = data_.find('\n', pos_);
    if (end == std::string::npos) throw DataError("checkpoint: unterminated line");
    std::string l = data_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return l;
  }

  std::pair<std::string, std::string> pair(const std::string& expected_key) {
    std::string l = line();
    const std::size_t eq = l.find('=');
    if (eq == std::string::npos || l.substr(0, eq) != expected_key) {
      throw DataError("checkpoint: expected '" + expected_key + "=', got '" + l + "'");
    }
    return {l.substr(0, eq), l.substr(eq + 1)};
  }

  std::string value(const std::string& key) { return pair(key).second; }

  Tensor tensor_payload(std::size_t rows, std::size_t cols) {
    const std::size_t bytes = rows * cols * 8;
    if (pos_ + bytes + 1 > data_.size()) throw DataError("checkpoint: truncated tensor payload");
    std::vector<Real> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i * 8 + static_cast<std::size_t>(b)]))
                << (8 * b);
      }
      values[i] = std::bit_cast<Real>(bits);
    }
    pos_ += bytes;
    if (data_[pos_] != '\n') throw DataError("checkpoint: tensor payload not terminated");
    ++pos_;
    return Tensor({rows, cols}, std::move(values));
  }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialized layout: a text header (tag line, `[spec]`, `[state]`,
/// `[history]`, `[src_vocab]`, `[tgt_vocab]` sections) followed by a
/// `[tensors]` section of `tensor <name> f64 <rows> <cols>` lines, each
/// followed by rows*cols little-endian IEEE-754 doubles and a newline.
inline std::string serialize_checkpoint(const Checkpoint& c) {
  using detail::format_real;
  std::ostringstream os(std::ios::binary);
  os << kCheckpointTag << "\n[spec]\n" << c.spec.to_text();
  os << "[state]\n"
     << "update_count=" << c.update_count << "\n"
     << "epoch=" << c.epoch << "\n"
     << "cursor=" << c.cursor << "\n"
     << "data_hash=" << c.data_hash << "\n"
     << "seed=" << c.seed << "\n"
     << "phase=" << c.phase << "\n"
     << "adam_t=" << c.adam.t << "\n"
     << "adam_beta1=" << format_real(c.adam.beta1) << "\n"
     << "adam_beta2=" << format_real(c.adam.beta2) << "\n"
     << "adam_epsilon=" << format_real(c.adam.epsilon) << "\n";
  os << "[history]\ncount=" << c.history.size() << "\n";
  for (const auto& r : c.history) {
    os << "record=" << r.phase << "," << r.update << "," << format_real(r.cross_entropy) << ","
       << format_real(r.metric) << "," << detail::escape_note(r.note) << "\n";
  }
  for (const auto& [section, vocab] :
       {std::pair<const char*, const Vocabulary*>{"src_vocab", &c.src_vocab}, {"tgt_vocab", &c.tgt_vocab}}) {
    os << "[" << section << "]\ncount=" << vocab->size() << "\n";
    for (const auto& tok : vocab->tokens()) os << tok << "\n";
  }
  const std::size_t n_tensors = c.params.size() + c.adam.m.size() + c.adam.v.size();
  os << "[tensors]\ncount=" << n_tensors << "\n";
  for (const auto& [name, t] : c.params) detail::write_tensor(os, "param/" + name, t);
  for (const auto& [name, t] : c.adam.m) detail::write_tensor(os, "adam_m/" + name, t);
  for (const auto& [name, t] : c.adam.v) detail::write_tensor(os, "adam_v/" + name, t);
  return os.str();
}

inline Checkpoint deserialize_checkpoint(std::string bytes) {
  using detail::parse_real;
  using detail::parse_uint;
  detail::Reader in(std::move(bytes));
  if (in.line() != kCheckpointTag) throw DataError("checkpoint: missing or unsupported version tag");
  if (in.line() != "[spec]") throw DataError("checkpoint: missing [spec]");
  std::map<std::string, std::string> spec_kv;
  for (std::string l = in.line(); l != "[state]"; l = in.line()) {
    const std::size_t eq = l.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: bad spec line '" + l + "'");
    spec_kv[l.substr(0, eq)] = l.substr(eq + 1);
  }
  Checkpoint c;
  c.spec = ModelSpec::from_pairs(spec_kv);
  c.update_count = parse_uint(in.value("update_count"));
  c.epoch = parse_uint(in.value("epoch"));
  c.cursor = parse_uint(in.value("cursor"));
  c.data_hash = parse_uint(in.value("data_hash"));
  c.seed = parse_uint(in.value("seed"));
  c.phase = parse_uint(in.value("phase"));
  c.adam.t = parse_uint(in.value("adam_t"));
  c.adam.beta1 = parse_real(in.value("adam_beta1"));
  c.adam.beta2 = parse_real(in.value("adam_beta2"));
  c.adam.epsilon = parse_real(in.value("adam_epsilon"));

  if (in.line() != "[history]") throw DataError("checkpoint: missing [history]");
  const std::size_t n_hist = parse_uint(in.value("count"));
  for (std::size_t i = 0; i < n_hist; ++i) {
    std::string rec = in.value("record");
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const std::size_t comma = rec.find(',', start);
      if (comma == std::string::npos) throw DataError("checkpoint: bad history record");
      fields.push_back(rec.substr(start, comma - start));
      start = comma + 1;
    }
    fields.push_back(rec.substr(start));
    c.history.push_back({parse_uint(fields[0]), parse_uint(fields[1]), parse_real(fields[2]),
                         parse_real(fields[3]), detail::unescape_note(fields[4])});
  }
  for (const auto& [section, vocab] :
       {std::pair<std::string, Vocabulary*>{"[src_vocab]", &c.src_vocab}, {"[tgt_vocab]", &c.tgt_vocab}}) {
    if (in.line() != section) throw DataError("checkpoint: missing " + section);
    const std::size_t n = parse_uint(in.value("count"));
    Vocabulary v;
    for (std::size_t i = 0; i < n; ++i) {
      std::string tok = in.line();
      if (i < 2) {
        if (v.token(static_cast<int>(i)) != tok) throw DataError("checkpoint: reserved symbols differ");
        continue;
      }
      v.add(tok);
    }
    *vocab = std::move(v);
  }
  if (in.line() != "[tensors]") throw DataError("checkpoint: missing [tensors]");
  const std::size_t n_tensors = parse_uint(in.value("count"));
  for (std::size_t i = 0; i < n_tensors; ++i) {
    std::istringstream header(in.line());
    std::string kw, name, dtype;
    std::size_t rows = 0, cols = 0;
    header >> kw >> name >> dtype >> rows >> cols;
    if (kw != "tensor" || dtype != "f64" || rows == 0 || cols == 0) {
      throw DataError("checkpoint: bad tensor header for '" + name + "'");
    }
    Tensor t = in.tensor_payload(rows, cols);
    if (name.rfind("param/", 0) == 0) {
      c.params.set(name.substr(6), std::move(t));
    } else if (name.rfind("adam_m/", 0) == 0) {
      c.adam.m.emplace(name.substr(7), std::move(t));
    } else if (name.rfind("adam_v/", 0) == 0) {
      c.adam.v.emplace(name.substr(7), std::move(t));
    } else {
      throw DataError("checkpoint: unknown tensor '" + name + "'");
    }
  }
  if (!in.done()) throw DataError("checkpoint: trailing data");
  Model check(c.spec, c.params);  // validates parameter shapes against the spec
  if (c.src_vocab.size() != static_cast<std::size_t>(c.spec.src_vocab) ||
      c.tgt_vocab.size() != static_cast<std::size_t>(c.spec.tgt_vocab)) {
    throw DataError("checkpoint: vocabulary sizes disagree with the model spec");
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  const std::string bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace deeprnn
