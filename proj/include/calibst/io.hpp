#pragma once

// On-disk formats. All are UTF-8 JSON; line-delimited files start with a
// header object naming the format and version. See docs/formats.md.
//
//   schema       calibst-schema       one JSON document
//   predictions  calibst-predictions  header + one turn per line
//   logits       calibst-logits       header + one turn per line
//   corpus       calibst-corpus       header + one dialogue per line
//   model        calibst-model        one JSON document (one or more members)
//   report       calibst-report       one JSON document

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "calibst/calibration.hpp"
#include "calibst/core_types.hpp"
#include "calibst/losses.hpp"
#include "calibst/metrics.hpp"
#include "calibst/toytracker.hpp"

namespace calibst {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

/// Malformed or inconsistent input data (files, records).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Number formatting (locale independent)

/// General representation with `digits` significant digits, or the
/// shortest exact round-trip form when `digits` is kRoundTrip.
inline constexpr int kRoundTrip = 0;

inline std::string format_number(double v, int digits = kRoundTrip) {
  char buf[64];
  auto res = digits == kRoundTrip
                 ? std::to_chars(buf, buf + sizeof buf, v)
                 : std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Schema

/// FNV-1a over the slot and candidate names; identifies a schema in headers.
inline std::string schema_fingerprint(const SlotSchema& schema) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& slot : schema.slots()) {
    feed(slot.name);
    for (const auto& c : slot.candidates) feed(c);
    feed("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json schema_to_json(const SlotSchema& schema) {
  json slots = json::array();
  for (const auto& s : schema.slots())
    slots.push_back({{"name", s.name}, {"candidates", s.candidates}});
  return {{"format", "calibst-schema"}, {"version", kFormatVersion}, {"slots", slots}};
}

inline void check_header(const json& j, std::string_view format, std::string_view where) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format)
    throw DataError(std::string(where) + ": expected a " + std::string(format) + " header");
  if (!j.contains("version") || j["version"] != kFormatVersion)
    throw DataError(std::string(where) + ": unsupported " + std::string(format) + " version");
}

inline SlotSchema schema_from_json(const json& j) {
  check_header(j, "calibst-schema", "schema");
  if (!j.contains("slots") || !j["slots"].is_array())
    throw DataError("schema: 'slots' must be an array");
  std::vector<Slot> slots;
  for (const auto& s : j["slots"]) {
    if (!s.is_object() || !s.contains("name") || !s.contains("candidates"))
      throw DataError("schema: each slot needs 'name' and 'candidates'");
    slots.push_back({s["name"].get<std::string>(),
                     s["candidates"].get<std::vector<std::string>>()});
  }
  try {
    return SlotSchema(std::move(slots));
  } catch (const DomainError& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
}

inline SlotSchema read_schema(const std::filesystem::path& path) {
  try {
    return schema_from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw DataError("schema '" + path.string() + "': " + e.what());
  }
}

inline void write_schema(const std::filesystem::path& path, const SlotSchema& schema) {
  write_text(path, schema_to_json(schema).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Line-delimited helpers

namespace detail {

inline json line_header(std::string_view format, const SlotSchema& schema) {
  json slots = json::array();
  for (const auto& s : schema.slots())
    slots.push_back({{"name", s.name}, {"candidates", s.candidate_count()}});
  return {{"format", format},
          {"version", kFormatVersion},
          {"schema_fingerprint", schema_fingerprint(schema)},
          {"slots", slots}};
}

/// Header must match `schema`; mismatches name the first offending slot.
inline void check_line_header(const json& h, std::string_view format, const SlotSchema& schema) {
  check_header(h, format, "line 1");
  if (h.contains("slots") && h["slots"].is_array()) {
    for (const auto& s : h["slots"]) {
      const auto name = s.value("name", std::string());
      const auto idx = schema.index_of(name);
      if (!idx) throw DataError("line 1: header references unknown slot '" + name + "'");
      if (s.value("candidates", std::size_t{0}) != schema.slots()[*idx].candidate_count())
        throw DataError("line 1: slot '" + name + "' candidate count differs from schema");
    }
    for (const auto& slot : schema.slots()) {
      bool found = false;
      for (const auto& s : h["slots"]) found = found || s.value("name", std::string()) == slot.name;
      if (!found) throw DataError("line 1: header is missing schema slot '" + slot.name + "'");
    }
  }
  if (h.contains("schema_fingerprint") && h["schema_fingerprint"] != schema_fingerprint(schema))
    throw DataError("line 1: schema fingerprint does not match the schema file");
}

template <typename F>
void for_each_record_line(const std::string& text, std::string_view format,
                          const SlotSchema& schema, F&& f) {
  const auto lines = split_lines(text);
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) throw DomainError("no records");
  try {
    check_line_header(json::parse(lines[first]), format, schema);
  } catch (const json::exception& e) {
    throw DataError("line " + std::to_string(first + 1) + ": " + e.what());
  }
  std::size_t count = 0;
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = "line " + std::to_string(i + 1);
    try {
      f(json::parse(lines[i]), where);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DomainError& e) {
      throw DataError(where + ": " + e.what());
    }
    ++count;
  }
  if (count == 0) throw DomainError("no records");
}

inline std::size_t parse_label(const json& v, const Slot& slot, const std::string& where) {
  if (v.is_number_unsigned() || v.is_number_integer()) {
    const auto i = v.get<long long>();
    if (i < 0 || static_cast<std::size_t>(i) >= slot.candidate_count())
      throw DataError(where + ": label " + std::to_string(i) + " out of range for slot '" +
                      slot.name + "'");
    return static_cast<std::size_t>(i);
  }
  if (v.is_string()) {
    const auto idx = slot.candidate_index(v.get<std::string>());
    if (!idx)
      throw DataError(where + ": unknown value '" + v.get<std::string>() + "' for slot '" +
                      slot.name + "'");
    return *idx;
  }
  throw DataError(where + ": label for slot '" + slot.name + "' must be an index or a value");
}

inline SlotLabels parse_labels(const json& obj, const SlotSchema& schema,
                               const std::string& where) {
  if (!obj.is_object()) throw DataError(where + ": 'labels' must be an object");
  SlotLabels labels;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto idx = schema.index_of(it.key());
    if (!idx) throw DataError(where + ": unknown slot '" + it.key() + "'");
    labels[it.key()] = parse_label(it.value(), schema.slots()[*idx], where);
  }
  for (const auto& s : schema.slots())
    if (!labels.count(s.name)) throw DataError(where + ": missing label for slot '" + s.name + "'");
  return labels;
}

inline void append_array(std::string& out, std::span<const double> v, int digits) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_number(v[i], digits);
  }
  out += ']';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Predictions

inline std::string predictions_to_string(const SlotSchema& schema,
                                         std::span<const PredictionRecord> records) {
  std::string out = detail::line_header("calibst-predictions", schema).dump() + "\n";
  for (const auto& r : records) {
    const auto vs = validate_record(r, schema);
    if (!vs.empty())
      throw DomainError("record " + r.dialogue_id + "/" + std::to_string(r.turn_index) +
                        " invalid: " + describe(vs));
    out += "{\"dialogue_id\":" + json(r.dialogue_id).dump() +
           ",\"turn\":" + std::to_string(r.turn_index) + ",\"belief\":{";
    bool first = true;
    for (const auto& slot : schema.slots()) {
      if (!first) out += ',';
      first = false;
      out += json(slot.name).dump() + ':';
      detail::append_array(out, r.belief.at(slot.name).probs(), kRoundTrip);
    }
    out += "},\"labels\":{";
    first = true;
    for (const auto& slot : schema.slots()) {
      if (!first) out += ',';
      first = false;
      out += json(slot.name).dump() + ':' + std::to_string(r.labels.at(slot.name));
    }
    out += "}}\n";
  }
  return out;
}

inline std::vector<PredictionRecord> predictions_from_string(const std::string& text,
                                                             const SlotSchema& schema) {
  std::vector<PredictionRecord> records;
  detail::for_each_record_line(text, "calibst-predictions", schema,
                               [&](const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("belief") || !j.contains("labels"))
      throw DataError(where + ": record needs 'belief' and 'labels'");
    PredictionRecord r;
    r.dialogue_id = j.value("dialogue_id", std::string());
    r.turn_index = j.value("turn", std::size_t{0});
    RawBelief raw;
    for (auto it = j["belief"].begin(); it != j["belief"].end(); ++it) {
      if (!schema.index_of(it.key())) throw DataError(where + ": unknown slot '" + it.key() + "'");
      raw[it.key()] = it.value().get<std::vector<double>>();
    }
    const auto vs = validate_belief(raw, schema);
    if (!vs.empty()) throw DataError(where + ": " + describe(vs));
    r.belief = make_belief(raw, schema);
    r.labels = detail::parse_labels(j["labels"], schema, where);
    records.push_back(std::move(r));
  });
  return records;
}

inline void write_predictions(const std::filesystem::path& path, const SlotSchema& schema,
                              std::span<const PredictionRecord> records) {
  write_text(path, predictions_to_string(schema, records));
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path,
                                                      const SlotSchema& schema) {
  try {
    return predictions_from_string(read_text(path), schema);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Logits

inline std::string logits_to_string(const SlotSchema& schema,
                                    std::span<const LogitRecord> records) {
  std::string out = detail::line_header("calibst-logits", schema).dump() + "\n";
  for (const auto& r : records) {
    if (r.logits.size() != schema.size() || r.labels.size() != schema.size())
      throw DomainError("logit record does not match schema");
    out += "{\"dialogue_id\":" + json(r.dialogue_id).dump() +
           ",\"turn\":" + std::to_string(r.turn_index) + ",\"logits\":{";
    for (std::size_t s = 0; s < schema.size(); ++s) {
      if (s) out += ',';
      out += json(schema.slots()[s].name).dump() + ':';
      detail::append_array(out, r.logits[s].values(), kRoundTrip);
    }
    out += "},\"labels\":{";
    for (std::size_t s = 0; s < schema.size(); ++s) {
      if (s) out += ',';
      out += json(schema.slots()[s].name).dump() + ':' + std::to_string(r.labels[s]);
    }
    out += "}}\n";
  }
  return out;
}

inline std::vector<LogitRecord> logits_from_string(const std::string& text,
                                                   const SlotSchema& schema) {
  std::vector<LogitRecord> records;
  detail::for_each_record_line(text, "calibst-logits", schema,
                               [&](const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("logits") || !j.contains("labels"))
      throw DataError(where + ": record needs 'logits' and 'labels'");
    LogitRecord r;
    r.dialogue_id = j.value("dialogue_id", std::string());
    r.turn_index = j.value("turn", std::size_t{0});
    for (auto it = j["logits"].begin(); it != j["logits"].end(); ++it)
      if (!schema.index_of(it.key())) throw DataError(where + ": unknown slot '" + it.key() + "'");
    const auto labels = detail::parse_labels(j["labels"], schema, where);
    for (const auto& slot : schema.slots()) {
      if (!j["logits"].contains(slot.name))
        throw DataError(where + ": missing logits for slot '" + slot.name + "'");
      auto z = j["logits"][slot.name].get<std::vector<double>>();
      if (z.size() != slot.candidate_count())
        throw DataError(where + ": slot '" + slot.name + "' has wrong arity");
      r.logits.emplace_back(std::move(z));
      r.labels.push_back(labels.at(slot.name));
    }
    records.push_back(std::move(r));
  });
  return records;
}

/// Every (slot logits, label) pair, pooled over slots, for temperature fitting.
inline std::vector<LabeledLogits> pool_slot_logits(std::span<const LogitRecord> records) {
  std::vector<LabeledLogits> out;
  for (const auto& r : records)
    for (std::size_t s = 0; s < r.logits.size(); ++s) out.push_back({r.logits[s], r.labels[s]});
  return out;
}

// ---------------------------------------------------------------------------
// Corpus

inline std::string corpus_split_to_string(const SlotSchema& schema, std::size_t feature_dim,
                                          std::string_view split,
                                          std::span<const Dialogue> dialogues) {
  json header = detail::line_header("calibst-corpus", schema);
  header["feature_dim"] = feature_dim;
  header["split"] = split;
  std::string out = header.dump() + "\n";
  for (const auto& d : dialogues) {
    out += "{\"dialogue_id\":" + json(d.id).dump() + ",\"turns\":[";
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (t) out += ',';
      out += "{\"features\":";
      detail::append_array(out, d.turns[t].features, kRoundTrip);
      out += ",\"labels\":[";
      for (std::size_t s = 0; s < d.turns[t].labels.size(); ++s) {
        if (s) out += ',';
        out += std::to_string(d.turns[t].labels[s]);
      }
      out += "]}";
    }
    out += "]}\n";
  }
  return out;
}

struct CorpusSplit {
  std::size_t feature_dim = 0;
  std::vector<Dialogue> dialogues;
};

inline CorpusSplit corpus_split_from_string(const std::string& text, const SlotSchema& schema) {
  CorpusSplit out;
  {
    const auto lines = split_lines(text);
    if (lines.empty()) throw DomainError("no records");
    try {
      out.feature_dim = json::parse(lines.front()).value("feature_dim", std::size_t{0});
    } catch (const json::exception& e) {
      throw DataError(std::string("line 1: ") + e.what());
    }
    if (out.feature_dim == 0) throw DataError("line 1: corpus header needs 'feature_dim'");
  }
  detail::for_each_record_line(text, "calibst-corpus", schema,
                               [&](const json& j, const std::string& where) {
    Dialogue d;
    d.id = j.at("dialogue_id").get<std::string>();
    for (const auto& t : j.at("turns")) {
      Turn turn;
      turn.features = t.at("features").get<std::vector<double>>();
      turn.labels = t.at("labels").get<std::vector<std::size_t>>();
      if (turn.features.size() != out.feature_dim)
        throw DataError(where + ": feature vector has wrong length");
      if (turn.labels.size() != schema.size())
        throw DataError(where + ": turn label count differs from schema");
      for (std::size_t s = 0; s < schema.size(); ++s)
        if (turn.labels[s] >= schema.slots()[s].candidate_count())
          throw DataError(where + ": label out of range for slot '" + schema.slots()[s].name + "'");
      d.turns.push_back(std::move(turn));
    }
    out.dialogues.push_back(std::move(d));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Models

inline json loss_to_json(const LossConfig& loss) {
  return {{"kind", to_string(loss.kind)},
          {"alpha", loss.smoothing.alpha},
          {"direction", to_string(loss.direction)},
          {"lambda", loss.bayes.lambda},
          {"concentration_map", to_string(loss.bayes.map)}};
}

inline LossConfig loss_from_json(const json& j) {
  LossConfig c;
  c.kind = parse_loss_kind(j.value("kind", std::string("cross_entropy")));
  c.smoothing.alpha = j.value("alpha", c.smoothing.alpha);
  c.direction = parse_kl_direction(j.value("direction", std::string("standard")));
  c.bayes.lambda = j.value("lambda", c.bayes.lambda);
  c.bayes.map = parse_concentration_map(j.value("concentration_map", std::string("exp")));
  return c;
}

struct ModelBundle {
  LossConfig loss;
  std::vector<ToyModel> members;
};

inline std::string models_to_string(const SlotSchema& schema, const ModelBundle& bundle) {
  if (bundle.members.empty()) throw DomainError("model bundle is empty");
  json members = json::array();
  for (const auto& m : bundle.members) members.push_back(m.flatten());
  const auto& m0 = bundle.members.front();
  json j = {{"format", "calibst-model"},
            {"version", kFormatVersion},
            {"schema_fingerprint", schema_fingerprint(schema)},
            {"feature_dim", m0.feature_dim},
            {"hidden", m0.hidden},
            {"arity", m0.arity},
            {"loss", loss_to_json(bundle.loss)},
            {"members", members}};
  return j.dump() + "\n";
}

inline ModelBundle models_from_string(const std::string& text, const SlotSchema& schema) {
  try {
    const json j = json::parse(text);
    check_header(j, "calibst-model", "model");
    if (j.value("schema_fingerprint", std::string()) != schema_fingerprint(schema))
      throw DataError("model: schema fingerprint does not match the schema file");
    ModelBundle b;
    b.loss = loss_from_json(j.at("loss"));
    const auto dim = j.at("feature_dim").get<std::size_t>();
    const auto hidden = j.at("hidden").get<std::size_t>();
    const auto arity = j.at("arity").get<std::vector<std::size_t>>();
    if (arity != schema_arity(schema)) throw DataError("model: head arity differs from schema");
    for (const auto& p : j.at("members")) {
      ToyModel m = ToyModel::zeros(dim, hidden, arity);
      m.assign(p.get<std::vector<double>>());
      b.members.push_back(std::move(m));
    }
    if (b.members.empty()) throw DataError("model: no members");
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

inline json report_to_json(const MetricReport& r, const MetricOptions& opts,
                           std::string_view label = {}) {
  json top = json::object();
  for (const auto& [n, v] : r.top_n_jga) top[std::to_string(n)] = v;
  json bins = json::array();
  for (std::size_t k = 0; k < r.bins.size(); ++k) {
    json b = {{"lower", r.bins.edges[k]},
              {"upper", r.bins.edges[k + 1]},
              {"count", r.bins.counts[k]}};
    if (r.bins.counts[k]) {
      b["conf"] = r.bins.conf(k);
      b["acc"] = r.bins.acc(k);
      b["confidence_sum"] = r.bins.confidence_sum[k];
      b["correct"] = r.bins.correct[k];
    }
    bins.push_back(b);
  }
  json j = {{"format", "calibst-report"},
            {"version", kFormatVersion},
            {"n_turns", r.n_turns},
            {"jga", r.jga},
            {"top_n_jga", top},
            {"l2", r.l2},
            {"ece", r.ece},
            {"ejce", r.ejce},
            {"bins", bins},
            {"options",
             {{"bins", opts.bins},
              {"relax_threshold", opts.relax_threshold},
              {"top_n_variant", to_string(opts.top_n_variant)},
              {"l2_convention", to_string(opts.l2_convention)}}}};
  if (!label.empty()) j["label"] = label;
  return j;
}

struct NamedReport {
  std::string label;
  MetricReport report;
};

inline MetricReport report_from_json(const json& j) {
  check_header(j, "calibst-report", "report");
  const auto& jb = j.at("bins");
  MetricReport r;
  r.bins = ReliabilityBins(jb.size());
  r.n_turns = j.at("n_turns").get<std::size_t>();
  r.jga = j.at("jga").get<double>();
  for (auto it = j.at("top_n_jga").begin(); it != j.at("top_n_jga").end(); ++it)
    r.top_n_jga[std::stoul(it.key())] = it.value().get<double>();
  r.l2 = j.at("l2").get<double>();
  r.ece = j.at("ece").get<double>();
  r.ejce = j.at("ejce").get<double>();
  for (std::size_t k = 0; k < jb.size(); ++k) {
    r.bins.counts[k] = jb[k].at("count").get<std::size_t>();
    if (!r.bins.counts[k]) continue;
    const double n = static_cast<double>(r.bins.counts[k]);
    r.bins.confidence_sum[k] = jb[k].contains("confidence_sum")
                                   ? jb[k]["confidence_sum"].get<double>()
                                   : jb[k].at("conf").get<double>() * n;
    r.bins.correct[k] = jb[k].contains("correct")
                            ? jb[k]["correct"].get<std::size_t>()
                            : static_cast<std::size_t>(std::llround(jb[k].at("acc").get<double>() * n));
  }
  return r;
}

/// Fixed-width text table of one or more reports, calibration errors x100
/// unless `raw`.
inline std::string format_report_table(std::span<const NamedReport> rows, bool raw = false) {
  if (rows.empty()) return {};
  std::vector<std::size_t> ns;
  for (const auto& [n, v] : rows.front().report.top_n_jga) ns.push_back(n);
  std::size_t label_w = 5;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());

  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l = cells[0] + std::string(label_w - cells[0].size(), ' ');
    for (std::size_t i = 1; i < cells.size(); ++i) l += "  " + pad(cells[i], 9);
    out += l + "\n";
  };
  std::vector<std::string> head = {"model", "turns", "JGA"};
  for (auto n : ns) head.push_back("Top-" + std::to_string(n));
  head.push_back("L2");
  head.push_back(raw ? "ECE" : "ECEx100");
  head.push_back(raw ? "EJCE" : "EJCEx100");
  line(head);
  const double scale = raw ? 1.0 : 100.0;
  for (const auto& [label, r] : rows) {
    std::vector<std::string> cells = {label, std::to_string(r.n_turns),
                                      format_fixed(100.0 * r.jga, 2)};
    for (auto n : ns) {
      auto it = r.top_n_jga.find(n);
      cells.push_back(it == r.top_n_jga.end() ? "-" : format_fixed(100.0 * it->second, 2));
    }
    cells.push_back(format_fixed(r.l2, 4));
    cells.push_back(format_fixed(scale * r.ece, 3));
    cells.push_back(format_fixed(scale * r.ejce, 3));
    line(cells);
  }
  return out;
}

/// Delimited reliability table: bin_lower,bin_upper,count,conf,jga.
inline std::string reliability_csv(const ReliabilityBins& bins) {
  std::string out = "bin_lower,bin_upper,count,conf,jga\n";
  for (std::size_t k = 0; k < bins.size(); ++k) {
    out += format_fixed(bins.edges[k], 4) + ',' + format_fixed(bins.edges[k + 1], 4) + ',' +
           std::to_string(bins.counts[k]) + ',';
    if (bins.counts[k])
      out += format_fixed(bins.conf(k), 6) + ',' + format_fixed(bins.acc(k), 6);
    else
      out += ',';
    out += '\n';
  }
  return out;
}

inline std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Self-contained SVG reliability diagram: accuracy against confidence
/// per nonempty bin, with the identity diagonal.
inline std::string reliability_svg(const ReliabilityBins& bins, std::string_view title = {}) {
  constexpr double size = 400.0, margin = 50.0;
  auto px = [&](double v) { return format_fixed(margin + v * size, 2); };
  auto py = [&](double v) { return format_fixed(margin + (1.0 - v) * size, 2); };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" "
       "viewBox=\"0 0 500 500\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\"/>\n";
  s += "<rect x=\"" + px(0) + "\" y=\"" + py(1) + "\" width=\"400\" height=\"400\" "
       "fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    s += "<text x=\"" + px(v) + "\" y=\"" + format_fixed(margin + size + 18, 2) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + format_fixed(v, 1) + "</text>\n";
    s += "<text x=\"" + format_fixed(margin - 8, 2) + "\" y=\"" + py(v) +
         "\" font-size=\"11\" text-anchor=\"end\" dominant-baseline=\"middle\">" +
         format_fixed(v, 1) + "</text>\n";
  }
  s += "<line id=\"diagonal\" x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(1) +
       "\" y2=\"" + py(1) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  std::string points;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    if (!bins.counts[k]) continue;
    if (!points.empty()) points += ' ';
    points += px(bins.conf(k)) + ',' + py(bins.acc(k));
  }
  if (!points.empty()) {
    s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" + points +
         "\"/>\n";
    for (std::size_t k = 0; k < bins.size(); ++k) {
      if (!bins.counts[k]) continue;
      s += "<circle class=\"bin\" cx=\"" + px(bins.conf(k)) + "\" cy=\"" + py(bins.acc(k)) +
           "\" r=\"4\" fill=\"steelblue\"/>\n";
    }
  }
  s += "<text x=\"250\" y=\"490\" font-size=\"13\" text-anchor=\"middle\">confidence</text>\n";
  s += "<text x=\"14\" y=\"250\" font-size=\"13\" text-anchor=\"middle\" "
       "transform=\"rotate(-90 14 250)\">joint goal accuracy</text>\n";
  if (!title.empty())
    s += "<text x=\"250\" y=\"30\" font-size=\"14\" text-anchor=\"middle\">" + xml_escape(title) +
         "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace calibst
