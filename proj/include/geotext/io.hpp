#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geotext/analytics.hpp"
#include "geotext/em.hpp"
#include "geotext/model.hpp"
#include "geotext/pipeline.hpp"

namespace geotext {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset container (JSON, version 1)

inline json dataset_to_json(const Dataset& data) {
  json root;
  root["format"] = "geotext-dataset";
  root["version"] = 1;
  root["dictionary"] = data.dictionary.words;
  json records = json::array();
  for (const HashtagRecord& rec : data.records) {
    json r;
    r["id"] = rec.id;
    r["word_index"] = rec.counts.index;
    r["word_count"] = rec.counts.count;
    r["geo_sum"] = {rec.geo_sum.x(), rec.geo_sum.y(), rec.geo_sum.z()};
    r["n_geo"] = rec.n_geo;
    records.push_back(std::move(r));
  }
  root["records"] = std::move(records);
  return root;
}

inline Dataset dataset_from_json(const json& root) {
  if (root.value("format", "") != "geotext-dataset" || root.value("version", 0) != 1)
    throw std::invalid_argument("dataset_from_json: unrecognized container");
  Dataset data;
  data.dictionary.words = root.at("dictionary").get<std::vector<std::string>>();
  for (const json& r : root.at("records")) {
    HashtagRecord rec;
    rec.id = r.at("id").get<std::string>();
    rec.counts.index = r.at("word_index").get<std::vector<int32_t>>();
    rec.counts.count = r.at("word_count").get<std::vector<int64_t>>();
    for (int64_t c : rec.counts.count) rec.counts.total += c;
    const auto gs = r.at("geo_sum").get<std::vector<double>>();
    if (gs.size() != 3) throw std::invalid_argument("dataset_from_json: bad geo_sum");
    rec.geo_sum = Vec3(gs[0], gs[1], gs[2]);
    rec.n_geo = r.at("n_geo").get<int64_t>();
    data.records.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Model snapshot (JSON, version 1). Doubles survive a round trip bit-exactly;
// the bound anchor is stored factored (psi_i = anchor_scores' anchor_coeffs_i).

namespace detail {

inline json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& rows, Eigen::Index exp_rows,
                                 Eigen::Index exp_cols) {
  MatrixXd m(exp_rows, exp_cols);
  if (static_cast<Eigen::Index>(rows.size()) != exp_rows)
    throw std::invalid_argument("model_from_json: matrix row mismatch");
  for (Eigen::Index r = 0; r < exp_rows; ++r) {
    const json& row = rows[r];
    if (static_cast<Eigen::Index>(row.size()) != exp_cols)
      throw std::invalid_argument("model_from_json: matrix column mismatch");
    for (Eigen::Index c = 0; c < exp_cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

}  // namespace detail

inline json model_to_json(const ModelState& st) {
  json root;
  root["format"] = "geotext-model";
  root["version"] = 1;
  root["k"] = st.k();
  root["p"] = st.p();
  root["d"] = static_cast<int64_t>(st.word_dim());
  root["coeffs"] = detail::matrix_to_json(st.coeffs);
  json events = json::array();
  for (const EventGeo& e : st.events) {
    json ev;
    ev["beta"] = {e.beta.x(), e.beta.y(), e.beta.z()};
    ev["s"] = e.s;
    ev["b"] = {e.b.x(), e.b.y(), e.b.z()};
    ev["r"] = e.r;
    events.push_back(std::move(ev));
  }
  root["events"] = std::move(events);
  root["x"] = detail::matrix_to_json(st.word_scores.X);
  root["f_inv"] = detail::matrix_to_json(st.word_scores.F_inv);
  root["delta"] = detail::matrix_to_json(st.word_scores.Delta);
  root["kappa"] = std::vector<double>(st.kappas.data(), st.kappas.data() + st.kappas.size());
  root["anchor_scores"] = detail::matrix_to_json(st.anchor.scores);
  root["anchor_coeffs"] = detail::matrix_to_json(st.anchor.coeffs);
  return root;
}

inline ModelState model_from_json(const json& root) {
  if (root.value("format", "") != "geotext-model" || root.value("version", 0) != 1)
    throw std::invalid_argument("model_from_json: unrecognized container");
  const auto k = root.at("k").get<Eigen::Index>();
  const auto p = root.at("p").get<Eigen::Index>();
  const auto d = root.at("d").get<Eigen::Index>();
  if (k < 1 || p < 1 || d < 2) throw std::invalid_argument("model_from_json: bad dimensions");
  ModelState st;
  st.coeffs = detail::matrix_from_json(root.at("coeffs"), k, p);
  for (const json& ev : root.at("events")) {
    EventGeo e;
    const auto beta = ev.at("beta").get<std::vector<double>>();
    const auto b = ev.at("b").get<std::vector<double>>();
    if (beta.size() != 3 || b.size() != 3)
      throw std::invalid_argument("model_from_json: bad event direction");
    e.beta = UnitVec3(Vec3(beta[0], beta[1], beta[2]));
    e.b = UnitVec3(Vec3(b[0], b[1], b[2]));
    e.s = ev.at("s").get<double>();
    e.r = ev.at("r").get<double>();
    st.events.push_back(e);
  }
  if (static_cast<Eigen::Index>(st.events.size()) != k)
    throw std::invalid_argument("model_from_json: event count mismatch");
  st.word_scores.X = detail::matrix_from_json(root.at("x"), k, d - 1);
  st.word_scores.F_inv = detail::matrix_from_json(root.at("f_inv"), k, k);
  st.word_scores.Delta = detail::matrix_from_json(root.at("delta"), k, k);
  const auto kappa = root.at("kappa").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(kappa.size()) != p)
    throw std::invalid_argument("model_from_json: kappa length mismatch");
  st.kappas = Eigen::Map<const VectorXd>(kappa.data(), p);
  st.anchor.scores = detail::matrix_from_json(root.at("anchor_scores"), k, d - 1);
  st.anchor.coeffs = detail::matrix_from_json(root.at("anchor_coeffs"), k, p);
  return st;
}

// ---------------------------------------------------------------------------
// Ground truth and raw geotags (JSON, version 1)

inline json truth_to_json(const GroundTruth& truth) {
  json root;
  root["format"] = "geotext-truth";
  root["version"] = 1;
  root["word_scores"] = detail::matrix_to_json(truth.word_scores);
  root["directions"] = detail::matrix_to_json(truth.directions);
  root["coeffs"] = detail::matrix_to_json(truth.coeffs);
  root["kappa"] =
      std::vector<double>(truth.kappas.data(), truth.kappas.data() + truth.kappas.size());
  root["primary_event"] = truth.primary_event;
  return root;
}

inline std::vector<int> truth_labels_from_json(const json& root) {
  if (root.value("format", "") != "geotext-truth" || root.value("version", 0) != 1)
    throw std::invalid_argument("truth_labels_from_json: unrecognized container");
  return root.at("primary_event").get<std::vector<int>>();
}

inline json raw_geotags_to_json(const Dataset& data,
                                const std::vector<std::vector<UnitVec3>>& geo) {
  if (geo.size() != data.records.size())
    throw std::invalid_argument("raw_geotags_to_json: size mismatch");
  json root;
  root["format"] = "geotext-geotags";
  root["version"] = 1;
  json tags = json::array();
  for (size_t i = 0; i < geo.size(); ++i) {
    json entry;
    entry["id"] = data.records[i].id;
    json pts = json::array();
    for (const UnitVec3& w : geo[i]) {
      const GeoCoordinate g = cartesian_to_geo(w);
      pts.push_back({g.lat_deg, g.lon_deg});
    }
    entry["points"] = std::move(pts);
    tags.push_back(std::move(entry));
  }
  root["hashtags"] = std::move(tags);
  return root;
}

/// Loads raw geotags and aligns them with the dataset's record order.
inline std::vector<std::vector<UnitVec3>> raw_geotags_from_json(const json& root,
                                                                const Dataset& data) {
  if (root.value("format", "") != "geotext-geotags" || root.value("version", 0) != 1)
    throw std::invalid_argument("raw_geotags_from_json: unrecognized container");
  std::unordered_map<std::string, const json*> by_id;
  for (const json& entry : root.at("hashtags")) by_id[entry.at("id").get<std::string>()] = &entry;
  std::vector<std::vector<UnitVec3>> out(data.records.size());
  for (size_t i = 0; i < data.records.size(); ++i) {
    const auto it = by_id.find(data.records[i].id);
    if (it == by_id.end())
      throw std::invalid_argument("raw_geotags_from_json: missing hashtag " +
                                  data.records[i].id);
    for (const json& pt : it->second->at("points")) {
      if (pt.size() != 2) throw std::invalid_argument("raw_geotags_from_json: bad point");
      out[i].push_back(
          geo_to_cartesian(GeoCoordinate::of(pt[0].get<double>(), pt[1].get<double>())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File helpers

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_json_file(const std::string& path, const json& root) {
  write_text_file(path, root.dump() + "\n");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return json::parse(in);
}

// ---------------------------------------------------------------------------
// CSV emitters. Doubles are printed with max_digits10 so files are
// reproducible and lossless.

namespace detail {
inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string trace_to_csv(const FitTrace& trace) {
  std::ostringstream out;
  out << "iteration,objective,vmf_e_ms,vmf_m_ms,mult_e_ms,mult_m_ms,coeff_ms,"
         "objective_ms,total_ms,qp_iterations,warnings\n";
  for (size_t i = 0; i < trace.iterations.size(); ++i) {
    const IterationStats& s = trace.iterations[i];
    out << (i + 1) << ',' << detail::csv_double(s.objective) << ','
        << detail::csv_double(s.vmf_e_ms) << ',' << detail::csv_double(s.vmf_m_ms) << ','
        << detail::csv_double(s.mult_e_ms) << ',' << detail::csv_double(s.mult_m_ms) << ','
        << detail::csv_double(s.coeff_ms) << ',' << detail::csv_double(s.objective_ms) << ','
        << detail::csv_double(s.total_ms) << ',' << s.qp_iterations << ',' << s.warnings
        << '\n';
  }
  return out.str();
}

inline std::string assignments_to_csv(const std::vector<RoundResult>& rounds,
                                      const Dataset& original) {
  std::ostringstream out;
  out << "hashtag,round,event,coeff\n";
  for (const RoundResult& r : rounds)
    for (const HashtagAssignment& a : r.assigned)
      out << original.records[a.original].id << ',' << r.round << ',' << a.event << ','
          << detail::csv_double(a.coeff) << '\n';
  return out.str();
}

inline std::string mds_to_csv(const Dataset& data, const MatrixXd& coords,
                              const Clustering& labels) {
  if (coords.rows() != data.p() || labels.n() != data.p())
    throw std::invalid_argument("mds_to_csv: size mismatch");
  std::ostringstream out;
  out << "hashtag,x,y,label\n";
  for (int i = 0; i < data.p(); ++i)
    out << data.records[i].id << ',' << detail::csv_double(coords(i, 0)) << ','
        << detail::csv_double(coords.cols() > 1 ? coords(i, 1) : 0.0) << ','
        << labels.labels[i] << '\n';
  return out.str();
}

inline std::string gof_to_csv(const std::vector<GofRow>& rows) {
  std::ostringstream out;
  out << "event,n,excluded,fused_mean,fused_lo,fused_hi,baseline_mean,baseline_lo,"
         "baseline_hi\n";
  for (const GofRow& r : rows)
    out << r.event << ',' << r.n << ',' << r.excluded << ','
        << detail::csv_double(r.fused_mean) << ',' << detail::csv_double(r.fused_lo) << ','
        << detail::csv_double(r.fused_hi) << ',' << detail::csv_double(r.baseline_mean) << ','
        << detail::csv_double(r.baseline_lo) << ',' << detail::csv_double(r.baseline_hi)
        << '\n';
  return out.str();
}

inline json reports_to_json(const std::vector<EventReport>& reports, int round) {
  json arr = json::array();
  for (const EventReport& rep : reports) {
    json r;
    r["round"] = round;
    r["event"] = rep.event;
    json words = json::array();
    for (const auto& [w, score] : rep.top_words) words.push_back({{"word", w}, {"score", score}});
    r["top_words"] = std::move(words);
    json tags = json::array();
    for (const auto& [id, coeff] : rep.top_hashtags)
      tags.push_back({{"hashtag", id}, {"coeff", coeff}});
    r["top_hashtags"] = std::move(tags);
    r["lat"] = rep.mean_geo.lat_deg;
    r["lon"] = rep.mean_geo.lon_deg;
    r["members"] = rep.member_count;
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Tweet-stream ingestion (JSON lines: {"text": ..., "hashtags": [...],
// "coordinates": [lat, lon] | null}).

struct TweetRecord {
  std::string text;
  std::vector<std::string> hashtags;  // lowercased, deduplicated
  std::optional<GeoCoordinate> coordinate;
};

struct IngestConfig {
  int64_t min_geotags = 0;
  int64_t min_words = 1;
  int64_t min_word_doc_freq = 1;  // doc = hashtag instance
  int32_t max_dictionary = 50000;
  std::vector<std::string> stopwords;
  std::optional<double> max_resultant;  // spread filter: keep tau_hat <= value

  void validate() const {
    if (min_geotags < 0 || min_words < 1 || min_word_doc_freq < 1 || max_dictionary < 2)
      throw std::invalid_argument("IngestConfig: bad thresholds");
    if (max_resultant && !(*max_resultant > 0.0 && *max_resultant <= 1.0))
      throw std::invalid_argument("IngestConfig: max_resultant must be in (0, 1]");
  }
};

struct IngestStats {
  int64_t lines = 0;
  int64_t malformed = 0;
  int64_t tweets = 0;
  int64_t geotagged = 0;
  int64_t hashtags_seen = 0;
  int64_t dropped_few_words = 0;
  int64_t dropped_few_geotags = 0;
  int64_t dropped_concentrated = 0;
  int64_t hashtags_kept = 0;
  int32_t dictionary_size = 0;
};

/// Lowercases and splits on non-alphanumeric bytes; tokens shorter than two
/// characters are dropped. Hashtag tokens survive with the '#' stripped.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      if (cur.size() >= 2) out.push_back(cur);
      cur.clear();
    }
  }
  if (cur.size() >= 2) out.push_back(cur);
  return out;
}

inline std::optional<TweetRecord> parse_tweet_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (!j.is_object() || !j.contains("hashtags") || !j.at("hashtags").is_array())
    return std::nullopt;
  TweetRecord rec;
  if (j.contains("text")) {
    if (!j.at("text").is_string()) return std::nullopt;
    rec.text = j.at("text").get<std::string>();
  }
  std::vector<std::string> tags;
  for (const json& t : j.at("hashtags")) {
    if (!t.is_string()) return std::nullopt;
    std::string tag = t.get<std::string>();
    if (!tag.empty() && tag.front() == '#') tag.erase(tag.begin());
    std::transform(tag.begin(), tag.end(), tag.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (!tag.empty()) tags.push_back(std::move(tag));
  }
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  rec.hashtags = std::move(tags);
  if (j.contains("coordinates") && !j.at("coordinates").is_null()) {
    const json& c = j.at("coordinates");
    if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number())
      return std::nullopt;
    try {
      rec.coordinate = GeoCoordinate::of(c[0].get<double>(), c[1].get<double>());
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  }
  return rec;
}

/// Aggregates a tweet stream into per-hashtag bags and geotag sums. Malformed
/// lines are counted and skipped. Geotags are summed in a canonical sorted
/// order, making the result invariant to input permutation.
inline Dataset ingest(std::istream& in, const IngestConfig& cfg, IngestStats* stats = nullptr,
                      std::vector<std::pair<std::string, std::vector<GeoCoordinate>>>*
                          raw_geo = nullptr) {
  cfg.validate();
  struct Agg {
    std::unordered_map<std::string, int64_t> counts;
    std::vector<GeoCoordinate> geos;
  };
  std::map<std::string, Agg> by_tag;  // ordered: deterministic record order
  std::unordered_set<std::string> stop(cfg.stopwords.begin(), cfg.stopwords.end());
  IngestStats local;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++local.lines;
    const std::optional<TweetRecord> rec = parse_tweet_line(line);
    if (!rec) {
      ++local.malformed;
      continue;
    }
    ++local.tweets;
    if (rec->coordinate) ++local.geotagged;
    if (rec->hashtags.empty()) continue;
    std::vector<std::string> tokens = tokenize(rec->text);
    if (!stop.empty())
      std::erase_if(tokens, [&](const std::string& t) { return stop.count(t) > 0; });
    for (const std::string& tag : rec->hashtags) {
      Agg& agg = by_tag[tag];
      for (const std::string& tok : tokens) ++agg.counts[tok];
      if (rec->coordinate) agg.geos.push_back(*rec->coordinate);
    }
  }
  local.hashtags_seen = static_cast<int64_t>(by_tag.size());

  // Dictionary: document-frequency filter, then rank by (frequency desc,
  // word asc) and cap. The pivot ends up being the least frequent kept word.
  std::unordered_map<std::string, int64_t> freq, doc_freq;
  for (const auto& [tag, agg] : by_tag)
    for (const auto& [word, cnt] : agg.counts) {
      freq[word] += cnt;
      doc_freq[word] += 1;
    }
  std::vector<std::string> vocab;
  for (const auto& [word, df] : doc_freq)
    if (df >= cfg.min_word_doc_freq) vocab.push_back(word);
  std::sort(vocab.begin(), vocab.end(), [&](const std::string& a, const std::string& b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a < b;
  });
  if (static_cast<int32_t>(vocab.size()) > cfg.max_dictionary)
    vocab.resize(cfg.max_dictionary);
  std::unordered_map<std::string, int32_t> word_index;
  for (size_t j = 0; j < vocab.size(); ++j) word_index[vocab[j]] = static_cast<int32_t>(j);

  Dataset data;
  data.dictionary.words = vocab;
  for (auto& [tag, agg] : by_tag) {
    std::vector<std::pair<int32_t, int64_t>> entries;
    for (const auto& [word, cnt] : agg.counts) {
      const auto it = word_index.find(word);
      if (it != word_index.end()) entries.emplace_back(it->second, cnt);
    }
    WordCounts counts = WordCounts::from_pairs(std::move(entries));
    if (counts.total < std::max<int64_t>(cfg.min_words, 1)) {
      ++local.dropped_few_words;
      continue;
    }
    const int64_t n_geo = static_cast<int64_t>(agg.geos.size());
    if (n_geo < cfg.min_geotags) {
      ++local.dropped_few_geotags;
      continue;
    }
    std::sort(agg.geos.begin(), agg.geos.end(), [](const GeoCoordinate& a, const GeoCoordinate& b) {
      if (a.lat_deg != b.lat_deg) return a.lat_deg < b.lat_deg;
      return a.lon_deg < b.lon_deg;
    });
    Vec3 geo_sum = Vec3::Zero();
    for (const GeoCoordinate& g : agg.geos) geo_sum += geo_to_cartesian(g).vec();
    if (cfg.max_resultant && n_geo > 0 &&
        geo_sum.norm() / static_cast<double>(n_geo) > *cfg.max_resultant) {
      ++local.dropped_concentrated;
      continue;
    }
    HashtagRecord rec;
    rec.id = tag;
    rec.counts = std::move(counts);
    rec.geo_sum = geo_sum;
    rec.n_geo = n_geo;
    data.records.push_back(std::move(rec));
    if (raw_geo) raw_geo->emplace_back(tag, agg.geos);
    ++local.hashtags_kept;
  }
  local.dictionary_size = static_cast<int32_t>(vocab.size());
  if (stats) *stats = local;
  if (data.records.empty()) {
    std::ostringstream msg;
    msg << "ingest: no hashtags survived filtering (" << local.lines << " lines, "
        << local.malformed << " malformed, " << local.hashtags_seen << " hashtags seen, "
        << local.dropped_few_words << " dropped for words, " << local.dropped_few_geotags
        << " dropped for geotags, " << local.dropped_concentrated
        << " dropped by spread filter)";
    throw std::runtime_error(msg.str());
  }
  data.validate();
  return data;
}

}  // namespace geotext
