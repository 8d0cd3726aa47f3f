#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geotext/em.hpp"
#include "geotext/model.hpp"

namespace geotext {

/// Hierarchical fitting configuration. Zoom targets are round-1 events whose
/// member hashtags are re-fit on their own (fresh initialization, re-derived
/// dictionary).
struct RoundConfig {
  int rounds = 1;
  int k = 2;
  double prune_threshold = 0.8;  // theta in (0, 1]
  FitConfig fit;
  std::vector<int> zoom_events;
  int zoom_k = 0;  // 0 means reuse k

  void validate() const {
    if (rounds < 1) throw std::invalid_argument("RoundConfig: rounds must be >= 1");
    if (k < 1) throw std::invalid_argument("RoundConfig: k must be >= 1");
    if (!(prune_threshold > 0.0) || prune_threshold > 1.0)
      throw std::invalid_argument("RoundConfig: prune threshold must be in (0, 1]");
    if (zoom_k < 0) throw std::invalid_argument("RoundConfig: zoom_k must be >= 0");
    for (int e : zoom_events)
      if (e < 0 || e >= k) throw std::invalid_argument("RoundConfig: zoom event out of range");
    fit.validate();
  }
};

struct HashtagAssignment {
  int record = 0;    // index into the round's dataset
  int original = 0;  // index into the original dataset
  int event = 0;
  double coeff = 0.0;  // dominant normalized coefficient
};

struct RoundResult {
  int round = 1;  // 1-based; zoom refits continue the numbering
  bool zoom = false;
  int parent_event = -1;  // round-1 event a zoom refit descends from
  bool stopped_early = false;
  std::vector<int> rows;  // original-dataset indices visible to this round
  Dataset data;
  ModelState state;
  FitTrace trace;
  std::vector<HashtagAssignment> assigned;
};

/// Restriction of a dataset to the given rows. The dictionary is re-derived
/// from the surviving corpus and re-ranked by (frequency desc, word asc).
inline Dataset subset_dataset(const Dataset& data, const std::vector<int>& rows) {
  if (rows.empty()) throw std::invalid_argument("subset_dataset: empty row set");
  std::vector<int64_t> freq(data.word_dim(), 0);
  for (int r : rows) {
    if (r < 0 || r >= data.p()) throw std::invalid_argument("subset_dataset: bad row");
    const WordCounts& wc = data.records[r].counts;
    for (size_t j = 0; j < wc.index.size(); ++j) freq[wc.index[j]] += wc.count[j];
  }
  std::vector<int32_t> kept;
  for (int32_t w = 0; w < data.word_dim(); ++w)
    if (freq[w] > 0) kept.push_back(w);
  if (kept.size() < 2)
    throw std::runtime_error("subset_dataset: surviving dictionary has fewer than 2 words");
  std::sort(kept.begin(), kept.end(), [&](int32_t a, int32_t b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return data.dictionary.words[a] < data.dictionary.words[b];
  });
  std::vector<int32_t> remap(data.word_dim(), -1);
  Dataset out;
  out.dictionary.words.reserve(kept.size());
  for (size_t j = 0; j < kept.size(); ++j) {
    remap[kept[j]] = static_cast<int32_t>(j);
    out.dictionary.words.push_back(data.dictionary.words[kept[j]]);
  }
  out.records.reserve(rows.size());
  for (int r : rows) {
    const HashtagRecord& src = data.records[r];
    std::vector<std::pair<int32_t, int64_t>> entries;
    entries.reserve(src.counts.index.size());
    for (size_t j = 0; j < src.counts.index.size(); ++j)
      entries.emplace_back(remap[src.counts.index[j]], src.counts.count[j]);
    HashtagRecord rec;
    rec.id = src.id;
    rec.counts = WordCounts::from_pairs(std::move(entries));
    rec.geo_sum = src.geo_sum;
    rec.n_geo = src.n_geo;
    out.records.push_back(std::move(rec));
  }
  out.validate();
  return out;
}

/// Dominant-event assignments of a fitted state; hashtags whose normalized
/// dominant coefficient falls below theta (or whose coefficients are all zero)
/// are left unassigned.
inline std::vector<HashtagAssignment> compute_assignments(const ModelState& st,
                                                          const std::vector<int>& rows,
                                                          double theta) {
  std::vector<HashtagAssignment> out;
  for (int i = 0; i < st.p(); ++i) {
    const double sum = st.coeffs.col(i).sum();
    if (sum <= kCoeffSumFloor) continue;
    int event = 0;
    const double top = st.coeffs.col(i).maxCoeff(&event);
    const double ratio = top / sum;
    if (ratio >= theta)
      out.push_back(HashtagAssignment{i, rows.empty() ? i : rows[i], event, ratio});
  }
  return out;
}

inline std::vector<RoundResult> hierarchical_fit(const Dataset& data, const RoundConfig& cfg) {
  cfg.validate();
  data.validate();
  std::vector<RoundResult> results;
  std::vector<int> remaining(data.p());
  for (int i = 0; i < data.p(); ++i) remaining[i] = i;

  int round = 0;
  for (int r = 0; r < cfg.rounds; ++r) {
    ++round;
    if (static_cast<int>(remaining.size()) < cfg.k) {
      RoundResult res;
      res.round = round;
      res.rows = remaining;
      res.stopped_early = true;
      results.push_back(std::move(res));
      break;
    }
    RoundResult res;
    res.round = round;
    res.rows = remaining;
    res.data = static_cast<int>(remaining.size()) == data.p() ? data
                                                              : subset_dataset(data, remaining);
    FitConfig fit_cfg = cfg.fit;
    fit_cfg.k = cfg.k;
    fit_cfg.seed = cfg.fit.seed + static_cast<uint64_t>(r);
    auto [state, trace] = fit(res.data, fit_cfg);
    res.state = std::move(state);
    res.trace = std::move(trace);
    res.assigned = compute_assignments(res.state, res.rows, cfg.prune_threshold);

    std::vector<int> next;
    {
      std::vector<char> is_assigned(res.rows.size(), 0);
      for (const HashtagAssignment& a : res.assigned) is_assigned[a.record] = 1;
      for (size_t j = 0; j < res.rows.size(); ++j)
        if (!is_assigned[j]) next.push_back(res.rows[j]);
    }
    results.push_back(std::move(res));
    remaining = std::move(next);
    if (remaining.empty()) break;
  }

  const int main_rounds = round;
  for (size_t zi = 0; zi < cfg.zoom_events.size(); ++zi) {
    const int target = cfg.zoom_events[zi];
    std::vector<int> members;
    if (!results.empty() && !results.front().stopped_early)
      for (const HashtagAssignment& a : results.front().assigned)
        if (a.event == target) members.push_back(a.original);
    const int kz = cfg.zoom_k > 0 ? cfg.zoom_k : cfg.k;
    RoundResult res;
    res.round = main_rounds + static_cast<int>(zi) + 1;
    res.zoom = true;
    res.parent_event = target;
    res.rows = members;
    if (static_cast<int>(members.size()) < kz) {
      res.stopped_early = true;
      results.push_back(std::move(res));
      continue;
    }
    res.data = subset_dataset(data, members);
    FitConfig fit_cfg = cfg.fit;
    fit_cfg.k = kz;
    fit_cfg.seed = cfg.fit.seed + static_cast<uint64_t>(1000 + zi);
    auto [state, trace] = fit(res.data, fit_cfg);
    res.state = std::move(state);
    res.trace = std::move(trace);
    // Zoom refits are terminal: every member is reported at its argmax event.
    res.assigned = compute_assignments(res.state, res.rows, 0.0);
    results.push_back(std::move(res));
  }
  return results;
}

/// Per-event summary: top words by posterior score, top hashtags by
/// normalized coefficient, posterior mean geolocation, member count.
struct EventReport {
  int event = 0;
  std::vector<std::pair<std::string, double>> top_words;
  std::vector<std::pair<std::string, double>> top_hashtags;
  GeoCoordinate mean_geo;
  int member_count = 0;
};

inline std::vector<EventReport> build_reports(const ModelState& st, const Dataset& data,
                                              int n_top) {
  if (n_top < 1) throw std::invalid_argument("build_reports: n_top must be >= 1");
  if (st.p() != data.p()) throw std::invalid_argument("build_reports: size mismatch");
  const Eigen::Index d1 = st.word_scores.X.cols();
  std::vector<EventReport> reports(st.k());

  std::vector<int> members(st.k(), 0);
  std::vector<std::vector<std::pair<double, int>>> ranked(st.k());
  for (int i = 0; i < data.p(); ++i) {
    const double sum = st.coeffs.col(i).sum();
    if (sum <= kCoeffSumFloor) continue;
    int event = 0;
    st.coeffs.col(i).maxCoeff(&event);
    ++members[event];
    for (int k = 0; k < st.k(); ++k) ranked[k].emplace_back(st.coeffs(k, i) / sum, i);
  }

  std::vector<int> word_order(d1);
  for (int k = 0; k < st.k(); ++k) {
    EventReport& rep = reports[k];
    rep.event = k;
    rep.mean_geo = cartesian_to_geo(st.events[k].b);
    rep.member_count = members[k];

    // The pivot's implied score (0) is fixed by identifiability, not data;
    // it never enters the list.
    for (Eigen::Index d = 0; d < d1; ++d) word_order[d] = static_cast<int>(d);
    std::sort(word_order.begin(), word_order.end(), [&](int a, int b) {
      if (st.word_scores.X(k, a) != st.word_scores.X(k, b))
        return st.word_scores.X(k, a) > st.word_scores.X(k, b);
      return a < b;
    });
    const int nw = std::min<int>(n_top, static_cast<int>(d1));
    for (int j = 0; j < nw; ++j)
      rep.top_words.emplace_back(data.dictionary.words[word_order[j]],
                                 st.word_scores.X(k, word_order[j]));

    auto& rk = ranked[k];
    std::sort(rk.begin(), rk.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const int nh = std::min<int>(n_top, static_cast<int>(rk.size()));
    for (int j = 0; j < nh; ++j)
      rep.top_hashtags.emplace_back(data.records[rk[j].second].id, rk[j].first);
  }
  return reports;
}

}  // namespace geotext
